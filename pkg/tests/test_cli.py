import json

import numpy as np
import pytest

import oracles

from gmreduce.barycenter import moment_match
from gmreduce.cli import convexity_gap, generate_benchmark_mixture, main
from gmreduce.mixture import GaussianMixture


@pytest.fixture
def small_mixture_file(tmp_path):
    # well separated so an order-4 refit recovers every component
    mix = GaussianMixture(
        [0.3, 0.25, 0.25, 0.2],
        [[-6.0], [-2.0], [2.0], [6.0]],
        [[[0.8]], [[0.6]], [[1.1]], [[0.9]]],
    )
    path = tmp_path / "mix.json"
    path.write_text(mix.to_json())
    return path, mix


# -- simulate -----------------------------------------------------------------


def test_benchmark_mixture_protocol():
    mix = generate_benchmark_mixture(42)
    assert mix.order == 25
    assert mix.dim == 2
    np.testing.assert_allclose(mix.weights, np.full(25, 0.04), atol=1e-15)
    dets = np.linalg.det(mix.covs)
    assert np.all(dets > 0)
    # correlations bounded away from 1 by the angle range
    corr = mix.covs[:, 0, 1] / np.sqrt(mix.covs[:, 0, 0] * mix.covs[:, 1, 1])
    assert np.all(np.abs(corr) <= np.cos(0.2 * np.pi) + 1e-12)


def test_simulate_deterministic(tmp_path):
    out1 = tmp_path / "a.json"
    out2 = tmp_path / "b.json"
    assert main(["simulate", "--seed", "9", "--out", str(out1)]) == 0
    assert main(["simulate", "--seed", "9", "--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    mix = GaussianMixture.from_json(out1.read_text())
    assert mix.order == 25


# -- reduce -------------------------------------------------------------------


def test_reduce_identity_order(tmp_path, small_mixture_file):
    path, mix = small_mixture_file
    out = tmp_path / "res.csv"
    code = main([
        "reduce", "--mixture", str(path), "--M", "4", "--cost", "kl",
        "--restarts", "2", "--seed", "1", "--out", str(out),
    ])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "# gmreduce-csv reduce v1"
    row = dict(zip(lines[1].split(","), lines[2].split(",")))
    assert float(row["ise_to_original"]) < 1e-10
    assert row["status"] in ("converged", "max_iter", "degenerate")


def test_reduce_single_component_is_moment_match(tmp_path, small_mixture_file):
    path, mix = small_mixture_file
    out = tmp_path / "res.csv"
    json_out = tmp_path / "res.json"
    code = main([
        "reduce", "--mixture", str(path), "--M", "1", "--cost", "kl",
        "--restarts", "2", "--seed", "3", "--out", str(out),
        "--json-out", str(json_out),
    ])
    assert code == 0
    data = json.loads(json_out.read_text())
    got = GaussianMixture.from_dict(data["reduced"])
    mean, cov = moment_match(mix.means, mix.covs, mix.weights)
    np.testing.assert_allclose(got.means[0], mean, atol=1e-9)
    np.testing.assert_allclose(got.covs[0], cov, atol=1e-9)


def test_reduce_rows_sorted_and_merged(tmp_path, small_mixture_file):
    path, _ = small_mixture_file
    out = tmp_path / "res.csv"
    for seed, m in ((4, 2), (2, 2), (2, 1)):
        assert main([
            "reduce", "--mixture", str(path), "--M", str(m), "--cost", "kl",
            "--restarts", "1", "--seed", str(seed), "--out", str(out),
        ]) == 0
    rows = [line.split(",") for line in out.read_text().splitlines()[2:]]
    keys = [(int(r[0]), int(r[1]), r[2]) for r in rows]
    assert keys == sorted(keys)
    assert len(rows) == 3


def test_reduce_missing_file_exit_code(tmp_path):
    code = main([
        "reduce", "--mixture", str(tmp_path / "nope.json"), "--M", "1",
        "--out", str(tmp_path / "r.csv"),
    ])
    assert code == 2


# -- ctd ----------------------------------------------------------------------


def test_ctd_identical_mixtures(tmp_path, small_mixture_file, capsys):
    path, mix = small_mixture_file
    out = tmp_path / "plan.csv"
    code = main([
        "ctd", "--mixture", str(path), "--mixture-b", str(path),
        "--cost", "kl", "--lambda", "0.001", "--out", str(out),
    ])
    assert code == 0
    value = float(capsys.readouterr().out.splitlines()[0])
    assert abs(value) < 1e-2
    rows = [line.split(",") for line in out.read_text().splitlines()[2:]]
    plan = np.array([[float(v) for v in row] for row in rows])
    np.testing.assert_allclose(plan.sum(axis=1), mix.weights, atol=1e-8)
    np.testing.assert_allclose(plan.sum(axis=0), mix.weights, atol=1e-8)


def test_ctd_rejects_zero_lambda(tmp_path, small_mixture_file):
    path, _ = small_mixture_file
    code = main([
        "ctd", "--mixture", str(path), "--mixture-b", str(path),
        "--lambda", "0", "--out", str(tmp_path / "p.csv"),
    ])
    assert code == 2


# -- divergence -----------------------------------------------------------------


def test_divergence_identical_files(tmp_path, small_mixture_file, capsys):
    path, _ = small_mixture_file
    assert main([
        "divergence", "--mixture", str(path), "--mixture-b", str(path), "--which", "ise",
    ]) == 0
    assert abs(float(capsys.readouterr().out.strip())) < 1e-12


def test_divergence_single_component_passthrough(tmp_path, capsys):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    a.write_text(GaussianMixture([1.0], [[0.0]], [[[1.0]]]).to_json())
    b.write_text(GaussianMixture([1.0], [[1.0]], [[[1.0]]]).to_json())
    assert main(["divergence", "--mixture", str(a), "--mixture-b", str(b), "--which", "kl"]) == 0
    assert float(capsys.readouterr().out.strip()) == pytest.approx(0.5, abs=1e-12)


def test_divergence_mixture_kl_rejected(tmp_path, small_mixture_file):
    path, _ = small_mixture_file
    code = main([
        "divergence", "--mixture", str(path), "--mixture-b", str(path), "--which", "kl",
    ])
    assert code == 2


def test_divergence_mixture_ise_matches_quadrature(tmp_path, capsys):
    rng = np.random.default_rng(5)
    p = GaussianMixture([0.5, 0.5], [[-1.0], [1.0]], [[[1.0]], [[0.7]]])
    q = GaussianMixture([1.0], [[0.0]], [[[2.0]]])
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    a.write_text(p.to_json())
    b.write_text(q.to_json())
    assert main(["divergence", "--mixture", str(a), "--mixture-b", str(b), "--which", "ise"]) == 0
    got = float(capsys.readouterr().out.strip())
    want = oracles.mixture_ise_quad(
        (p.weights, p.means[:, 0], p.covs[:, 0, 0]),
        (q.weights, q.means[:, 0], q.covs[:, 0, 0]),
    )
    assert got == pytest.approx(want, abs=1e-8)


# -- surface ----------------------------------------------------------------------


def test_surface_grid_deterministic_and_signed(tmp_path):
    out1 = tmp_path / "s1.csv"
    out2 = tmp_path / "s2.csv"
    for out in (out1, out2):
        assert main(["surface", "--grid", "0.1:3:5,0.3:3:4", "--out", str(out)]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    rows = [line.split(",") for line in out1.read_text().splitlines()[2:]]
    gaps = np.array([float(r[2]) for r in rows])
    assert gaps.min() < 0 < gaps.max()


def test_surface_symmetric_point_finite():
    gap = convexity_gap(1.0, 1.0)
    assert np.isfinite(gap)


def test_surface_rejects_bad_grid(tmp_path):
    assert main(["surface", "--grid", "junk", "--out", str(tmp_path / "s.csv")]) == 2
    assert main(["surface", "--grid=-1:3:4,0.3:3:4", "--out", str(tmp_path / "s.csv")]) == 2


# -- bp ------------------------------------------------------------------------------


def test_bp_command_outputs(tmp_path):
    out = tmp_path / "bp.csv"
    code = main([
        "bp", "--iters", "2", "--seed", "2", "--restarts", "1", "--out", str(out),
    ])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "# gmreduce-csv bp v1"
    rows = [dict(zip(lines[1].split(","), line.split(","))) for line in lines[2:]]
    assert len(rows) == 8  # 2 iterations x 4 nodes
    first_round = [r for r in rows if r["iteration"] == "1"]
    assert all(float(r["ise"]) < 1e-12 for r in first_round)
    second_round = [r for r in rows if r["iteration"] == "2"]
    assert all(float(r["ise"]) >= 0 for r in second_round)


def test_bp_rejects_deep_exact_comparison(tmp_path):
    code = main(["bp", "--iters", "4", "--out", str(tmp_path / "bp.csv")])
    assert code == 2


def test_bp_accepts_graph_file(tmp_path):
    from gmreduce.bp import demo_graph

    g = demo_graph(seed=1)
    gpath = tmp_path / "graph.json"
    gpath.write_text(json.dumps(g.to_dict()))
    out = tmp_path / "bp.csv"
    code = main([
        "bp", "--graph", str(gpath), "--iters", "1", "--restarts", "1", "--out", str(out),
    ])
    assert code == 0
    assert len(out.read_text().splitlines()) == 2 + 4


# -- figure rendering -----------------------------------------------------------------


def test_plot_flags_render_figures(tmp_path, small_mixture_file):
    sim_out = tmp_path / "mix.json"
    assert main(["simulate", "--seed", "1", "--out", str(sim_out), "--plot"]) == 0
    assert sim_out.with_suffix(".png").exists()

    path, _ = small_mixture_file
    out = tmp_path / "res.csv"
    json_out = tmp_path / "res.json"
    assert main([
        "reduce", "--mixture", str(path), "--M", "2", "--restarts", "1",
        "--out", str(out), "--json-out", str(json_out), "--plot",
    ]) == 0
    assert json_out.with_suffix(".png").exists()

    plan_out = tmp_path / "plan.csv"
    assert main([
        "ctd", "--mixture", str(path), "--mixture-b", str(path),
        "--lambda", "0.01", "--out", str(plan_out), "--plot",
    ]) == 0
    assert plan_out.with_suffix(".png").exists()

    surf_out = tmp_path / "surf.csv"
    assert main(["surface", "--grid", "0.5:2:3,0.5:2:3", "--out", str(surf_out), "--plot"]) == 0
    assert surf_out.with_suffix(".png").exists()

    bp_out = tmp_path / "bp.csv"
    assert main([
        "bp", "--iters", "2", "--seed", "1", "--restarts", "1",
        "--out", str(bp_out), "--plot",
    ]) == 0
    assert bp_out.with_suffix(".png").exists()
