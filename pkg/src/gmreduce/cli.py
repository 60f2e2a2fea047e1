"""Command-line interface: seeded, reproducible experiment harness.

Commands
--------
simulate    emit a random 25-component 2-d benchmark mixture as JSON
reduce      reduce a mixture file; appends a CSV row and writes result JSON
ctd         entropic transport divergence between two mixture files
bp          exact-vs-reduced belief propagation on a graph; per-node ISE CSV
surface     convexity-gap grid for the CS cost; CSV of (mu, sigma, gap)
divergence  closed-form divergence between two mixture files

All randomness flows from --seed through numpy's PCG64 generator
(numpy.random.default_rng); independent streams are split off with
SeedSequence.spawn, one per restart (and per BP reduction site), so outputs
are reproducible byte-for-byte given the same inputs and seed.  The one
exception is the wall-time column in CSV outputs, which is measured.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np
from scipy import integrate

from .barycenter import ConvergenceError
from .bp import FactorGraph, UnderflowError, default_bp_reducer, demo_graph, run_bp
from .costs import CostSpec
from .gaussian import Gaussian, cs, ise, kl, w2_squared
from .mixture import GaussianMixture, l2_inner, l2_norm_sq, mixture_ise
from .reduce import ReductionConfig, ctd_sinkhorn, reduce_with_restarts

_SCHEMAS = {
    "reduce": "# gmreduce-csv reduce v1",
    "plan": "# gmreduce-csv plan v1",
    "bp": "# gmreduce-csv bp v1",
    "surface": "# gmreduce-csv surface v1",
}

_REDUCE_HEADER = (
    "seed", "M", "cost", "lambda", "final_objective", "ise_to_original",
    "iterations", "status", "wall_time_s",
)
_BP_HEADER = (
    "seed", "iteration", "node", "ise", "exact_order", "approx_order",
    "time_exact_s", "time_approx_s",
)


def _fmt(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def generate_benchmark_mixture(seed):
    """Random 25-component 2-d mixture with equal weights.

    Draw order: 5 cluster locations uniform on [-10, 10]^2; multinomial
    (25, 0.2 each) component counts; per component a mean uniform on the
    radius-2.5 disk around its location; then per component the covariance
    diagonal from Gamma(shape 8, rate 4) and off-diagonal
    sqrt(s11 s22) cos(pi theta) with theta ~ U(0.2, 0.8), which keeps the
    correlation below 0.81 in magnitude so the matrix is positive definite.
    """
    rng = np.random.default_rng(seed)
    locations = rng.uniform(-10.0, 10.0, size=(5, 2))
    counts = rng.multinomial(25, np.full(5, 0.2))
    means = []
    for loc, count in zip(locations, counts):
        for _ in range(count):
            radius = 2.5 * math.sqrt(rng.uniform())
            angle = rng.uniform(0.0, 2.0 * math.pi)
            means.append(loc + radius * np.array([math.cos(angle), math.sin(angle)]))
    covs = []
    for _ in range(25):
        s11 = rng.gamma(8.0, 0.25)
        s22 = rng.gamma(8.0, 0.25)
        theta = rng.uniform(0.2, 0.8)
        off = math.sqrt(s11 * s22) * math.cos(math.pi * theta)
        covs.append([[s11, off], [off, s22]])
    return GaussianMixture(np.full(25, 1.0 / 25.0), np.array(means), np.array(covs))


def _load_mixture(path):
    return GaussianMixture.from_json(Path(path).read_text())


def _parse_cost(name, sharpness):
    if name == "softnll":
        return CostSpec.soft_nll(sharpness)
    return CostSpec(name)


def _write_rows(path, schema_key, header, rows):
    lines = [_SCHEMAS[schema_key], ",".join(header)]
    lines.extend(",".join(row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def _read_rows(path, schema_key, header):
    text = Path(path).read_text().splitlines()
    if not text or text[0] != _SCHEMAS[schema_key] or text[1] != ",".join(header):
        raise ValueError(f"{path} does not carry the expected {schema_key} schema")
    return [tuple(line.split(",")) for line in text[2:] if line]


# ---------------------------------------------------------------------------


def cmd_simulate(args):
    mix = generate_benchmark_mixture(args.seed)
    Path(args.out).write_text(mix.to_json() + "\n")
    print(f"wrote order-{mix.order} mixture to {args.out}")
    if args.plot:
        from . import plots

        plots.mixture_figure(mix, Path(args.out).with_suffix(".png"))
    return 0


def cmd_reduce(args):
    original = _load_mixture(args.mixture)
    cfg = ReductionConfig(
        M=args.M,
        cost=_parse_cost(args.cost, args.I),
        lam=args.lam,
        restarts=args.restarts,
        seed=args.seed,
    )
    start = time.perf_counter()
    result = reduce_with_restarts(original, cfg)
    elapsed = time.perf_counter() - start
    err = mixture_ise(original, result.reduced)

    out = Path(args.out)
    rows = _read_rows(out, "reduce", _REDUCE_HEADER) if out.exists() else []
    rows.append((
        _fmt(args.seed), _fmt(args.M), args.cost, _fmt(cfg.lam),
        _fmt(result.objective_trace[-1]), _fmt(err),
        _fmt(result.iterations), result.status, _fmt(elapsed),
    ))
    rows.sort(key=lambda r: (int(r[0]), int(r[1]), r[2]))
    _write_rows(out, "reduce", _REDUCE_HEADER, rows)

    json_path = Path(args.json_out) if args.json_out else out.with_suffix(
        f".s{args.seed}.M{args.M}.{args.cost}.json"
    )
    json_path.write_text(result.to_json() + "\n")
    print(
        f"seed={args.seed} M={args.M} cost={args.cost} objective={result.objective_trace[-1]:.6g} "
        f"ise={err:.6g} iters={result.iterations} status={result.status}"
    )
    if args.plot:
        from . import plots

        plots.trace_figure(result.objective_trace, json_path.with_suffix(".png"))
    return 0


def cmd_ctd(args):
    p = _load_mixture(args.mixture)
    q = _load_mixture(args.mixture_b)
    if not args.lam > 0:
        raise ValueError("ctd requires --lambda > 0")
    value, plan = ctd_sinkhorn(p, q, _parse_cost(args.cost, args.I), args.lam)
    print(f"{value!r}")
    header = tuple(f"col{j}" for j in range(plan.shape[1]))
    rows = [tuple(_fmt(v) for v in row) for row in plan]
    _write_rows(args.out, "plan", header, rows)
    row_err = float(np.max(np.abs(plan.sum(axis=1) - p.weights)))
    col_err = float(np.max(np.abs(plan.sum(axis=0) - q.weights)))
    print(f"marginal errors: rows {row_err:.3e} cols {col_err:.3e}")
    if args.plot:
        from . import plots

        plots.plan_figure(plan, Path(args.out).with_suffix(".png"))
    return 0


def cmd_bp(args):
    if args.iters > 3:
        raise ValueError("exact comparison supports at most 3 iterations")
    if args.graph == "demo4":
        graph = demo_graph(seed=args.seed)
    else:
        graph = FactorGraph.from_dict(json.loads(Path(args.graph).read_text()))

    start = time.perf_counter()
    exact = run_bp(graph, args.iters)
    time_exact = time.perf_counter() - start

    reducer = default_bp_reducer(
        m=args.M, cost=_parse_cost(args.cost, args.I), restarts=args.restarts, seed=args.seed
    )
    start = time.perf_counter()
    approx = run_bp(graph, args.iters, reducer=reducer)
    time_approx = time.perf_counter() - start

    rows = []
    plot_rows = []
    for it in range(args.iters):
        for node in range(graph.n_nodes):
            eb = exact.beliefs[it][node]
            ab = approx.beliefs[it][node]
            err = l2_norm_sq(eb) - 2.0 * l2_inner(eb, ab) + l2_norm_sq(ab)
            rows.append((
                _fmt(args.seed), _fmt(it + 1), _fmt(node), _fmt(err),
                _fmt(eb.order), _fmt(ab.order), _fmt(time_exact), _fmt(time_approx),
            ))
            plot_rows.append((it + 1, node, max(err, 1e-300)))
    _write_rows(args.out, "bp", _BP_HEADER, rows)
    print(f"exact {time_exact:.3f}s, reduced {time_approx:.3f}s; wrote {args.out}")
    if args.plot:
        from . import plots

        plots.bp_ise_figure(plot_rows, Path(args.out).with_suffix(".png"))
    return 0


# -- convexity-gap surface ---------------------------------------------------


def _gap_densities(mu, sigma):
    var = sigma * sigma
    f = GaussianMixture([0.5, 0.5], [[-1.0], [-mu]], [[[var]], [[1.0]]])
    phi = GaussianMixture([0.5, 0.5], [[1.0], [mu]], [[[1.0]], [[var]]])
    return f, phi


def _cs_mixture_quad(p, q):
    sd = math.sqrt(max(np.max(p.covs), np.max(q.covs)))
    lo = float(min(np.min(p.means), np.min(q.means)) - 12.0 * sd)
    hi = float(max(np.max(p.means), np.max(q.means)) + 12.0 * sd)

    def pdf(mix):
        mu = mix.means[:, 0]
        v = mix.covs[:, 0, 0]
        w = mix.weights
        return lambda x: float(w @ (np.exp(-((x - mu) ** 2) / (2 * v)) / np.sqrt(2 * np.pi * v)))

    fp, fq = pdf(p), pdf(q)
    opts = dict(limit=300, epsabs=1e-12, epsrel=1e-10)
    cross = integrate.quad(lambda x: fp(x) * fq(x), lo, hi, **opts)[0]
    pp = integrate.quad(lambda x: fp(x) ** 2, lo, hi, **opts)[0]
    qq = integrate.quad(lambda x: fq(x) ** 2, lo, hi, **opts)[0]
    return -math.log(cross) + 0.5 * math.log(pp) + 0.5 * math.log(qq)


def convexity_gap(mu, sigma):
    """0.5 cs(f1, phi1) + 0.5 cs(f2, phi2) - cs(mixtures) for the two-pair
    family f1 = N(-1, s^2), f2 = N(-mu, 1), phi1 = N(1, 1), phi2 = N(mu, s^2);
    the mixture term is evaluated by quadrature."""
    var = sigma * sigma
    pair_term = 0.5 * cs(Gaussian(-1.0, var), Gaussian(1.0, 1.0)) + 0.5 * cs(
        Gaussian(-mu, 1.0), Gaussian(mu, var)
    )
    f, phi = _gap_densities(mu, sigma)
    return pair_term - _cs_mixture_quad(f, phi)


def _parse_grid(spec):
    try:
        mu_part, sigma_part = spec.split(",")
        mu_lo, mu_hi, mu_n = mu_part.split(":")
        sg_lo, sg_hi, sg_n = sigma_part.split(":")
        mus = np.linspace(float(mu_lo), float(mu_hi), int(mu_n))
        sigmas = np.linspace(float(sg_lo), float(sg_hi), int(sg_n))
    except Exception as err:
        raise ValueError(f"bad grid spec {spec!r}; expected LO:HI:N,LO:HI:N") from err
    if np.any(mus <= 0) or np.any(sigmas <= 0):
        raise ValueError("grid values must be positive")
    return mus, sigmas


def cmd_surface(args):
    mus, sigmas = _parse_grid(args.grid)
    gaps = np.empty((mus.shape[0], sigmas.shape[0]))
    rows = []
    for i, mu in enumerate(mus):
        for j, sigma in enumerate(sigmas):
            gaps[i, j] = convexity_gap(float(mu), float(sigma))
            rows.append((_fmt(mu), _fmt(sigma), _fmt(gaps[i, j])))
    _write_rows(args.out, "surface", ("mu", "sigma", "gap"), rows)
    print(
        f"gap range [{gaps.min():.4g}, {gaps.max():.4g}] over "
        f"{mus.shape[0]}x{sigmas.shape[0]} grid -> {args.out}"
    )
    if args.plot:
        from . import plots

        plots.surface_figure(mus, sigmas, gaps, Path(args.out).with_suffix(".png"))
    return 0


def cmd_divergence(args):
    p = _load_mixture(args.mixture)
    q = _load_mixture(args.mixture_b)
    if p.order == 1 and q.order == 1:
        fn = {"kl": kl, "ise": ise, "cs": cs, "w2": w2_squared}[args.which]
        value = fn(p.component(0), q.component(0))
    elif args.which == "ise":
        value = mixture_ise(p, q)
    else:
        raise ValueError(
            f"divergence {args.which!r} needs single-component inputs "
            "(mixture-level supports ise only)"
        )
    print(f"{value!r}")
    return 0


# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="gmreduce",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="emit a random benchmark mixture as JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true", help="also render a PNG figure")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser(
        "reduce",
        help="reduce a mixture file",
        epilog="CSV columns: " + ", ".join(_REDUCE_HEADER),
    )
    p.add_argument("--mixture", required=True)
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--cost", choices=["kl", "ise", "cs", "w2", "softnll"], default="kl")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="regularization strength; defaults to 1 for softnll, else 0")
    p.add_argument("--I", type=float, default=1.0, help="softnll sharpness")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV path; the row is merged in sorted")
    p.add_argument("--json-out", default=None)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("ctd", help="transport divergence between two mixtures")
    p.add_argument("--mixture", required=True)
    p.add_argument("--mixture-b", required=True)
    p.add_argument("--cost", choices=["kl", "ise", "cs", "w2"], default="kl")
    p.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    p.add_argument("--I", type=float, default=1.0)
    p.add_argument("--out", required=True, help="plan matrix CSV")
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_ctd)

    p = sub.add_parser(
        "bp",
        help="exact vs reduced belief propagation",
        epilog="CSV columns: " + ", ".join(_BP_HEADER),
    )
    p.add_argument("--graph", default="demo4", help="graph JSON path or 'demo4'")
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--M", type=int, default=4)
    p.add_argument("--cost", choices=["kl", "ise", "cs", "w2", "softnll"], default="ise")
    p.add_argument("--I", type=float, default=1.0)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_bp)

    p = sub.add_parser("surface", help="CS convexity-gap grid")
    p.add_argument("--grid", default="0.1:3:30,0.3:3:28",
                   help="MU_LO:MU_HI:N,SIGMA_LO:SIGMA_HI:N")
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_surface)

    p = sub.add_parser("divergence", help="divergence between two mixture files")
    p.add_argument("--mixture", required=True)
    p.add_argument("--mixture-b", required=True)
    p.add_argument("--which", choices=["kl", "ise", "cs", "w2"], required=True)
    p.set_defaults(func=cmd_divergence)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConvergenceError, UnderflowError, FloatingPointError, np.linalg.LinAlgError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
