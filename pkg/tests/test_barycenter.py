import math

import numpy as np
import pytest

import oracles

from gmreduce.costs import CostSpec
from gmreduce.gaussian import Gaussian, cs, ise, kl, w2_squared, spd_sqrtm
from gmreduce.barycenter import (
    BarycenterProblem,
    FixedPointConfig,
    cs_barycenter,
    ise_barycenter,
    kl_barycenter,
    solve_barycenter,
    w2_barycenter,
    _ise_value_grad,
)

DIVERGENCES = {"kl": kl, "ise": ise, "cs": cs, "w2": w2_squared}
SOLVERS = {
    "kl": kl_barycenter,
    "ise": ise_barycenter,
    "cs": cs_barycenter,
    "w2": w2_barycenter,
}


def problem(components, lambdas, kind):
    return BarycenterProblem(tuple(components), np.asarray(lambdas, float), CostSpec(kind))


def random_gaussian(rng, dim):
    mean = rng.normal(0.0, 2.0, dim)
    a = rng.normal(0.0, 0.6, (dim, dim))
    cov = a @ a.T + (0.4 + rng.uniform()) * np.eye(dim)
    return Gaussian(mean, cov)


def _pack(g):
    d = g.dim
    lower = np.linalg.cholesky(g.cov)
    idx = np.tril_indices(d)
    return np.concatenate([g.mean, lower[idx]]), idx, d


def _unpack(theta, idx, d):
    mean = theta[:d]
    lower = np.zeros((d, d))
    lower[idx] = theta[d:]
    return Gaussian(mean, lower @ lower.T)


def fd_gradient_norm(kind, components, lambdas, result):
    """Central-difference gradient of the weighted objective at `result`,
    taken in (mean, Cholesky factor) coordinates."""
    div = DIVERGENCES[kind]
    theta0, idx, d = _pack(result)

    def objective(theta):
        cand = _unpack(theta, idx, d)
        return sum(l * div(g, cand) for g, l in zip(components, lambdas))

    grad = oracles.central_gradient(objective, theta0, rel_step=1e-5)
    return float(np.linalg.norm(grad))


# -- KL (moment matching) ------------------------------------------------------


def test_kl_single_component():
    g = Gaussian([0.5, -1.0], [[2.0, 0.3], [0.3, 1.0]])
    out = kl_barycenter(problem([g], [1.0], "kl"))
    np.testing.assert_allclose(out.mean, g.mean, atol=1e-14)
    np.testing.assert_allclose(out.cov, g.cov, atol=1e-14)


def test_kl_two_unit_variances():
    out = kl_barycenter(problem([Gaussian(0.0, 1.0), Gaussian(2.0, 1.0)], [0.5, 0.5], "kl"))
    assert out.mean[0] == pytest.approx(1.0, abs=1e-14)
    assert out.cov[0, 0] == pytest.approx(2.0, abs=1e-14)
    # numerical-minimization oracle over (mu, var)
    mu, var, _ = oracles.refine_weighted_divergence_1d(
        oracles.kl_quad, [0.0, 2.0], [1.0, 1.0], [0.5, 0.5], 1.0, 2.0
    )
    assert out.mean[0] == pytest.approx(mu, abs=1e-3)
    assert out.cov[0, 0] == pytest.approx(var, abs=1e-3)


def test_kl_identical_components():
    g = Gaussian(3.0, 0.7)
    out = kl_barycenter(problem([g, g, g], [1.0, 2.0, 3.0], "kl"))
    assert out.mean[0] == pytest.approx(3.0, abs=1e-14)
    assert out.cov[0, 0] == pytest.approx(0.7, abs=1e-14)


def test_kl_recompute_covariance_identity():
    rng = np.random.default_rng(0)
    comps = [random_gaussian(rng, 2) for _ in range(4)]
    lam = rng.uniform(0.1, 2.0, 4)
    out = kl_barycenter(problem(comps, lam, "kl"))
    means = np.stack([g.mean for g in comps])
    covs = np.stack([g.cov for g in comps])
    # recompute the covariance from the returned mean
    diff = means - out.mean
    cov2 = (
        np.einsum("n,nij->ij", lam, covs) + np.einsum("n,ni,nj->ij", lam, diff, diff)
    ) / lam.sum()
    np.testing.assert_array_equal(out.cov, 0.5 * (cov2 + cov2.T))


# -- CS ---------------------------------------------------------------------------


def test_cs_single_component_is_global_minimum():
    g = Gaussian(1.0, 2.0)
    out = cs_barycenter(problem([g], [1.0], "cs"))
    assert cs(g, out) == pytest.approx(0.0, abs=1e-12)
    assert fd_gradient_norm("cs", [g], [1.0], out) < 1e-5


def test_cs_identical_components_fixed_point():
    g = Gaussian([0.3, -0.2], [[1.4, 0.2], [0.2, 0.9]])
    out = cs_barycenter(problem([g, g], [0.5, 0.5], "cs"))
    np.testing.assert_allclose(out.mean, g.mean, atol=1e-8)
    np.testing.assert_allclose(out.cov, g.cov, atol=1e-8)


def test_cs_symmetric_pair_matches_grid_search():
    comps = [Gaussian(-1.0, 1.0), Gaussian(1.0, 1.0)]
    out = cs_barycenter(problem(comps, [0.5, 0.5], "cs"))

    def objective(mu, var):
        cand = Gaussian(mu, var)
        return 0.5 * cs(comps[0], cand) + 0.5 * cs(comps[1], cand)

    best = (None, None, np.inf)
    for mu in np.linspace(-0.6, 0.6, 25):
        for var in np.linspace(1.2, 4.0, 281):
            val = objective(mu, var)
            if val < best[2]:
                best = (mu, var, val)
    assert out.mean[0] == pytest.approx(best[0], abs=1e-3)
    assert out.cov[0, 0] == pytest.approx(best[1], abs=2e-2)
    assert objective(out.mean[0], out.cov[0, 0]) <= best[2] + 1e-9
    # the 1-d stationarity equation (1+s)^2 = 2 s^2 gives s = 1 + sqrt(2)
    assert out.cov[0, 0] == pytest.approx(1.0 + math.sqrt(2.0), abs=1e-8)


# -- ISE --------------------------------------------------------------------------


def test_ise_single_component():
    g = Gaussian(0.4, 1.3)
    out = ise_barycenter(problem([g], [2.0], "ise"))
    assert ise(g, out) == pytest.approx(0.0, abs=1e-12)


def test_ise_identical_components():
    g = Gaussian(-2.0, 0.6)
    out = ise_barycenter(problem([g, g, g], [1.0, 1.0, 1.0], "ise"))
    np.testing.assert_allclose(out.mean, g.mean, atol=1e-7)
    np.testing.assert_allclose(out.cov, g.cov, atol=1e-7)


def test_ise_separated_pair_matches_grid_search():
    comps = [Gaussian(0.0, 1.0), Gaussian(4.0, 1.0)]
    out = ise_barycenter(problem(comps, [0.5, 0.5], "ise"))
    # dense grid + polish located the optimum at mu = 2, var ~ 7.6265
    assert out.mean[0] == pytest.approx(2.0, abs=1e-3)
    assert out.cov[0, 0] == pytest.approx(7.626459657, abs=1e-2)

    def objective(theta):
        cand = Gaussian(theta[0], math.exp(theta[1]))
        return 0.5 * ise(comps[0], cand) + 0.5 * ise(comps[1], cand)

    from scipy import optimize

    res = optimize.minimize(objective, [2.0, math.log(7.6)], method="Nelder-Mead",
                            options=dict(xatol=1e-10, fatol=1e-14))
    assert out.mean[0] == pytest.approx(res.x[0], abs=1e-3)
    assert out.cov[0, 0] == pytest.approx(math.exp(res.x[1]), abs=1e-3)


def test_ise_analytic_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    for dim in (1, 2):
        comps = [random_gaussian(rng, dim) for _ in range(3)]
        means = np.stack([g.mean for g in comps])
        covs = np.stack([g.cov for g in comps])
        lam = rng.dirichlet(np.ones(3))
        nparams = dim + dim * (dim + 1) // 2
        theta = rng.normal(0, 0.5, 2 * dim + dim * (dim - 1) // 2)
        _, grad = _ise_value_grad(means, covs, lam, theta, dim)
        fd = oracles.central_gradient(
            lambda th: _ise_value_grad(means, covs, lam, th, dim)[0], theta, rel_step=1e-6
        )
        np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-8)


# -- W2 ---------------------------------------------------------------------------


def test_w2_single_component():
    g = Gaussian([1.0, 2.0], np.diag([2.0, 0.5]))
    out = w2_barycenter(problem([g], [1.0], "w2"))
    np.testing.assert_allclose(out.mean, g.mean, atol=1e-14)
    np.testing.assert_allclose(out.cov, g.cov, atol=1e-14)


def test_w2_one_dimensional_averages_mean_and_sd():
    out = w2_barycenter(problem([Gaussian(0.0, 1.0), Gaussian(2.0, 4.0)], [0.5, 0.5], "w2"))
    assert out.mean[0] == pytest.approx(1.0, abs=1e-12)
    assert out.cov[0, 0] == pytest.approx(2.25, abs=1e-10)


def test_w2_commuting_covariances_reduce_per_axis():
    comps = [
        Gaussian([0.0, 0.0], np.diag([1.0, 4.0])),
        Gaussian([2.0, -2.0], np.diag([4.0, 9.0])),
    ]
    out = w2_barycenter(problem(comps, [0.5, 0.5], "w2"))
    np.testing.assert_allclose(out.mean, [1.0, -1.0], atol=1e-10)
    np.testing.assert_allclose(out.cov, np.diag([2.25, 6.25]), atol=1e-8)


def test_w2_extra_iteration_changes_little():
    rng = np.random.default_rng(2)
    comps = [random_gaussian(rng, 2) for _ in range(3)]
    lam = np.array([0.2, 0.5, 0.3])
    out = w2_barycenter(problem(comps, lam, "w2"))
    s = out.cov
    root = spd_sqrtm(s)
    vals, vecs = np.linalg.eigh(s)
    inv_root = (vecs / np.sqrt(vals)) @ vecs.T
    mids = sum(l * spd_sqrtm(root @ g.cov @ root) for g, l in zip(comps, lam))
    s_next = inv_root @ mids @ mids @ inv_root
    before = sum(l * w2_squared(g, out) for g, l in zip(comps, lam))
    after = sum(l * w2_squared(g, Gaussian(out.mean, s_next)) for g, l in zip(comps, lam))
    assert abs(before - after) < 1e-6


# -- shared invariants ---------------------------------------------------------


@pytest.mark.parametrize("kind", ["kl", "cs", "ise", "w2"])
def test_idempotence(kind):
    g = Gaussian([0.7, -0.3], [[1.1, 0.2], [0.2, 0.8]])
    out = SOLVERS[kind](problem([g] * 4, [1.0, 2.0, 0.5, 1.5], kind))
    np.testing.assert_allclose(out.mean, g.mean, atol=1e-8)
    np.testing.assert_allclose(out.cov, g.cov, atol=1e-8)


@pytest.mark.parametrize("kind", ["kl", "cs", "ise", "w2"])
def test_lambda_scale_invariance(kind):
    rng = np.random.default_rng(3)
    comps = [random_gaussian(rng, 2) for _ in range(3)]
    lam = rng.uniform(0.2, 1.0, 3)
    a = SOLVERS[kind](problem(comps, lam, kind))
    b = SOLVERS[kind](problem(comps, 7.3 * lam, kind))
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-10)
    np.testing.assert_allclose(a.cov, b.cov, atol=1e-10)


@pytest.mark.parametrize("kind", ["kl", "cs", "ise", "w2"])
def test_stationarity_of_returned_barycenters(kind):
    rng = np.random.default_rng(4)
    for _ in range(20):
        dim = int(rng.integers(1, 3))
        count = int(rng.integers(2, 5))
        comps = [random_gaussian(rng, dim) for _ in range(count)]
        lam = rng.dirichlet(np.ones(count))
        out = SOLVERS[kind](problem(comps, lam, kind))
        assert fd_gradient_norm(kind, comps, lam, out) < 1e-4


def test_zero_lambdas_dropped():
    g1 = Gaussian(0.0, 1.0)
    g2 = Gaussian(5.0, 2.0)
    out = kl_barycenter(problem([g1, g2], [1.0, 0.0], "kl"))
    np.testing.assert_allclose(out.mean, g1.mean, atol=1e-14)
    np.testing.assert_allclose(out.cov, g1.cov, atol=1e-14)


def test_solve_barycenter_dispatch():
    g = Gaussian(0.0, 1.0)
    for kind in ("kl", "cs", "ise", "w2"):
        out = solve_barycenter(problem([g, g], [1.0, 1.0], kind))
        np.testing.assert_allclose(out.mean, g.mean, atol=1e-8)
    # softnll update is a moment match
    prob = BarycenterProblem((g, Gaussian(2.0, 1.0)), np.array([0.5, 0.5]), CostSpec.soft_nll(2.0))
    out = solve_barycenter(prob)
    assert out.mean[0] == pytest.approx(1.0, abs=1e-14)
    assert out.cov[0, 0] == pytest.approx(2.0, abs=1e-14)


def test_rejects_zero_lambda_sum():
    with pytest.raises(ValueError):
        BarycenterProblem((Gaussian(0.0, 1.0),), np.array([0.0]), CostSpec.kl())


def test_rejects_wrong_cost_tag():
    prob = problem([Gaussian(0.0, 1.0)], [1.0], "ise")
    with pytest.raises(ValueError):
        kl_barycenter(prob)
    with pytest.raises(ValueError):
        cs_barycenter(prob)


def test_fixed_point_config_validation():
    with pytest.raises(ValueError):
        FixedPointConfig(tol=0.0)
    with pytest.raises(ValueError):
        FixedPointConfig(damping=1.5)
