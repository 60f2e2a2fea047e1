"""Mixture reduction by minimizing entropic transport cost between component
sets, via alternating assignment (closed-form plan) and update (per-column
barycenter) steps.

The assignment step puts mass w_n * softmax_m(-c_nm / lam) on row n (row
argmin at lam = 0, ties to the lowest index), which is the exact minimizer of
the plan subproblem under the row-marginal constraint alone.  The update step
solves one barycenter problem per column with the plan column as weights and
then sets the reduced weights to the plan column sums.  Each step minimizes a
majorizing surrogate, so the objective trace is non-increasing.

Hard and soft clustering reductions are thin presets of the same loop
((kl, lam=0) and (softnll(I), lam=1)); both also run a literal transcription
of the classical clustering iteration in lockstep and verify the iterates
coincide.

Also provides a two-marginal Sinkhorn evaluation of the transport divergence
between two fixed mixtures and the mixture-divergence upper-bound checker.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.special import logsumexp, ndtr

from .barycenter import (
    ConvergenceError,
    FixedPointConfig,
    cs_barycenter_params,
    ise_barycenter_params,
    moment_match,
    w2_barycenter_params,
)
from .costs import CostSpec, cost_matrix
from .gaussian import DimensionError, Gaussian, SpdError, pairwise_kl, pairwise_expected_log_density
from .mixture import GaussianMixture, fit_em, mixture_ise, sample

__all__ = [
    "CostSpec",
    "ReductionConfig",
    "TransportPlan",
    "ReductionResult",
    "plan_update",
    "objective",
    "mm_reduce",
    "hard_cluster_reduce",
    "soft_cluster_reduce",
    "reduce_with_restarts",
    "ctd_sinkhorn",
    "upper_bound_check",
]

COST_CLIP = 1e12
DEGENERATE_COLUMN_TOL = 1e-10
_ROW_SUM_ATOL = 1e-9


@dataclass(frozen=True)
class ReductionConfig:
    """Settings for one reduction: target order M, cost, regularization
    strength lam (>= 0; defaults to 1 for softnll, else 0), stopping rule,
    and the restart protocol (independent EM inits on fresh samples)."""

    M: int
    cost: CostSpec = CostSpec.kl()
    lam: float | None = None
    max_iter: int = 200
    tol: float = 1e-8
    restarts: int = 10
    seed: int = 0
    barycenter_cfg: FixedPointConfig = field(default_factory=FixedPointConfig)
    init_samples: int = 1000
    em_max_iter: int = 100

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.lam is None:
            object.__setattr__(self, "lam", 1.0 if self.cost.kind == "softnll" else 0.0)
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")


class TransportPlan:
    """N x M nonnegative coupling whose row sums equal the original weights."""

    __slots__ = ("matrix",)

    def __init__(self, matrix, weights):
        matrix = np.asarray(matrix, dtype=float)
        weights = np.asarray(weights, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != weights.shape[0]:
            raise ValueError("plan shape incompatible with weights")
        if np.any(matrix < 0):
            raise ValueError("plan entries must be nonnegative")
        if np.max(np.abs(matrix.sum(axis=1) - weights)) > _ROW_SUM_ATOL:
            raise ValueError("plan row sums do not match the original weights")
        matrix = matrix.copy()
        matrix.setflags(write=False)
        self.matrix = matrix

    @property
    def shape(self):
        return self.matrix.shape

    def column_masses(self):
        return self.matrix.sum(axis=0)


@dataclass(frozen=True)
class ReductionResult:
    reduced: GaussianMixture
    plan: TransportPlan
    objective_trace: tuple
    status: str  # converged | max_iter | degenerate
    iterations: int

    def to_dict(self):
        return {
            "reduced": self.reduced.to_dict(),
            "objective_trace": [float(v) for v in self.objective_trace],
            "iterations": int(self.iterations),
            "status": self.status,
            "plan": [[float(v) for v in row] for row in self.plan.matrix],
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)


def _plan_from_costs(weights, costs, lam):
    """Row-constrained optimal plan for a fixed cost matrix.

    Costs are clipped to [0, 1e12] before exponentiation and the softmax is
    computed after per-row max subtraction, since e.g. KL costs overflow
    exp(-c/lam) at small lam.
    """
    if not np.all(np.isfinite(costs)):
        raise ValueError("cost matrix contains NaN or infinite entries")
    costs = np.clip(costs, 0.0, COST_CLIP)
    n, m = costs.shape
    if lam == 0.0:
        plan = np.zeros((n, m))
        plan[np.arange(n), np.argmin(costs, axis=1)] = weights
        return plan
    logits = -costs / lam
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return weights[:, None] * p


def _entropy(plan):
    """H(pi) = -sum pi (log pi - 1), with 0 log 0 := 0."""
    pos = plan[plan > 0]
    return float(np.sum(pos * (1.0 - np.log(pos))))


def plan_update(original, reduced, cost, lam):
    """Optimal row-constrained transport plan from original to reduced
    components under the given cost and regularization strength."""
    if original.dim != reduced.dim:
        raise DimensionError(f"dimension mismatch: {original.dim} vs {reduced.dim}")
    costs = cost_matrix(
        original.means, original.covs, reduced.means, reduced.covs, cost, reduced.weights
    )
    return TransportPlan(_plan_from_costs(original.weights, costs, lam), original.weights)


def objective(original, reduced, plan, cost, lam):
    """sum(pi * c) - lam * H(pi) for a feasible plan."""
    costs = cost_matrix(
        original.means, original.covs, reduced.means, reduced.covs, cost, reduced.weights
    )
    matrix = plan.matrix if isinstance(plan, TransportPlan) else np.asarray(plan, float)
    value = float(np.sum(matrix * costs))
    if lam > 0:
        value -= lam * _entropy(matrix)
    return value


# ---------------------------------------------------------------------------
# Generic alternating loop, shared by the Gaussian and exponential-family
# reductions.  Components are opaque; cost_builder and bary_solver close over
# whatever representation the family uses.
# ---------------------------------------------------------------------------


def _evaluate_state(weights, components, red_weights, cost_builder, lam):
    costs = cost_builder(components, red_weights)
    if not np.all(np.isfinite(costs)):
        raise ValueError("cost matrix contains NaN or infinite entries")
    costs = np.clip(costs, 0.0, COST_CLIP)
    plan = _plan_from_costs(weights, costs, lam)
    value = float(np.sum(plan * costs))
    if lam > 0:
        value -= lam * _entropy(plan)
    return plan, value


def _mm_engine(weights, init_components, init_weights, cost_builder, bary_solver,
               lam, max_iter, tol, guard=None):
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    components = list(init_components)
    red_weights = np.asarray(init_weights, dtype=float)
    trace = []
    status = "max_iter"
    iterations = 0
    plan_out = None
    degenerate_at_exit = False

    for t in range(max_iter):
        plan, value = _evaluate_state(weights, components, red_weights, cost_builder, lam)
        trace.append(value)
        if t > 0 and abs(trace[-1] - trace[-2]) < tol * max(abs(trace[-2]), 1e-300):
            status = "converged"
            break

        col = plan.sum(axis=0)
        new_components = []
        degenerate_now = False
        for m in range(len(components)):
            if col[m] < DEGENERATE_COLUMN_TOL:
                # freeze-and-carry keeps the descent argument intact and M fixed
                new_components.append(components[m])
                degenerate_now = True
                continue
            try:
                cand = bary_solver(plan[:, m], components[m])
            except (ConvergenceError, SpdError):
                cand = components[m]
            if guard is not None and cand is not components[m]:
                lam_col = plan[:, m]
                val_cand = float(lam_col @ guard(cand))
                val_prev = float(lam_col @ guard(components[m]))
                if val_cand > val_prev + 1e-12 * max(1.0, abs(val_prev)):
                    cand = components[m]
            new_components.append(cand)
        components = new_components
        red_weights = col
        plan_out = plan
        iterations += 1
        degenerate_at_exit = degenerate_now
    else:
        # exhausted the budget: still record the objective of the final state
        _, value = _evaluate_state(weights, components, red_weights, cost_builder, lam)
        trace.append(value)

    if degenerate_at_exit:
        status = "degenerate"
    return components, red_weights, trace, status, iterations, plan_out


def _gaussian_engine_parts(original, cfg):
    means, covs = original.means, original.covs

    def cost_builder(components, red_weights):
        red_means = np.stack([g.mean for g in components])
        red_covs = np.stack([g.cov for g in components])
        return cost_matrix(means, covs, red_means, red_covs, cfg.cost, red_weights)

    kind = cfg.cost.kind

    def bary_solver(lams, prev):
        keep = lams > 0
        m_k, c_k, l_k = means[keep], covs[keep], lams[keep]
        if kind in ("kl", "softnll"):
            # moment_match normalizes internally; passing raw plan-column
            # weights keeps the arithmetic identical to the clustering
            # transcriptions checked in lockstep
            mu, s = moment_match(m_k, c_k, l_k)
            return Gaussian(mu, s)
        l_k = l_k / l_k.sum()
        if kind == "cs":
            mu, s = cs_barycenter_params(m_k, c_k, l_k, cfg.barycenter_cfg)
        elif kind == "ise":
            mu, s = ise_barycenter_params(m_k, c_k, l_k, cfg.barycenter_cfg)
        elif kind == "w2":
            mu, s = w2_barycenter_params(m_k, c_k, l_k, cfg.barycenter_cfg)
        else:
            raise ValueError(f"no barycenter update for cost {kind!r}")
        return Gaussian(mu, s)

    guard = None
    if kind in ("cs", "ise", "w2"):
        # iterative solvers can return a stationary point worse than the
        # incumbent; rejecting those keeps the objective trace monotone
        def guard(g):
            return cost_matrix(means, covs, g.mean[None, :], g.cov[None, :, :], cfg.cost)[:, 0]

    return cost_builder, bary_solver, guard


def mm_reduce(original, cfg, init):
    """Reduce `original` to order cfg.M starting from the mixture `init`.

    Alternates the plan update with per-column barycenter solves, then sets
    the reduced weights to the plan column sums.  Stops when the relative
    objective change drops below cfg.tol or after cfg.max_iter iterations.
    A column whose mass falls below 1e-10 keeps its previous component
    (weight = column mass); if that persists at exit the status degrades to
    "degenerate".
    """
    if init.order != cfg.M:
        raise ValueError(f"init has order {init.order}, expected M={cfg.M}")
    if init.dim != original.dim:
        raise DimensionError(f"dimension mismatch: {original.dim} vs {init.dim}")
    cost_builder, bary_solver, guard = _gaussian_engine_parts(original, cfg)
    comps, red_w, trace, status, iters, plan = _mm_engine(
        original.weights, list(init.components), init.weights,
        cost_builder, bary_solver, cfg.lam, cfg.max_iter, cfg.tol, guard,
    )
    reduced = GaussianMixture.from_components(red_w, comps)
    return ReductionResult(
        reduced=reduced,
        plan=TransportPlan(plan, original.weights),
        objective_trace=tuple(trace),
        status=status,
        iterations=iters,
    )


def reduce_with_restarts(original, cfg):
    """Run mm_reduce from cfg.restarts independent inits, each obtained by
    fitting an order-M mixture to fresh samples of the original; the best
    final objective wins, ties going to the lowest restart index."""
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
    best = None
    best_value = np.inf
    for seq in children:
        rng = np.random.default_rng(seq)
        points = sample(original, cfg.init_samples, rng)
        init = fit_em(points, cfg.M, max_iter=cfg.em_max_iter, rng=rng)
        result = mm_reduce(original, cfg, init)
        value = result.objective_trace[-1]
        if value < best_value:
            best, best_value = result, value
    return best


# ---------------------------------------------------------------------------
# Clustering presets with literal-transcription lockstep checks
# ---------------------------------------------------------------------------


def _assert_lockstep(step, got_w, got_means, got_covs, want_w, want_means, want_covs):
    tol = 1e-12
    if (
        np.max(np.abs(got_w - want_w)) > tol
        or np.max(np.abs(got_means - want_means)) > tol
        or np.max(np.abs(got_covs - want_covs)) > tol
    ):
        raise AssertionError(f"clustering transcription diverged from the engine at step {step}")


def hard_cluster_reduce(original, m, init, max_iter=200, tol=1e-8):
    """k-means style reduction: assign each component to its nearest center in
    KL, re-fit centers by moment matching.

    Runs the transport formulation (kl cost, lam = 0) and a literal
    transcription of the classical iteration in lockstep and verifies the
    iterates agree to 1e-12.
    """
    cfg = ReductionConfig(M=m, cost=CostSpec.kl(), lam=0.0, max_iter=max_iter, tol=tol)
    w, means, covs = original.weights, original.means, original.covs

    lit_means, lit_covs = init.means.copy(), init.covs.copy()
    lit_w = init.weights.copy()

    cost_builder, bary_solver, guard = _gaussian_engine_parts(original, cfg)
    components = list(init.components)
    red_weights = init.weights
    trace = []
    status = "max_iter"
    iterations = 0
    plan_out = None
    degenerate_at_exit = False
    for t in range(max_iter):
        plan, value = _evaluate_state(w, components, red_weights, cost_builder, 0.0)
        trace.append(value)
        if t > 0 and abs(trace[-1] - trace[-2]) < tol * max(abs(trace[-2]), 1e-300):
            status = "converged"
            break

        col = plan.sum(axis=0)
        new_components = []
        degenerate_at_exit = False
        for j in range(m):
            if col[j] < DEGENERATE_COLUMN_TOL:
                new_components.append(components[j])
                degenerate_at_exit = True
            else:
                new_components.append(bary_solver(plan[:, j], components[j]))
        components, red_weights = new_components, col
        plan_out = plan
        iterations += 1

        # literal iteration: nearest center in KL, then moment matching
        dist = pairwise_kl(means, covs, lit_means, lit_covs)
        assign = np.argmin(dist, axis=1)
        for j in range(m):
            mask = assign == j
            wj = float(np.einsum("n->", w[mask])) if mask.any() else 0.0
            lit_w[j] = wj
            if wj < DEGENERATE_COLUMN_TOL:
                continue
            mu, cov = moment_match(means[mask], covs[mask], w[mask])
            lit_means[j], lit_covs[j] = mu, cov

        got_means = np.stack([g.mean for g in components])
        got_covs = np.stack([g.cov for g in components])
        _assert_lockstep(t, red_weights, got_means, got_covs, lit_w, lit_means, lit_covs)
    else:
        _, value = _evaluate_state(w, components, red_weights, cost_builder, 0.0)
        trace.append(value)

    if degenerate_at_exit:
        status = "degenerate"
    reduced = GaussianMixture.from_components(red_weights, components)
    return ReductionResult(reduced, TransportPlan(plan_out, w), tuple(trace), status, iterations)


def soft_cluster_reduce(original, m, sharpness, init, max_iter=200, tol=1e-8):
    """Soft clustering reduction: responsibilities are a weighted softmax of
    expected log densities with sharpness I, updates are responsibility-
    weighted moment matching.

    Equivalent to the transport formulation with the softnll(I) cost at
    lam = 1; a literal transcription runs in lockstep and the recovered
    responsibilities are checked against their defining softmax to 1e-10.
    """
    if not sharpness > 0:
        raise ValueError("sharpness I must be > 0")
    cfg = ReductionConfig(M=m, cost=CostSpec.soft_nll(sharpness), lam=1.0,
                          max_iter=max_iter, tol=tol)
    w, means, covs = original.weights, original.means, original.covs

    lit_means, lit_covs = init.means.copy(), init.covs.copy()
    lit_w = init.weights.copy()

    cost_builder, bary_solver, guard = _gaussian_engine_parts(original, cfg)
    components = list(init.components)
    red_weights = init.weights
    trace = []
    status = "max_iter"
    iterations = 0
    plan_out = None
    for t in range(max_iter):
        plan, value = _evaluate_state(w, components, red_weights, cost_builder, 1.0)
        trace.append(value)

        # recovered responsibilities must satisfy their defining softmax
        red_means = np.stack([g.mean for g in components])
        red_covs = np.stack([g.cov for g in components])
        e = pairwise_expected_log_density(means, covs, red_means, red_covs)
        logits = np.log(np.maximum(red_weights, 1e-300))[None, :] + sharpness * e
        logits = logits - logits.max(axis=1, keepdims=True)
        z_ref = np.exp(logits)
        z_ref /= z_ref.sum(axis=1, keepdims=True)
        z_got = plan / w[:, None]
        if np.max(np.abs(z_got - z_ref)) > 1e-10:
            raise AssertionError("plan responsibilities diverged from the softmax form")

        if t > 0 and abs(trace[-1] - trace[-2]) < tol * max(abs(trace[-2]), 1e-300):
            status = "converged"
            break

        col = plan.sum(axis=0)
        new_components = []
        for j in range(m):
            if col[j] < DEGENERATE_COLUMN_TOL:
                new_components.append(components[j])
            else:
                new_components.append(bary_solver(plan[:, j], components[j]))
        components, red_weights = new_components, col
        plan_out = plan
        iterations += 1

        # literal iteration: responsibilities then weighted moment matching
        e_lit = pairwise_expected_log_density(means, covs, lit_means, lit_covs)
        logits = np.log(np.maximum(lit_w, 1e-300))[None, :] + sharpness * e_lit
        logits = logits - logits.max(axis=1, keepdims=True)
        z = np.exp(logits)
        z /= z.sum(axis=1, keepdims=True)
        for j in range(m):
            lam_j = z[:, j] * w
            wj = float(np.einsum("n->", lam_j))
            lit_w[j] = wj
            if wj < DEGENERATE_COLUMN_TOL:
                continue
            mu, cov = moment_match(means, covs, lam_j)
            lit_means[j], lit_covs[j] = mu, cov

        got_means = np.stack([g.mean for g in components])
        got_covs = np.stack([g.cov for g in components])
        _assert_lockstep(t, red_weights, got_means, got_covs, lit_w, lit_means, lit_covs)
    else:
        _, value = _evaluate_state(w, components, red_weights, cost_builder, 1.0)
        trace.append(value)

    reduced = GaussianMixture.from_components(red_weights, components)
    return ReductionResult(reduced, TransportPlan(plan_out, w), tuple(trace), status, iterations)


# ---------------------------------------------------------------------------
# Two-marginal entropic transport between fixed mixtures
# ---------------------------------------------------------------------------


def _round_to_marginals(plan, wp, wq):
    """Project a near-feasible plan onto the transport polytope: shrink rows
    and columns that overshoot, then spread the leftover mass as a rank-one
    update.  Marginals come out exact; the cost shift is bounded by the moved
    mass times the largest cost entry."""
    tiny = 1e-300
    row = plan.sum(axis=1)
    plan = plan * np.minimum(wp / np.maximum(row, tiny), 1.0)[:, None]
    col = plan.sum(axis=0)
    plan = plan * np.minimum(wq / np.maximum(col, tiny), 1.0)[None, :]
    d_row = np.clip(wp - plan.sum(axis=1), 0.0, None)
    d_col = np.clip(wq - plan.sum(axis=0), 0.0, None)
    total = d_row.sum()
    if total > tiny:
        plan = plan + np.outer(d_row, d_col) / total
    return plan


def ctd_sinkhorn(p, q, cost, lam, max_iter=200_000, tol=1e-9):
    """Entropic transport divergence between two fixed mixtures by log-domain
    row/column scaling.

    Small lam is handled by annealing the regularization down from the cost
    scale; if the scaling error still bottoms out above tol (tie structure at
    the limit of float resolution), the plan is projected back onto the
    transport polytope so the marginals are exact.  Returns
    (sum(pi c) - lam H(pi), plan); the plan's marginals match the two weight
    vectors within tol.  Requires lam > 0 and a weight-free cost (softnll
    reads reduced weights and is excluded).
    """
    if not lam > 0:
        raise ValueError("ctd_sinkhorn requires lam > 0")
    if cost.kind == "softnll":
        raise ValueError("softnll cost is not defined between two fixed mixtures")
    if p.dim != q.dim:
        raise DimensionError(f"dimension mismatch: {p.dim} vs {q.dim}")

    rows = p.weights > 0
    cols = q.weights > 0
    wp = p.weights[rows]
    wq = q.weights[cols]
    costs = cost_matrix(p.means[rows], p.covs[rows], q.means[cols], q.covs[cols], cost)
    if not np.all(np.isfinite(costs)):
        raise ValueError("cost matrix contains NaN or infinite entries")

    log_wp = np.log(wp)
    log_wq = np.log(wq)

    def scale(f, g, lam_k, budget, skip_stagnant):
        plan = np.exp((f[:, None] + g[None, :] - costs) / lam_k)
        history = []
        for used in range(1, budget + 1):
            f = lam_k * (log_wp - logsumexp((g[None, :] - costs) / lam_k, axis=1))
            g = lam_k * (log_wq - logsumexp((f[:, None] - costs) / lam_k, axis=0))
            plan = np.exp((f[:, None] + g[None, :] - costs) / lam_k)
            row_err = float(np.max(np.abs(plan.sum(axis=1) - wp)))
            col_err = float(np.max(np.abs(plan.sum(axis=0) - wq)))
            err = max(row_err, col_err)
            if err < tol:
                return f, g, plan, used, True
            history.append(err)
            # slow steady drift is real progress (a tie channel filling up)
            # and must run to completion; an error floor is worth skipping
            if skip_stagnant and len(history) > 500 and err > (1 - 1e-4) * history[-501]:
                break
        return f, g, plan, len(history), False

    # Cold start at the target regularization first: benign and degenerate
    # instances converge almost immediately.  If that stalls, anneal from the
    # cost scale down to lam, running every level until it converges or its
    # error hits a floor: a level abandoned mid-progress hands the next one a
    # wrong dual basis, which at smaller lam costs exponentially more scaling
    # steps to repair.
    zero = np.zeros
    f, g, plan, spent, converged = scale(
        zero(wp.shape[0]), zero(wq.shape[0]), lam, min(2000, max_iter), False
    )
    if not converged:
        levels = []
        level = max(float(np.max(costs)), lam * 2.0)
        while level > lam:
            levels.append(level)
            level /= 2.0
        f = zero(wp.shape[0])
        g = zero(wq.shape[0])
        for lam_k in levels:
            f, g, _, used, _ = scale(f, g, lam_k, min(50_000, max(0, max_iter - spent)), True)
            spent += used
        f, g, plan, used, converged = scale(f, g, lam, max(0, max_iter - spent), False)
    if not converged:
        # the scaling error has hit its floating-point floor; project the plan
        # back onto the transport polytope so the returned marginals are exact
        plan = _round_to_marginals(plan, wp, wq)
        row_err = float(np.max(np.abs(plan.sum(axis=1) - wp)))
        col_err = float(np.max(np.abs(plan.sum(axis=0) - wq)))
        if max(row_err, col_err) >= tol:
            raise ConvergenceError(
                f"Sinkhorn scaling did not converge in {max_iter} iterations"
            )

    value = float(np.sum(plan * costs)) - lam * _entropy(plan)
    full = np.zeros((p.order, q.order))
    full[np.ix_(rows, cols)] = plan
    return value, full


# ---------------------------------------------------------------------------
# Upper-bound check: divergence between mixtures vs transport linear part
# ---------------------------------------------------------------------------


def _mixture_kl_quad(p, q):
    if p.dim != 1:
        raise ValueError("mixture KL by quadrature is available in one dimension only")
    sigmas = np.sqrt(p.covs[:, 0, 0])
    lo = float(np.min(p.means[:, 0] - 12.0 * sigmas))
    hi = float(np.max(p.means[:, 0] + 12.0 * sigmas))

    def integrand(x):
        point = np.array([x])
        lp = p.log_density(point)
        return math.exp(lp) * (lp - q.log_density(point))

    value, _ = integrate.quad(integrand, lo, hi, epsabs=1e-10, epsrel=1e-10, limit=400)
    return value


def _mixture_w2_quad(p, q, nodes=256):
    """1-d squared Wasserstein distance via quantile-function quadrature."""
    if p.dim != 1:
        raise ValueError("mixture W2 by quadrature is available in one dimension only")

    def cdf(mix, x):
        mu = mix.means[:, 0]
        sd = np.sqrt(mix.covs[:, 0, 0])
        return float(mix.weights @ ndtr((x - mu) / sd))

    def quantile(mix, u):
        mu = mix.means[:, 0]
        sd = np.sqrt(mix.covs[:, 0, 0])
        lo = float(np.min(mu - 14 * sd))
        hi = float(np.max(mu + 14 * sd))
        return optimize.brentq(lambda x: cdf(mix, x) - u, lo, hi, xtol=1e-12)

    x_nodes, weights = np.polynomial.legendre.leggauss(nodes)
    u = 0.5 * (x_nodes + 1.0)
    du = 0.5 * weights
    diffs = np.array([quantile(p, ui) - quantile(q, ui) for ui in u])
    return float(du @ (diffs * diffs))


def upper_bound_check(p, q, cost, lam=1e-4):
    """Check that the divergence between two mixtures is bounded above by the
    linear transport cost at a near-zero regularization.

    cost may be "ise" (any dimension, closed form), or "kl"/"w2" (one
    dimension, quadrature).  The cs cost is rejected: it lacks the joint
    convexity the bound requires.  Returns (lhs, rhs, holds) with
    holds = lhs <= rhs + 1e-6.
    """
    if isinstance(cost, str):
        cost = CostSpec(cost)
    if cost.kind == "ise":
        lhs = mixture_ise(p, q)
    elif cost.kind == "kl":
        lhs = _mixture_kl_quad(p, q)
    elif cost.kind == "w2":
        lhs = _mixture_w2_quad(p, q)
    else:
        raise ValueError(f"upper bound check does not support cost {cost.kind!r}")
    _, plan = ctd_sinkhorn(p, q, cost, lam)
    costs = cost_matrix(p.means, p.covs, q.means, q.covs, cost)
    rhs = float(np.sum(plan * costs))
    return lhs, rhs, bool(lhs <= rhs + 1e-6)
