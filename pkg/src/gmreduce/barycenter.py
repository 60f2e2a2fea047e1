"""Weighted barycenters of Gaussians under each supported cost.

The KL barycenter is moment matching and closed form.  The CS barycenter is
found by alternating damped fixed-point updates of its stationarity
equations.  The ISE barycenter is found by gradient descent with backtracking
on (mean, log-Cholesky of the covariance).  The W2 barycenter uses the
classical covariance fixed point.  All iterative solvers initialize from the
KL barycenter: cheap, always SPD, and close for near-coincident components.

Zero-weight entries are dropped before solving to avoid 0 * inf in gradients;
weights are normalized internally, so scaling all of them by a positive
constant leaves the result unchanged.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .costs import CostSpec
from .gaussian import Gaussian, SpdError, LOG_2PI, spd_sqrtm

__all__ = [
    "ConvergenceError",
    "FixedPointConfig",
    "BarycenterProblem",
    "kl_barycenter",
    "cs_barycenter",
    "ise_barycenter",
    "w2_barycenter",
    "solve_barycenter",
    "moment_match",
]


class ConvergenceError(RuntimeError):
    """An iterative solver failed to converge within its iteration budget."""


@dataclass(frozen=True)
class FixedPointConfig:
    max_iter: int = 500
    tol: float = 1e-10  # parameter-change norm
    damping: float = 0.5

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must be in (0, 1]")


@dataclass(frozen=True)
class BarycenterProblem:
    components: tuple
    lambdas: np.ndarray
    cost: CostSpec

    def __post_init__(self):
        lambdas = np.asarray(self.lambdas, dtype=float)
        if np.any(lambdas < 0):
            raise ValueError("lambdas must be nonnegative")
        if not lambdas.sum() > 0:
            raise ValueError("lambdas must have positive sum")
        comps = tuple(self.components)
        if len(comps) != lambdas.shape[0]:
            raise ValueError("one lambda per component required")
        dims = {g.dim for g in comps}
        if len(dims) != 1:
            raise ValueError("components must share a dimension")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "lambdas", lambdas)

    def stacked(self):
        """(means, covs, lambdas) with zero-lambda entries dropped."""
        keep = self.lambdas > 0
        means = np.stack([g.mean for g in self.components])[keep]
        covs = np.stack([g.cov for g in self.components])[keep]
        return means, covs, self.lambdas[keep]


def moment_match(means, covs, lambdas):
    """Mean and covariance of the lambda-weighted mixture of components.

    mean = sum(l_n m_n) / sum(l); cov = sum(l_n (S_n + (m_n - mean) outer)) / sum(l).
    """
    lambdas = np.asarray(lambdas, dtype=float)
    total = lambdas.sum()
    mean = (lambdas @ means) / total
    diff = means - mean
    cov = (
        np.einsum("n,nij->ij", lambdas, covs)
        + np.einsum("n,ni,nj->ij", lambdas, diff, diff)
    ) / total
    return mean, 0.5 * (cov + cov.T)


def kl_barycenter(prob):
    """Closed-form KL barycenter: moment matching."""
    if prob.cost.kind != "kl":
        raise ValueError(f"kl_barycenter called with cost {prob.cost.kind!r}")
    means, covs, lam = prob.stacked()
    mean, cov = moment_match(means, covs, lam)
    return Gaussian(mean, cov)


# ---------------------------------------------------------------------------
# Cauchy-Schwarz barycenter
# ---------------------------------------------------------------------------


def _is_spd(mat):
    try:
        np.linalg.cholesky(0.5 * (mat + mat.T))
        return True
    except np.linalg.LinAlgError:
        return False


def cs_barycenter_params(means, covs, lam, cfg):
    mu, s = moment_match(means, covs, lam)
    d = means.shape[1]
    eye = np.eye(d)
    for _ in range(cfg.max_iter):
        v_inv = np.linalg.inv(covs + s)
        a = np.einsum("n,nij->ij", lam, v_inv)
        b = np.einsum("n,nij,nj->i", lam, v_inv, means)
        mu_new = np.linalg.solve(a, b)

        diff = means - mu_new
        q = np.einsum("nij,nj->ni", v_inv, diff)
        inner = eye[None, :, :] - np.einsum("ni,nj->nij", diff, q)
        prec = 2.0 * np.einsum("n,nij,njk->ik", lam, v_inv, inner)
        prec = 0.5 * (prec + prec.T)
        try:
            s_raw = np.linalg.inv(prec)
        except np.linalg.LinAlgError:
            raise ConvergenceError("singular precision in CS fixed point") from None

        gamma = cfg.damping
        s_new = None
        for _ in range(10):
            cand = (1.0 - gamma) * s + gamma * s_raw
            cand = 0.5 * (cand + cand.T)
            if _is_spd(cand):
                s_new = cand
                break
            gamma *= 0.5
        if s_new is None:
            raise SpdError("CS covariance update left the SPD cone after 10 damping halvings")

        delta = np.linalg.norm(mu_new - mu) + np.linalg.norm(s_new - s)
        mu, s = mu_new, s_new
        if delta < cfg.tol:
            return mu, s
    raise ConvergenceError(f"CS barycenter did not converge in {cfg.max_iter} iterations")


def cs_barycenter(prob, cfg=FixedPointConfig()):
    """Stationary point of the lambda-weighted CS divergence to the components.

    Alternates the mean update with a damped covariance update of the
    stationarity equation; damping is halved (up to 10 times) whenever the
    update would leave the SPD cone.
    """
    if prob.cost.kind != "cs":
        raise ValueError(f"cs_barycenter called with cost {prob.cost.kind!r}")
    means, covs, lam = prob.stacked()
    if means.shape[0] == 1:
        return Gaussian(means[0], covs[0])
    mu, s = cs_barycenter_params(means, covs, lam / lam.sum(), cfg)
    return Gaussian(mu, s)


# ---------------------------------------------------------------------------
# ISE barycenter
# ---------------------------------------------------------------------------


def _chol_pack(mu, lower):
    d = mu.shape[0]
    idx = np.tril_indices(d, k=-1)
    return np.concatenate([mu, np.log(np.diag(lower)), lower[idx]])


def _chol_unpack(theta, d):
    mu = theta[:d]
    lower = np.zeros((d, d))
    np.fill_diagonal(lower, np.exp(theta[d : 2 * d]))
    idx = np.tril_indices(d, k=-1)
    lower[idx] = theta[2 * d :]
    return mu, lower


def _ise_value_grad(means, covs, lam, theta, d):
    """Weighted-ISE objective and its gradient in the packed parametrization."""
    mu, lower = _chol_unpack(theta, d)
    s = lower @ lower.T
    log_det_s = 2.0 * float(np.sum(np.log(np.diag(lower))))
    const = (4.0 * math.pi) ** (-0.5 * d)

    v = covs + s
    v_inv = np.linalg.inv(v)
    sign, logdet_v = np.linalg.slogdet(v)
    diff = means - mu
    q = np.einsum("nij,nj->ni", v_inv, diff)
    quad = np.einsum("ni,ni->n", diff, q)
    log_phi = -0.5 * (d * LOG_2PI + logdet_v + quad)
    phi = np.exp(log_phi)

    logdets_n = 2.0 * np.sum(
        np.log(np.diagonal(np.linalg.cholesky(covs), axis1=1, axis2=2)), axis=1
    )
    self_n = const * np.exp(-0.5 * logdets_n)
    self_s = const * math.exp(-0.5 * log_det_s)
    value = float(lam @ (self_n + self_s - 2.0 * phi))

    grad_mu = -2.0 * np.einsum("n,n,ni->i", lam, phi, q)
    s_inv = np.linalg.inv(s)
    grad_s = -0.5 * self_s * s_inv + np.einsum(
        "n,n,nij->ij", lam, phi, v_inv
    ) - np.einsum("n,n,ni,nj->ij", lam, phi, q, q)
    grad_lower = 2.0 * grad_s @ lower
    grad_diag = np.diag(grad_lower) * np.diag(lower)
    idx = np.tril_indices(d, k=-1)
    grad = np.concatenate([grad_mu, grad_diag, grad_lower[idx]])
    return value, grad


def _ise_newton_polish(means, covs, lam, theta, d, max_steps=6):
    """Drive the analytic gradient to machine precision.

    A few damped Newton steps (Hessian by finite differences of the gradient)
    make the returned stationary point insensitive to ulp-level perturbations
    of the weights, which the lambda-scale-invariance contract requires.
    """
    n_par = theta.shape[0]
    value, grad = _ise_value_grad(means, covs, lam, theta, d)
    for _ in range(max_steps):
        gnorm = float(np.linalg.norm(grad))
        if gnorm < 1e-14:
            break
        hess = np.empty((n_par, n_par))
        for i in range(n_par):
            h = 1e-6 * max(1.0, abs(theta[i]))
            up = theta.copy()
            dn = theta.copy()
            up[i] += h
            dn[i] -= h
            hess[:, i] = (
                _ise_value_grad(means, covs, lam, up, d)[1]
                - _ise_value_grad(means, covs, lam, dn, d)[1]
            ) / (2.0 * h)
        hess = 0.5 * (hess + hess.T)
        try:
            delta = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            break
        stepped = False
        t = 1.0
        for _ in range(20):
            cand = theta + t * delta
            cand_value, cand_grad = _ise_value_grad(means, covs, lam, cand, d)
            if float(np.linalg.norm(cand_grad)) < gnorm and cand_value <= value + 1e-15:
                theta, value, grad = cand, cand_value, cand_grad
                stepped = True
                break
            t *= 0.5
        if not stepped:
            break
    return theta


def ise_barycenter_params(means, covs, lam, cfg, grad_tol=1e-9):
    d = means.shape[1]
    mu0, s0 = moment_match(means, covs, lam)
    theta = _chol_pack(mu0, np.linalg.cholesky(s0))
    value, grad = _ise_value_grad(means, covs, lam, theta, d)
    step = 1.0
    prev_theta = None
    prev_grad = None
    for _ in range(cfg.max_iter):
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= grad_tol:
            break
        if prev_theta is not None:
            # Barzilai-Borwein spectral step as the trial step length
            dt = theta - prev_theta
            dg = grad - prev_grad
            denom = float(dt @ dg)
            if denom > 0:
                step = float(dt @ dt) / denom
            step = min(max(step, 1e-12), 1e6)
        accepted = False
        t = step
        for _ in range(50):
            cand = theta - t * grad
            cand_value, cand_grad = _ise_value_grad(means, covs, lam, cand, d)
            if cand_value <= value - 1e-4 * t * gnorm * gnorm:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            warnings.warn("ISE barycenter line search stalled; returning current iterate")
            break
        prev_theta, prev_grad = theta, grad
        if float(np.linalg.norm(cand - theta)) < cfg.tol and cand_value >= value - 1e-15:
            theta, value, grad = cand, cand_value, cand_grad
            break
        theta, value, grad = cand, cand_value, cand_grad
    theta = _ise_newton_polish(means, covs, lam, theta, d)
    mu, lower = _chol_unpack(theta, d)
    return mu, lower @ lower.T


def ise_barycenter(prob, cfg=FixedPointConfig()):
    """Minimizer of the lambda-weighted ISE to the components, by descent on
    (mean, log-Cholesky covariance) with backtracking; objective is
    non-increasing across accepted steps."""
    if prob.cost.kind != "ise":
        raise ValueError(f"ise_barycenter called with cost {prob.cost.kind!r}")
    means, covs, lam = prob.stacked()
    if means.shape[0] == 1:
        return Gaussian(means[0], covs[0])
    mu, s = ise_barycenter_params(means, covs, lam / lam.sum(), cfg)
    return Gaussian(mu, s)


# ---------------------------------------------------------------------------
# W2 barycenter
# ---------------------------------------------------------------------------


def _spd_inv_sqrtm(mat):
    vals, vecs = np.linalg.eigh(0.5 * (mat + mat.T))
    if np.any(vals <= 0):
        raise SpdError("matrix not positive definite in inverse square root")
    return (vecs / np.sqrt(vals)) @ vecs.T


def w2_barycenter_params(means, covs, lam, cfg):
    mean = lam @ means
    d = means.shape[1]
    if d == 1:
        sigma = float(lam @ np.sqrt(covs[:, 0, 0]))
        return mean, np.array([[sigma * sigma]])
    _, s = moment_match(means, covs, lam)
    for _ in range(cfg.max_iter):
        root = spd_sqrtm(s)
        inv_root = _spd_inv_sqrtm(s)
        mids = spd_sqrtm(root[None] @ covs @ root[None])
        r = np.einsum("n,nij->ij", lam, mids)
        s_new = inv_root @ r @ r @ inv_root
        s_new = 0.5 * (s_new + s_new.T)
        if np.linalg.norm(s_new - s) < cfg.tol:
            return mean, s_new
        s = s_new
    raise ConvergenceError(f"W2 barycenter did not converge in {cfg.max_iter} iterations")


def w2_barycenter(prob, cfg=FixedPointConfig()):
    """W2 barycenter: mean is the weighted mean; covariance solves the
    standard fixed point S = S^-1/2 (sum_n l_n (S^1/2 S_n S^1/2)^1/2)^2 S^-1/2."""
    if prob.cost.kind != "w2":
        raise ValueError(f"w2_barycenter called with cost {prob.cost.kind!r}")
    means, covs, lam = prob.stacked()
    if means.shape[0] == 1:
        return Gaussian(means[0], covs[0])
    mean, s = w2_barycenter_params(means, covs, lam / lam.sum(), cfg)
    return Gaussian(mean, s)


def solve_barycenter(prob, cfg=FixedPointConfig()):
    """Dispatch on the problem's cost.  softnll reduces to the KL barycenter
    since only its expected-log-density term depends on the component."""
    kind = prob.cost.kind
    if kind in ("kl", "softnll"):
        means, covs, lam = prob.stacked()
        mean, cov = moment_match(means, covs, lam)
        return Gaussian(mean, cov)
    if kind == "cs":
        return cs_barycenter(prob, cfg)
    if kind == "ise":
        return ise_barycenter(prob, cfg)
    if kind == "w2":
        return w2_barycenter(prob, cfg)
    raise ValueError(f"no barycenter solver for cost {kind!r}")
