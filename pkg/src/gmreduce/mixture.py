"""Gaussian mixtures: density, squared-L2 distance, sampling, and EM fitting.

A mixture is stored as stacked arrays (weights, means, covs) so mixture-level
operations vectorize; individual components are materialized on demand as
:class:`~gmreduce.gaussian.Gaussian` objects.
"""

import json
import math

import numpy as np

from .gaussian import (
    DimensionError,
    Gaussian,
    SpdError,
    LOG_2PI,
    _gated_cholesky,
    log_cross_density,
)

__all__ = [
    "GaussianMixture",
    "mixture_ise",
    "sample",
    "fit_em",
    "l2_inner",
    "l2_norm_sq",
]

WEIGHT_FLOOR = 1e-12
_NORMALIZE_ATOL = 1e-9
_READER_WEIGHT_ATOL = 1e-6
# entries per block when evaluating large cross-density matrices
_BLOCK_ENTRIES = 4_000_000


class GaussianMixture:
    """Finite Gaussian mixture with normalized weights.

    Weights are normalized on construction when their sum strays more than
    1e-9 from one; weights below 1e-12 are clamped to zero (and the rest
    renormalized) to avoid log(0) in entropic terms downstream.  Immutable
    after construction.
    """

    __slots__ = ("weights", "means", "covs", "_chols", "_logdets")

    def __init__(self, weights, means, covs):
        weights = np.asarray(weights, dtype=float).copy()
        means = np.asarray(means, dtype=float)
        covs = np.asarray(covs, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        if covs.ndim == 1:
            covs = covs[:, None, None]
        k, d = means.shape
        if weights.shape != (k,):
            raise DimensionError(f"{k} components but {weights.shape[0]} weights")
        if covs.shape != (k, d, d):
            raise DimensionError(f"covs shape {covs.shape}, expected {(k, d, d)}")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and nonnegative")
        total = float(weights.sum())
        if total <= 0:
            raise ValueError("weights must have positive sum")
        if abs(total - 1.0) > _NORMALIZE_ATOL:
            weights = weights / total
        if np.any((weights > 0) & (weights < WEIGHT_FLOOR)):
            weights = np.where(weights < WEIGHT_FLOOR, 0.0, weights)
            weights = weights / weights.sum()

        gated = np.empty_like(covs)
        chols = np.empty_like(covs)
        for i in range(k):
            gated[i], chols[i] = _gated_cholesky(covs[i])
        means = means.copy()
        for arr in (weights, means, gated, chols):
            arr.setflags(write=False)
        self.weights = weights
        self.means = means
        self.covs = gated
        self._chols = chols
        self._logdets = 2.0 * np.sum(np.log(np.diagonal(chols, axis1=1, axis2=2)), axis=1)
        self._logdets.setflags(write=False)

    def __setattr__(self, name, value):
        if hasattr(self, "_logdets"):
            raise AttributeError("GaussianMixture is immutable")
        super().__setattr__(name, value)

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def order(self):
        return self.means.shape[0]

    def component(self, k):
        return Gaussian(self.means[k], self.covs[k])

    @property
    def components(self):
        return tuple(self.component(k) for k in range(self.order))

    @classmethod
    def from_components(cls, weights, components):
        means = np.stack([g.mean for g in components])
        covs = np.stack([g.cov for g in components])
        return cls(weights, means, covs)

    def log_density(self, x):
        """log p(x) via log-sum-exp over component log densities.

        Accepts a single point (d,) or a batch (n, d); returns a scalar or (n,).
        """
        x = np.asarray(x, dtype=float)
        scalar_input = x.ndim <= 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.dim:
            raise DimensionError(f"points have dimension {x.shape[1]}, expected {self.dim}")
        diff = x[:, None, :] - self.means[None, :, :]
        # batched triangular solve via explicit inverse of the Cholesky factors
        y = np.einsum("kij,nkj->nki", np.linalg.inv(self._chols), diff)
        quad = np.einsum("nki,nki->nk", y, y)
        comp_log = -0.5 * (self.dim * LOG_2PI + self._logdets[None, :] + quad)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        logs = comp_log + logw[None, :]
        top = np.max(logs, axis=1)
        out = top + np.log(np.sum(np.exp(logs - top[:, None]), axis=1))
        return float(out[0]) if scalar_input else out

    def density(self, x):
        return np.exp(self.log_density(x))

    def to_dict(self):
        return {
            "dim": int(self.dim),
            "weights": [float(w) for w in self.weights],
            "components": [
                {"mean": [float(v) for v in self.means[k]],
                 "cov": [[float(v) for v in row] for row in self.covs[k]]}
                for k in range(self.order)
            ],
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data):
        weights = np.asarray(data["weights"], dtype=float)
        total = float(weights.sum())
        if not (1.0 - _READER_WEIGHT_ATOL <= total <= 1.0 + _READER_WEIGHT_ATOL):
            raise ValueError(f"weight sum {total} outside [1-1e-6, 1+1e-6]")
        comps = data["components"]
        means = np.asarray([c["mean"] for c in comps], dtype=float)
        covs = np.asarray([c["cov"] for c in comps], dtype=float)
        if means.shape[1] != int(data["dim"]):
            raise ValueError("component dimension disagrees with declared dim")
        return cls(weights, means, covs)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def __repr__(self):
        return f"GaussianMixture(order={self.order}, dim={self.dim})"


def _cross_density_block(means1, covs1, means2, covs2):
    if means1.shape[1] == 1:
        # direct form saves a log/exp round trip; this block sits on the hot
        # path of the BP belief comparisons where orders reach tens of
        # thousands of components
        v = covs1[:, 0, 0][:, None] + covs2[None, :, 0, 0]
        diff = means1[:, 0][:, None] - means2[None, :, 0]
        return np.exp(-diff * diff / (2.0 * v)) / np.sqrt(2.0 * np.pi * v)
    return np.exp(log_cross_density(means1, covs1, means2, covs2))


def l2_inner(p, q):
    """<p, q> = integral of p(x) q(x) dx for two Gaussian mixtures.

    Evaluated blockwise so large mixtures (e.g. exact BP beliefs) do not
    materialize the full cross matrix at once.
    """
    if p.dim != q.dim:
        raise DimensionError(f"dimension mismatch: {p.dim} vs {q.dim}")
    n, m = p.order, q.order
    block = max(1, _BLOCK_ENTRIES // max(m, 1))
    total = 0.0
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        cross = _cross_density_block(p.means[lo:hi], p.covs[lo:hi], q.means, q.covs)
        total += float(p.weights[lo:hi] @ cross @ q.weights)
    return total


def l2_norm_sq(p):
    """Integral of p(x)^2 dx, visiting only the upper triangle of the cross
    matrix (it is symmetric)."""
    n = p.order
    block = max(1, _BLOCK_ENTRIES // max(n, 1))
    total = 0.0
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        k = hi - lo
        cross = _cross_density_block(
            p.means[lo:hi], p.covs[lo:hi], p.means[lo:], p.covs[lo:]
        )
        w_rows = p.weights[lo:hi]
        w_cols = p.weights[lo:]
        upper = float(w_rows @ (np.triu(cross[:, :k]) @ w_cols[:k]))
        if hi < n:
            upper += float(w_rows @ (cross[:, k:] @ w_cols[k:]))
        diag = float(np.sum(w_rows * w_cols[:k] * np.diagonal(cross[:, :k])))
        total += 2.0 * upper - diag
    return total


def mixture_ise(p, q):
    """Squared L2 distance between two Gaussian mixture densities."""
    return l2_norm_sq(p) - 2.0 * l2_inner(p, q) + l2_norm_sq(q)


def sample(mix, n, rng):
    """Draw n i.i.d. points: categorical component choice, then a Cholesky
    transform of standard normals."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng)
    idx = rng.choice(mix.order, size=n, p=mix.weights)
    z = rng.standard_normal((n, mix.dim))
    return mix.means[idx] + np.einsum("nij,nj->ni", mix._chols[idx], z)


def _log_likelihood(samples, weights, means, covs):
    d = means.shape[1]
    chols = np.linalg.cholesky(covs)
    logdets = 2.0 * np.sum(np.log(np.diagonal(chols, axis1=1, axis2=2)), axis=1)
    diff = samples[:, None, :] - means[None, :, :]
    y = np.einsum("kij,nkj->nki", np.linalg.inv(chols), diff)
    quad = np.einsum("nki,nki->nk", y, y)
    comp_log = -0.5 * (d * LOG_2PI + logdets[None, :] + quad)
    with np.errstate(divide="ignore"):
        logs = comp_log + np.log(weights)[None, :]
    top = np.max(logs, axis=1, keepdims=True)
    lse = top + np.log(np.sum(np.exp(logs - top), axis=1, keepdims=True))
    return float(np.sum(lse)), logs - lse


def _kmeanspp_seed(samples, m, rng):
    n = samples.shape[0]
    centers = [samples[rng.integers(n)]]
    for _ in range(1, m):
        d2 = np.min(
            [np.sum((samples - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0:
            centers.append(samples[rng.integers(n)])
            continue
        centers.append(samples[rng.choice(n, p=d2 / total)])
    return np.stack(centers)


def fit_em(samples, m, init=None, max_iter=200, tol=1e-6, rng=None, return_trace=False):
    """Fit an order-m Gaussian mixture to samples by maximum likelihood (EM).

    init may be a GaussianMixture of order m; otherwise components are seeded
    k-means++ style on the samples with the global sample covariance.  A
    component whose responsibility mass drops below 1e-8 is re-seeded at a
    random sample with the sample covariance.  Stops when the relative
    log-likelihood change falls below tol.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    n, d = samples.shape
    if n < m * (d + 1):
        raise ValueError(f"need at least {m * (d + 1)} samples to fit order {m}")
    rng = np.random.default_rng(rng)

    global_cov = np.atleast_2d(np.cov(samples.T))
    global_cov = 0.5 * (global_cov + global_cov.T)
    global_cov += (1e-10 * max(np.trace(global_cov), 1e-12) / d) * np.eye(d)

    if init is not None:
        if init.order != m:
            raise ValueError(f"init has order {init.order}, expected {m}")
        weights = init.weights.copy()
        means = init.means.copy()
        covs = init.covs.copy()
    else:
        means = _kmeanspp_seed(samples, m, rng)
        covs = np.repeat(global_cov[None, :, :], m, axis=0)
        weights = np.full(m, 1.0 / m)

    trace = []
    prev_ll = -np.inf
    for _ in range(max_iter):
        ll, log_resp = _log_likelihood(samples, weights, means, covs)
        trace.append(ll)
        if np.isfinite(prev_ll) and abs(ll - prev_ll) < tol * abs(prev_ll):
            break
        prev_ll = ll
        resp = np.exp(log_resp)
        mass = resp.sum(axis=0)
        for k in range(m):
            if mass[k] < 1e-8:
                # collapsed component: re-seed at a random sample
                means[k] = samples[rng.integers(n)]
                covs[k] = global_cov
                resp[:, k] = 1.0 / n
                mass[k] = resp[:, k].sum()
        weights = mass / mass.sum()
        means = (resp.T @ samples) / mass[:, None]
        for k in range(m):
            diff = samples - means[k]
            cov = (resp[:, k][:, None] * diff).T @ diff / mass[k]
            cov = 0.5 * (cov + cov.T)
            vals = np.linalg.eigvalsh(cov)
            if vals[0] < 1e-10 * max(vals[-1], 1e-12):
                # a component pinched onto too few samples; restart it
                means[k] = samples[rng.integers(n)]
                cov = global_cov
            covs[k] = cov

    out = GaussianMixture(weights, means, covs)
    return (out, trace) if return_trace else out
