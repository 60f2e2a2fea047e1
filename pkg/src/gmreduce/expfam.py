"""Reduction machinery for one-parameter exponential families.

Densities take the form h(x) exp(theta T(x)) / A(theta) on x >= 0, with the
natural parameter theta < 0.  Implemented families:

  exponential:  theta = -rate,        T(x) = x,    A = -1/theta,   h = 1
  rayleigh:     theta = -1/(2 s^2),   T(x) = x^2,  A = -1/(2 th),  h = x

Their mean parameter mu(theta) = E[T] = d log A / d theta is -1/theta in both
cases, with closed-form inverse, so the KL barycenter (mean-parameter
averaging) and the KL-cost reduction run without numeric inversion.
"""

import math
from dataclasses import dataclass

import numpy as np

from .reduce import TransportPlan, _mm_engine

__all__ = [
    "ExpFamilyMember",
    "FamilyInterface",
    "FAMILIES",
    "exponential",
    "rayleigh",
    "expfam_kl",
    "expfam_kl_barycenter",
    "expfam_ise",
    "expfam_mm_reduce",
    "ExpFamilyReduction",
]


@dataclass(frozen=True)
class FamilyInterface:
    """Callable slots describing one family in natural parameters."""

    name: str
    log_partition: callable          # A(theta)
    log_log_partition: callable      # log A(theta)
    mean_param: callable             # mu(theta) = E_theta[T(X)]
    mean_param_inverse: callable     # mu^-1
    h_expectation: callable          # H(theta) = E_theta[h(X)]
    density: callable                # f(x | theta)

    def in_natural_space(self, theta):
        return theta < 0

    def in_mean_range(self, m):
        return m > 0


def _exp_density(theta, x):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, -theta * np.exp(theta * x), 0.0)


def _ray_density(theta, x):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, -2.0 * theta * x * np.exp(theta * x * x), 0.0)


FAMILIES = {
    "exponential": FamilyInterface(
        name="exponential",
        log_partition=lambda th: -1.0 / th,
        log_log_partition=lambda th: -math.log(-th),
        mean_param=lambda th: -1.0 / th,
        mean_param_inverse=lambda m: -1.0 / m,
        h_expectation=lambda th: 1.0,
        density=_exp_density,
    ),
    "rayleigh": FamilyInterface(
        name="rayleigh",
        log_partition=lambda th: -1.0 / (2.0 * th),
        log_log_partition=lambda th: -math.log(-2.0 * th),
        mean_param=lambda th: -1.0 / th,
        mean_param_inverse=lambda m: -1.0 / m,
        h_expectation=lambda th: math.sqrt(-math.pi / (4.0 * th)),
        density=_ray_density,
    ),
}


@dataclass(frozen=True)
class ExpFamilyMember:
    family: str
    theta: float

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if not FAMILIES[self.family].in_natural_space(self.theta):
            raise ValueError(f"theta={self.theta} outside the natural space (theta < 0)")

    @property
    def interface(self):
        return FAMILIES[self.family]

    @property
    def rate(self):
        if self.family != "exponential":
            raise ValueError("rate is defined for the exponential family only")
        return -self.theta

    @property
    def sigma(self):
        if self.family != "rayleigh":
            raise ValueError("sigma is defined for the rayleigh family only")
        return math.sqrt(-1.0 / (2.0 * self.theta))

    def pdf(self, x):
        return self.interface.density(self.theta, x)


def exponential(rate):
    if not rate > 0:
        raise ValueError("rate must be positive")
    return ExpFamilyMember("exponential", -float(rate))


def rayleigh(sigma):
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    return ExpFamilyMember("rayleigh", -1.0 / (2.0 * float(sigma) ** 2))


def _check_same_family(a, b):
    if a.family != b.family:
        raise ValueError(f"family mismatch: {a.family} vs {b.family}")


def expfam_kl(a, b):
    """(theta_a - theta_b) mu(theta_a) - log A(theta_a) + log A(theta_b)."""
    _check_same_family(a, b)
    iface = a.interface
    return (a.theta - b.theta) * iface.mean_param(a.theta) - iface.log_log_partition(
        a.theta
    ) + iface.log_log_partition(b.theta)


def expfam_kl_barycenter(members, lambdas):
    """KL barycenter: invert the lambda-weighted average of mean parameters."""
    members = list(members)
    lambdas = np.asarray(lambdas, dtype=float)
    if np.any(lambdas < 0) or not lambdas.sum() > 0:
        raise ValueError("lambdas must be nonnegative with positive sum")
    family = members[0].family
    for mem in members[1:]:
        if mem.family != family:
            raise ValueError("members must share a family")
    iface = FAMILIES[family]
    kept = [(l, m) for l, m in zip(lambdas, members) if l > 0]
    total = sum(l for l, _ in kept)
    mean = sum(l * iface.mean_param(m.theta) for l, m in kept) / total
    if not iface.in_mean_range(mean):
        raise ValueError(f"averaged mean parameter {mean} outside the family's mean range")
    return ExpFamilyMember(family, iface.mean_param_inverse(mean))


def expfam_ise(a, b):
    """Closed-form squared L2 distance between two same-family densities."""
    _check_same_family(a, b)
    iface = a.interface
    for th in (2.0 * a.theta, 2.0 * b.theta, a.theta + b.theta):
        if not iface.in_natural_space(th):
            raise ValueError(f"parameter {th} leaves the natural space")
    total = 0.0
    for th in (a.theta, b.theta):
        total += (
            iface.log_partition(2.0 * th)
            / iface.log_partition(th) ** 2
            * iface.h_expectation(2.0 * th)
        )
    cross = a.theta + b.theta
    total -= (
        2.0
        * iface.log_partition(cross)
        / (iface.log_partition(a.theta) * iface.log_partition(b.theta))
        * iface.h_expectation(cross)
    )
    return total


@dataclass(frozen=True)
class ExpFamilyReduction:
    weights: np.ndarray
    members: tuple
    plan: TransportPlan
    objective_trace: tuple
    status: str
    iterations: int


def _default_init(members, mean_param, m):
    """Spread m initial members over the quantiles of the mean parameters."""
    order = np.argsort([mean_param(mem.theta) for mem in members])
    idx = np.linspace(0, len(members) - 1, m).round().astype(int)
    return [members[order[i]] for i in idx]


def expfam_mm_reduce(weights, members, m, lam=0.0, max_iter=200, tol=1e-8, init=None):
    """Reduce a same-family mixture to order m under the KL cost.

    Same alternating scheme as the Gaussian reduction: closed-form plan, then
    per-column KL barycenters (mean-parameter averages), then weights from
    plan column sums.
    """
    members = list(members)
    weights = np.asarray(weights, dtype=float)
    if weights.shape[0] != len(members):
        raise ValueError("one weight per member required")
    if np.any(weights < 0) or not weights.sum() > 0:
        raise ValueError("weights must be nonnegative with positive sum")
    weights = weights / weights.sum()
    family = members[0].family
    for mem in members[1:]:
        if mem.family != family:
            raise ValueError("members must share a family")
    iface = FAMILIES[family]

    thetas = np.array([mem.theta for mem in members])
    mus = np.array([iface.mean_param(mem.theta) for mem in members])
    log_as = np.array([iface.log_log_partition(mem.theta) for mem in members])

    def cost_builder(components, red_weights):
        red_thetas = np.array([c.theta for c in components])
        red_log_as = np.array([iface.log_log_partition(t) for t in red_thetas])
        return (thetas[:, None] - red_thetas[None, :]) * mus[:, None] - log_as[
            :, None
        ] + red_log_as[None, :]

    def bary_solver(lams, prev):
        keep = lams > 0
        lam_k = lams[keep]
        mean = float((lam_k / lam_k.sum()) @ mus[keep])
        if not iface.in_mean_range(mean):
            raise ValueError(f"averaged mean parameter {mean} outside the mean range")
        return ExpFamilyMember(family, iface.mean_param_inverse(mean))

    if init is None:
        init = _default_init(members, iface.mean_param, m)
    if len(init) != m:
        raise ValueError(f"init has {len(init)} members, expected {m}")
    comps, red_w, trace, status, iters, plan = _mm_engine(
        weights, init, np.full(m, 1.0 / m), cost_builder, bary_solver,
        lam, max_iter, tol,
    )
    return ExpFamilyReduction(
        weights=red_w,
        members=tuple(comps),
        plan=TransportPlan(plan, weights),
        objective_trace=tuple(trace),
        status=status,
        iterations=iters,
    )
