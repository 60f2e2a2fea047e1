"""Component-level cost functions for transport-based mixture reduction.

A CostSpec selects the ground cost between a component of the original
mixture and a component of the candidate reduced mixture.  The "softnll"
cost, c = -log(reduced weight) - I * E[log reduced component], is the one
cost that reads the reduced mixture's current weights, so cost matrices are
rebuilt against the weights from the previous iteration.
"""

from dataclasses import dataclass

import numpy as np

from .gaussian import (
    pairwise_cs,
    pairwise_expected_log_density,
    pairwise_ise,
    pairwise_kl,
    pairwise_w2,
)

__all__ = ["CostSpec", "COST_KINDS", "cost_matrix"]

COST_KINDS = ("kl", "ise", "cs", "w2", "softnll")

# floor for -log(weight) inside the softnll cost; keeps entries finite for
# zero-weight (degenerate) columns so the plan softmax sends them ~0 mass
_LOG_WEIGHT_FLOOR = 1e-300


@dataclass(frozen=True)
class CostSpec:
    """Tagged choice of component-level cost: kl | ise | cs | w2 | softnll.

    softnll carries a sharpness hyperparameter I > 0.
    """

    kind: str
    I: float | None = None

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise ValueError(f"unknown cost kind {self.kind!r}; expected one of {COST_KINDS}")
        if self.kind == "softnll":
            if self.I is None or not self.I > 0:
                raise ValueError("softnll cost requires I > 0")
        elif self.I is not None:
            raise ValueError(f"cost {self.kind!r} takes no I parameter")

    @classmethod
    def kl(cls):
        return cls("kl")

    @classmethod
    def ise(cls):
        return cls("ise")

    @classmethod
    def cs(cls):
        return cls("cs")

    @classmethod
    def w2(cls):
        return cls("w2")

    @classmethod
    def soft_nll(cls, I):
        return cls("softnll", I=float(I))

    @property
    def weight_dependent(self):
        return self.kind == "softnll"


def cost_matrix(means, covs, red_means, red_covs, spec, red_weights=None):
    """N x M matrix of spec costs between stacked original and reduced
    component parameters."""
    if spec.kind == "kl":
        return pairwise_kl(means, covs, red_means, red_covs)
    if spec.kind == "ise":
        return pairwise_ise(means, covs, red_means, red_covs)
    if spec.kind == "cs":
        return pairwise_cs(means, covs, red_means, red_covs)
    if spec.kind == "w2":
        return pairwise_w2(means, covs, red_means, red_covs)
    if red_weights is None:
        raise ValueError("softnll cost requires the reduced weights")
    e = pairwise_expected_log_density(means, covs, red_means, red_covs)
    logw = np.log(np.maximum(np.asarray(red_weights, dtype=float), _LOG_WEIGHT_FLOOR))
    return -logw[None, :] - spec.I * e
