"""Reduction of Gaussian mixtures by minimum composite transport cost, with
pluggable component-level costs, divergence barycenters, an exponential-family
generalization, and a mixture-message belief-propagation simulator."""

from .gaussian import (
    DimensionError,
    Gaussian,
    SpdError,
    SpdFactor,
    cs,
    expected_log_density,
    ise,
    kl,
    log_density,
    product,
    product_affine,
    w2_squared,
)
from .mixture import GaussianMixture, fit_em, mixture_ise, sample
from .costs import CostSpec
from .barycenter import (
    BarycenterProblem,
    ConvergenceError,
    FixedPointConfig,
    cs_barycenter,
    ise_barycenter,
    kl_barycenter,
    solve_barycenter,
    w2_barycenter,
)
from .reduce import (
    ReductionConfig,
    ReductionResult,
    TransportPlan,
    ctd_sinkhorn,
    hard_cluster_reduce,
    mm_reduce,
    objective,
    plan_update,
    reduce_with_restarts,
    soft_cluster_reduce,
    upper_bound_check,
)
from .expfam import (
    ExpFamilyMember,
    expfam_ise,
    expfam_kl,
    expfam_kl_barycenter,
    expfam_mm_reduce,
    exponential,
    rayleigh,
)
from .bp import FactorGraph, MessageSet, belief_update, demo_graph, message_update, run_bp

__version__ = "0.1.0"
