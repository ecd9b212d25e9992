"""Bounds for the always-observed average treatment effect under attrition.

The package estimates sharp lower/upper bounds for the mean effect on units
whose outcome would be observed under either arm, in randomized experiments
with block-stratified assignment and monotone selection. It provides the
pooled trimming estimator, its per-stratum (conditional) version, an
inverse-propensity-weighted version robust to heterogeneous treated shares,
design-consistent sandwich standard errors with an i.i.d. comparator and a
label-based variance, per-bound and identified-set confidence intervals,
and a seeded Monte Carlo harness.
"""

from .data_model import (
    BlockDesign,
    BlockSummary,
    Dataset,
    UnitRecord,
    block_design,
    dataset_from_arrays,
    dataset_to_csv_text,
    parse_csv,
    write_csv,
)
from .errors import (
    DegenerateTrimError,
    DesignError,
    EstimationError,
    FeasibilityError,
    InternalConsistencyError,
    PairingError,
    ParseError,
    SingularJacobianError,
    StrataBoundsError,
    UndefinedTrimmingError,
    ValidationError,
)
from .gmm_core import (
    FitResult,
    LeeIpwTheta,
    LeeTheta,
    MomentMatrix,
    fit_theta,
    jacobian,
    lee_ipw_moments,
    lee_moments,
    moment_matrix,
    silverman_bandwidth,
    solve_sandwich,
)
from .ipw_estimator import (
    IpwComponents,
    always_observed_treat_prob,
    ipw_trimming_share,
    lee_ipw_bounds,
)
from .lee_estimator import (
    BoundsEstimate,
    StratumBound,
    TrimmedMeanResult,
    TrimmingShare,
    TrimSpec,
    conditional_lee_bounds,
    lee_bounds,
    trimmed_mean,
    trimming_share_pooled,
)
from .simulation import (
    DGP_HEAVY_TAILS,
    DGP_MATCHED_PAIRS,
    EstimatorSummary,
    McConfig,
    MonteCarloSummary,
    child_seed,
    dgp1_truth,
    monte_carlo,
    philox_generator,
    simulate_dgp1,
    simulate_dgp2,
)
from .variance import (
    IntervalReport,
    Involution,
    MeatReport,
    VarianceReport,
    confidence_intervals,
    label_variance,
    meat_design,
    meat_iid,
    pair_blocks,
    sandwich_report,
    set_critical_value,
)

__version__ = "0.1.0"

__all__ = [
    "BlockDesign",
    "BlockSummary",
    "BoundsEstimate",
    "Dataset",
    "DegenerateTrimError",
    "DesignError",
    "DGP_HEAVY_TAILS",
    "DGP_MATCHED_PAIRS",
    "EstimationError",
    "EstimatorSummary",
    "FeasibilityError",
    "FitResult",
    "IntervalReport",
    "InternalConsistencyError",
    "Involution",
    "IpwComponents",
    "LeeIpwTheta",
    "LeeTheta",
    "McConfig",
    "MeatReport",
    "MomentMatrix",
    "MonteCarloSummary",
    "PairingError",
    "ParseError",
    "SingularJacobianError",
    "StrataBoundsError",
    "StratumBound",
    "TrimmedMeanResult",
    "TrimmingShare",
    "TrimSpec",
    "UndefinedTrimmingError",
    "UnitRecord",
    "ValidationError",
    "VarianceReport",
    "always_observed_treat_prob",
    "block_design",
    "child_seed",
    "conditional_lee_bounds",
    "confidence_intervals",
    "dataset_from_arrays",
    "dataset_to_csv_text",
    "dgp1_truth",
    "fit_theta",
    "ipw_trimming_share",
    "jacobian",
    "label_variance",
    "lee_bounds",
    "lee_ipw_bounds",
    "lee_ipw_moments",
    "lee_moments",
    "meat_design",
    "meat_iid",
    "moment_matrix",
    "monte_carlo",
    "pair_blocks",
    "parse_csv",
    "philox_generator",
    "sandwich_report",
    "set_critical_value",
    "silverman_bandwidth",
    "simulate_dgp1",
    "simulate_dgp2",
    "solve_sandwich",
    "trimmed_mean",
    "trimming_share_pooled",
    "write_csv",
]
