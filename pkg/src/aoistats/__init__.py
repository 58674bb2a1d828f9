"""Age-of-information statistics for a multi-source preemptive server.

Closed forms for the stationary age process of each source sharing a
single bufferless server with pushout, a vectorized event simulator
with batch-means error bars, and sweep/comparison drivers.
"""

from .analytics import (
    AoIStatistics,
    InversionAccuracyWarning,
    MarginalMoments,
    SourcePalmMeans,
    SystemSpec,
    aggregate_service_laplace,
    aoi_correlation,
    aoi_covariance,
    aoi_statistics,
    cc_lower_bound,
    departure_rate,
    joint_aoi_laplace,
    joint_aoi_laplace_two_source,
    marginal_aoi_cdf,
    marginal_aoi_laplace,
    marginal_aoi_moments,
    palm_means,
    pushout_rate,
    source_update_share,
)
from .config import ConfigError, RunConfig, SweepSettings, parse_config, render_config
from .experiments import (
    ComparisonRow,
    SweepPoint,
    compare,
    compare_with_retry,
    comparison_passed,
    family_model,
    sweep_cc_vs_lambda2,
    sweep_cc_vs_service_rate,
    write_comparison_csv,
    write_sweep_csv,
)
from .servicedist import (
    Deterministic,
    Exponential,
    Gamma,
    Mixture,
    ServiceTimeModel,
    format_service,
    parse_service,
    subset_mixture,
)
from .simulator import (
    DEFAULT_REPLICATIONS,
    DEFAULT_SEED,
    Estimate,
    PalmEstimates,
    PathAccumulator,
    ReplicationResult,
    SimulationReport,
    default_burn_in,
    default_s_grid,
    estimate_joint_laplace,
    estimate_joint_laplace_palm,
    estimate_marginal_cdf,
    estimate_palm,
    estimate_statistics,
    replication_rng,
    run_replication,
    run_replications,
    simulate,
)

__version__ = "0.1.0"

__all__ = [
    "AoIStatistics",
    "ComparisonRow",
    "ConfigError",
    "DEFAULT_REPLICATIONS",
    "DEFAULT_SEED",
    "Deterministic",
    "Estimate",
    "Exponential",
    "Gamma",
    "InversionAccuracyWarning",
    "MarginalMoments",
    "Mixture",
    "PalmEstimates",
    "PathAccumulator",
    "ReplicationResult",
    "RunConfig",
    "ServiceTimeModel",
    "SimulationReport",
    "SourcePalmMeans",
    "SweepPoint",
    "SweepSettings",
    "SystemSpec",
    "aggregate_service_laplace",
    "aoi_correlation",
    "aoi_covariance",
    "aoi_statistics",
    "cc_lower_bound",
    "compare",
    "compare_with_retry",
    "comparison_passed",
    "default_burn_in",
    "default_s_grid",
    "departure_rate",
    "estimate_joint_laplace",
    "estimate_joint_laplace_palm",
    "estimate_marginal_cdf",
    "estimate_palm",
    "estimate_statistics",
    "family_model",
    "format_service",
    "joint_aoi_laplace",
    "joint_aoi_laplace_two_source",
    "marginal_aoi_cdf",
    "marginal_aoi_laplace",
    "marginal_aoi_moments",
    "palm_means",
    "parse_config",
    "parse_service",
    "pushout_rate",
    "render_config",
    "replication_rng",
    "run_replication",
    "run_replications",
    "simulate",
    "source_update_share",
    "subset_mixture",
    "sweep_cc_vs_lambda2",
    "sweep_cc_vs_service_rate",
    "write_comparison_csv",
    "write_sweep_csv",
]
