"""Joint latent-infection modeling of wastewater signals and hospitalizations.

Library layout: `model` holds the parameter types and the deterministic
kernel (intensities, occupancy propagation, observation densities);
`simulate` generates individual trajectories and aggregated series with
configurable case under-reporting; `pseudolik` assembles the aggregated-data
pseudo-log-likelihood; `estimate` maximizes it and quantifies uncertainty;
`replication` drives repeated simulate-and-fit experiments; `seriesio`,
`config`, `report`, and `cli` form the operational shell.
"""

from .model import (
    HazardParams,
    InfectionParams,
    ModelError,
    ModelParams,
    SheddingParams,
    hazard_rate,
    infection_intensity,
    propagate_occupancy,
    shedding_logpdf,
    shedding_mean,
    shedding_rate,
)
from .pseudolik import (
    LatentExpectations,
    Scenario,
    individual_loglik,
    individual_loglik_parts,
    latent_expectations,
    pseudo_loglik,
    truncated_mean,
    variant_shares,
)
from .simulate import (
    AggregatedSeries,
    IndividualTrajectory,
    ReportingConfig,
    aggregate,
    apply_reporting,
    simulate_individual,
    simulate_population,
    simulate_state_frequencies,
    simulate_trajectories,
)
from .estimate import (
    BootstrapResult,
    FitConfig,
    FitResult,
    OptimizerSettings,
    auto_initial_params,
    fisher_se,
    fit,
    parametric_bootstrap,
    scenario_sweep,
)
from .seriesio import SchemaError, read_series_csv, write_series_csv

__version__ = "0.1.0"

__all__ = [
    "AggregatedSeries",
    "BootstrapResult",
    "FitConfig",
    "FitResult",
    "HazardParams",
    "IndividualTrajectory",
    "InfectionParams",
    "LatentExpectations",
    "ModelError",
    "ModelParams",
    "OptimizerSettings",
    "ReportingConfig",
    "Scenario",
    "SchemaError",
    "SheddingParams",
    "aggregate",
    "apply_reporting",
    "auto_initial_params",
    "fisher_se",
    "fit",
    "hazard_rate",
    "individual_loglik",
    "individual_loglik_parts",
    "infection_intensity",
    "latent_expectations",
    "parametric_bootstrap",
    "propagate_occupancy",
    "pseudo_loglik",
    "read_series_csv",
    "scenario_sweep",
    "shedding_logpdf",
    "shedding_mean",
    "shedding_rate",
    "simulate_individual",
    "simulate_population",
    "simulate_state_frequencies",
    "simulate_trajectories",
    "truncated_mean",
    "variant_shares",
    "write_series_csv",
]
