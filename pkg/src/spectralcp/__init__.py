"""Single change point detection and inference in the spectral density of a time series."""

from .detection import (
    DetectionConfig,
    DetectionResult,
    detect,
    near_optimal_estimate,
    optimal_estimate,
    refit_models,
    stage1_loss,
)
from .errors import (
    CPDError,
    DegeneracyError,
    GridTooSmallWarning,
    InputError,
    NoJump,
    SeriesTooShort,
)
from .inference import (
    ConfidenceInterval,
    MonteCarloSettings,
    NuisanceEstimates,
    QuantileTable,
    confidence_interval,
    nuisance_estimates,
    probs_for_levels,
    simulate_argmax_quantiles,
)
from .simulation import (
    ReplicationReport,
    ScenarioSpec,
    generate_scenario,
    run_replications,
    scenario_preset,
    true_spectral_curves,
)
from .tscore import (
    ArModel,
    AutocovarianceVector,
    TimeSeries,
    ar_spectral_density,
    residuals,
    sample_autocovariance,
    select_lag_aic,
    yule_walker,
)

__version__ = "0.1.0"

__all__ = [
    "DetectionConfig",
    "DetectionResult",
    "detect",
    "near_optimal_estimate",
    "optimal_estimate",
    "refit_models",
    "stage1_loss",
    "CPDError",
    "DegeneracyError",
    "GridTooSmallWarning",
    "InputError",
    "NoJump",
    "SeriesTooShort",
    "ConfidenceInterval",
    "MonteCarloSettings",
    "NuisanceEstimates",
    "QuantileTable",
    "confidence_interval",
    "nuisance_estimates",
    "probs_for_levels",
    "simulate_argmax_quantiles",
    "ReplicationReport",
    "ScenarioSpec",
    "generate_scenario",
    "run_replications",
    "scenario_preset",
    "true_spectral_curves",
    "ArModel",
    "AutocovarianceVector",
    "TimeSeries",
    "ar_spectral_density",
    "residuals",
    "sample_autocovariance",
    "select_lag_aic",
    "yule_walker",
]
