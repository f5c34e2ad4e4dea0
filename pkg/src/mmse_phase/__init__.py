"""MMSE analysis and reconstruction for Gaussian and Gaussian-mixture sources
under noisy linear compressive measurements."""

__version__ = "0.1.0"

from .analysis import (
    Expansion,
    MonteCarloResult,
    Regime,
    decay_diagnostics,
    expansion_gaussian,
    expansion_lower_bound,
    gaussian_mmse,
    gaussian_mmse_spectral,
    mismatched_mse,
    monte_carlo_mse,
    mse_cr_upper_bound,
    mse_lower_bound,
)
from .estimators import (
    GmmReconstructor,
    LinearMeasurement,
    MixtureFilter,
    class_posteriors,
    classify_reconstruct,
    gmm_conditional_mean,
    lmmse_estimate,
    map_classify,
    wiener_filter,
)
from .kernel import (
    design_kernel_gaussian,
    designed_mmse,
    expansion_designed,
    expansion_lower_bound_designed,
    mse_lower_bound_designed,
    waterfill,
)
from .model import (
    GaussianSource,
    GmmSource,
    MeasurementSystem,
    NotPSDError,
    OverlapCase,
    eig_psd,
    load_kernel,
    load_model,
    random_kernel,
    save_kernel,
    save_model,
)

__all__ = [
    "Expansion",
    "GaussianSource",
    "GmmReconstructor",
    "GmmSource",
    "LinearMeasurement",
    "MeasurementSystem",
    "MixtureFilter",
    "MonteCarloResult",
    "NotPSDError",
    "OverlapCase",
    "Regime",
    "class_posteriors",
    "classify_reconstruct",
    "decay_diagnostics",
    "design_kernel_gaussian",
    "designed_mmse",
    "eig_psd",
    "expansion_designed",
    "expansion_gaussian",
    "expansion_lower_bound",
    "expansion_lower_bound_designed",
    "gaussian_mmse",
    "gaussian_mmse_spectral",
    "gmm_conditional_mean",
    "lmmse_estimate",
    "load_kernel",
    "load_model",
    "map_classify",
    "mismatched_mse",
    "monte_carlo_mse",
    "mse_cr_upper_bound",
    "mse_lower_bound",
    "mse_lower_bound_designed",
    "random_kernel",
    "save_kernel",
    "save_model",
    "waterfill",
    "wiener_filter",
]
