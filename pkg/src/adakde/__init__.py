"""Adaptive Gaussian kernel density estimation with per-point bandwidth matrices.

Classical selectors (Silverman, LCV, Abramson, kNN), a neural bandwidth
recommender with leave-one-out scale fine-tuning, synthetic targets with exact
densities, and a seeded benchmark harness.
"""
__version__ = "0.1.0"

from .errors import AdakdeError, ConfigError, DegenerateSampleError, DimensionMismatchError, NonFiniteError
from .finetune import FinetuneConfig, FinetuneResult, calibrate, finetune_kde, loo_objective
from .kde import DensityModel, SamplePointKde, kde_log_density, kde_loo_log_density, kde_score
from .linalg import BandwidthFactor, kernel_grad_premul, log_gaussian_kernel, log_sum_exp
from .neighbors import knn, neighborhoods
from .selectors import SelectorConfig, abramson_select, knn_select, lcv_select, silverman
from .targets import Banana, GaussianMixture, NoisyTorus, Scenario, ScenarioSpec, TargetModel, sample_prior

__all__ = [
    "AdakdeError", "ConfigError", "DegenerateSampleError", "DimensionMismatchError", "NonFiniteError",
    "FinetuneConfig", "FinetuneResult", "calibrate", "finetune_kde", "loo_objective",
    "DensityModel", "SamplePointKde", "kde_log_density", "kde_loo_log_density", "kde_score",
    "BandwidthFactor", "kernel_grad_premul", "log_gaussian_kernel", "log_sum_exp",
    "knn", "neighborhoods",
    "SelectorConfig", "abramson_select", "knn_select", "lcv_select", "silverman",
    "Banana", "GaussianMixture", "NoisyTorus", "Scenario", "ScenarioSpec", "TargetModel", "sample_prior",
]
