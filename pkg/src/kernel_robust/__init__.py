"""Kernel ridge regression under input perturbations: standard, augmented,
adversarial and small-perturbation limit estimators, plus the experiments
that compare them."""
from .config import ScenarioConfig, default_config, regime_lambdas
from .estimators import (AugmentationModel, Dataset, FitResult, fit_adversarial_gd, fit_augmented,
                         fit_standard, limit_adversarial, limit_augmented)
from .kernels import Kernel, check_derivatives
from .rkhs import Dictionary, RkhsFunction, evaluate, gradient, norm

__version__ = "0.1.0"

__all__ = [
    "AugmentationModel", "Dataset", "Dictionary", "FitResult", "Kernel", "RkhsFunction",
    "ScenarioConfig", "check_derivatives", "default_config", "evaluate", "fit_adversarial_gd",
    "fit_augmented", "fit_standard", "gradient", "limit_adversarial", "limit_augmented", "norm",
    "regime_lambdas",
]
