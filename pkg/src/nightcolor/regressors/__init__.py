"""Per-band regressors: ordinary least squares, Gaussian kernel ridge, random forest."""

from .forest import ForestModel, fit_forest, predict_forest
from .kernel import KernelModel, fit_kernel, predict_kernel
from .linear import LinearModel, fit_ols, predict_ols

__all__ = [
    "ForestModel",
    "KernelModel",
    "LinearModel",
    "fit_forest",
    "fit_kernel",
    "fit_ols",
    "predict_forest",
    "predict_kernel",
    "predict_ols",
]
