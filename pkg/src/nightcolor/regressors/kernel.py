"""
Gaussian kernel ridge regression with k-fold CV over (scale, ridge).

Predictors are z-scored with the training mean/SD and the target is centered,
so far from the training data the prediction reverts to the training mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh, solve
from scipy.spatial.distance import cdist

from ..errors import DatasetError, ModelError
from ..features import PREDICTORS, Dataset, band_name

SCALE_FACTORS = (0.25, 0.5, 1.0, 2.0, 4.0)
RIDGE_FACTORS = (1e-4, 1e-2, 1.0, 10.0)

_CHUNK = 2048


def default_grid(n: int, d: int) -> tuple[list[float], list[float]]:
    """Kernel scales proportional to sqrt(d), ridges proportional to n."""
    return [f * np.sqrt(d) for f in SCALE_FACTORS], [f * n for f in RIDGE_FACTORS]


def gaussian_kernel(A: np.ndarray, B: np.ndarray, scale: float) -> np.ndarray:
    return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * scale * scale))


@dataclass(frozen=True)
class KernelModel:
    band: str
    predictors: tuple[str, ...]
    X_train: np.ndarray  # standardized
    alpha: np.ndarray
    scale: float
    ridge: float
    x_mean: np.ndarray
    x_sd: np.ndarray
    y_mean: float
    cv_scales: tuple[float, ...] = ()
    cv_ridges: tuple[float, ...] = ()
    cv_mse: np.ndarray | None = field(default=None, repr=False)

    kind = "kernel"

    def __post_init__(self):
        if not (self.scale > 0 and self.ridge > 0):
            raise ModelError("kernel scale and ridge must be positive")

    def standardize(self, X) -> np.ndarray:
        return (np.atleast_2d(np.asarray(X, dtype=float)) - self.x_mean) / self.x_sd

    def predict(self, X) -> np.ndarray:
        Z = self.standardize(X)
        out = np.empty(len(Z))
        for start in range(0, len(Z), _CHUNK):
            block = Z[start : start + _CHUNK]
            out[start : start + _CHUNK] = gaussian_kernel(block, self.X_train, self.scale) @ self.alpha
        return out + self.y_mean


def _standardization(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return mean, sd


def fold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Contiguous blocks of a seeded permutation of range(n)."""
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, folds)


def cv_mse_table(
    Z: np.ndarray, y: np.ndarray, scales, ridges, folds: list[np.ndarray]
) -> np.ndarray:
    """Mean held-out MSE for each (scale, ridge); shape (len(scales), len(ridges)).

    One eigendecomposition per (scale, fold) serves every ridge value.
    """
    table = np.zeros((len(scales), len(ridges)))
    all_idx = np.arange(len(y))
    for test_idx in folds:
        train_idx = np.setdiff1d(all_idx, test_idx)
        Zt, yt = Z[train_idx], y[train_idx]
        y_mean = yt.mean()
        for i, s in enumerate(scales):
            w, V = eigh(gaussian_kernel(Zt, Zt, s))
            w = np.maximum(w, 0.0)  # K is PSD; clip rounding noise
            proj = V.T @ (yt - y_mean)
            K_test = gaussian_kernel(Z[test_idx], Zt, s)
            KV = K_test @ V
            for j, lam in enumerate(ridges):
                pred = KV @ (proj / (w + lam)) + y_mean
                err = pred - y[test_idx]
                table[i, j] += err @ err / len(test_idx)
    return table / len(folds)


def fit_kernel(
    ds: Dataset,
    band: str,
    cv_folds: int = 5,
    scales=None,
    ridges=None,
    seed: int = 0,
    predictors=PREDICTORS,
) -> KernelModel:
    """Select (scale, ridge) by k-fold CV on mean squared error, then refit on all data.

    Parameters
    ----------
    scales, ridges : sequence of float, optional
        Absolute candidate values. Defaults come from :func:`default_grid`,
        with ``n`` the full training-set size. A single pair skips CV.
    seed : int
        Seeds the fold shuffle.
    """
    band = band_name(band)
    predictors = tuple(predictors)
    X = ds.predictors(predictors)
    y = ds.response(band)
    if np.isnan(y).any():
        raise DatasetError(f"band {band!r} is absent for some observations")
    n, d = X.shape
    default_scales, default_ridges = default_grid(n, d)
    scales = list(default_scales if scales is None else scales)
    ridges = list(default_ridges if ridges is None else ridges)
    if not scales or not ridges:
        raise ModelError("kernel hyperparameter grid is empty")
    if min(scales) <= 0 or min(ridges) <= 0:
        raise ModelError("kernel scales and ridges must be positive")

    x_mean, x_sd = _standardization(X)
    Z = (X - x_mean) / x_sd

    table = None
    if len(scales) * len(ridges) > 1:
        if n < 2 * cv_folds:
            raise DatasetError(f"{cv_folds}-fold CV needs at least {2 * cv_folds} observations, got {n}")
        folds = fold_indices(n, cv_folds, seed)
        table = cv_mse_table(Z, y, scales, ridges, folds)
        i, j = np.unravel_index(np.argmin(table), table.shape)
        scale, ridge = scales[i], ridges[j]
    else:
        if n < 1:
            raise DatasetError("kernel regression needs at least one observation")
        scale, ridge = scales[0], ridges[0]

    y_mean = float(y.mean())
    K = gaussian_kernel(Z, Z, scale)
    K[np.diag_indices_from(K)] += ridge
    alpha = solve(K, y - y_mean, assume_a="pos")
    return KernelModel(
        band, predictors, Z, alpha, float(scale), float(ridge), x_mean, x_sd, y_mean,
        tuple(map(float, scales)), tuple(map(float, ridges)), table,
    )


def predict_kernel(model: KernelModel, X) -> np.ndarray:
    return model.predict(X)
