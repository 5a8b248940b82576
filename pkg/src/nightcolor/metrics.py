"""
Evaluation measures: Pearson r, weighted MSE, contrast similarity, consistency,
and the drop-one-predictor factor-contribution test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.ndimage import correlate

from .errors import DatasetError, GeometryError
from .features import PREDICTORS, Dataset, band_name
from .raster_io import RasterGrid

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K2 = 0.03
DYNAMIC_RANGE = 255.0


@dataclass(frozen=True)
class BandScores:
    pearson_r: float
    wmse: float
    n: int


def _pair(actual, predicted) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(actual, dtype=float).ravel()
    p = np.asarray(predicted, dtype=float).ravel()
    if a.shape != p.shape:
        raise ValueError(f"length mismatch: {a.size} actual vs {p.size} predicted")
    return a, p


def pearson(actual, predicted) -> float:
    """Sample correlation; NaN when either vector has zero variance."""
    a, p = _pair(actual, predicted)
    if a.size < 2:
        raise ValueError("pearson needs at least two values")
    # constancy is tested exactly: a rounded mean leaves tiny nonzero deviations
    if np.ptp(a) == 0 or np.ptp(p) == 0:
        return float("nan")
    da = a - a.mean()
    dp = p - p.mean()
    saa, spp = da @ da, dp @ dp
    r = (da @ dp) / math.sqrt(saa * spp)
    return float(min(1.0, max(-1.0, r)))


def wmse(actual, predicted) -> float:
    """mean((predicted - actual)^2 / actual); every actual value must be positive."""
    a, p = _pair(actual, predicted)
    if a.size == 0:
        raise ValueError("wmse of empty vectors")
    if (a <= 0).any():
        raise DatasetError("wmse needs strictly positive actual values")
    return float(np.mean((p - a) ** 2 / a))


def band_scores(actual, predicted) -> BandScores:
    a, p = _pair(actual, predicted)
    return BandScores(pearson(a, p), wmse(a, p), int(a.size))


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    w = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * sigma * sigma))
    return w / w.sum()


def contrast_map(
    a: np.ndarray,
    b: np.ndarray,
    valid: np.ndarray | None = None,
    size: int = WINDOW_SIZE,
    sigma: float = WINDOW_SIGMA,
    dynamic_range: float = DYNAMIC_RANGE,
) -> np.ndarray:
    """Per-pixel contrast term (2 sx sy + C2) / (sx^2 + sy^2 + C2).

    Local SDs use a Gaussian window renormalized over valid pixels, so
    nodata and off-grid positions carry no weight. Invalid pixels are NaN.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise GeometryError("contrast similarity needs identically shaped images")
    if valid is None:
        valid = ~(np.isnan(a) | np.isnan(b))
    w = gaussian_window(size, sigma)
    m = valid.astype(float)
    a0 = np.where(valid, a, 0.0)
    b0 = np.where(valid, b, 0.0)

    def blur(x):
        return correlate(x, w, mode="constant", cval=0.0)

    wsum = blur(m)
    with np.errstate(invalid="ignore", divide="ignore"):
        mu_a = blur(a0) / wsum
        mu_b = blur(b0) / wsum
        var_a = np.maximum(blur(a0 * a0) / wsum - mu_a * mu_a, 0.0)
        var_b = np.maximum(blur(b0 * b0) / wsum - mu_b * mu_b, 0.0)
    c2 = (K2 * dynamic_range) ** 2
    cs = (2 * np.sqrt(var_a) * np.sqrt(var_b) + c2) / (var_a + var_b + c2)
    return np.where(valid, cs, np.nan)


def contrast_similarity(a: RasterGrid | np.ndarray, b: RasterGrid | np.ndarray, **kwargs) -> float:
    """Mean contrast term over pixels valid in both images."""
    if isinstance(a, RasterGrid) and isinstance(b, RasterGrid):
        if not a.geometry.matches(b.geometry):
            raise GeometryError("contrast similarity needs grids with identical geometry")
    av = a.values if isinstance(a, RasterGrid) else np.asarray(a, dtype=float)
    bv = b.values if isinstance(b, RasterGrid) else np.asarray(b, dtype=float)
    cs = contrast_map(av, bv, **kwargs)
    if np.isnan(cs).all():
        return float("nan")
    return float(np.nanmean(cs))


CONSISTENCY_MODES = ("literal", "mean-ratio")


def consistency(values_train: Sequence[float], values_test: Sequence[float], mode: str = "literal") -> float:
    """Stability of a measure between training and testing evaluations.

    ``literal``: sqrt((mean_tr / sd_tr) * (mean_te / sd_te)) with sample SDs.
    ``mean-ratio``: geometric mean over matched (train, test) pairs of
    min/max of the two values; both lists must align and be positive.
    """
    tr = np.asarray(values_train, dtype=float)
    te = np.asarray(values_test, dtype=float)
    if tr.size == 0 or te.size == 0:
        raise ValueError("consistency needs nonempty value lists")
    if mode == "literal":
        if tr.size < 2 or te.size < 2:
            raise ValueError("literal consistency needs at least two values per list")
        s_tr, s_te = tr.std(ddof=1), te.std(ddof=1)
        if s_tr == 0 or s_te == 0:
            raise ValueError("literal consistency is undefined for a list with zero SD")
        prod = (tr.mean() / s_tr) * (te.mean() / s_te)
        return float(math.sqrt(prod)) if prod >= 0 else float("nan")
    if mode == "mean-ratio":
        if tr.shape != te.shape:
            raise ValueError("mean-ratio consistency needs matched train/test pairs")
        if (tr <= 0).any() or (te <= 0).any():
            raise ValueError("mean-ratio consistency needs positive values")
        ratio = np.minimum(tr, te) / np.maximum(tr, te)
        return float(np.exp(np.log(ratio).mean()))
    raise ValueError(f"unknown consistency mode {mode!r}; expected one of {CONSISTENCY_MODES}")


def factor_contribution(
    ds_all: Dataset,
    band: str,
    model_kind: str,
    drop: str | Sequence[str],
    seed: int = 0,
    **params,
) -> float:
    """r(full predictors) - r(predictors without ``drop``), in-sample, same config."""
    from .models import fit_model

    band = band_name(band)
    drop = (drop,) if isinstance(drop, str) else tuple(drop)
    unknown = [d for d in drop if d not in PREDICTORS]
    if unknown:
        raise DatasetError(f"unknown predictors: {', '.join(unknown)}")
    reduced = tuple(p for p in PREDICTORS if p not in drop)
    if not reduced:
        raise DatasetError("cannot drop every predictor")
    y = ds_all.response(band)

    def score(preds):
        model = fit_model(model_kind, ds_all, band, predictors=preds, seed=seed, **params)
        return pearson(y, model.predict(ds_all.predictors(preds)))

    return score(PREDICTORS) - score(reduced)
