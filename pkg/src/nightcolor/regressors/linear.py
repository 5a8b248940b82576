"""Multiple OLS regression of one band on the predictors."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import DatasetError, RankDeficiencyError
from ..features import PREDICTORS, Dataset, band_name


@dataclass(frozen=True)
class LinearModel:
    """Fitted ``y = b0 + sum_k b_k * P_k + eps``.

    Predictors with zero variance in the training data are aliased with the
    intercept; their coefficient is fixed at 0 and their t-statistic and VIF
    are NaN.
    """

    band: str
    predictors: tuple[str, ...]
    b0: float
    b: np.ndarray
    t_b0: float
    t: np.ndarray
    r2: float
    vif: np.ndarray
    residual_variance: float
    n: int

    kind = "ols"

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.b0 + X @ self.b

    def coefficients(self) -> dict[str, float]:
        return dict(zip(self.predictors, map(float, self.b)))


def _collinear_names(Z: np.ndarray, names: list[str]) -> list[str]:
    """Predictors with weight in the null space of the (centered) design."""
    _, s, vt = np.linalg.svd(Z, full_matrices=False)
    tol = s.max() * max(Z.shape) * np.finfo(float).eps
    null = vt[s <= tol]
    involved = np.abs(null).max(axis=0) > 1e-8 if len(null) else np.zeros(len(names), bool)
    return [n for n, hit in zip(names, involved) if hit]


def fit_ols(ds: Dataset, band: str, predictors=PREDICTORS) -> LinearModel:
    """Least-squares fit with t-statistics, R^2 and variance inflation factors."""
    band = band_name(band)
    predictors = tuple(predictors)
    X = ds.predictors(predictors)
    y = ds.response(band)
    if np.isnan(y).any():
        raise DatasetError(f"band {band!r} is absent for some observations")
    n, p = X.shape
    if n < p + 2:
        raise DatasetError(f"OLS needs at least {p + 2} observations, got {n}")

    spread = X.max(axis=0) - X.min(axis=0) if n else np.zeros(p)
    active = spread > 0
    if not active.all():
        dropped = [name for name, a in zip(predictors, active) if not a]
        warnings.warn(f"constant predictors aliased with the intercept: {', '.join(dropped)}", stacklevel=2)
    Xa = X[:, active]
    names = [name for name, a in zip(predictors, active) if a]
    k = Xa.shape[1]

    centered = Xa - Xa.mean(axis=0)
    if k and np.linalg.matrix_rank(centered) < k:
        raise RankDeficiencyError(_collinear_names(centered, names))

    design = np.column_stack([np.ones(n), Xa])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    rss = float(resid @ resid)
    dev = y - y.mean()
    tss = float(dev @ dev)
    dof = n - k - 1
    s2 = rss / dof
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    r2 = min(max(r2, 0.0), 1.0)

    _, rmat = np.linalg.qr(design)
    rinv = np.linalg.solve(rmat, np.eye(k + 1))
    cov_diag = (rinv * rinv).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        tstat = coef / np.sqrt(s2 * cov_diag)

    vif_active = np.ones(k)
    if k > 1:
        for j in range(k):
            others = np.column_stack([np.ones(n), np.delete(Xa, j, axis=1)])
            cj, *_ = np.linalg.lstsq(others, Xa[:, j], rcond=None)
            rj = Xa[:, j] - others @ cj
            tj = centered[:, j] @ centered[:, j]
            vif_active[j] = max(1.0, tj / (rj @ rj)) if rj @ rj > 0 else np.inf

    b = np.zeros(p)
    t = np.full(p, np.nan)
    vif = np.full(p, np.nan)
    b[active] = coef[1:]
    t[active] = tstat[1:]
    vif[active] = vif_active
    return LinearModel(band, predictors, float(coef[0]), b, float(tstat[0]), t, r2, vif, s2, n)


def predict_ols(model: LinearModel, X) -> np.ndarray:
    return model.predict(X)
