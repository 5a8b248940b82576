"""
Percentile-based outlier exclusion over predictor/response pairs.

Every variable (the five predictors and the chosen band) gets a lower and an
upper cutoff at the ``tail_fraction`` and ``1 - tail_fraction`` empirical
quantiles. An observation is removed when

(i)   it is beyond a cutoff on some predictor but within both response cutoffs;
(ii)  it is beyond a response cutoff but within the cutoffs of every predictor;
(iii) it sits beyond opposite-side cutoffs of a predictor and the response
      that are positively correlated;
(iv)  it sits beyond same-side cutoffs of a predictor and the response that
      are negatively correlated.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DatasetError
from .features import PREDICTORS, Dataset, band_name

RULES = ("i", "ii", "iii", "iv")


@dataclass(frozen=True)
class Cutoffs:
    """Quantile cutoffs and association signs for one (dataset, band)."""

    band: str
    lower: np.ndarray  # shape (6,): predictors then response
    upper: np.ndarray
    signs: np.ndarray  # shape (5,): sign of corr(predictor, response), 0 if degenerate


@dataclass(frozen=True)
class RemovedPoint:
    cell_id: tuple[int, int]
    rule: str
    predictor: str | None
    response: str


@dataclass
class OutlierReport:
    kept: Dataset
    removed: list[RemovedPoint]
    fraction_removed: float
    cutoffs: Cutoffs
    removed_mask: np.ndarray

    def write_removed_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["row", "col", "rule", "predictor", "response"])
            for p in self.removed:
                writer.writerow([p.cell_id[0], p.cell_id[1], p.rule, p.predictor or "", p.response])


def _correlation_sign(x: np.ndarray, y: np.ndarray) -> int:
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return 0
    dx = x - x.mean()
    dy = y - y.mean()
    return int(np.sign(dx @ dy))


def compute_cutoffs(ds: Dataset, band: str, tail_fraction: float = 0.01) -> Cutoffs:
    if not 0 < tail_fraction < 0.5:
        raise ValueError(f"tail_fraction must lie in (0, 0.5), got {tail_fraction}")
    band = band_name(band)
    data = _variables(ds, band)
    lower = np.quantile(data, tail_fraction, axis=0)
    upper = np.quantile(data, 1 - tail_fraction, axis=0)
    y = data[:, -1]
    signs = np.array([_correlation_sign(data[:, k], y) for k in range(len(PREDICTORS))])
    return Cutoffs(band, lower, upper, signs)


def _variables(ds: Dataset, band: str) -> np.ndarray:
    if not len(ds):
        raise DatasetError("cannot filter an empty dataset")
    y = ds.response(band)
    if np.isnan(y).any():
        raise DatasetError(f"band {band!r} is absent for some observations")
    return np.column_stack([ds.X, y])


def rule_flags(data: np.ndarray, cutoffs: Cutoffs) -> np.ndarray:
    """Boolean (n, 4) matrix: which of rules i-iv each row triggers."""
    above = data > cutoffs.upper
    below = data < cutoffs.lower
    beyond = above | below
    pred_beyond = beyond[:, :-1]
    resp_above, resp_below = above[:, -1], below[:, -1]
    resp_beyond = resp_above | resp_below
    pos = cutoffs.signs > 0
    neg = cutoffs.signs < 0

    flags = np.zeros((len(data), 4), dtype=bool)
    flags[:, 0] = pred_beyond.any(axis=1) & ~resp_beyond
    flags[:, 1] = resp_beyond & ~pred_beyond.any(axis=1)
    opposite = (above[:, :-1] & resp_below[:, None]) | (below[:, :-1] & resp_above[:, None])
    same = (above[:, :-1] & resp_above[:, None]) | (below[:, :-1] & resp_below[:, None])
    flags[:, 2] = (opposite & pos).any(axis=1)
    flags[:, 3] = (same & neg).any(axis=1)
    return flags


def _first_trigger(row: np.ndarray, cutoffs: Cutoffs, rules: np.ndarray) -> tuple[str, str | None]:
    above = row > cutoffs.upper
    below = row < cutoffs.lower
    for r, hit in zip(RULES, rules):
        if not hit:
            continue
        if r == "i":
            k = int(np.argmax(above[:-1] | below[:-1]))
            return r, PREDICTORS[k]
        if r == "ii":
            return r, None
        if r == "iii":
            cand = ((above[:-1] & below[-1]) | (below[:-1] & above[-1])) & (cutoffs.signs > 0)
        else:
            cand = ((above[:-1] & above[-1]) | (below[:-1] & below[-1])) & (cutoffs.signs < 0)
        return r, PREDICTORS[int(np.argmax(cand))]
    raise AssertionError("row triggers no rule")


def filter_outliers(
    ds: Dataset, band: str, tail_fraction: float = 0.01, cutoffs: Cutoffs | None = None
) -> OutlierReport:
    """Remove outliers for one band.

    Parameters
    ----------
    ds : Dataset
        Observations with ``band`` populated.
    band : str
        ``'R'``, ``'G'``, ``'B'`` or the full band name.
    tail_fraction : float
        Quantile level of each tail cutoff (0.01 drops the outer 1% per tail
        of every variable's distribution before rules apply).
    cutoffs : Cutoffs, optional
        Reuse cutoffs computed on another dataset instead of recomputing.
    """
    band = band_name(band)
    if cutoffs is None:
        cutoffs = compute_cutoffs(ds, band, tail_fraction)
    data = _variables(ds, band)
    flags = rule_flags(data, cutoffs)
    removed_mask = flags.any(axis=1)
    removed = []
    for i in np.flatnonzero(removed_mask):
        rule, pred = _first_trigger(data[i], cutoffs, flags[i])
        removed.append(RemovedPoint((int(ds.cells[i, 0]), int(ds.cells[i, 1])), rule, pred, band))
    kept = ds.subset(~removed_mask)
    return OutlierReport(kept, removed, float(removed_mask.mean()), cutoffs, removed_mask)
