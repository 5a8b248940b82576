"""
Bagged CART regression forest.

Every tree is grown on a bootstrap resample with all predictors as split
candidates. A split minimizes the summed child SSE subject to both children
holding at least ``min_leaf`` rows; ties go to the lowest predictor index,
then the lowest threshold. Rows with ``x <= threshold`` go left.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DatasetError
from ..features import PREDICTORS, Dataset, band_name

LEAF = -1


@dataclass(frozen=True)
class RegressionTree:
    """Array-encoded binary tree; ``feature[i] == LEAF`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] != LEAF
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active[idx] = self.feature[node[idx]] != LEAF
        return node

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.value[self.apply(X)]

    @property
    def n_leaves(self) -> int:
        return int((self.feature == LEAF).sum())


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    """Return (feature, threshold, score) maximizing sum_c S_c^2 / n_c, or None."""
    n = len(y)
    best = None
    sizes = np.arange(1, n)
    allowed = (sizes >= min_leaf) & (n - sizes >= min_leaf)
    if not allowed.any():
        return None
    total = y.sum()
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        csum = np.cumsum(y[order])[:-1]
        ok = allowed & (xs[1:] > xs[:-1])
        if not ok.any():
            continue
        score = np.full(n - 1, -np.inf)
        left = csum[ok]
        score[ok] = left * left / sizes[ok] + (total - left) ** 2 / (n - sizes[ok])
        i = int(np.argmax(score))
        if best is None or score[i] > best[2]:
            lo, hi = xs[i], xs[i + 1]
            thr = 0.5 * (lo + hi)
            if not lo <= thr < hi:
                thr = lo
            best = (f, float(thr), float(score[i]))
    return best


def grow_tree(X: np.ndarray, y: np.ndarray, min_leaf: int = 5) -> RegressionTree:
    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def new_node(idx):
        feature.append(LEAF)
        threshold.append(np.nan)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(y[idx].mean()))
        count.append(len(idx))
        return len(feature) - 1

    stack = [(new_node(np.arange(len(y))), np.arange(len(y)))]
    while stack:
        node, idx = stack.pop()
        yi = y[idx]
        if len(idx) < 2 * min_leaf or yi.max() == yi.min():
            continue
        split = _best_split(X[idx], yi, min_leaf)
        if split is None:
            continue
        f, thr, score = split
        parent = yi.sum() ** 2 / len(yi)
        if score - parent <= 1e-12 * max(abs(parent), (yi * yi).sum()):
            continue
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node] = f, thr
        left[node], right[node] = new_node(li), new_node(ri)
        stack.append((right[node], ri))
        stack.append((left[node], li))

    return RegressionTree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=float),
        np.array(count, dtype=np.int64),
    )


@dataclass(frozen=True)
class ForestModel:
    band: str
    predictors: tuple[str, ...]
    trees: tuple[RegressionTree, ...]
    min_leaf: int
    seed: int | None
    bootstrap: bool = True

    kind = "forest"

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def tree_predictions(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.stack([t.predict(X) for t in self.trees])

    def predict(self, X) -> np.ndarray:
        return self.tree_predictions(X).mean(axis=0)


def fit_forest(
    ds: Dataset,
    band: str,
    n_trees: int = 32,
    min_leaf: int = 5,
    seed: int = 0,
    bootstrap: bool = True,
    predictors=PREDICTORS,
) -> ForestModel:
    """Grow ``n_trees`` CART trees, each on its own bootstrap sample.

    Tree ``i`` draws its resample from the ``i``-th child of
    ``SeedSequence(seed)``, so results do not depend on fitting order.
    """
    band = band_name(band)
    predictors = tuple(predictors)
    X = ds.predictors(predictors)
    y = ds.response(band)
    if np.isnan(y).any():
        raise DatasetError(f"band {band!r} is absent for some observations")
    n = len(y)
    if n < min_leaf or n == 0:
        raise DatasetError(f"forest needs at least min_leaf={min_leaf} observations, got {n}")
    if n_trees < 1 or min_leaf < 1:
        raise ValueError("n_trees and min_leaf must be positive")

    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        if bootstrap:
            idx = np.random.default_rng(child).integers(0, n, size=n)
        else:
            idx = np.arange(n)
        trees.append(grow_tree(X[idx], y[idx], min_leaf))
    return ForestModel(band, predictors, tuple(trees), min_leaf, seed, bootstrap)


def predict_forest(model: ForestModel, X) -> np.ndarray:
    return model.predict(X)
