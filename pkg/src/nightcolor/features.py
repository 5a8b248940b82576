"""
Modeling dataset assembly: per-cell predictors and band responses.

Each valid grid cell becomes one observation carrying five predictors
(panchromatic ALAN, its mean and max neighborhood differences, built-up
mean and SD) and up to three band responses (red, green, blue digital
numbers). The :class:`Dataset` is column-oriented; :class:`Observation`
is a per-row view.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DatasetError, GeometryError
from .raster_io import RasterGrid

PREDICTORS = ("alan", "alan_mean_diff", "alan_max_diff", "hbase_mean", "hbase_sd")
BANDS = ("red", "green", "blue")
CSV_COLUMNS = ("row", "col") + PREDICTORS + BANDS

_BAND_ALIASES = {"r": "red", "g": "green", "b": "blue", "red": "red", "green": "green", "blue": "blue"}


def band_name(band: str) -> str:
    """Normalize ``'R'``/``'red'``/... to one of :data:`BANDS`."""
    try:
        return _BAND_ALIASES[band.strip().lower()]
    except (KeyError, AttributeError):
        raise DatasetError(f"unknown band {band!r}; expected one of R, G, B") from None


def predictor_index(names: Iterable[str]) -> list[int]:
    idx = []
    for name in names:
        if name not in PREDICTORS:
            raise DatasetError(f"unknown predictor {name!r}; expected one of {', '.join(PREDICTORS)}")
        idx.append(PREDICTORS.index(name))
    return idx


@dataclass(frozen=True)
class Observation:
    cell_id: tuple[int, int]
    alan: float
    alan_mean_diff: float
    alan_max_diff: float
    hbase_mean: float
    hbase_sd: float
    red: float | None = None
    green: float | None = None
    blue: float | None = None


@dataclass
class Dataset:
    """Tabular collection of observations for one city.

    Attributes
    ----------
    cells : ndarray of int, shape (n, 2)
        (row, col) grid index of each observation.
    X : ndarray, shape (n, 5)
        Predictors in :data:`PREDICTORS` order.
    Y : ndarray, shape (n, 3)
        Responses in :data:`BANDS` order; NaN marks an absent response.
    """

    name: str
    cells: np.ndarray
    X: np.ndarray
    Y: np.ndarray = None
    _validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.int64).reshape(-1, 2)
        self.X = np.asarray(self.X, dtype=float).reshape(-1, len(PREDICTORS))
        n = len(self.cells)
        if self.Y is None:
            self.Y = np.full((n, len(BANDS)), np.nan)
        self.Y = np.asarray(self.Y, dtype=float).reshape(-1, len(BANDS))
        if len(self.X) != n or len(self.Y) != n:
            raise DatasetError("cells, X and Y must have the same number of rows")
        if self._validate:
            self.validate()

    def validate(self) -> None:
        if not np.isfinite(self.X).all():
            raise DatasetError("predictors must be finite")
        if np.isinf(self.Y).any():
            raise DatasetError("responses must be finite or absent")
        hm = self.X[:, PREDICTORS.index("hbase_mean")]
        hs = self.X[:, PREDICTORS.index("hbase_sd")]
        if ((hm < 0) | (hm > 100)).any():
            raise DatasetError("hbase_mean must lie in [0, 100]")
        if (hs < 0).any():
            raise DatasetError("hbase_sd must be non-negative")
        if len(self.cells) and len(np.unique(self.cells, axis=0)) != len(self.cells):
            raise DatasetError("duplicate cell_id in dataset")

    def __len__(self) -> int:
        return len(self.cells)

    def __getitem__(self, i: int) -> Observation:
        resp = [None if math.isnan(v) else float(v) for v in self.Y[i]]
        return Observation((int(self.cells[i, 0]), int(self.cells[i, 1])), *map(float, self.X[i]), *resp)

    @property
    def observations(self) -> list[Observation]:
        return [self[i] for i in range(len(self))]

    @property
    def bands(self) -> tuple[str, ...]:
        """Bands populated for every observation."""
        if not len(self):
            return ()
        return tuple(b for j, b in enumerate(BANDS) if not np.isnan(self.Y[:, j]).any())

    def has_band(self, band: str) -> bool:
        return band_name(band) in self.bands

    def response(self, band: str) -> np.ndarray:
        return self.Y[:, BANDS.index(band_name(band))]

    def predictors(self, names: Sequence[str] = PREDICTORS) -> np.ndarray:
        return self.X[:, predictor_index(names)]

    def subset(self, keep) -> "Dataset":
        keep = np.asarray(keep)
        return Dataset(self.name, self.cells[keep], self.X[keep], self.Y[keep], _validate=False)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.cells, other.cells)
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.Y, other.Y, equal_nan=True)
        )


def neighborhood_diffs(grid: RasterGrid) -> tuple[RasterGrid, RasterGrid]:
    """Mean and max differences between each cell and its 8-neighborhood.

    For a valid cell with value v and valid neighbors n_j::

        mean_diff = v - mean(n_j)
        max_diff  = max_j (v - n_j) = v - min(n_j)

    Edge cells use whichever neighbors exist; cells with no valid neighbor
    are nodata.
    """
    if grid.nrows < 2 or grid.ncols < 2:
        raise GeometryError("neighborhood differences need at least a 2x2 grid")
    v = grid.values
    padded = np.pad(v, 1, constant_values=np.nan)
    shifts = [
        padded[1 + dr : 1 + dr + grid.nrows, 1 + dc : 1 + dc + grid.ncols]
        for dr in (-1, 0, 1)
        for dc in (-1, 0, 1)
        if (dr, dc) != (0, 0)
    ]
    stack = np.stack(shifts)
    valid = ~np.isnan(stack)
    count = valid.sum(axis=0)
    total = np.where(valid, stack, 0.0).sum(axis=0)
    lowest = np.where(valid, stack, np.inf).min(axis=0)
    has = (count > 0) & grid.mask
    mean_nb = np.full(v.shape, np.nan)
    mean_nb[has] = total[has] / count[has]
    # rounding in the sum can put the mean a hair below the minimum
    mean_nb[has] = np.maximum(mean_nb[has], lowest[has])
    mean_diff = np.where(has, v - mean_nb, np.nan)
    max_diff = np.where(has, v - np.where(has, lowest, 0.0), np.nan)
    return grid.with_values(mean_diff), grid.with_values(max_diff)


def assemble(
    alan: RasterGrid,
    hbase_mean: RasterGrid,
    hbase_sd: RasterGrid,
    bands: Sequence[RasterGrid] | None = None,
    mask: RasterGrid | None = None,
    name: str = "",
) -> Dataset:
    """Build the modeling dataset from grids sharing one geometry.

    ``bands`` is an optional (red, green, blue) triple; any element may be
    None. Cells where ``mask`` is nodata or zero are excluded (e.g. water).
    Observations need all five predictors; responses may be missing.
    """
    geom = alan.geometry
    grids = [hbase_mean, hbase_sd]
    if bands is not None:
        if len(bands) != len(BANDS):
            raise DatasetError("bands must be a (red, green, blue) triple")
        grids += [b for b in bands if b is not None]
    if mask is not None:
        grids.append(mask)
    for g in grids:
        if not g.geometry.matches(geom):
            raise GeometryError(f"grid {g.name or '?'} does not share the ALAN grid geometry")

    mean_diff, max_diff = neighborhood_diffs(alan)
    X = np.stack([alan.values, mean_diff.values, max_diff.values, hbase_mean.values, hbase_sd.values], axis=-1)
    valid = ~np.isnan(X).any(axis=-1)
    if mask is not None:
        valid &= mask.mask & (np.nan_to_num(mask.values) != 0)
    rows, cols = np.nonzero(valid)
    if len(rows) == 0:
        raise DatasetError("no cell has all predictors available")
    Y = np.full((len(rows), len(BANDS)), np.nan)
    if bands is not None:
        for j, b in enumerate(bands):
            if b is not None:
                Y[:, j] = b.values[rows, cols]
    return Dataset(name or alan.name, np.column_stack([rows, cols]), X[rows, cols], Y)


def _fmt(value: float) -> str:
    if math.isnan(value):
        return ""
    return repr(float(value))


def write_dataset_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for (r, c), x, y in zip(ds.cells, ds.X, ds.Y):
            writer.writerow([int(r), int(c), *map(_fmt, x), *map(_fmt, y)])


def read_dataset_csv(path, name: str | None = None) -> Dataset:
    """Read a dataset CSV. Band columns are optional; blank fields are absent."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        for col in ("row", "col") + PREDICTORS:
            if col not in header:
                raise DatasetError(f"{path}: missing required column {col!r}")
        pos = {h: i for i, h in enumerate(header)}
        cells, X, Y = [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(header):
                raise DatasetError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(rec)}")
            try:
                cells.append((int(rec[pos["row"]]), int(rec[pos["col"]])))
                X.append([float(rec[pos[p]]) for p in PREDICTORS])
                Y.append(
                    [
                        float(rec[pos[b]]) if b in pos and rec[pos[b]].strip() else np.nan
                        for b in BANDS
                    ]
                )
            except ValueError as exc:
                raise DatasetError(f"{path}: line {lineno}: non-numeric field ({exc})") from None
    return Dataset(name if name is not None else path.stem, np.array(cells).reshape(-1, 2), X, Y)


def concat(datasets: Sequence[Dataset], name: str = "pooled") -> Dataset:
    """Pool datasets from several cities. Cell ids are re-numbered by row offset."""
    cells, X, Y = [], [], []
    offset = 0
    for ds in datasets:
        c = ds.cells.copy()
        c[:, 0] += offset
        offset = int(c[:, 0].max()) + 1 if len(c) else offset
        cells.append(c)
        X.append(ds.X)
        Y.append(ds.Y)
    return Dataset(name, np.concatenate(cells), np.concatenate(X), np.concatenate(Y))
