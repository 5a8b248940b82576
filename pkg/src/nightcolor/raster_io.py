"""
Gridded data I/O: ASCII grids, block aggregation and RGB composites.

Grids are held as :class:`RasterGrid` objects whose ``values`` array is
row-major with row 0 at the northern edge (the order in which ASCII grid
files list their rows). Nodata cells are stored as NaN; the file sentinel is
kept in ``nodata_value`` and restored on write.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import GeometryError, GridFormatError

DEFAULT_NODATA = -9999.0

_REQUIRED_KEYS = ("ncols", "nrows", "cellsize")
_KNOWN_KEYS = (
    "ncols",
    "nrows",
    "xllcorner",
    "yllcorner",
    "xllcenter",
    "yllcenter",
    "cellsize",
    "nodata_value",
)


@dataclass(frozen=True)
class GridGeometry:
    """Placement of a regular grid: size, lower-left corner and cell size."""

    ncols: int
    nrows: int
    xll: float
    yll: float
    cellsize: float

    def __post_init__(self):
        if self.ncols < 1 or self.nrows < 1:
            raise GeometryError(f"grid must have at least one cell, got {self.nrows}x{self.ncols}")
        if not (self.cellsize > 0 and math.isfinite(self.cellsize)):
            raise GeometryError(f"cellsize must be positive, got {self.cellsize}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)

    @property
    def xmax(self) -> float:
        return self.xll + self.ncols * self.cellsize

    @property
    def ymax(self) -> float:
        return self.yll + self.nrows * self.cellsize

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Map coordinates (x, y) of every cell center, each of shape (nrows, ncols)."""
        x = self.xll + (np.arange(self.ncols) + 0.5) * self.cellsize
        y = self.yll + (self.nrows - np.arange(self.nrows) - 0.5) * self.cellsize
        return np.meshgrid(x, y)

    def matches(self, other: "GridGeometry", rtol: float = 1e-9) -> bool:
        if self.shape != other.shape:
            return False
        scale = max(abs(self.cellsize), 1.0)
        return (
            abs(self.xll - other.xll) <= rtol * scale
            and abs(self.yll - other.yll) <= rtol * scale
            and abs(self.cellsize - other.cellsize) <= rtol * scale
        )


@dataclass
class RasterGrid:
    """A georeferenced 2-D array of one physical quantity.

    Parameters
    ----------
    values : ndarray, shape (nrows, ncols)
        Cell values, NaN where the cell is nodata.
    xll, yll : float
        Lower-left corner of the grid in map units.
    cellsize : float
        Cell edge length in map units.
    nodata_value : float
        Sentinel written to files in place of NaN.
    """

    values: np.ndarray
    xll: float = 0.0
    yll: float = 0.0
    cellsize: float = 1.0
    nodata_value: float = DEFAULT_NODATA
    name: str = field(default="", compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise GeometryError(f"grid values must be 2-D, got shape {values.shape}")
        if np.isinf(values).any():
            raise GeometryError("grid values must be finite or NaN (nodata)")
        self.values = values
        # validates sizes and cellsize
        self.geometry  # noqa: B018

    @classmethod
    def from_geometry(cls, geometry: GridGeometry, values=None, fill=np.nan, **kwargs) -> "RasterGrid":
        if values is None:
            values = np.full(geometry.shape, fill, dtype=float)
        values = np.asarray(values, dtype=float)
        if values.shape != geometry.shape:
            raise GeometryError(f"values shape {values.shape} does not match geometry {geometry.shape}")
        return cls(values, geometry.xll, geometry.yll, geometry.cellsize, **kwargs)

    @property
    def nrows(self) -> int:
        return self.values.shape[0]

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry(self.ncols, self.nrows, float(self.xll), float(self.yll), float(self.cellsize))

    @property
    def mask(self) -> np.ndarray:
        """Boolean array, True where the cell holds data."""
        return ~np.isnan(self.values)

    def with_values(self, values) -> "RasterGrid":
        return RasterGrid(values, self.xll, self.yll, self.cellsize, self.nodata_value, self.name)

    def __eq__(self, other):
        if not isinstance(other, RasterGrid):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and self.nodata_value == other.nodata_value
            and np.array_equal(self.values, other.values, equal_nan=True)
        )


def read_ascii_grid(path) -> RasterGrid:
    """Read a plain-text ASCII grid.

    Header keys are matched case-insensitively. ``xllcenter``/``yllcenter``
    are converted to corner coordinates. Errors carry the offending line
    number.
    """
    path = Path(path)
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        lines = fh.read().splitlines()

    header: dict[str, float] = {}
    lineno = 0
    for lineno, raw in enumerate(lines, start=1):
        parts = raw.split()
        if not parts:
            continue
        key = parts[0].lower()
        if key not in _KNOWN_KEYS:
            lineno -= 1
            break
        if len(parts) != 2:
            raise GridFormatError(f"header entry {parts[0]!r} must have exactly one value", lineno, path)
        if key in header:
            raise GridFormatError(f"duplicate header key {parts[0]!r}", lineno, path)
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise GridFormatError(f"non-numeric header value {parts[1]!r} for {parts[0]!r}", lineno, path) from None
    else:
        lineno = len(lines)

    for key in _REQUIRED_KEYS:
        if key not in header:
            raise GridFormatError(f"missing header key {key!r}", lineno + 1, path)
    for axis in ("x", "y"):
        if (f"{axis}llcorner" in header) == (f"{axis}llcenter" in header):
            raise GridFormatError(f"header needs exactly one of {axis}llcorner/{axis}llcenter", lineno + 1, path)

    ncols, nrows = header["ncols"], header["nrows"]
    if ncols != int(ncols) or nrows != int(nrows) or ncols < 1 or nrows < 1:
        raise GridFormatError(f"ncols/nrows must be positive integers, got {ncols}, {nrows}", lineno, path)
    ncols, nrows = int(ncols), int(nrows)
    cellsize = header["cellsize"]
    if not cellsize > 0:
        raise GridFormatError(f"cellsize must be positive, got {cellsize}", lineno, path)
    xll = header.get("xllcorner", header.get("xllcenter", 0.0) - 0.5 * cellsize)
    yll = header.get("yllcorner", header.get("yllcenter", 0.0) - 0.5 * cellsize)
    nodata = header.get("nodata_value", DEFAULT_NODATA)

    expected = ncols * nrows
    tokens: list[float] = []
    for offset, raw in enumerate(lines[lineno:], start=lineno + 1):
        for tok in raw.split():
            try:
                val = float(tok)
            except ValueError:
                raise GridFormatError(f"non-numeric value {tok!r}", offset, path) from None
            if not math.isfinite(val):
                raise GridFormatError(f"non-finite value {tok!r}", offset, path)
            tokens.append(val)
            if len(tokens) > expected:
                raise GridFormatError(
                    f"value count mismatch: header declares {expected} cells, found more", offset, path
                )
    if len(tokens) != expected:
        raise GridFormatError(
            f"value count mismatch: header declares {expected} cells, found {len(tokens)}", len(lines), path
        )

    values = np.array(tokens, dtype=float).reshape(nrows, ncols)
    values[values == nodata] = np.nan
    return RasterGrid(values, xll, yll, cellsize, nodata, name=path.stem)


def _fmt(value: float) -> str:
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def write_ascii_grid(grid: RasterGrid, path) -> None:
    """Write ``grid`` as an ASCII grid. Values use shortest round-trip text."""
    nodata = _fmt(grid.nodata_value)
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"ncols {grid.ncols}\n")
        fh.write(f"nrows {grid.nrows}\n")
        fh.write(f"xllcorner {repr(float(grid.xll))}\n")
        fh.write(f"yllcorner {repr(float(grid.yll))}\n")
        fh.write(f"cellsize {repr(float(grid.cellsize))}\n")
        fh.write(f"NODATA_value {nodata}\n")
        for row in grid.values:
            fh.write(" ".join(nodata if math.isnan(v) else _fmt(v) for v in row))
            fh.write("\n")


class GridStats(NamedTuple):
    """Per-target-cell aggregation result (mean, population SD, contributor count)."""

    mean: RasterGrid
    sd: RasterGrid
    count: np.ndarray


def aggregate_stats(src: RasterGrid, target: GridGeometry | RasterGrid) -> GridStats:
    """Block-aggregate ``src`` onto a coarser ``target`` geometry.

    A source cell contributes to the target cell containing its center.
    Target cells receiving no valid source cells are nodata. The SD uses
    divisor n.
    """
    if isinstance(target, RasterGrid):
        target = target.geometry
    sg = src.geometry
    if sg.cellsize > target.cellsize * (1 + 1e-12):
        raise GeometryError(
            f"source cellsize {sg.cellsize} is coarser than target cellsize {target.cellsize}"
        )
    if sg.xll >= target.xmax or sg.xmax <= target.xll or sg.yll >= target.ymax or sg.ymax <= target.yll:
        raise GeometryError("source and target grids have disjoint extents")

    x, y = sg.cell_centers()
    col = np.floor((x - target.xll) / target.cellsize).astype(np.int64)
    row = np.floor((target.ymax - y) / target.cellsize).astype(np.int64)
    inside = (col >= 0) & (col < target.ncols) & (row >= 0) & (row < target.nrows) & src.mask
    if not inside.any():
        raise GeometryError("no valid source cell center falls inside the target grid")

    flat = (row * target.ncols + col)[inside]
    vals = src.values[inside]
    size = target.nrows * target.ncols
    count = np.bincount(flat, minlength=size)
    total = np.bincount(flat, weights=vals, minlength=size)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = total / count
    # two-pass SD keeps precision when the mean is large relative to the spread
    dev = vals - mean[flat]
    ss = np.bincount(flat, weights=dev * dev, minlength=size)
    with np.errstate(invalid="ignore", divide="ignore"):
        sd = np.sqrt(ss / count)
    empty = count == 0
    mean[empty] = np.nan
    sd[empty] = np.nan

    shape = target.shape
    return GridStats(
        RasterGrid.from_geometry(target, mean.reshape(shape), nodata_value=src.nodata_value),
        RasterGrid.from_geometry(target, sd.reshape(shape), nodata_value=src.nodata_value),
        count.reshape(shape),
    )


def aggregate_to_grid(src: RasterGrid, target: GridGeometry | RasterGrid) -> tuple[RasterGrid, RasterGrid]:
    """Mean and population-SD grids of ``src`` aggregated onto ``target``."""
    stats = aggregate_stats(src, target)
    return stats.mean, stats.sd


def rgb_bytes(r: RasterGrid, g: RasterGrid, b: RasterGrid) -> np.ndarray:
    """8-bit (nrows, ncols, 3) array; nodata in any band renders white."""
    if not (r.geometry.matches(g.geometry) and r.geometry.matches(b.geometry)):
        raise GeometryError("red, green and blue grids must share geometry")
    stack = np.stack([r.values, g.values, b.values], axis=-1)
    missing = np.isnan(stack).any(axis=-1)
    out = np.clip(np.rint(np.nan_to_num(stack, nan=255.0)), 0, 255).astype(np.uint8)
    out[missing] = 255
    return out


def write_rgb_image(r: RasterGrid, g: RasterGrid, b: RasterGrid, path) -> None:
    """Write an RGB composite of three digital-number grids.

    Values are rounded and clamped to 0..255. The format is binary PPM (P6)
    unless ``path`` ends in ``.png``, which needs Pillow.
    """
    pixels = rgb_bytes(r, g, b)
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(pixels, mode="RGB").save(path)
        return
    header = f"P6\n{r.ncols} {r.nrows}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(pixels.tobytes())


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file written by :func:`write_rgb_image`."""
    data = Path(path).read_bytes()
    # pixel bytes may themselves be whitespace, so split on the three header newlines only
    magic, size, maxval, pixels = data.split(b"\n", 3)
    if magic != b"P6" or maxval != b"255":
        raise GridFormatError("not an 8-bit binary PPM", path=path)
    ncols, nrows = (int(v) for v in size.split())
    return np.frombuffer(pixels, dtype=np.uint8).reshape(nrows, ncols, 3)
