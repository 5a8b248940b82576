"""
Synthetic cities whose bands follow the pooled OLS fit reported for real data.

A city is a panchromatic ALAN grid (smooth log-normal light dome plus
spatially heteroscedastic pixel texture), a fine-resolution built-up
percentage raster, and red/green/blue grids generated as
``b0 + b . P + noise`` with the noise SD set so the population R^2 of each
band matches its target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .features import BANDS, Dataset, assemble
from .raster_io import RasterGrid, aggregate_stats, write_ascii_grid

# intercept, (alan, alan_mean_diff, alan_max_diff, hbase_mean, hbase_sd), R^2
REFERENCE_FIT = {
    "red": (3.34, (0.98, -0.67, 0.24, 0.15, -0.32), 0.67),
    "green": (2.09, (0.81, -0.39, 0.13, 0.05, -0.13), 0.70),
    "blue": (5.49, (0.49, -0.07, 0.01, -0.01, -0.01), 0.57),
}

# texture parameters chosen to keep every slope's OLS standard error small at n ~ 5000
DOME_SD = 0.3
TEXTURE_AMPLITUDE = 7.0
TEXTURE_SPREAD = 0.75
HBASE_TEXTURE_MAX = 45.0


@dataclass
class SyntheticCity:
    name: str
    alan: RasterGrid
    hbase: RasterGrid  # fine resolution, percent
    hbase_mean: RasterGrid
    hbase_sd: RasterGrid
    bands: dict[str, RasterGrid]
    signal: dict[str, RasterGrid] = field(repr=False)
    noise_sd: dict[str, float]
    mask: RasterGrid | None = None

    def dataset(self) -> Dataset:
        return assemble(
            self.alan,
            self.hbase_mean,
            self.hbase_sd,
            [self.bands.get(b) for b in BANDS],
            self.mask,
            name=self.name,
        )


def band_signal(X: np.ndarray, band: str) -> np.ndarray:
    b0, b, _ = REFERENCE_FIT[band]
    return b0 + X @ np.asarray(b)


def make_city(
    name: str = "city",
    shape: tuple[int, int] = (71, 71),
    seed: int = 0,
    cellsize: float = 750.0,
    hbase_factor: int = 5,
    clip: bool = False,
    water_fraction: float = 0.0,
    coefficients: dict | None = None,
) -> SyntheticCity:
    """Generate one city.

    Parameters
    ----------
    clip : bool
        Clamp bands to [1, 255] digital numbers. Needed for WMSE (which
        divides by the actual value); leave off for unbiased coefficient
        recovery.
    water_fraction : float
        Fraction of columns on the eastern edge masked out as water.
    """
    coefficients = REFERENCE_FIT if coefficients is None else coefficients
    rng = np.random.default_rng(seed)
    nrows, ncols = shape
    dome = gaussian_filter(rng.normal(size=shape), 3.0)
    dome /= dome.std()
    spread = gaussian_filter(rng.normal(size=shape), 2.0)
    spread /= spread.std()
    texture = TEXTURE_AMPLITUDE * np.exp(TEXTURE_SPREAD * spread) * rng.normal(size=shape)
    alan_vals = np.abs(20.0 * np.exp(DOME_SD * dome) + texture)

    built = 100.0 / (1.0 + np.exp(-(1.2 * dome + rng.normal(size=shape))))
    amp = rng.uniform(0.0, HBASE_TEXTURE_MAX, size=shape)
    block = np.ones((hbase_factor, hbase_factor))
    fine = np.kron(built, block) + np.kron(amp, block) * rng.normal(size=(nrows * hbase_factor, ncols * hbase_factor))
    fine = np.clip(fine, 0.0, 100.0)

    alan = RasterGrid(alan_vals, 0.0, 0.0, cellsize, name="alan")
    hbase = RasterGrid(fine, 0.0, 0.0, cellsize / hbase_factor, name="hbase")
    stats = aggregate_stats(hbase, alan)
    mask = None
    if water_fraction > 0:
        m = np.ones(shape)
        m[:, ncols - int(round(water_fraction * ncols)) :] = 0.0
        mask = RasterGrid(m, 0.0, 0.0, cellsize, name="mask")

    ds = assemble(alan, stats.mean, stats.sd, name=name)
    rows, cols = ds.cells[:, 0], ds.cells[:, 1]
    bands, signal, noise_sd = {}, {}, {}
    for band in BANDS:
        b0, b, r2 = coefficients[band]
        sig = b0 + ds.X @ np.asarray(b)
        sd = float(sig.std() * math.sqrt((1.0 - r2) / r2))
        vals = sig + rng.normal(scale=sd, size=len(sig))
        if clip:
            vals = np.clip(vals, 1.0, 255.0)
        grid = np.full(shape, np.nan)
        grid[rows, cols] = vals
        sgrid = np.full(shape, np.nan)
        sgrid[rows, cols] = sig
        bands[band] = alan.with_values(grid)
        signal[band] = alan.with_values(sgrid)
        noise_sd[band] = sd
    return SyntheticCity(name, alan, hbase, stats.mean, stats.sd, bands, signal, noise_sd, mask)


def write_city(city: SyntheticCity, directory) -> dict[str, Path]:
    """Write a city's input rasters as ASCII grids; returns the file paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"alan": directory / "alan.asc", "hbase": directory / "hbase.asc"}
    write_ascii_grid(city.alan, paths["alan"])
    write_ascii_grid(city.hbase, paths["hbase"])
    for band, grid in city.bands.items():
        paths[band] = directory / f"{band}.asc"
        write_ascii_grid(grid, paths[band])
    if city.mask is not None:
        paths["mask"] = directory / "mask.asc"
        write_ascii_grid(city.mask, paths["mask"])
    return paths


def write_experiment(
    directory,
    n_cities: int = 2,
    shape: tuple[int, int] = (24, 24),
    seed: int = 0,
    models=("ols", "kernel", "forest", "elmap"),
    penalties=None,
    dims: tuple[int, int] = (12, 12),
    n_trees: int = 32,
) -> Path:
    """Write ``n_cities`` clipped synthetic cities and a config file that runs them."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [
        f"seed = {seed}",
        'out = "run"',
        'bands = ["red", "green", "blue"]',
        "models = [" + ", ".join(f'"{m}"' for m in models) + "]",
        "tail_fraction = 0.01",
        "",
        "[forest]",
        f"n_trees = {n_trees}",
        "",
        "[elmap]",
        f"dims = [{dims[0]}, {dims[1]}]",
    ]
    if penalties is not None:
        lines.append("penalties = [" + ", ".join(repr(float(p)) for p in penalties) + "]")
    lines.append("")
    for i in range(n_cities):
        name = f"city{i + 1}"
        city = make_city(name, shape, seed=seed * 1000 + i, clip=True, water_fraction=0.1 if i == 0 else 0.0)
        paths = write_city(city, directory / name)
        lines.append("[[city]]")
        lines.append(f'name = "{name}"')
        for key, path in paths.items():
            lines.append(f'{key} = "{path.relative_to(directory).as_posix()}"')
        lines.append("")
    cfg = directory / "experiment.toml"
    cfg.write_text("\n".join(lines), encoding="utf-8")
    return cfg
