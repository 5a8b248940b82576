import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from nightcolor.errors import DatasetError, GeometryError
from nightcolor.features import (
    BANDS,
    CSV_COLUMNS,
    Dataset,
    assemble,
    band_name,
    concat,
    neighborhood_diffs,
    read_dataset_csv,
    write_dataset_csv,
)
from nightcolor.raster_io import RasterGrid

from conftest import random_dataset


def grid(values):
    return RasterGrid(np.asarray(values, dtype=float), 0.0, 0.0, 1.0)


def loop_oracle(v):
    """Direct per-cell evaluation over existing non-NaN neighbors."""
    nr, nc = v.shape
    md = np.full(v.shape, np.nan)
    xd = np.full(v.shape, np.nan)
    for r in range(nr):
        for c in range(nc):
            if np.isnan(v[r, c]):
                continue
            nb = [v[rr, cc] for rr in range(r - 1, r + 2) for cc in range(c - 1, c + 2)
                  if (rr, cc) != (r, c) and 0 <= rr < nr and 0 <= cc < nc and not np.isnan(v[rr, cc])]
            if nb:
                md[r, c] = v[r, c] - sum(nb) / len(nb)
                xd[r, c] = max(v[r, c] - n for n in nb)
    return md, xd


def test_center_spike_and_pit():
    v = np.ones((3, 3))
    v[1, 1] = 10
    md, xd = neighborhood_diffs(grid(v))
    assert md.values[1, 1] == 9 and xd.values[1, 1] == 9
    v = np.full((3, 3), 10.0)
    v[1, 1] = 1
    md, xd = neighborhood_diffs(grid(v))
    assert md.values[1, 1] == -9 and xd.values[1, 1] == -9


def test_constant_grid():
    md, xd = neighborhood_diffs(grid(np.full((4, 5), 3.5)))
    assert (md.values == 0).all() and (xd.values == 0).all()


def test_edges_use_available_neighbors():
    v = np.arange(12.0).reshape(3, 4)
    md, xd = neighborhood_diffs(grid(v))
    # corner (0,0): neighbours 1, 4, 5
    assert md.values[0, 0] == pytest.approx(0 - (1 + 4 + 5) / 3)
    assert xd.values[0, 0] == -1


def test_isolated_cell_is_nodata():
    v = np.full((3, 3), np.nan)
    v[1, 1] = 4
    md, xd = neighborhood_diffs(grid(v))
    assert np.isnan(md.values).all() and np.isnan(xd.values).all()


def test_too_small_grid():
    with pytest.raises(GeometryError):
        neighborhood_diffs(grid([[1.0, 2.0]]))


grids = arrays(
    float, st.tuples(st.integers(2, 7), st.integers(2, 7)),
    elements=st.one_of(st.floats(-1e4, 1e4), st.just(np.nan)),
)


@given(grids)
def test_matches_loop_oracle(v):
    md, xd = neighborhood_diffs(grid(v))
    omd, oxd = loop_oracle(v)
    np.testing.assert_allclose(md.values, omd, rtol=1e-12, atol=1e-9)
    np.testing.assert_array_equal(xd.values, oxd)


@given(grids)
def test_max_diff_not_below_mean_diff(v):
    md, xd = neighborhood_diffs(grid(v))
    ok = ~np.isnan(md.values)
    assert (xd.values[ok] >= md.values[ok]).all()


@given(grids, st.floats(-1e3, 1e3), st.floats(0.01, 100))
def test_shift_invariance_and_homogeneity(v, c, s):
    md, xd = neighborhood_diffs(grid(v))
    md_c, xd_c = neighborhood_diffs(grid(v + c))
    md_s, xd_s = neighborhood_diffs(grid(v * s))
    np.testing.assert_allclose(md_c.values, md.values, atol=1e-8)
    np.testing.assert_allclose(xd_c.values, xd.values, atol=1e-8)
    np.testing.assert_allclose(md_s.values, s * md.values, rtol=1e-10, atol=1e-8)
    np.testing.assert_allclose(xd_s.values, s * xd.values, rtol=1e-10, atol=1e-8)


def three_by_three():
    rng = np.random.default_rng(0)
    return grid(rng.uniform(1, 50, (3, 3))), grid(rng.uniform(0, 100, (3, 3))), grid(rng.uniform(0, 30, (3, 3)))


def test_assemble_cardinality():
    alan, hm, hs = three_by_three()
    assert len(assemble(alan, hm, hs)) == 9
    v = alan.values.copy()
    v[0, 0] = np.nan
    assert len(assemble(alan.with_values(v), hm, hs)) == 8
    m = np.ones((3, 3))
    m[2] = 0
    ds = assemble(alan, hm, hs, mask=grid(m))
    assert len(ds) == 6
    assert (ds.cells[:, 0] < 2).all()


def test_assemble_bands_and_geometry():
    alan, hm, hs = three_by_three()
    red = grid(np.full((3, 3), 7.0))
    ds = assemble(alan, hm, hs, [red, None, None])
    assert ds.bands == ("red",)
    assert (ds.response("R") == 7).all()
    assert np.isnan(ds.response("blue")).all()
    with pytest.raises(GeometryError):
        assemble(alan, hm, RasterGrid(hs.values, 5.0, 0.0, 1.0))


def test_dataset_invariants():
    with pytest.raises(DatasetError, match="duplicate"):
        Dataset("d", [[0, 0], [0, 0]], np.ones((2, 5)))
    with pytest.raises(DatasetError, match="hbase_mean"):
        Dataset("d", [[0, 0]], [[1, 0, 0, 150, 1]])
    with pytest.raises(DatasetError, match="finite"):
        Dataset("d", [[0, 0]], [[np.nan, 0, 0, 1, 1]])


def test_band_aliases():
    assert [band_name(b) for b in ("R", "g", "Blue")] == list(BANDS)
    with pytest.raises(DatasetError):
        band_name("nir")


def test_observation_view(small_ds):
    obs = small_ds[3]
    assert obs.cell_id == tuple(small_ds.cells[3])
    assert obs.alan == small_ds.X[3, 0]
    assert obs.red == small_ds.Y[3, 0]


@given(st.integers(1, 40), st.integers(0, 10_000), st.booleans())
def test_csv_round_trip(tmp_path_factory, n, seed, with_bands):
    ds = random_dataset(n, seed, bands=with_bands)
    if with_bands:
        ds.Y[0, 2] = np.nan
    p = tmp_path_factory.mktemp("csv") / "d.csv"
    write_dataset_csv(ds, p)
    assert read_dataset_csv(p) == ds


def test_csv_missing_column_and_blank_field(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("row,col,alan_mean_diff,alan_max_diff,hbase_mean,hbase_sd\n0,0,1,1,1,1\n")
    with pytest.raises(DatasetError, match="'alan'"):
        read_dataset_csv(p)
    p.write_text(",".join(CSV_COLUMNS) + "\n0,0,5,1,2,3,4,10,20,\n")
    obs = read_dataset_csv(p)[0]
    assert obs.blue is None and obs.green == 20
    p.write_text(",".join(CSV_COLUMNS) + "\n0,0,five,1,2,3,4,10,20,30\n")
    with pytest.raises(DatasetError, match="line 2"):
        read_dataset_csv(p)


def test_concat_keeps_rows_unique():
    a, b = random_dataset(20, 1), random_dataset(30, 2)
    pooled = concat([a, b])
    assert len(pooled) == 50
    np.testing.assert_array_equal(pooled.X, np.vstack([a.X, b.X]))
