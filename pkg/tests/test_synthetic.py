import numpy as np

from nightcolor.features import BANDS
from nightcolor.harness import load_config
from nightcolor.raster_io import read_ascii_grid
from nightcolor.synthetic import REFERENCE_FIT, band_signal, make_city, write_experiment


def test_city_is_deterministic_and_seed_dependent():
    a, b, c = make_city(seed=1, shape=(20, 20)), make_city(seed=1, shape=(20, 20)), make_city(seed=2, shape=(20, 20))
    assert a.alan == b.alan and a.bands["red"] == b.bands["red"]
    assert not a.alan == c.alan


def test_noise_calibrated_to_target_r2():
    city = make_city(seed=3, shape=(80, 80))
    ds = city.dataset()
    for j, band in enumerate(BANDS):
        sig = band_signal(ds.X, band)
        corr2 = np.corrcoef(sig, ds.Y[:, j])[0, 1] ** 2
        assert abs(corr2 - REFERENCE_FIT[band][2]) < 0.03


def test_clip_and_water_mask():
    city = make_city(seed=4, shape=(30, 30), clip=True, water_fraction=0.2)
    ds = city.dataset()
    assert ds.Y.min() >= 1 and ds.Y.max() <= 255
    assert ds.cells[:, 1].max() < 24
    assert (city.hbase.values >= 0).all() and (city.hbase.values <= 100).all()


def test_experiment_files(tmp_path):
    cfg_path = write_experiment(tmp_path, n_cities=3, shape=(10, 10), models=("ols",))
    cfg = load_config(cfg_path)
    assert [c.name for c in cfg.cities] == ["city1", "city2", "city3"]
    assert cfg.models == ("ols",)
    assert read_ascii_grid(cfg.cities[1].alan).ncols == 10
    assert cfg.cities[0].mask is not None and cfg.cities[1].mask is None
