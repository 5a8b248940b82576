"""Acceptance criteria 1-10, each reported as one PASS/FAIL line.

Every test runs its checks inside :func:`criterion`, which records the
outcome in ``conftest.ACCEPTANCE`` (printed in the terminal summary) and
re-raises so a failing criterion also fails the test.
"""

import contextlib
import os
import time
import warnings
from pathlib import Path

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from nightcolor.elastic_map import BEND_PENALTIES, fit_elastic_map, penalty_sweep, project_impute
from nightcolor.errors import ConvergenceWarning
from nightcolor.features import BANDS, PREDICTORS, Dataset
from nightcolor.harness import load_city, load_config, run_experiment
from nightcolor.metrics import consistency, contrast_similarity, pearson, wmse
from nightcolor.models import dumps_model, save_model
from nightcolor.outliers import filter_outliers
from nightcolor.regressors import fit_forest, fit_kernel, fit_ols
from nightcolor.regressors.kernel import fold_indices
from nightcolor.synthetic import REFERENCE_FIT, make_city, write_experiment

import oracles
from conftest import ACCEPTANCE, random_dataset


@contextlib.contextmanager
def criterion(n, title):
    notes = []
    start = time.perf_counter()
    try:
        yield notes
    except BaseException as exc:
        line = f"FAIL  {n:2d}. {title}: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        ACCEPTANCE[n] = line
        print(line)
        raise
    detail = f" ({'; '.join(notes)})" if notes else ""
    line = f"PASS  {n:2d}. {title} [{time.perf_counter() - start:.1f} s]{detail}"
    ACCEPTANCE[n] = line
    print(line)


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), 1e-300)))


def test_1_metric_oracles():
    with criterion(1, "metric oracles") as notes:
        start = time.perf_counter()
        rng = np.random.default_rng(101)
        worst = {"pearson": 0.0, "wmse": 0.0, "contrast": 0.0, "literal": 0.0, "mean-ratio": 0.0}
        for _ in range(100):
            n = int(rng.integers(3, 200))
            a = rng.uniform(0.5, 255, n)
            p = a * rng.uniform(0.2, 2.0) + rng.normal(0, rng.uniform(0.1, 50), n)
            p = np.abs(p) + 0.1
            worst["pearson"] = max(worst["pearson"], rel_err(pearson(a, p), oracles.pearson(a, p)))
            worst["wmse"] = max(worst["wmse"], rel_err(wmse(a, p), oracles.wmse(a, p)))

            shape = tuple(int(s) for s in rng.integers(4, 15, 2))
            x = rng.uniform(0, 255, shape)
            y = np.clip(x * rng.uniform(0.3, 1.5) + rng.normal(0, 20, shape), 0, 255)
            holes = rng.random(shape) < 0.15
            x[holes] = np.nan
            if not np.isnan(x).all():
                worst["contrast"] = max(
                    worst["contrast"], rel_err(contrast_similarity(x, y), oracles.contrast_similarity(x, y))
                )

            k = int(rng.integers(2, 30))
            tr = rng.uniform(0.1, 1.0, k)
            te = rng.uniform(0.1, 1.0, k)
            worst["literal"] = max(worst["literal"], rel_err(consistency(tr, te), oracles.consistency_literal(tr, te)))
            worst["mean-ratio"] = max(
                worst["mean-ratio"],
                rel_err(consistency(tr, te, mode="mean-ratio"), oracles.consistency_mean_ratio(tr, te)),
            )
        for name, err in worst.items():
            assert err < 1e-8, f"{name} relative error {err:.2e}"
        assert wmse([1, 2, 4], [2, 2, 2]) == 2 / 3
        assert consistency([1, 2, 3], [2, 4, 6]) == 2.0
        elapsed = time.perf_counter() - start
        assert elapsed < 10, f"runtime {elapsed:.1f} s"
        notes.append("worst rel err " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_2_ols_normal_equations():
    with criterion(2, "OLS against normal equations") as notes:
        rng = np.random.default_rng(202)
        worst_b = worst_orth = 0.0
        for i in range(100):
            X = rng.normal(0, rng.uniform(0.5, 20, 5), (200, 5)) + rng.uniform(-50, 50, 5)
            y = 3 + X @ rng.normal(0, 1, 5) + rng.normal(0, 2, 200)
            ds = Dataset("ols", np.column_stack([np.arange(200), np.zeros(200, int)]), X,
                         np.column_stack([y, y, y]), _validate=False)
            m = fit_ols(ds, "R")
            ref = oracles.ols_normal_equations(X, y)
            worst_b = max(worst_b, rel_err(np.r_[m.b0, m.b], ref))
            r = y - m.predict(X)
            A = np.column_stack([np.ones(200), X])
            scale = np.linalg.norm(A, axis=0) * np.linalg.norm(y)
            worst_orth = max(worst_orth, float(np.max(np.abs(A.T @ r) / scale)))
        assert worst_b < 1e-8, f"coefficient relative error {worst_b:.2e}"
        assert worst_orth < 1e-8, f"residual orthogonality {worst_orth:.2e}"
        notes.append(f"coef rel err {worst_b:.1e}, orthogonality/zero-sum {worst_orth:.1e}")


def test_3_elastic_energy_and_fvu_monotone():
    with criterion(3, "elastic-map energy and FVU monotonicity") as notes:
        start = time.perf_counter()
        worst_rise = 0.0
        for k in range(20):
            ds = make_city(f"m{k}", (30, 30), seed=500 + k).dataset()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                res = penalty_sweep(ds, BANDS[k % 3], penalties=BEND_PENALTIES)
            assert [r.bend for r in res] == list(BEND_PENALTIES)
            for r in res:
                h = np.array(r.map.energy_history)
                rise = np.diff(h) / np.abs(h[:-1])
                worst_rise = max(worst_rise, float(rise.max()))
                assert (rise <= 1e-10).all(), f"dataset {k}, bend {r.bend}: energy rose by {rise.max():.2e}"
            f = [r.fvu for r in res]
            for mu, a, b in zip(BEND_PENALTIES[1:], f, f[1:]):
                assert b >= a - 1e-9, f"dataset {k}: FVU fell from {a:.6f} to {b:.6f} at bend {mu}"
        elapsed = time.perf_counter() - start
        assert elapsed < 120, f"runtime {elapsed:.1f} s"
        notes.append(f"20 datasets x 9 penalties, worst relative energy step {worst_rise:.1e}")


def planar_lattice(g, ratio, seed):
    """A g x g anisotropic lattice on a random 2-plane in the 6-D variable space."""
    rng = np.random.default_rng(seed)
    basis = np.linalg.qr(rng.normal(size=(6, 2)))[0]
    u, v = np.meshgrid(np.linspace(-ratio, ratio, g), np.linspace(-1, 1, g), indexing="ij")
    data = np.column_stack([u.ravel(), v.ravel()]) @ basis.T + rng.normal(size=6) * 5
    n = len(data)
    Y = np.full((n, 3), np.nan)
    Y[:, 0] = data[:, 5]
    return Dataset("plane", np.column_stack([np.arange(n), np.zeros(n, int)]), data[:, :5], Y, _validate=False)


def rib_norms(m):
    r = m.topology.ribs
    return np.linalg.norm(m.nodes[r[:, 0]] - 2 * m.nodes[r[:, 1]] + m.nodes[r[:, 2]], axis=1)


def test_4_elastic_limits():
    with criterion(4, "elastic-map limits") as notes:
        worst_fvu = 0.0
        for seed in range(5):
            for g in (6, 7, 8):
                for ratio in (1.5, 3.0, 5.0):
                    m = fit_elastic_map(planar_lattice(g, ratio, seed), "R", bend=1e-5)
                    worst_fvu = max(worst_fvu, m.fvu)
                    assert m.fvu < 1e-6, f"lattice {g}x{g}, ratio {ratio}, seed {seed}: FVU {m.fvu:.2e}"
        worst_rib = 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            for seed in range(3):
                for ds in (random_dataset(600, seed), make_city("s", (30, 30), seed=seed).dataset()):
                    m = fit_elastic_map(ds, BANDS[seed], bend=1e6)
                    worst_rib = max(worst_rib, float(rib_norms(m).max()))
        assert worst_rib < 1e-6, f"stiff map rib second difference {worst_rib:.2e}"
        notes.append(f"planar FVU <= {worst_fvu:.1e}, stiff rib norm <= {worst_rib:.1e}")


def dense_triangle_oracle(P, v, tris, Q, h=1 / 16):
    """Closest surface point by barycentric sampling of every triangle, then zoom refinement.

    Returns, per query, a list of (dist2, value) for every triangle whose
    refined minimum lies within 1e-9 of the best; the caller accepts any of
    these (near ties between distinct triangles).
    """
    m = int(round(1 / h))
    st = np.array([(i * h, j * h) for i in range(m + 1) for j in range(m + 1 - i)])
    A, B, C = P[tris[:, 0]], P[tris[:, 1]], P[tris[:, 2]]
    S = A[:, None] + st[None, :, :1] * (B - A)[:, None] + st[None, :, 1:] * (C - A)[:, None]
    T, K = S.shape[:2]
    # the grid covers each triangle to within h * (longest edge)
    edge = np.max(np.stack([np.linalg.norm(B - A, axis=1), np.linalg.norm(C - A, axis=1),
                            np.linalg.norm(C - B, axis=1)]), axis=0)
    delta = h * edge
    offsets = np.array([(a, b) for a in np.linspace(-1, 1, 9) for b in np.linspace(-1, 1, 9)])
    out = []
    for start in range(0, len(Q), 64):
        q = Q[start : start + 64]
        d2 = cdist(q, S.reshape(T * K, -1), "sqeuclidean").reshape(len(q), T, K)
        kbest = d2.argmin(axis=2)
        dmin = np.take_along_axis(d2, kbest[..., None], axis=2)[..., 0]
        best = dmin.min(axis=1)
        for i in range(len(q)):
            cands = np.flatnonzero(dmin[i] <= (np.sqrt(best[i]) + delta) ** 2)
            found = []
            for tri in cands:
                s0, t0 = st[kbest[i, tri]]
                w = 2 * h
                a, b, c = A[tri], B[tri], C[tri]
                for _ in range(60):
                    grid = np.array([s0, t0]) + w * offsets
                    grid = np.clip(grid, 0, 1)
                    over = grid.sum(axis=1) > 1
                    grid[over] /= grid[over].sum(axis=1, keepdims=True)
                    pts = a + grid[:, :1] * (b - a) + grid[:, 1:] * (c - a)
                    dd = ((pts - q[i]) ** 2).sum(axis=1)
                    j = int(dd.argmin())
                    s0, t0 = grid[j]
                    w *= 0.7
                x = a + s0 * (b - a) + t0 * (c - a)
                val = (1 - s0 - t0) * v[tris[tri, 0]] + s0 * v[tris[tri, 1]] + t0 * v[tris[tri, 2]]
                found.append((float(((x - q[i]) ** 2).sum()), float(val)))
            dbest = min(d for d, _ in found)
            out.append([(d, val) for d, val in found if d <= dbest + 1e-9 * (1 + dbest)])
    return out


def test_5_projection_oracle():
    with criterion(5, "projection against dense triangle sampling") as notes:
        ds = random_dataset(800, 11)
        emap = fit_elastic_map(ds, "R")
        rng = np.random.default_rng(55)
        broad = emap.mean[:5] + emap.sd[:5] * rng.uniform(-3, 3, (500, 5))
        X = np.vstack([ds.X[:500], broad])
        Q = emap.standardize(np.column_stack([X, np.zeros(len(X))]))[:, :5]
        P, v = emap.nodes[:, :5], emap.nodes[:, 5]
        ref = dense_triangle_oracle(P, v, emap.topology.triangles, Q)
        got = project_impute(emap, X)
        band_sd, band_mean = emap.sd[5], emap.mean[5]
        worst, ties = 0.0, 0
        for g, cands in zip(got, ref):
            errs = [abs(g - (val * band_sd + band_mean)) for _, val in cands]
            ties += len(cands) > 1
            worst = max(worst, min(errs))
        assert worst < 1e-3, f"largest disagreement {worst:.2e}"
        notes.append(f"1000 queries, max |diff| {worst:.1e}, {ties} near ties")


# percentiles (2.5, 50, 97.5) of the cross-city test r from the Monte-Carlo below
FROZEN_R_BAND = {"red": (0.8107, 0.8192, 0.8233), "green": (0.8312, 0.8373, 0.8420), "blue": (0.7454, 0.7538, 0.7648)}


def monte_carlo(replicates=60, shape=(71, 71)):
    """Independent oracle: numpy least squares on fresh train/test city pairs."""
    rs = {b: [] for b in BANDS}
    b0 = {b: [] for b in BANDS}
    for k in range(replicates):
        tr = make_city("tr", shape, seed=10000 + 2 * k).dataset()
        te = make_city("te", shape, seed=10001 + 2 * k).dataset()
        A = np.column_stack([np.ones(len(tr)), tr.X])
        At = np.column_stack([np.ones(len(te)), te.X])
        for j, band in enumerate(BANDS):
            coef = np.linalg.lstsq(A, tr.Y[:, j], rcond=None)[0]
            b0[band].append(coef[0])
            rs[band].append(np.corrcoef(At @ coef, te.Y[:, j])[0, 1])
    return rs, b0


def test_6_synthetic_city_recovery():
    with criterion(6, "synthetic-city recovery") as notes:
        start = time.perf_counter()
        train = make_city("train", (71, 71), seed=0).dataset()
        test = make_city("test", (71, 71), seed=1).dataset()
        assert len(train) >= 5000
        rs, b0 = monte_carlo()
        intercept_notes = []
        for band in BANDS:
            m = fit_ols(train, band)
            target_b0, target_b, _ = REFERENCE_FIT[band]
            err = np.abs(m.b - np.asarray(target_b))
            assert err.max() <= 0.05, f"{band}: slope {PREDICTORS[int(err.argmax())]} off by {err.max():.3f}"
            # the intercept is an extrapolation to all-zero predictors; check it against its own spread
            sd0 = float(np.std(b0[band], ddof=1))
            assert abs(m.b0 - target_b0) <= 4 * sd0, f"{band}: intercept off by {m.b0 - target_b0:.3f}"
            intercept_notes.append(f"{band[0].upper()} {m.b0 - target_b0:+.2f}/{sd0:.2f}")

            lo, mid, hi = np.percentile(rs[band], [2.5, 50, 97.5])
            f_lo, f_mid, f_hi = FROZEN_R_BAND[band]
            assert abs(mid - f_mid) < 0.005 and abs(lo - f_lo) < 0.01 and abs(hi - f_hi) < 0.01, \
                f"{band}: live band drifted from the frozen one"
            r = pearson(test.response(band), m.predict(test.X))
            assert lo - 0.03 <= r <= hi + 0.03, f"{band}: test r {r:.4f} outside [{lo:.4f}, {hi:.4f}] +- 0.03"
            notes.append(f"{band} r {r:.3f} in [{lo:.3f}, {hi:.3f}]")
        notes.append("max slope error <= 0.05; intercept err/MC SD " + ", ".join(intercept_notes))
        elapsed = time.perf_counter() - start
        assert elapsed < 60, f"runtime {elapsed:.1f} s"


def normal_cloud(n=10_000, seed=77):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 5))
    Y = np.full((n, 3), np.nan)
    Y[:, 0] = X[:, 0]
    return Dataset("normal", np.column_stack([np.arange(n) // 100, np.arange(n) % 100]), X, Y, _validate=False)


def test_7_outlier_filter():
    with criterion(7, "outlier filter") as notes:
        ds = normal_cloud()
        rep = filter_outliers(ds, "R", 0.01)
        ref = oracles.outlier_rules(ds.X, ds.response("R"), 0.01)
        np.testing.assert_array_equal(rep.removed_mask, [bool(h) for h in ref])
        again = filter_outliers(rep.kept, "R", cutoffs=rep.cutoffs)
        assert len(again.removed) == 0 and len(again.kept) == len(rep.kept)
        counts = [int(filter_outliers(ds, "R", t).removed_mask.sum()) for t in (0.005, 0.01, 0.02, 0.05, 0.1)]
        assert counts == sorted(counts), f"removal counts {counts}"
        notes.append(f"{rep.removed_mask.sum()} of 10000 removed at tail 0.01, counts by tail {counts}")

        real = os.environ.get("NIGHTCOLOR_REAL_CONFIG")
        if not real:
            notes.append("real-city removal range skipped: NIGHTCOLOR_REAL_CONFIG not set")
            return
        cfg = load_config(real)
        for city in cfg.cities:
            data = load_city(city, cfg.bands, cfg.tail_fraction)
            for band, kept in data.kept.items():
                has = int((~np.isnan(data.dataset.response(band))).sum())
                frac = 1 - kept.sum() / has
                assert 0.025 <= frac <= 0.045, f"{city.name} {band}: {100 * frac:.2f}% removed"
        notes.append(f"real-city removal within 2.5-4.5% for {len(cfg.cities)} cities")


def test_8_forest_sanity(tmp_path):
    with criterion(8, "forest sanity"):
        ds = random_dataset(300, 8)
        full = fit_forest(ds, "R", n_trees=1, min_leaf=1, bootstrap=False)
        np.testing.assert_array_equal(full.predict(ds.X), ds.response("R"))
        m = fit_forest(ds, "G", n_trees=16, seed=5)
        Q = np.vstack([ds.X, random_dataset(100, 9).X])
        per_tree = np.stack([t.predict(Q) for t in m.trees])
        np.testing.assert_allclose(m.predict(Q), per_tree.mean(axis=0), rtol=1e-15, atol=0)
        for i in range(2):
            save_model(fit_forest(ds, "G", n_trees=16, seed=5), tmp_path / f"f{i}.json")
        assert (tmp_path / "f0.json").read_bytes() == (tmp_path / "f1.json").read_bytes()
        assert dumps_model(fit_forest(ds, "G", n_trees=16, seed=6)) != dumps_model(m)


def test_9_kernel_sanity():
    with criterion(9, "kernel sanity") as notes:
        ds = random_dataset(150, 12)
        y = ds.response("R")
        m = fit_kernel(ds, "R", scales=[1.0], ridges=[1e-8])
        gap = float(np.abs(m.predict(ds.X) - y).max() / y.std())
        assert gap < 1e-4, f"training residual {gap:.1e} SD"

        rng = np.random.default_rng(9)
        base = fit_kernel(ds, "G", seed=2)
        for _ in range(5):
            factors = 10 ** rng.uniform(-2, 2, 5)
            scaled = Dataset(ds.name, ds.cells, ds.X * factors, ds.Y, _validate=False)
            other = fit_kernel(scaled, "G", seed=2)
            assert (other.scale, other.ridge) == (base.scale, base.ridge)
            np.testing.assert_allclose(other.predict(scaled.X), base.predict(ds.X), rtol=1e-6, atol=1e-6)

        cv_ds = random_dataset(100, 13)
        m = fit_kernel(cv_ds, "B", seed=4)
        Z = (cv_ds.X - m.x_mean) / m.x_sd
        table = oracles.kernel_cv_table(Z, cv_ds.response("B"), m.cv_scales, m.cv_ridges, fold_indices(100, 5, 4))
        i, j = np.unravel_index(np.argmin(table), table.shape)
        assert (m.scale, m.ridge) == (m.cv_scales[i], m.cv_ridges[j])
        np.testing.assert_allclose(m.cv_mse, table, rtol=1e-7)
        notes.append(f"interpolation residual {gap:.1e} SD; CV picked scale {m.scale:.3g}, ridge {m.ridge:.3g}")


def snapshot(root: Path) -> dict[str, bytes]:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_10_end_to_end_determinism(tmp_path):
    with criterion(10, "end-to-end determinism") as notes:
        cfg = load_config(write_experiment(tmp_path / "inputs", n_cities=2))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            run_experiment(cfg, tmp_path / "a")
            run_experiment(cfg, tmp_path / "b")
        a, b = snapshot(tmp_path / "a"), snapshot(tmp_path / "b")
        assert sorted(a) == sorted(b)
        for name in ("report.json", "scores.csv", "tables.txt", "run.log"):
            assert name in a, f"{name} not written"
        ppms = [k for k in a if k.endswith(".ppm")]
        assert ppms, "no PPM images written"
        differ = [k for k in a if a[k] != b[k]]
        assert not differ, f"files differ: {', '.join(differ[:5])}"
        notes.append(f"{len(a)} files identical, {len(ppms)} PPMs")


def test_acceptance_lines_recorded():
    here = {int(name.split("_")[1]) for name in globals() if name.startswith("test_") and name.split("_")[1].isdigit()}
    assert here == set(range(1, 11))
