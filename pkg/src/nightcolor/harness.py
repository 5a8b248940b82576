"""
Cross-city experiment: train on each city, test on every other one.

For every city the harness assembles the dataset, filters outliers per band,
fits each model per band, predicts every city (itself included) and scores
the predictions on that city's own outlier-free cells. Results are collected
in an :class:`EvaluationReport` and, when an output directory is given,
written as CSV/text/JSON next to the fitted models, predicted grids and RGB
composites.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import sys
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .elastic_map import BEND_PENALTIES, DEFAULT_DIMS, FIGURE_PENALTY, penalty_sweep
from .errors import DatasetError, NightcolorError
from .features import BANDS, Dataset, assemble, band_name, concat
from .metrics import consistency, contrast_similarity, pearson, wmse
from .models import MODEL_KINDS, fit_model, save_model
from .outliers import filter_outliers
from .raster_io import RasterGrid, aggregate_stats, aggregate_to_grid, read_ascii_grid, write_ascii_grid, write_rgb_image

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("nightcolor")

MODEL_LABELS = {
    "ols": "Linear regression",
    "kernel": "Kernel regression",
    "forest": "Random Forest regression",
    "elmap": "Elastic map model",
}
MEASURES = ("pearson_r", "wmse", "contrast")


@dataclass
class CityConfig:
    name: str
    alan: Path
    hbase: Path | None = None
    hbase_mean: Path | None = None
    hbase_sd: Path | None = None
    red: Path | None = None
    green: Path | None = None
    blue: Path | None = None
    mask: Path | None = None

    def band_path(self, band: str) -> Path | None:
        return getattr(self, band)


@dataclass
class ExperimentConfig:
    cities: list[CityConfig]
    bands: tuple[str, ...] = BANDS
    models: tuple[str, ...] = MODEL_KINDS
    tail_fraction: float = 0.01
    seed: int = 0
    out_dir: Path | None = None
    kernel: dict = field(default_factory=dict)
    forest: dict = field(default_factory=dict)
    elmap: dict = field(default_factory=dict)
    mode: str = "cross-city"
    split_repeats: int = 10
    split_fraction: float = 0.9
    write_grids: bool = True

    def __post_init__(self):
        self.bands = tuple(band_name(b) for b in self.bands)
        self.models = tuple(self.models)
        for m in self.models:
            if m not in MODEL_KINDS:
                raise ValueError(f"unknown model kind {m!r}")
        if self.mode not in ("cross-city", "pooled-split"):
            raise ValueError(f"unknown experiment mode {self.mode!r}")
        if self.mode == "cross-city" and len(self.cities) < 2:
            raise ValueError("cross-city testing needs at least two cities")
        names = [c.name for c in self.cities]
        if len(set(names)) != len(names):
            raise ValueError("city names must be unique")

    @property
    def penalties(self) -> tuple[float, ...]:
        return tuple(float(p) for p in self.elmap.get("penalties", BEND_PENALTIES))

    @property
    def figure_penalty(self) -> float:
        return float(self.elmap.get("figure_penalty", FIGURE_PENALTY))

    def variants(self) -> list[tuple[str, str, dict]]:
        """(model kind, variant label, fit params) for every model to run."""
        out = []
        for kind in self.models:
            if kind == "elmap":
                base = {
                    "dims": tuple(self.elmap.get("dims", DEFAULT_DIMS)),
                    "stretch": float(self.elmap.get("stretch", 0.0)),
                    "max_iter": int(self.elmap.get("max_iter", 100)),
                    "tol": float(self.elmap.get("tol", 1e-4)),
                }
                for mu in self.penalties:
                    out.append((kind, f"bend={mu:g}", {**base, "bend": mu}))
            elif kind == "kernel":
                params = {"cv_folds": int(self.kernel.get("folds", 5))}
                for key in ("scales", "ridges"):
                    if key in self.kernel:
                        params[key] = [float(v) for v in self.kernel[key]]
                out.append((kind, "", params))
            elif kind == "forest":
                params = {
                    "n_trees": int(self.forest.get("n_trees", 32)),
                    "min_leaf": int(self.forest.get("min_leaf", 5)),
                    "bootstrap": bool(self.forest.get("bootstrap", True)),
                }
                out.append((kind, "", params))
            else:
                out.append((kind, "", {}))
        return out


def load_config(path) -> ExperimentConfig:
    """Parse a TOML experiment file; paths resolve relative to the file."""
    path = Path(path)
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    root = path.parent

    def resolve(p):
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else root / p

    cities = []
    for entry in doc.get("city", []):
        entry = dict(entry)
        unknown = set(entry) - set(CityConfig.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown city keys: {', '.join(sorted(unknown))}")
        name = entry.pop("name")
        cities.append(CityConfig(name, **{k: resolve(v) for k, v in entry.items()}))
    out = doc.get("out")
    return ExperimentConfig(
        cities=cities,
        bands=tuple(doc.get("bands", BANDS)),
        models=tuple(doc.get("models", MODEL_KINDS)),
        tail_fraction=float(doc.get("tail_fraction", 0.01)),
        seed=int(doc.get("seed", 0)),
        out_dir=resolve(out) if out is not None else None,
        kernel=dict(doc.get("kernel", {})),
        forest=dict(doc.get("forest", {})),
        elmap=dict(doc.get("elmap", {})),
        mode=doc.get("mode", "cross-city"),
        split_repeats=int(doc.get("split_repeats", 10)),
        split_fraction=float(doc.get("split_fraction", 0.9)),
        write_grids=bool(doc.get("write_grids", True)),
    )


# --- report ---------------------------------------------------------------


@dataclass(frozen=True)
class ScoreRow:
    train_city: str
    test_city: str
    role: str
    model: str
    variant: str
    band: str
    pearson_r: float
    wmse: float
    n: int


@dataclass(frozen=True)
class ContrastRow:
    train_city: str
    test_city: str
    role: str
    model: str
    variant: str
    band: str  # a band name or "rgb" (mean over bands)
    value: float


@dataclass(frozen=True)
class ConsistencyRow:
    model: str
    variant: str
    band: str
    measure: str
    literal: float
    mean_ratio: float


@dataclass(frozen=True)
class Failure:
    train_city: str
    model: str
    variant: str
    band: str
    stage: str
    message: str


def _num(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.10g}"
    return str(v)


def _write_rows(path: Path, rows, cls) -> None:
    names = list(cls.__dataclass_fields__)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in rows:
            writer.writerow([_num(getattr(row, n)) for n in names])


@dataclass
class EvaluationReport:
    scores: list[ScoreRow] = field(default_factory=list)
    contrast: list[ContrastRow] = field(default_factory=list)
    consistency: list[ConsistencyRow] = field(default_factory=list)
    failures: list[Failure] = field(default_factory=list)
    outlier_fraction: dict[str, dict[str, float]] = field(default_factory=dict)

    def score(self, train_city, test_city, model, band, variant="") -> ScoreRow:
        for row in self.scores:
            if (row.train_city, row.test_city, row.model, row.variant, row.band) == (
                train_city, test_city, model, variant, band
            ):
                return row
        raise KeyError((train_city, test_city, model, variant, band))

    def testing(self):
        return [r for r in self.scores if r.role == "test"]

    def training(self):
        return [r for r in self.scores if r.role == "train"]

    def to_dict(self) -> dict:
        def clean(d):
            return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}

        return {
            "scores": [clean(asdict(r)) for r in self.scores],
            "contrast": [clean(asdict(r)) for r in self.contrast],
            "consistency": [clean(asdict(r)) for r in self.consistency],
            "failures": [asdict(r) for r in self.failures],
            "outlier_fraction": self.outlier_fraction,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "EvaluationReport":
        def load(row_cls, rows):
            out = []
            for r in rows:
                r = {k: (float("nan") if v is None else v) for k, v in r.items()}
                out.append(row_cls(**r))
            return out

        return cls(
            load(ScoreRow, doc.get("scores", [])),
            load(ContrastRow, doc.get("contrast", [])),
            load(ConsistencyRow, doc.get("consistency", [])),
            [Failure(**f) for f in doc.get("failures", [])],
            dict(doc.get("outlier_fraction", {})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_rows(out_dir / "scores.csv", self.scores, ScoreRow)
        _write_rows(out_dir / "contrast.csv", self.contrast, ContrastRow)
        _write_rows(out_dir / "consistency.csv", self.consistency, ConsistencyRow)
        _write_rows(out_dir / "failures.csv", self.failures, Failure)
        with open(out_dir / "outliers.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["city", "band", "fraction_removed"])
            for city, per_band in self.outlier_fraction.items():
                for band, frac in per_band.items():
                    writer.writerow([city, band, _num(frac)])
        (out_dir / "tables.txt").write_text(self.tables_text(), encoding="utf-8")
        (out_dir / "report.json").write_text(self.to_json() + "\n", encoding="utf-8")

    # text tables ---------------------------------------------------------

    def _cell(self, rows, contrast_rows, model, band, measure):
        """Mean over rows of one measure, best variant for the elastic map."""
        best = None
        variants = sorted({r.variant for r in rows if r.model == model} | {c.variant for c in contrast_rows if c.model == model})
        for variant in variants:
            if measure == "contrast":
                vals = [c.value for c in contrast_rows if c.model == model and c.variant == variant and c.band == "rgb"]
            else:
                vals = [getattr(r, measure) for r in rows if r.model == model and r.variant == variant and r.band == band]
            vals = [v for v in vals if not math.isnan(v)]
            if not vals:
                continue
            v = float(np.mean(vals))
            if best is None or (v < best if measure == "wmse" else v > best):
                best = v
        return best

    def tables_text(self) -> str:
        bands = [b for b in BANDS if any(r.band == b for r in self.scores)]
        models = [m for m in MODEL_KINDS if any(r.model == m for r in self.scores)]
        cities = list(dict.fromkeys(r.train_city for r in self.scores))
        head = ["Approach".ljust(26)]
        head += [f"r:{b[0].upper()}".rjust(9) for b in bands]
        head += [f"WMSE:{b[0].upper()}".rjust(9) for b in bands]
        head += ["Csim".rjust(9)]
        lines = []

        def block(title, rows, crow):
            lines.append(title)
            for m in models:
                cells = [self._cell(rows, crow, m, b, "pearson_r") for b in bands]
                cells += [self._cell(rows, crow, m, b, "wmse") for b in bands]
                cells.append(self._cell(rows, crow, m, None, "contrast"))
                lines.append(
                    MODEL_LABELS[m].ljust(26) + "".join(("-" if c is None else f"{c:.3f}").rjust(9) for c in cells)
                )

        for city in cities:
            tests = sorted({r.test_city for r in self.scores if r.train_city == city and r.role == "test"})
            lines.append(f"Model performance, training set: {city}")
            lines.append("".join(head))
            train = [r for r in self.scores if r.train_city == city and r.role == "train"]
            ctrain = [c for c in self.contrast if c.train_city == city and c.role == "train"]
            block(f"Training set ({city})", train, ctrain)
            test = [r for r in self.scores if r.train_city == city and r.role == "test"]
            ctest = [c for c in self.contrast if c.train_city == city and c.role == "test"]
            block(f"Testing sets, averaged ({', '.join(tests)})", test, ctest)
            if "elmap" in models:
                lines.append("Elastic map rows report the best-performing bending penalty per column.")
            lines.append("")

        if self.consistency:
            for mode in ("literal", "mean_ratio"):
                lines.append(f"Consistency across training and testing sets ({mode.replace('_', '-')} mode)")
                lines.append("".join(head))
                for m in models:
                    cells = []
                    for measure, bs in (("pearson_r", bands), ("wmse", bands), ("contrast", ["rgb"])):
                        for b in bs:
                            vals = [
                                getattr(c, mode) for c in self.consistency
                                if c.model == m and c.band == b and c.measure == measure
                                and not math.isnan(getattr(c, mode))
                            ]
                            cells.append(max(vals) if vals else None)
                    lines.append(
                        MODEL_LABELS[m].ljust(26)
                        + "".join(("-" if c is None else f"{c:.3f}").rjust(9) for c in cells)
                    )
                lines.append("")
        if self.failures:
            lines.append("Failures")
            for f in self.failures:
                lines.append(f"  {f.train_city} {f.model} {f.variant} {f.band} [{f.stage}]: {f.message}")
        return "\n".join(lines) + "\n"


# --- pipeline -------------------------------------------------------------


@dataclass
class CityData:
    name: str
    alan: RasterGrid
    hbase_mean: RasterGrid
    hbase_sd: RasterGrid
    bands: dict[str, RasterGrid]
    mask: RasterGrid | None
    dataset: Dataset
    kept: dict[str, np.ndarray]  # band -> boolean over dataset rows


def load_city(city: CityConfig, bands=BANDS, tail_fraction: float = 0.01) -> CityData:
    """Read, align and assemble one city; filter outliers for each band."""
    alan = read_ascii_grid(city.alan)
    if city.hbase is not None:
        stats = aggregate_stats(read_ascii_grid(city.hbase), alan)
        hmean, hsd = stats.mean, stats.sd
    elif city.hbase_mean is not None and city.hbase_sd is not None:
        hmean, hsd = read_ascii_grid(city.hbase_mean), read_ascii_grid(city.hbase_sd)
    else:
        raise DatasetError(f"city {city.name}: needs 'hbase' or both 'hbase_mean' and 'hbase_sd'")
    grids = {}
    for band in bands:
        path = city.band_path(band)
        if path is None:
            continue
        g = read_ascii_grid(path)
        if not g.geometry.matches(alan.geometry):
            g, _ = aggregate_to_grid(g, alan)
        grids[band] = g
    mask = read_ascii_grid(city.mask) if city.mask is not None else None
    ds = assemble(alan, hmean, hsd, [grids.get(b) for b in BANDS], mask, name=city.name)
    kept = {}
    for band in bands:
        if band not in grids:
            continue
        has = ~np.isnan(ds.response(band))
        rep = filter_outliers(ds.subset(has), band, tail_fraction)
        mask_rows = np.zeros(len(ds), dtype=bool)
        mask_rows[np.flatnonzero(has)[~rep.removed_mask]] = True
        kept[band] = mask_rows
        log.info("city %s band %s: %.2f%% outliers removed", city.name, band, 100 * rep.fraction_removed)
    return CityData(city.name, alan, hmean, hsd, grids, mask, ds, kept)


def predict_band(model, ds: Dataset) -> np.ndarray:
    """Model predictions for ``ds`` rows, clamped to 0..255 digital numbers."""
    return np.clip(model.predict(ds.predictors(model.predictors)), 0.0, 255.0)


def rows_to_grid(template: RasterGrid, ds: Dataset, values: np.ndarray, keep=None) -> RasterGrid:
    out = np.full(template.values.shape, np.nan)
    rows, cols = ds.cells[:, 0], ds.cells[:, 1]
    if keep is None:
        keep = np.ones(len(ds), dtype=bool)
    out[rows[keep], cols[keep]] = values[keep]
    return template.with_values(out)


def colorize(
    alan: RasterGrid,
    hbase_mean: RasterGrid,
    hbase_sd: RasterGrid,
    models: dict,
    mask: RasterGrid | None = None,
    exclude: np.ndarray | None = None,
    path=None,
) -> tuple[RasterGrid, RasterGrid, RasterGrid]:
    """Predict red, green and blue grids for a panchromatic scene.

    ``models`` maps each band name to a fitted model. Cells without all
    predictors, outside ``mask`` or flagged in the boolean ``exclude`` grid
    are nodata (white in the composite written to ``path``).
    """
    missing = [b for b in BANDS if b not in models]
    if missing:
        raise DatasetError(f"colorize needs a model for every band; missing: {', '.join(missing)}")
    ds = assemble(alan, hbase_mean, hbase_sd, mask=mask)
    keep = np.ones(len(ds), dtype=bool)
    if exclude is not None:
        keep = ~np.asarray(exclude, dtype=bool)[ds.cells[:, 0], ds.cells[:, 1]]
    out = tuple(rows_to_grid(alan, ds, predict_band(models[b], ds), keep) for b in BANDS)
    if path is not None:
        write_rgb_image(*out, path)
    return out


def _safe_consistency(train, test, mode):
    try:
        return consistency(train, test, mode)
    except ValueError:
        return float("nan")


def _consistency_rows(report: EvaluationReport, variants) -> list[ConsistencyRow]:
    rows = []
    train_scores = {(r.train_city, r.model, r.variant, r.band): r for r in report.training()}
    train_cs = {(c.train_city, c.model, c.variant, c.band): c.value for c in report.contrast if c.role == "train"}
    for kind, variant, _ in variants:
        bands = sorted({r.band for r in report.scores if r.model == kind and r.variant == variant}, key=BANDS.index)
        for band in bands:
            for measure in ("pearson_r", "wmse"):
                tests = [r for r in report.testing() if (r.model, r.variant, r.band) == (kind, variant, band)]
                tr_vals = [getattr(r, measure) for r in report.training() if (r.model, r.variant, r.band) == (kind, variant, band)]
                te_vals = [getattr(r, measure) for r in tests]
                paired_tr, paired_te = [], []
                for r in tests:
                    key = (r.train_city, kind, variant, band)
                    if key in train_scores:
                        paired_tr.append(getattr(train_scores[key], measure))
                        paired_te.append(getattr(r, measure))
                rows.append(ConsistencyRow(kind, variant, band, measure,
                                           _safe_consistency(tr_vals, te_vals, "literal"),
                                           _safe_consistency(paired_tr, paired_te, "mean-ratio")))
        tests = [c for c in report.contrast if c.role == "test" and (c.model, c.variant, c.band) == (kind, variant, "rgb")]
        tr_vals = [c.value for c in report.contrast if c.role == "train" and (c.model, c.variant, c.band) == (kind, variant, "rgb")]
        if tests or tr_vals:
            paired_tr = [train_cs.get((c.train_city, kind, variant, "rgb"), float("nan")) for c in tests]
            rows.append(ConsistencyRow(kind, variant, "rgb", "contrast",
                                       _safe_consistency(tr_vals, [c.value for c in tests], "literal"),
                                       _safe_consistency(paired_tr, [c.value for c in tests], "mean-ratio")))
    return rows


def _slug(variant: str) -> str:
    return variant.replace("=", "").replace(".", "p") if variant else ""


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> EvaluationReport:
    """Run the configured experiment; write outputs when an output directory is set."""
    out_dir = Path(out_dir) if out_dir is not None else cfg.out_dir
    handler = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(out_dir / "run.log", mode="w", encoding="utf-8")
        handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        log.addHandler(handler)
        log.setLevel(logging.INFO)
    try:
        if cfg.mode == "pooled-split":
            report = _run_pooled_split(cfg)
        else:
            report = _run_cross_city(cfg, out_dir)
        if out_dir is not None:
            report.write(out_dir)
        return report
    finally:
        if handler is not None:
            log.removeHandler(handler)
            handler.close()


def _load_cities(cfg, report) -> list[CityData]:
    cities = []
    for c in cfg.cities:
        try:
            data = load_city(c, cfg.bands, cfg.tail_fraction)
        except (NightcolorError, OSError, ValueError) as exc:
            report.failures.append(Failure(c.name, "", "", "", "load", str(exc)))
            log.error("city %s failed to load: %s", c.name, exc)
            continue
        cities.append(data)
        report.outlier_fraction[c.name] = {
            b: float(1.0 - data.kept[b].sum() / (~np.isnan(data.dataset.response(b))).sum()) for b in data.kept
        }
    return cities


def _elmap_sweeps(cfg: ExperimentConfig, train: CityData) -> dict:
    """Per band: {bending penalty: fitted map}, or the exception that stopped the sweep."""
    el = next(p for k, _, p in cfg.variants() if k == "elmap")
    out = {}
    for band in cfg.bands:
        if band not in train.kept:
            continue
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                res = penalty_sweep(train.dataset.subset(train.kept[band]), band, cfg.penalties, el["dims"],
                                    el["stretch"], el["max_iter"], el["tol"])
            for w in caught:
                log.warning("elmap sweep %s on %s: %s", band, train.name, w.message)
            out[band] = {r.bend: r.map for r in res}
            for r in res:
                log.info("elmap %s on %s: bend=%g fvu=%.6f", band, train.name, r.bend, r.fvu)
        except (NightcolorError, ValueError, np.linalg.LinAlgError) as exc:
            out[band] = exc
    return out


def _run_cross_city(cfg: ExperimentConfig, out_dir: Path | None) -> EvaluationReport:
    report = EvaluationReport()
    cities = _load_cities(cfg, report)
    variants = cfg.variants()
    if out_dir is not None:
        for city in cities:
            (out_dir / "images").mkdir(parents=True, exist_ok=True)
            keep_all = np.logical_and.reduce([city.kept.get(b, np.zeros(len(city.dataset), bool)) for b in BANDS])
            actual = [rows_to_grid(city.alan, city.dataset, city.dataset.response(b), keep_all) for b in BANDS]
            write_rgb_image(*actual, out_dir / "images" / f"actual_{city.name}.ppm")

    for train in cities:
        sweeps = _elmap_sweeps(cfg, train) if "elmap" in cfg.models else {}
        for kind, variant, params in variants:
            fitted = {}
            for band in cfg.bands:
                if band not in train.kept:
                    report.failures.append(Failure(train.name, kind, variant, band, "fit", "band not available"))
                    continue
                try:
                    if kind == "elmap":
                        if isinstance(sweeps[band], Exception):
                            raise sweeps[band]
                        model = sweeps[band][params["bend"]]
                    else:
                        with warnings.catch_warnings(record=True) as caught:
                            warnings.simplefilter("always")
                            model = fit_model(kind, train.dataset.subset(train.kept[band]), band, seed=cfg.seed, **params)
                        for w in caught:
                            log.warning("%s %s %s on %s: %s", kind, variant, band, train.name, w.message)
                except (NightcolorError, ValueError, np.linalg.LinAlgError) as exc:
                    report.failures.append(Failure(train.name, kind, variant, band, "fit", str(exc)))
                    log.error("fit %s %s %s on %s failed: %s", kind, variant, band, train.name, exc)
                    continue
                fitted[band] = model
                log.info("fitted %s %s %s on %s", kind, variant, band, train.name)
                if out_dir is not None:
                    mdir = out_dir / "models" / train.name
                    mdir.mkdir(parents=True, exist_ok=True)
                    save_model(model, mdir / f"{kind}{_slug(variant)}_{band}.json")

            for target in cities:
                role = "train" if target.name == train.name else "test"
                preds = {}
                band_cs = []
                for band, model in fitted.items():
                    if band not in target.kept:
                        report.failures.append(Failure(train.name, kind, variant, band, f"evaluate:{target.name}",
                                                       "band not available"))
                        continue
                    keep = target.kept[band]
                    try:
                        pred = predict_band(model, target.dataset)
                        actual = target.dataset.response(band)
                        r = pearson(actual[keep], pred[keep])
                        w = wmse(actual[keep], pred[keep])
                        pg = rows_to_grid(target.alan, target.dataset, pred, keep)
                        ag = rows_to_grid(target.alan, target.dataset, actual, keep)
                        cs = contrast_similarity(ag, pg)
                    except (NightcolorError, ValueError) as exc:
                        report.failures.append(Failure(train.name, kind, variant, band, f"evaluate:{target.name}", str(exc)))
                        continue
                    preds[band] = (pred, keep)
                    report.scores.append(ScoreRow(train.name, target.name, role, kind, variant, band, r, w, int(keep.sum())))
                    report.contrast.append(ContrastRow(train.name, target.name, role, kind, variant, band, cs))
                    band_cs.append(cs)
                    if out_dir is not None and cfg.write_grids:
                        gdir = out_dir / "grids" / train.name
                        gdir.mkdir(parents=True, exist_ok=True)
                        write_ascii_grid(pg, gdir / f"{kind}{_slug(variant)}_on_{target.name}_{band}.asc")
                if len(band_cs) == len(BANDS):
                    report.contrast.append(
                        ContrastRow(train.name, target.name, role, kind, variant, "rgb", float(np.mean(band_cs)))
                    )
                if out_dir is not None and len(preds) == len(BANDS):
                    keep_all = np.logical_and.reduce([preds[b][1] for b in BANDS])
                    composite = [rows_to_grid(target.alan, target.dataset, preds[b][0], keep_all) for b in BANDS]
                    idir = out_dir / "images" / train.name
                    idir.mkdir(parents=True, exist_ok=True)
                    write_rgb_image(*composite, idir / f"{kind}{_slug(variant)}_on_{target.name}.ppm")

    report.consistency = _consistency_rows(report, variants)
    return report


def _run_pooled_split(cfg: ExperimentConfig) -> EvaluationReport:
    """Pool all cities and score repeated random train/test splits."""
    report = EvaluationReport()
    cities = _load_cities(cfg, report)
    rng = np.random.default_rng(cfg.seed)
    for band in cfg.bands:
        parts = [c.dataset.subset(c.kept[band]) for c in cities if band in c.kept]
        if not parts:
            continue
        pooled = concat(parts)
        n = len(pooled)
        for rep in range(cfg.split_repeats):
            perm = rng.permutation(n)
            cut = int(round(cfg.split_fraction * n))
            tr, te = pooled.subset(np.sort(perm[:cut])), pooled.subset(np.sort(perm[cut:]))
            label = f"split{rep + 1}"
            for kind, variant, params in cfg.variants():
                try:
                    model = fit_model(kind, tr, band, seed=cfg.seed, **params)
                    for role, part in (("train", tr), ("test", te)):
                        pred = predict_band(model, part)
                        y = part.response(band)
                        report.scores.append(ScoreRow(label, label, role, kind, variant, band,
                                                      pearson(y, pred), wmse(y, pred), len(part)))
                except (NightcolorError, ValueError) as exc:
                    report.failures.append(Failure(label, kind, variant, band, "fit", str(exc)))
    return report
