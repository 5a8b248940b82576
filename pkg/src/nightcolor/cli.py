"""
Command-line front end.

Every subcommand accepts ``--seed``, ``--config``, ``--out`` and ``--json``.
``--out`` names the output directory (default: $NIGHTCOLOR_OUT, else the
current directory). ``--config`` points to a TOML file; for ``evaluate`` it
is the experiment definition, for every other command a table named after
the command supplies flag defaults, e.g. ``[fit] model = "elmap"``.

Exit status is 0 on success, 1 on data errors and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .elastic_map import BEND_PENALTIES, DEFAULT_DIMS, FIGURE_PENALTY, penalty_sweep
from .errors import NightcolorError
from .features import BANDS, PREDICTORS, assemble, band_name, concat, read_dataset_csv, write_dataset_csv
from .harness import EvaluationReport, colorize, load_config, predict_band, run_experiment
from .metrics import factor_contribution, pearson, wmse
from .models import MODEL_KINDS, fit_model, load_model, save_model
from .outliers import filter_outliers
from .raster_io import aggregate_stats, aggregate_to_grid, read_ascii_grid, write_ascii_grid
from .synthetic import write_experiment

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

OUT_ENV = "NIGHTCOLOR_OUT"


class UsageError(Exception):
    pass


def _out_dir(args) -> Path:
    out = Path(args.out if args.out is not None else os.environ.get(OUT_ENV, "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=1, sort_keys=True, allow_nan=False, default=_json_default))
    else:
        print(text)


def _json_default(obj):
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(type(obj).__name__)


def _finite(v):
    return None if v is None or (isinstance(v, float) and v != v) else v


# --- raster inputs shared by ingest / features / colorize ------------------


def _add_raster_inputs(p, bands=True):
    p.add_argument("--alan", type=Path, help="panchromatic ALAN grid (defines the target geometry)")
    p.add_argument("--hbase", type=Path, help="fine-resolution built-up percentage grid")
    p.add_argument("--hbase-mean", type=Path, help="pre-aggregated built-up mean grid")
    p.add_argument("--hbase-sd", type=Path, help="pre-aggregated built-up SD grid")
    p.add_argument("--mask", type=Path, help="grid whose nodata/zero cells are excluded (e.g. water)")
    if bands:
        for b in BANDS:
            p.add_argument(f"--{b}", type=Path, help=f"{b} band grid")


def _load_rasters(args, bands=True):
    if args.alan is None:
        raise UsageError("--alan is required")
    alan = read_ascii_grid(args.alan)
    if args.hbase is not None:
        stats = aggregate_stats(read_ascii_grid(args.hbase), alan)
        hmean, hsd = stats.mean, stats.sd
    elif args.hbase_mean is not None and args.hbase_sd is not None:
        hmean, hsd = read_ascii_grid(args.hbase_mean), read_ascii_grid(args.hbase_sd)
    else:
        raise UsageError("give --hbase or both --hbase-mean and --hbase-sd")
    grids = {}
    if bands:
        for b in BANDS:
            path = getattr(args, b)
            if path is not None:
                g = read_ascii_grid(path)
                if not g.geometry.matches(alan.geometry):
                    g, _ = aggregate_to_grid(g, alan)
                grids[b] = g
    mask = read_ascii_grid(args.mask) if args.mask is not None else None
    return alan, hmean, hsd, grids, mask


# --- commands -------------------------------------------------------------


def cmd_ingest(args) -> int:
    """Align all layers to the ALAN grid and write them as ASCII grids."""
    alan, hmean, hsd, grids, mask = _load_rasters(args)
    out = _out_dir(args)
    written = {"alan": out / "alan.asc", "hbase_mean": out / "hbase_mean.asc", "hbase_sd": out / "hbase_sd.asc"}
    write_ascii_grid(alan, written["alan"])
    write_ascii_grid(hmean, written["hbase_mean"])
    write_ascii_grid(hsd, written["hbase_sd"])
    for b, g in grids.items():
        written[b] = out / f"{b}.asc"
        write_ascii_grid(g, written[b])
    if mask is not None:
        written["mask"] = out / "mask.asc"
        write_ascii_grid(mask, written["mask"])
    _emit(args, {"written": written}, "\n".join(f"{k}: {v}" for k, v in written.items()))
    return 0


def cmd_features(args) -> int:
    """Assemble the per-cell predictor/response table."""
    alan, hmean, hsd, grids, mask = _load_rasters(args)
    ds = assemble(alan, hmean, hsd, [grids.get(b) for b in BANDS], mask, name=args.name or "")
    path = _out_dir(args) / args.output
    write_dataset_csv(ds, path)
    _emit(args, {"path": path, "n": len(ds), "bands": list(ds.bands)}, f"{len(ds)} observations -> {path}")
    return 0


def cmd_outliers(args) -> int:
    ds = read_dataset_csv(args.input)
    band = band_name(args.band)
    ds = ds.subset(~np.isnan(ds.response(band)))
    rep = filter_outliers(ds, band, args.tail)
    out = _out_dir(args)
    write_dataset_csv(rep.kept, out / "kept.csv")
    rep.write_removed_csv(out / "removed.csv")
    payload = {"band": band, "n": len(ds), "removed": len(rep.removed), "fraction_removed": rep.fraction_removed,
               "kept": out / "kept.csv", "removed_csv": out / "removed.csv"}
    _emit(args, payload, f"{rep.fraction_removed:.6f}")
    return 0


def _model_params(args) -> dict:
    if args.model == "elmap":
        return {"bend": args.bend, "dims": tuple(args.dims), "stretch": args.stretch,
                "max_iter": args.max_iter, "tol": args.tol}
    if args.model == "kernel":
        params = {"cv_folds": args.folds}
        if args.scales:
            params["scales"] = args.scales
        if args.ridges:
            params["ridges"] = args.ridges
        return params
    if args.model == "forest":
        return {"n_trees": args.n_trees, "min_leaf": args.min_leaf, "bootstrap": not args.no_bootstrap}
    return {}


def _add_model_flags(p):
    p.add_argument("--model", choices=MODEL_KINDS, default="ols")
    p.add_argument("--bend", type=float, default=FIGURE_PENALTY, help="elastic-map bending penalty")
    p.add_argument("--stretch", type=float, default=0.0, help="elastic-map stretching penalty")
    p.add_argument("--dims", type=int, nargs=2, default=list(DEFAULT_DIMS), metavar=("G1", "G2"))
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--folds", type=int, default=5, help="kernel CV folds")
    p.add_argument("--scales", type=float, nargs="+", help="kernel length scales to search")
    p.add_argument("--ridges", type=float, nargs="+", help="kernel ridge penalties to search")
    p.add_argument("--n-trees", type=int, default=32)
    p.add_argument("--min-leaf", type=int, default=5)
    p.add_argument("--no-bootstrap", action="store_true")


def cmd_fit(args) -> int:
    ds = read_dataset_csv(args.input)
    band = band_name(args.band)
    ds = ds.subset(~np.isnan(ds.response(band)))
    model = fit_model(args.model, ds, band, seed=args.seed, **_model_params(args))
    path = _out_dir(args) / (args.output or f"{args.model}_{band}.json")
    save_model(model, path)
    pred = predict_band(model, ds)
    y = ds.response(band)
    payload = {"model": args.model, "band": band, "path": path, "n": len(ds), "pearson_r": _finite(pearson(y, pred))}
    if args.model == "ols":
        payload.update(b0=model.b0, b=dict(zip(model.predictors, model.b.tolist())), r2=model.r2)
    if args.model == "elmap":
        payload.update(fvu=model.fvu, converged=model.converged)
    if args.model == "kernel":
        payload.update(scale=model.scale, ridge=model.ridge)
    _emit(args, payload, f"{args.model} model for {band} -> {path}")
    return 0


def cmd_predict(args) -> int:
    model = load_model(args.model_file)
    ds = read_dataset_csv(args.input)
    pred = predict_band(model, ds)
    path = _out_dir(args) / (args.output or f"predicted_{model.band}.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "col", model.band])
        for (r, c), v in zip(ds.cells, pred):
            w.writerow([int(r), int(c), repr(float(v))])
    payload = {"path": path, "n": len(ds), "band": model.band}
    if ds.has_band(model.band):
        y = ds.response(model.band)
        ok = ~np.isnan(y)
        if ok.sum() >= 2:
            payload["pearson_r"] = _finite(pearson(y[ok], pred[ok]))
            if (y[ok] > 0).all():
                payload["wmse"] = wmse(y[ok], pred[ok])
    _emit(args, payload, f"{len(ds)} predictions -> {path}")
    return 0


def cmd_colorize(args) -> int:
    alan, hmean, hsd, _, mask = _load_rasters(args, bands=False)
    models = {}
    for b in BANDS:
        path = getattr(args, f"{b}_model")
        if path is not None:
            models[b] = load_model(path)
    out = _out_dir(args)
    image = out / (args.output or "colorized.ppm")
    grids = colorize(alan, hmean, hsd, models, mask=mask, path=image)
    paths = {"image": image}
    for b, g in zip(BANDS, grids):
        paths[b] = out / f"colorized_{b}.asc"
        write_ascii_grid(g, paths[b])
    _emit(args, paths, f"composite -> {image}")
    return 0


def cmd_evaluate(args) -> int:
    if args.config is None:
        raise UsageError("evaluate needs --config EXPERIMENT.toml")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out) if args.out is not None else (cfg.out_dir or Path(os.environ.get(OUT_ENV, ".")))
    report = run_experiment(cfg, out)
    if args.json:
        print(report.to_json())
    else:
        print(report.tables_text(), end="")
    return 0 if not report.failures else 1


def _read_pooled(paths):
    parts = [read_dataset_csv(p) for p in paths]
    return parts[0] if len(parts) == 1 else concat(parts)


def cmd_contribute(args) -> int:
    ds = _read_pooled(args.input)
    band = band_name(args.band)
    ds = ds.subset(~np.isnan(ds.response(band)))
    groups = args.drop or [[p] for p in PREDICTORS]
    rows = []
    for group in groups:
        names = [n for g in group for n in g.split(",")]
        dr = factor_contribution(ds, band, args.model, names, seed=args.seed, **_model_params(args))
        rows.append({"drop": names, "delta_r": _finite(dr)})
    text = "\n".join(f"{'+'.join(r['drop']):40s} {r['delta_r']:.4f}" for r in rows)
    _emit(args, {"band": band, "model": args.model, "n": len(ds), "results": rows}, text)
    return 0


def cmd_sweep(args) -> int:
    ds = read_dataset_csv(args.input)
    band = band_name(args.band)
    ds = ds.subset(~np.isnan(ds.response(band)))
    penalties = args.penalties or list(BEND_PENALTIES)
    results = penalty_sweep(ds, band, penalties, tuple(args.dims), args.stretch, args.max_iter, args.tol)
    out = _out_dir(args)
    rows = []
    for res in results:
        path = out / f"elmap_{band}_bend{res.bend:g}.json"
        save_model(res.map, path)
        rows.append({"bend": res.bend, "fvu": res.fvu, "converged": res.map.converged, "path": path})
    text = "\n".join(f"bend={r['bend']:<8g} fvu={r['fvu']:.6f}{'' if r['converged'] else '  (not converged)'}" for r in rows)
    _emit(args, {"band": band, "results": rows}, text)
    return 0


def cmd_report(args) -> int:
    run = Path(args.run) if args.run is not None else _out_dir(args)
    path = run / "report.json"
    if not path.exists():
        raise NightcolorError(f"{path}: no report found")
    report = EvaluationReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
    if args.json:
        print(report.to_json())
    else:
        print(report.tables_text(), end="")
    return 0


def cmd_synth(args) -> int:
    cfg = write_experiment(
        _out_dir(args), n_cities=args.cities, shape=(args.size, args.size), seed=args.seed or 0,
        models=args.models, penalties=args.penalties,
    )
    _emit(args, {"config": cfg}, f"experiment config -> {cfg}")
    return 0


COMMANDS = {
    "ingest": (cmd_ingest, "align ALAN, built-up and band rasters to a common grid"),
    "features": (cmd_features, "assemble the per-cell predictor table as CSV"),
    "outliers": (cmd_outliers, "filter outliers for one band; writes kept.csv and removed.csv"),
    "fit": (cmd_fit, "fit one model for one band; writes a model file"),
    "predict": (cmd_predict, "predict one band from a model file"),
    "colorize": (cmd_colorize, "predict red, green and blue grids and an RGB composite"),
    "evaluate": (cmd_evaluate, "run a cross-city experiment from a config file"),
    "contribute": (cmd_contribute, "drop-predictor contribution test (delta r)"),
    "sweep": (cmd_sweep, "fit elastic maps across bending penalties"),
    "report": (cmd_report, "print the tables of a finished run"),
    "synth": (cmd_synth, "write synthetic cities and an experiment config"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master random seed (default 0)")
    common.add_argument("--config", type=Path, help="TOML file (see module help)")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or .)")
    common.add_argument("--json", action="store_true", help="print a machine-readable JSON result")

    parser = argparse.ArgumentParser(prog="nightcolor", description="RGB night-light estimation from panchromatic ALAN.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    p = {}
    for name, (_, help_text) in COMMANDS.items():
        p[name] = sub.add_parser(name, parents=[common], help=help_text, description=help_text)

    _add_raster_inputs(p["ingest"])
    _add_raster_inputs(p["features"])
    p["features"].add_argument("--name", help="dataset name")
    p["features"].add_argument("--output", default="features.csv", help="file name inside --out")

    p["outliers"].add_argument("--in", dest="input", type=Path, required=True, help="dataset CSV")
    p["outliers"].add_argument("--band", required=True, help="R, G, B or the full band name")
    p["outliers"].add_argument("--tail", type=float, default=0.01, help="tail quantile (default 0.01)")

    p["fit"].add_argument("--in", dest="input", type=Path, required=True, help="dataset CSV")
    p["fit"].add_argument("--band", required=True)
    p["fit"].add_argument("--output", help="model file name inside --out")
    _add_model_flags(p["fit"])

    p["predict"].add_argument("--model-file", type=Path, required=True)
    p["predict"].add_argument("--in", dest="input", type=Path, required=True, help="dataset CSV")
    p["predict"].add_argument("--output", help="CSV file name inside --out")

    _add_raster_inputs(p["colorize"], bands=False)
    for b in BANDS:
        p["colorize"].add_argument(f"--{b}-model", type=Path, help=f"model file for {b}")
    p["colorize"].add_argument("--output", help="composite file name (.ppm or .png)")

    p["contribute"].add_argument("--in", dest="input", type=Path, nargs="+", required=True,
                                 help="one or more dataset CSVs, pooled")
    p["contribute"].add_argument("--band", required=True)
    p["contribute"].add_argument("--drop", action="append", nargs="+", metavar="PREDICTOR",
                                 help="predictor group to drop (repeatable); default: each predictor in turn")
    _add_model_flags(p["contribute"])

    p["sweep"].add_argument("--in", dest="input", type=Path, required=True)
    p["sweep"].add_argument("--band", required=True)
    p["sweep"].add_argument("--penalties", type=float, nargs="+")
    p["sweep"].add_argument("--dims", type=int, nargs=2, default=list(DEFAULT_DIMS), metavar=("G1", "G2"))
    p["sweep"].add_argument("--stretch", type=float, default=0.0)
    p["sweep"].add_argument("--max-iter", type=int, default=100)
    p["sweep"].add_argument("--tol", type=float, default=1e-4)

    p["report"].add_argument("--run", help="run directory (default: --out)")

    p["synth"].add_argument("--cities", type=int, default=2)
    p["synth"].add_argument("--size", type=int, default=24, help="grid side length in cells")
    p["synth"].add_argument("--models", nargs="+", choices=MODEL_KINDS, default=list(MODEL_KINDS))
    p["synth"].add_argument("--penalties", type=float, nargs="+")
    parser._subparsers_map = p
    return parser


def _apply_config_defaults(sub, command, config) -> None:
    """Use the [command] table of ``config`` as flag defaults."""
    with open(config, "rb") as fh:
        doc = tomllib.load(fh)
    table = doc.get(command, {})
    known = {a.dest for a in sub._actions}
    defaults = {}
    for key, value in table.items():
        dest = key.replace("-", "_")
        if dest == "in":
            dest = "input"
        if dest not in known:
            sub.error(f"unknown key {key!r} in [{command}] of {config}")
        defaults[dest] = value
    for action in sub._actions:
        if action.dest in defaults:
            action.required = False
            value = defaults[action.dest]
            if action.type is Path:
                # paths in a config file are relative to the file
                conv = lambda v: v if Path(v).is_absolute() else Path(config).parent / v
            else:
                conv = action.type
            if conv is not None:
                defaults[action.dest] = [conv(v) for v in value] if isinstance(value, list) else conv(value)
    sub.set_defaults(**defaults)


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        command = argv[0]
        if command in parser._subparsers_map and command not in ("evaluate", "report"):
            pre = argparse.ArgumentParser(add_help=False)
            pre.add_argument("--config", type=Path)
            known, _ = pre.parse_known_args(argv[1:])
            if known.config is not None:
                _apply_config_defaults(parser._subparsers_map[command], command, known.config)
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 2
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    except (OSError, tomllib.TOMLDecodeError) as exc:
        print(f"nightcolor: error: config: {exc}", file=sys.stderr)
        return 2
    if args.seed is None and args.command != "evaluate":
        args.seed = 0
    func = COMMANDS[args.command][0]
    try:
        return func(args)
    except UsageError as exc:
        parser._subparsers_map[args.command].print_usage(sys.stderr)
        print(f"nightcolor {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (NightcolorError, ValueError, OSError, KeyError) as exc:
        print(f"nightcolor {args.command}: data error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
