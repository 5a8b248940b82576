"""
Model dispatch and text serialization.

Model files are JSON documents tagged ``{"format": "nightcolor-model", "version": 1,
"kind": ...}``. Floats are written with Python's shortest round-trip repr, so
a saved model reloads with bit-identical parameters.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .elastic_map import DEFAULT_DIMS, FIGURE_PENALTY, ElasticMap, ElasticNetTopology, fit_elastic_map
from .errors import ModelError
from .features import PREDICTORS, Dataset
from .regressors.forest import ForestModel, RegressionTree, fit_forest
from .regressors.kernel import KernelModel, fit_kernel
from .regressors.linear import LinearModel, fit_ols

FORMAT = "nightcolor-model"
VERSION = 1
MODEL_KINDS = ("ols", "kernel", "forest", "elmap")


def fit_model(kind: str, ds: Dataset, band: str, predictors=PREDICTORS, seed: int = 0, **params):
    """Fit one model of ``kind`` for ``band``. Unused ``params`` are rejected."""
    if kind == "ols":
        return fit_ols(ds, band, predictors=predictors, **params)
    if kind == "kernel":
        return fit_kernel(ds, band, seed=seed, predictors=predictors, **params)
    if kind == "forest":
        return fit_forest(ds, band, seed=seed, predictors=predictors, **params)
    if kind == "elmap":
        params.setdefault("bend", FIGURE_PENALTY)
        params.setdefault("dims", DEFAULT_DIMS)
        params["dims"] = tuple(params["dims"])
        return fit_elastic_map(ds, band, predictors=predictors, **params)
    raise ModelError(f"unknown model kind {kind!r}; expected one of {', '.join(MODEL_KINDS)}")


def _arr(a) -> list:
    return np.asarray(a).tolist()


def model_to_dict(model) -> dict:
    head = {"format": FORMAT, "version": VERSION, "kind": model.kind, "band": model.band,
            "predictors": list(model.predictors)}
    if isinstance(model, LinearModel):
        body = {"b0": model.b0, "b": _arr(model.b), "t_b0": model.t_b0, "t": _arr(model.t),
                "r2": model.r2, "vif": _arr(model.vif), "residual_variance": model.residual_variance,
                "n": model.n}
    elif isinstance(model, KernelModel):
        body = {"scale": model.scale, "ridge": model.ridge, "x_mean": _arr(model.x_mean),
                "x_sd": _arr(model.x_sd), "y_mean": model.y_mean, "alpha": _arr(model.alpha),
                "X_train": _arr(model.X_train), "cv_scales": list(model.cv_scales),
                "cv_ridges": list(model.cv_ridges),
                "cv_mse": None if model.cv_mse is None else _arr(model.cv_mse)}
    elif isinstance(model, ForestModel):
        body = {"min_leaf": model.min_leaf, "seed": model.seed, "bootstrap": model.bootstrap,
                "trees": [{"feature": _arr(t.feature), "threshold": _arr(t.threshold),
                           "left": _arr(t.left), "right": _arr(t.right), "value": _arr(t.value),
                           "n_samples": _arr(t.n_samples)} for t in model.trees]}
    elif isinstance(model, ElasticMap):
        body = {"dims": [model.topology.g1, model.topology.g2], "stretch": model.stretch,
                "bend": model.bend, "mean": _arr(model.mean), "sd": _arr(model.sd),
                "nodes": _arr(model.nodes), "fvu": model.fvu, "fitted": model.fitted,
                "converged": model.converged, "n_iter": model.n_iter}
    else:
        raise ModelError(f"cannot serialize {type(model).__name__}")
    head.update(body)
    return head


def _f(seq) -> np.ndarray:
    return np.array([np.nan if v is None else v for v in seq], dtype=float)


def model_from_dict(doc: dict):
    if doc.get("format") != FORMAT:
        raise ModelError("not a nightcolor model document")
    if doc.get("version") != VERSION:
        raise ModelError(f"unsupported model format version {doc.get('version')!r}")
    kind, band, preds = doc["kind"], doc["band"], tuple(doc["predictors"])
    if kind == "ols":
        return LinearModel(band, preds, doc["b0"], _f(doc["b"]), doc["t_b0"], _f(doc["t"]), doc["r2"],
                           _f(doc["vif"]), doc["residual_variance"], doc["n"])
    if kind == "kernel":
        cv = None if doc["cv_mse"] is None else np.array(doc["cv_mse"], dtype=float)
        return KernelModel(band, preds, np.array(doc["X_train"], dtype=float).reshape(-1, len(preds)),
                           _f(doc["alpha"]), doc["scale"], doc["ridge"], _f(doc["x_mean"]),
                           _f(doc["x_sd"]), doc["y_mean"], tuple(doc["cv_scales"]),
                           tuple(doc["cv_ridges"]), cv)
    if kind == "forest":
        trees = tuple(
            RegressionTree(np.array(t["feature"], dtype=np.int64), _f(t["threshold"]),
                           np.array(t["left"], dtype=np.int64), np.array(t["right"], dtype=np.int64),
                           _f(t["value"]), np.array(t["n_samples"], dtype=np.int64))
            for t in doc["trees"]
        )
        return ForestModel(band, preds, trees, doc["min_leaf"], doc["seed"], doc["bootstrap"])
    if kind == "elmap":
        topo = ElasticNetTopology(*doc["dims"])
        nodes = np.array(doc["nodes"], dtype=float).reshape(topo.n_nodes, len(preds) + 1)
        return ElasticMap(topo, nodes, preds + (band,), _f(doc["mean"]), _f(doc["sd"]), doc["stretch"],
                          doc["bend"], doc["fvu"], doc["fitted"], doc["converged"], doc["n_iter"])
    raise ModelError(f"unknown model kind {kind!r}")


def _clean(obj):
    # JSON has no NaN; encode as null
    if isinstance(obj, float):
        return None if obj != obj else obj
    if isinstance(obj, list):
        return [_clean(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    return obj


def dumps_model(model) -> str:
    return json.dumps(_clean(model_to_dict(model)), separators=(",", ":")) + "\n"


def save_model(model, path) -> None:
    Path(path).write_text(dumps_model(model), encoding="utf-8")


def load_model(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    for key in ("fvu", "r2", "t_b0", "residual_variance"):
        if key in doc and doc[key] is None:
            doc[key] = float("nan")
    return model_from_dict(doc)
