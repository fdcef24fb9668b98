"""Run configuration: JSON schema, defaults and model construction.

A config is a JSON object with four blocks::

    {
      "model":     {"type": "clipped_gaussian" | "triangular_av" | "custom",
                    "K": 4, "sigma": -1, "phi": 2.3, "action": null, "params": {...}},
      "partition": {"counts": 10  or  [10, 10]},
      "solver":    {"quad_tol": 1e-9, "mesh": 5, "vertex_budget": 1000000, "fw_tol": 1e-9,
                    "safety": 1.1, "log_base": "e", "seed": 0, "M": 100000, ...},
      "output":    {"dir": "out", "csv": true, "trajectories": 100}
    }

Unknown keys anywhere are rejected.  :func:`resolve` fills defaults and
returns a plain dict that is embedded verbatim in every report.
"""
from __future__ import annotations

import copy
import json
import math
from pathlib import Path

import jsonschema
import numpy as np

from .abstraction import content_hash
from .geometry import Box
from .kernels import KernelModel, TabulatedModel, clipped_gaussian_model, triangular_av_model
from .pipeline import AV, EXAMPLE1

MAX_CELLS = 20000
MAX_HORIZON = 1000


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path or '<root>'}: {message}")
        self.path = path


_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 1}
_mat = {"type": "array", "items": _vec, "minItems": 1}
_triangle = {"type": "array", "items": _num, "minItems": 3, "maxItems": 3}


def _closed(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_PARAMS = {
    "clipped_gaussian": _closed({"lows": _vec, "highs": _vec, "cov": _mat, "mean0": _vec, "cov0": _mat,
                                 "quad_order": {"type": "integer", "minimum": 2, "maximum": 64},
                                 "quad_pieces": {"type": "integer", "minimum": 1, "maximum": 64}}),
    "triangular_av": _closed({"initial": {"oneOf": [{"const": "uniform"}, _triangle]}}),
    "custom": _closed({"lows": _vec, "highs": _vec, "tables": {"type": "string"},
                       "q0": {"type": "array"}, "q": {"type": "array"},
                       "L_q": {"type": "number", "minimum": 0}, "L_grad": {"type": "number", "minimum": 0}},
                      required=("lows", "highs", "L_q", "L_grad")),
}

SCHEMA = _closed({
    "model": _closed({
        "type": {"enum": sorted(_PARAMS)},
        "K": {"type": "integer", "minimum": 1, "maximum": MAX_HORIZON},
        "sigma": {"enum": [1, -1]},
        "phi": _pos,
        "action": {"type": ["integer", "null"], "minimum": 0},
        "params": {"type": "object"},
    }, required=("type",)),
    "partition": _closed({
        "counts": {"oneOf": [{"type": "integer", "minimum": 1},
                             {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}]},
    }, required=("counts",)),
    "solver": _closed({
        "quad_tol": {"type": "number", "exclusiveMinimum": 0, "maximum": 1e-2},
        "mesh": {"type": "integer", "minimum": 2, "maximum": 257},
        "cost_mesh": {"type": "integer", "minimum": 2, "maximum": 257},
        "sup_mesh": {"type": "integer", "minimum": 3, "maximum": 401},
        "vertex_budget": {"type": "integer", "minimum": 0},
        "starts": {"type": "integer", "minimum": 1, "maximum": 4096},
        "fw_tol": {"type": "number", "exclusiveMinimum": 0, "maximum": 1e-2},
        "fw_max_iter": {"type": "integer", "minimum": 1},
        "safety": {"type": "number", "minimum": 1},
        "log_base": {"enum": ["e", "2"]},
        "seed": {"type": "integer", "minimum": 0},
        "M": {"type": "integer", "minimum": 1},
        "sound": {"type": "boolean"},
        "workers": {"type": ["integer", "null"], "minimum": 1},
    }),
    "output": _closed({
        "dir": {"type": "string"},
        "csv": {"type": "boolean"},
        "trajectories": {"type": "integer", "minimum": 0},
    }),
}, required=("model", "partition"))

SOLVER_DEFAULTS = {
    "quad_tol": 1e-9, "mesh": 5, "cost_mesh": 5, "sup_mesh": 21, "vertex_budget": 10**6, "starts": 32,
    "fw_tol": 1e-9, "fw_max_iter": 10**4, "safety": 1.1, "log_base": "e", "seed": 0, "M": 10**5,
    "sound": True, "workers": None,
}
OUTPUT_DEFAULTS = {"dir": ".", "csv": True, "trajectories": 100}


def _path(err) -> str:
    return ".".join(str(p) for p in err.absolute_path)


def _validate(instance, schema, prefix=""):
    errors = sorted(jsonschema.Draft7Validator(schema).iter_errors(instance), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = ".".join(x for x in (prefix, _path(err)) if x)
        raise ConfigError(path, err.message)


def _check_array(value, path, shape=None):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "not a rectangular numeric array") from None
    if shape is not None and arr.shape != shape:
        raise ConfigError(path, f"expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(path, "entries must be finite")
    return arr


def resolve(raw: dict, base_dir: str | Path = ".") -> dict:
    """Validate ``raw`` and return the fully resolved config (defaults filled in)."""
    if not isinstance(raw, dict):
        raise ConfigError("", "config must be a JSON object")
    _validate(raw, SCHEMA)
    cfg = copy.deepcopy(raw)
    m = cfg["model"]
    kind = m["type"]
    params = m.setdefault("params", {})
    _validate(params, _PARAMS[kind], "model.params")

    if kind == "clipped_gaussian":
        m.setdefault("K", EXAMPLE1["K"])
        params.setdefault("lows", [0.0, 0.0])
        params.setdefault("highs", [1.0, 1.0])
        dim = len(params["lows"])
        if len(params["highs"]) != dim:
            raise ConfigError("model.params.highs", f"expected {dim} entries")
        eye = np.eye(dim) * 0.5
        centre = ((np.array(params["lows"]) + np.array(params["highs"])) / 2).tolist()
        params.setdefault("cov", EXAMPLE1["cov"] if dim == 2 else eye.tolist())
        params.setdefault("cov0", EXAMPLE1["cov0"] if dim == 2 else eye.tolist())
        params.setdefault("mean0", centre)
        for key in ("cov", "cov0"):
            _check_array(params[key], f"model.params.{key}", (dim, dim))
        _check_array(params["mean0"], "model.params.mean0", (dim,))
    elif kind == "triangular_av":
        m.setdefault("K", AV["K"])
        params.setdefault("initial", AV["initial"])
        if "phi" not in m:
            raise ConfigError("model.phi", "required for triangular_av")
    else:
        if "K" not in m:
            raise ConfigError("model.K", "required for custom models")
        if ("tables" in params) == ("q0" in params or "q" in params):
            raise ConfigError("model.params", "give either 'tables' (an .npz path) or inline 'q0' and 'q'")
        if "tables" in params:
            params["tables"] = str((Path(base_dir) / params["tables"]).resolve())
    m.setdefault("sigma", -1)
    m.setdefault("action", None)
    m.setdefault("phi", None)

    dim = _dim(cfg)
    counts = cfg["partition"]["counts"]
    counts = [counts] * dim if isinstance(counts, int) else list(counts)
    if len(counts) != dim:
        raise ConfigError("partition.counts", f"expected {dim} entries, got {len(counts)}")
    cfg["partition"]["counts"] = counts
    if math.prod(counts) > MAX_CELLS:
        raise ConfigError("partition.counts", f"{math.prod(counts)} cells exceed the limit {MAX_CELLS}")

    solver = {**SOLVER_DEFAULTS, **cfg.get("solver", {})}
    if kind == "triangular_av" and "mesh" not in cfg.get("solver", {}):
        solver["mesh"] = AV["mesh"]
    cfg["solver"] = solver
    cfg["output"] = {**OUTPUT_DEFAULTS, **cfg.get("output", {})}
    cfg["output"]["dir"] = str((Path(base_dir) / cfg["output"]["dir"]).resolve())
    return cfg


def _dim(cfg) -> int:
    m = cfg["model"]
    if m["type"] == "triangular_av":
        return 1
    return len(m["params"]["lows"])


def load(path) -> dict:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError("", f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"{path} is not valid JSON: {exc}") from None
    return resolve(raw, path.parent)


def config_hash(cfg: dict) -> str:
    return content_hash(cfg)


def build_model(cfg: dict) -> KernelModel:
    m = cfg["model"]
    p = m["params"]
    K = m["K"]
    if m["type"] == "clipped_gaussian":
        quad = {k: p[k] for k in ("quad_order", "quad_pieces") if k in p}
        return clipped_gaussian_model(Box(p["lows"], p["highs"]), p["cov"], p["mean0"], p["cov0"], K,
                                      quad_tol=cfg["solver"]["quad_tol"], **quad)
    if m["type"] == "triangular_av":
        return triangular_av_model(K, m["phi"], p["initial"])
    if "tables" in p:
        try:
            with np.load(p["tables"]) as data:
                q0, q = data["q0"], data["q"]
        except (OSError, KeyError) as exc:
            raise ConfigError("model.params.tables", f"cannot read q0/q from {p['tables']}: {exc}") from None
    else:
        q0 = _check_array(p["q0"], "model.params.q0")
        q = _check_array(p["q"], "model.params.q")
    return TabulatedModel(Box(p["lows"], p["highs"]), q0, q, K, p["L_q"], p["L_grad"])
