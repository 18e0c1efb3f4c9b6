"""Run configuration: one JSON document drives ``train`` and ``grid``.

Model keys mirror the model-construction parameters (``num_feats``,
``num_bins``, ``num_factors``, ``num_hidden_layers``, ``hidden_layer_size``,
``linear_modules``, ``interaction_modules``, ``both_modules``, ``optimizer``,
``loss``, ``additional_metrics``); the rest describe data, hashing and the
training loop. Any scalar-valued key given as a list is a grid axis.
"""

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .data import ColumnSchema
from .hashing import DEFAULT_NUM_BINS, PER_FEATURE, WHOLE_SAMPLE, HasherConfig
from .models import ConfigError, ModelSpec, model_errors
from .modules import ModuleSpec
from .training import TrainConfig

DATA_ROOT_ENV = "CTREMBED_DATA_ROOT"
MODULE_LISTS = ("linear_modules", "interaction_modules", "both_modules")
LIST_KEYS = (*MODULE_LISTS, "additional_metrics")
KNOWN_METRICS = ("log_loss", "entropy", "ig", "rig", "empirical_ctr")

DEFAULTS = {
    "num_feats": 26,
    "num_bins": DEFAULT_NUM_BINS,
    "num_factors": 0,
    "num_hidden_layers": 0,
    "hidden_layer_size": 64,
    "linear_modules": [],
    "interaction_modules": [],
    "both_modules": [],
    "optimizer": {"name": "lazy_adam", "learning_rate": 0.003, "beta1": 0.9,
                  "beta2": 0.999, "epsilon": 1e-8},
    "loss": "bce",
    "additional_metrics": ["rig"],
    "dnn_activation": "relu",
    "init_std": 0.01,
    "data_path": None,
    "test_path": None,
    "data_format": "criteo",
    "bucketize_integers": False,
    "train_fraction": 0.7,
    "hash_mode": WHOLE_SAMPLE,
    "hash_seed": 0,
    "seed": 0,
    "batch_size": 10000,
    "epochs": 1,
    "eval_every": 0,
    "max_rows": None,
}
_MODEL_KEYS = ("num_feats", "num_bins", "num_factors", "num_hidden_layers",
               "hidden_layer_size", "dnn_activation", "init_std")
_OPT_KEYS = ("name", "learning_rate", "beta1", "beta2", "epsilon")


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec
    train: TrainConfig
    hasher: HasherConfig
    schema: ColumnSchema
    data_path: Optional[str]
    test_path: Optional[str]
    train_fraction: float
    additional_metrics: tuple
    raw: dict  # the normalized JSON document this was built from

    @property
    def seed(self):
        return self.train.seed


def with_defaults(raw: dict) -> dict:
    out = copy.deepcopy(DEFAULTS)
    for k, v in raw.items():
        if k == "optimizer" and isinstance(v, dict):
            out["optimizer"].update(v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_raw(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a JSON object"])
    return raw


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``key=value`` overrides; values parse as JSON, else as strings.

    Dotted keys reach into nested entries, e.g. ``optimizer.learning_rate=0.01``
    or ``interaction_modules.0.factor=2``.
    """
    raw = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError([f"override {item!r} is not key=value"])
        key, text = item.split("=", 1)
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        parts = [int(p) if p.isdigit() else p for p in key.split(".")]
        if parts[0] == "optimizer" and "optimizer" not in raw:
            raw["optimizer"] = {}
        set_path(raw, parts, value)
    return raw


def get_path(d, path):
    for p in path:
        d = d[p]
    return d


def set_path(d, path, value):
    for p in path[:-1]:
        d = d[p]
    d[path[-1]] = value


def find_axes(raw: dict) -> dict:
    """Grid axes as ``{path_tuple: values}``; a path is a tuple of keys/indices."""
    axes = {}
    for k, v in raw.items():
        if k in LIST_KEYS:
            if k in MODULE_LISTS and isinstance(v, list):
                for i, m in enumerate(v):
                    if isinstance(m, dict):
                        for mk, mv in m.items():
                            if isinstance(mv, list):
                                axes[(k, i, mk)] = mv
            continue
        if k == "optimizer" and isinstance(v, dict):
            for ok, ov in v.items():
                if isinstance(ov, list):
                    axes[("optimizer", ok)] = ov
        elif isinstance(v, list):
            axes[(k,)] = v
    return axes


def path_name(path) -> str:
    return ".".join(str(p) for p in path)


def assign(raw: dict, assignment: dict) -> dict:
    """Copy of ``raw`` with each axis path set to one value."""
    out = copy.deepcopy(raw)
    for path, value in assignment.items():
        set_path(out, list(path), value)
    return out


def config_hash(raw: dict) -> str:
    canon = json.dumps(with_defaults(raw), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def resolve_data_path(p):
    if p is None:
        return None
    path = Path(p)
    root = os.environ.get(DATA_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return str(path)


def _int(d, key, errs):
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        errs.append(f"{key} must be an integer, got {v!r}")
        return 0
    return v


def _num(d, key, errs):
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        errs.append(f"{key} must be a number, got {v!r}")
        return 0.0
    return float(v)


def parse_run_config(raw: dict, require_data=True) -> RunConfig:
    """Validate a concrete (no grid axes) config. Collects every error before raising."""
    errs = []
    axes = find_axes(raw)
    if axes:
        errs.append("config has grid axes (" + ", ".join(path_name(p) for p in axes)
                    + "); use the grid command")
        raise ConfigError(errs)
    d = with_defaults(raw)
    unknown = set(d) - set(DEFAULTS)
    if unknown:
        errs.append(f"unknown config keys: {sorted(unknown)}")

    mods = {}
    for key in MODULE_LISTS:
        lst = d[key]
        if not isinstance(lst, list):
            errs.append(f"{key} must be a list")
            mods[key] = ()
            continue
        parsed = []
        for i, m in enumerate(lst):
            if isinstance(m, str):
                m = {"kind": m}
            try:
                parsed.append(ModuleSpec.from_dict(m))
            except (TypeError, ValueError) as exc:
                errs.append(f"{key}[{i}]: {exc}")
        mods[key] = tuple(parsed)
    vals = {k: _int(d, k, errs) for k in ("num_feats", "num_bins", "num_factors",
                                           "num_hidden_layers", "hidden_layer_size")}
    model = ModelSpec(**vals, **mods, dnn_activation=d["dnn_activation"],
                      init_std=_num(d, "init_std", errs))
    errs += model_errors(model)

    opt = d["optimizer"]
    if not isinstance(opt, dict):
        errs.append("optimizer must be an object")
        opt = DEFAULTS["optimizer"]
    extra_opt = set(opt) - set(_OPT_KEYS)
    if extra_opt:
        errs.append(f"unknown optimizer keys: {sorted(extra_opt)}")
    if opt.get("name") != "lazy_adam":
        errs.append(f"optimizer.name must be 'lazy_adam', got {opt.get('name')!r}")
    if d["loss"] != "bce":
        errs.append(f"loss must be 'bce', got {d['loss']!r}")
    metrics = d["additional_metrics"]
    if not isinstance(metrics, list) or any(m not in KNOWN_METRICS for m in metrics):
        errs.append(f"additional_metrics must be a list drawn from {KNOWN_METRICS}")
        metrics = []
    max_rows = d["max_rows"]
    if max_rows is not None:
        max_rows = _int(d, "max_rows", errs)
    train = TrainConfig(
        batch_size=_int(d, "batch_size", errs), epochs=_int(d, "epochs", errs),
        learning_rate=_num(opt, "learning_rate", errs), beta1=_num(opt, "beta1", errs),
        beta2=_num(opt, "beta2", errs), epsilon=_num(opt, "epsilon", errs),
        seed=_int(d, "seed", errs), eval_every=_int(d, "eval_every", errs), max_rows=max_rows)
    errs += train.errors()

    hasher = None
    if d["hash_mode"] not in (WHOLE_SAMPLE, PER_FEATURE):
        errs.append(f"hash_mode must be {WHOLE_SAMPLE!r} or {PER_FEATURE!r}")
    else:
        try:
            hasher = HasherConfig(max(vals["num_bins"], 1), d["hash_mode"],
                                  _int(d, "hash_seed", errs))
        except ValueError as exc:
            errs.append(str(exc))

    schema = None
    if d["data_format"] == "criteo":
        schema = ColumnSchema.criteo(bool(d["bucketize_integers"]))
    elif d["data_format"] == "categorical":
        if d["bucketize_integers"]:
            errs.append("bucketize_integers only applies to data_format 'criteo'")
        schema = ColumnSchema.categorical_only(max(vals["num_feats"], 0))
    else:
        errs.append("data_format must be 'criteo' or 'categorical'")
    if schema is not None and schema.num_feats != vals["num_feats"]:
        errs.append(f"num_feats={vals['num_feats']} but the {d['data_format']} schema "
                    f"yields {schema.num_feats} features")

    frac = _num(d, "train_fraction", errs)
    if not 0.0 < frac < 1.0:
        errs.append("train_fraction must be in (0, 1)")
    if require_data and not d["data_path"]:
        errs.append("data_path is required")
    if errs:
        raise ConfigError(errs)
    return RunConfig(model, train, hasher, schema, d["data_path"], d["test_path"], frac,
                     tuple(metrics), d)
