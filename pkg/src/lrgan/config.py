"""JSON run configuration: strict schema, documented defaults, echoable form.

Unknown keys are rejected with the full key path; missing keys fall back to
the documented defaults (paper-style hyperparameters where they exist:
learning rate 0.0002, loss weights 1/5/50, three stages).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .datasets import KINDS, FolderDataSpec, SyntheticDatasetSpec
from .model import LRM_REPLACEMENTS, ModelConfig
from .objectives import LossWeights
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Invalid run configuration; message names the offending key path."""


MODEL_DEFAULTS = {
    "stages": 3,
    "resolutions": [8, 16, 32],
    "channels": 64,
    "noise_dim": 32,
    "metadata_dim": 16,
    "lrm_resolution": 16,
    "use_metadata": True,
    "use_lrm": True,
    "lrm_replacement": "none",
}

TRAIN_DEFAULTS = {
    "epochs": 30,
    "batch": 16,
    "lr": 0.0002,
    "lambda1": 1.0,
    "lambda2": 5.0,
    "lambda3": 50.0,
    "seed": 0,
    "checkpoint_every": 10,
    "eval_every": 5,
}

DATA_SPEC_DEFAULTS = {"count": 500, "resolution": None, "seed": 0}

TOP_LEVEL_KEYS = ("model", "train", "data", "out_dir", "precision")
DATA_KEYS = ("kind", "path", "spec")

_MODEL_TYPES = {
    "stages": (int,),
    "resolutions": (list,),
    "channels": (int,),
    "noise_dim": (int,),
    "metadata_dim": (int,),
    "lrm_resolution": (int,),
    "use_metadata": (bool,),
    "use_lrm": (bool,),
    "lrm_replacement": (str,),
}

_TRAIN_TYPES = {
    "epochs": (int,),
    "batch": (int,),
    "lr": (int, float),
    "lambda1": (int, float),
    "lambda2": (int, float),
    "lambda3": (int, float),
    "seed": (int,),
    "checkpoint_every": (int,),
    "eval_every": (int,),
}

_DATA_SPEC_TYPES = {"count": (int,), "resolution": (int, type(None)), "seed": (int,)}


@dataclass
class RunConfig:
    train: TrainConfig
    effective: dict

    @property
    def model(self):
        return self.train.model

    @property
    def out_dir(self):
        return self.train.out_dir


def _check_object(section, raw, allowed):
    if not isinstance(raw, dict):
        raise ConfigError(f"{section}: expected an object, got {type(raw).__name__}")
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"{section}.{key}: unknown key")


def _typed(path, value, kinds):
    if isinstance(value, bool) and bool not in kinds:
        raise ConfigError(f"{path}: expected {'/'.join(k.__name__ for k in kinds)}, got a bool")
    if not isinstance(value, tuple(kinds)):
        names = "/".join(k.__name__ for k in kinds)
        raise ConfigError(f"{path}: expected {names}, got {type(value).__name__}")
    return value


def _merge(section, raw, defaults, types):
    merged = dict(defaults)
    for key, value in raw.items():
        merged[key] = _typed(f"{section}.{key}", value, types[key])
    return merged


def parse_run_config(doc, base_dir="."):
    """Validate a parsed JSON document and build the runtime config objects."""
    _check_object("config", doc, TOP_LEVEL_KEYS)
    model_raw = doc.get("model", {})
    train_raw = doc.get("train", {})
    data_raw = doc.get("data", {})

    _check_object("model", model_raw, MODEL_DEFAULTS)
    model = _merge("model", model_raw, MODEL_DEFAULTS, _MODEL_TYPES)
    if model["lrm_replacement"] not in LRM_REPLACEMENTS:
        raise ConfigError(f"model.lrm_replacement: must be one of {LRM_REPLACEMENTS}")

    _check_object("train", train_raw, TRAIN_DEFAULTS)
    train = _merge("train", train_raw, TRAIN_DEFAULTS, _TRAIN_TYPES)

    _check_object("data", data_raw, DATA_KEYS)
    kind = _typed("data.kind", data_raw.get("kind", "mirror"), (str,))
    spec_raw = data_raw.get("spec", {})
    _check_object("data.spec", spec_raw, DATA_SPEC_DEFAULTS)
    spec = _merge("data.spec", spec_raw, DATA_SPEC_DEFAULTS, _DATA_SPEC_TYPES)

    out_dir = _typed("out_dir", doc.get("out_dir", "runs/out"), (str,))
    run_precision = _typed("precision", doc.get("precision", "float32"), (str,))
    if run_precision not in ("float32", "float64"):
        raise ConfigError("precision: must be 'float32' or 'float64'")

    try:
        model_config = ModelConfig(
            stages=model["stages"],
            resolutions=tuple(model["resolutions"]),
            channels=model["channels"],
            noise_dim=model["noise_dim"],
            metadata_dim=model["metadata_dim"],
            lrm_resolution=model["lrm_resolution"],
            use_metadata=model["use_metadata"],
            use_lrm=model["use_lrm"],
            lrm_replacement=model["lrm_replacement"],
            seed=train["seed"],
        )
    except ValueError as err:
        raise ConfigError(f"model: {err}") from err

    top = model_config.resolutions[-1]
    resolution = spec["resolution"] if spec["resolution"] is not None else top
    if resolution != top:
        raise ConfigError(f"data.spec.resolution: must match the top stage resolution {top}")
    if kind == "folder":
        path = data_raw.get("path")
        if path is None:
            raise ConfigError("data.path: required when data.kind is 'folder'")
        _typed("data.path", path, (str,))
        data_spec = FolderDataSpec(path=str(Path(base_dir) / path), resolution=resolution)
    else:
        if kind not in KINDS:
            raise ConfigError(f"data.kind: must be 'folder' or one of {KINDS}")
        if "path" in data_raw:
            raise ConfigError("data.path: only valid when data.kind is 'folder'")
        try:
            data_spec = SyntheticDatasetSpec(
                kind=kind, count=spec["count"], resolution=resolution, seed=spec["seed"]
            )
        except ValueError as err:
            raise ConfigError(f"data.spec: {err}") from err

    try:
        weights = LossWeights(float(train["lambda1"]), float(train["lambda2"]), float(train["lambda3"]))
        train_config = TrainConfig(
            epochs=train["epochs"],
            model=model_config,
            data=data_spec,
            batch_size=train["batch"],
            lr=float(train["lr"]),
            weights=weights,
            seed=train["seed"],
            checkpoint_every=train["checkpoint_every"],
            eval_every=train["eval_every"],
            out_dir=out_dir,
            precision=run_precision,
        )
    except ValueError as err:
        raise ConfigError(f"train: {err}") from err

    effective = {
        "model": model,
        "train": train,
        "data": {"kind": kind, "spec": {**spec, "resolution": resolution}},
        "out_dir": out_dir,
        "precision": run_precision,
    }
    if kind == "folder":
        effective["data"]["path"] = data_raw["path"]
    return RunConfig(train=train_config, effective=effective)


def load_run_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON: {err}") from err
    return parse_run_config(doc, base_dir=str(Path(path).resolve().parent))


def write_effective_config(run_config, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "effective_config.json", "w", encoding="utf-8") as fh:
        json.dump(run_config.effective, fh, indent=2, sort_keys=True)
        fh.write("\n")
