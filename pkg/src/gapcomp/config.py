"""Run configuration: JSON file with one section per pipeline stage.

Every field has a default. Section seeds left as ``null`` inherit the
top-level ``seed``; the resolved config has every seed spelled out.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

from .errors import ConfigError
from .sweep import EvalOptions
from .trainer import SynthConfig, TrainConfig

DEFAULT_TEMPERATURES = [0.01, 0.07, 0.1, 0.2, 0.4]
DEFAULT_RATES = [0.05, 0.1, 0.25, 0.5, 0.75, 1.0]

DEFAULTS = {
    "seed": 0,
    "jobs": 1,
    "synth": {
        "num_concepts": 20,
        "samples_per_concept": 100,
        "latent_dim": 64,
        "input_dim": 64,
        "modality_count": 2,
        "noise_std": 0.5,
        "num_attributes": 8,
        "attribute_prob": 0.3,
        "train_fraction": 0.8,
        "seed": None,
    },
    "train": {
        "temperatures": DEFAULT_TEMPERATURES,
        "learning_rate": 0.1,
        "epochs": 100,
        "batch_size": 256,
        "embed_dim": 64,
        "init_bias_scale": 1.0,
        "seed": None,
    },
    "eval": {
        "classifier": "linear",
        "learning_rate": 1.0,
        "epochs": 300,
        "l2": 0.0,
        "f1_threshold": 0.5,
        "train_fraction": 0.8,
        "min_per_class": 5,
        "representations": ["centroid", "concat", "single_modality"],
        "tasks": ["single", "multilabel"],
    },
    "compress": {
        "granularity": "per_concept",
        "rate": 1.0,
        "renormalize": True,
        "seed": None,
    },
    "sweep": {
        "rates": DEFAULT_RATES,
        "seeds": [0, 1, 2],
    },
}

_SEEDED_SECTIONS = ("synth", "train", "compress")


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{where}' must be a mapping")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path=None, seed: int | None = None, jobs: int | None = None) -> dict:
    """Merge a config file (if any) over the defaults, apply flag overrides, resolve seeds.

    ``seed`` from the command line replaces every scalar seed and the sweep
    seed list.
    """
    user = {}
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
    cfg = _merge(DEFAULTS, user)
    if seed is not None:
        cfg["seed"] = seed
        for section in _SEEDED_SECTIONS:
            cfg[section]["seed"] = seed
        cfg["sweep"]["seeds"] = [seed]
    if jobs is not None:
        cfg["jobs"] = jobs
    return resolve(cfg)


def resolve(cfg: dict) -> dict:
    cfg = copy.deepcopy(cfg)
    if not isinstance(cfg["seed"], int):
        raise ConfigError("'seed' must be an integer")
    for section in _SEEDED_SECTIONS:
        if cfg[section]["seed"] is None:
            cfg[section]["seed"] = cfg["seed"]
        if not isinstance(cfg[section]["seed"], int):
            raise ConfigError(f"'{section}.seed' must be an integer")
    if not cfg["sweep"]["seeds"] or not all(isinstance(s, int) for s in cfg["sweep"]["seeds"]):
        raise ConfigError("'sweep.seeds' must be a non-empty list of integers")
    if not cfg["train"]["temperatures"]:
        raise ConfigError("'train.temperatures' must not be empty")
    for rate in cfg["sweep"]["rates"]:
        if not isinstance(rate, (int, float)) or rate <= 0:
            raise ConfigError(f"'sweep.rates' entries must be > 0, got {rate!r}")
    if not isinstance(cfg["jobs"], int) or cfg["jobs"] < 1:
        raise ConfigError("'jobs' must be a positive integer")
    return cfg


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def _build(factory, section: str, **params):
    try:
        return factory(**params)
    except TypeError as exc:
        raise ConfigError(f"section '{section}': {exc}") from exc


def synth_config(cfg: dict) -> SynthConfig:
    return _build(SynthConfig, "synth", **cfg["synth"])


def train_config(cfg: dict, temperature: float) -> TrainConfig:
    params = {k: v for k, v in cfg["train"].items() if k != "temperatures"}
    return _build(TrainConfig, "train", temperature=temperature, **params)


def eval_options(cfg: dict) -> EvalOptions:
    params = {k: v for k, v in cfg["eval"].items() if k not in ("representations", "tasks")}
    return _build(EvalOptions, "eval", **params)
