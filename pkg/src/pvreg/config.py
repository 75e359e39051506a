"""Run configuration: a YAML file validated against a fixed key set.

Example (every key optional)::

    seed: 7
    data:
      path: null            # CSV path; synthetic data when null
      schema: null          # schema YAML, required with a path
      synth: {generator: pv, n: 4000, locations: 12}   # generator: pv | overfit
      lookback: 24
      horizon: 1
      shuffle: false
    models: [dnn, cnn]
    regimes: [B1, R1, R2, R3, R4]
    ratios: [0.1, 0.2, 0.3, 0.4, 0.5]
    regularization: {lam: 1.0e-4, patience: 10, min_delta: 1.0e-4, dropout: 0.1}
    model: {beta: 0.5, hidden: {dnn: [128, 64, 32]}}
    train: {max_epochs: 200, batch_size: 32, learning_rate: 1.0e-3, clock: wall}
    analysis: {criterion: relative-gap, tau: 0.1, k: 3}
    workers: 1
    out: results

Unknown keys are rejected. ``PVREG_SEED`` and ``PVREG_WORKERS`` override the
file; command-line flags override both.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass

import yaml

from .analysis import BenchSettings, OverfitCriterion
from .data import load_csv, load_schema, overfit_frame, synthesize
from .models import ModelKind
from .regularization import RegimeId
from .training import TrainConfig


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "data": {"path": None, "schema": None, "synth": {"generator": "pv", "n": 4000, "locations": 12},
             "lookback": 24, "horizon": 1, "shuffle": False},
    "models": [k.value for k in ModelKind],
    "regimes": [r.value for r in RegimeId],
    "ratios": [0.1, 0.2, 0.3, 0.4, 0.5],
    "regularization": {"lam": 1e-4, "patience": 10, "min_delta": 1e-4, "dropout": 0.1},
    "model": {"beta": 0.5, "hidden": {}},
    "train": {"max_epochs": 200, "batch_size": 32, "learning_rate": 1e-3, "adam_beta1": 0.9,
              "adam_beta2": 0.999, "adam_epsilon": 1e-8, "training_loss": "mse", "huber_delta": 1.0,
              "clock": "wall"},
    "analysis": {"criterion": "relative-gap", "tau": 0.1, "k": 3},
    "workers": 1,
    "out": "results",
}

# keys that may hold arbitrary sub-keys
_OPEN = {("model", "hidden")}
# keys that do not change results and stay out of the fingerprint
_UNFINGERPRINTED = ("workers", "out")


def _merge(base, over, path=()):
    if not isinstance(over, dict):
        raise ConfigError(f"{'.'.join(path) or 'config'} must be a mapping")
    out = copy.deepcopy(base)
    for key, val in over.items():
        here = path + (key,)
        if key not in base:
            raise ConfigError(f"unknown config key {'.'.join(here)!r}")
        if isinstance(base[key], dict) and here not in _OPEN:
            if val is None:
                continue
            out[key] = _merge(base[key], val, here)
        else:
            out[key] = val
    return out


@dataclass
class RunConfig:
    raw: dict

    @classmethod
    def load(cls, path=None, env=None, **overrides) -> "RunConfig":
        raw = copy.deepcopy(DEFAULTS)
        if path is not None:
            try:
                with open(path, encoding="utf-8") as fh:
                    text = yaml.safe_load(fh)
            except OSError as e:
                raise ConfigError(f"cannot read config {path}: {e}") from e
            except yaml.YAMLError as e:
                raise ConfigError(f"invalid YAML in {path}: {e}") from e
            raw = _merge(raw, text or {})
        env = os.environ if env is None else env
        if env.get("PVREG_SEED"):
            raw["seed"] = int(env["PVREG_SEED"])
        if env.get("PVREG_WORKERS"):
            raw["workers"] = int(env["PVREG_WORKERS"])
        for key, val in overrides.items():
            if val is None:
                continue
            if key == "tau":
                raw["analysis"]["tau"] = val
            elif key in raw:
                raw[key] = val
            else:
                raise ConfigError(f"unknown override {key!r}")
        cfg = cls(raw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        r = self.raw
        try:
            self.kinds
            self.regimes
            self.settings()
            ratios = self.ratios
        except (ValueError, TypeError) as e:
            raise ConfigError(str(e)) from e
        if not ratios or any(not 0 < x <= 0.5 for x in ratios):
            raise ConfigError("ratios must be a non-empty list in (0, 0.5]")
        for kind, sizes in (r["model"]["hidden"] or {}).items():
            if not sizes or any(int(h) < 1 for h in sizes):
                raise ConfigError(f"model.hidden.{kind} must be a non-empty list of positive sizes")
        if float(r["model"]["beta"]) < 0:
            raise ConfigError("model.beta must be >= 0")
        if int(r["data"]["lookback"]) < 1 or int(r["data"]["horizon"]) < 1:
            raise ConfigError("data.lookback and data.horizon must be >= 1")
        if int(r["workers"]) < 1:
            raise ConfigError("workers must be >= 1")
        if r["data"]["synth"]["generator"] not in ("pv", "overfit"):
            raise ConfigError("data.synth.generator must be 'pv' or 'overfit'")
        if r["data"]["path"] is not None and r["data"]["schema"] is None:
            raise ConfigError("data.schema is required when data.path is set")

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def workers(self) -> int:
        return int(self.raw["workers"])

    @property
    def out(self) -> str:
        return str(self.raw["out"])

    @property
    def kinds(self) -> list[ModelKind]:
        return [ModelKind.parse(k) for k in self.raw["models"]]

    @property
    def regimes(self) -> list[RegimeId]:
        return [RegimeId.parse(x) for x in self.raw["regimes"]]

    @property
    def ratios(self) -> list[float]:
        return [float(x) for x in self.raw["ratios"]]

    def settings(self) -> BenchSettings:
        d, reg, an = self.raw["data"], self.raw["regularization"], self.raw["analysis"]
        overrides = {"lam": float(reg["lam"]), "patience": int(reg["patience"]),
                     "min_delta": float(reg["min_delta"]), "dropout_rate": float(reg["dropout"])}
        hidden = {ModelKind.parse(k).value: [int(h) for h in v] for k, v in (self.raw["model"]["hidden"] or {}).items()}
        return BenchSettings(
            lookback=int(d["lookback"]), horizon=int(d["horizon"]), shuffle=bool(d["shuffle"]),
            train=TrainConfig(**self.raw["train"]), regime_overrides=overrides, hidden=hidden,
            beta=float(self.raw["model"]["beta"]),
            criterion=OverfitCriterion(an["criterion"], float(an["tau"]), int(an["k"])),
        )

    def fingerprint(self) -> str:
        body = {k: v for k, v in self.raw.items() if k not in _UNFINGERPRINTED}
        text = json.dumps(body, sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def load_frame(self):
        d = self.raw["data"]
        if d["path"] is None:
            syn = d["synth"]
            if syn["generator"] == "overfit":
                return overfit_frame(self.seed, int(syn["n"]))
            return synthesize(self.seed, int(syn["n"]), int(syn["locations"]))
        return load_csv(d["path"], load_schema(d["schema"]))
