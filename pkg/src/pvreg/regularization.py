"""Regularization regimes, weight penalties and the early-stopping controller."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .core import ParamSet

DEFAULT_DROPOUT = 0.10
DEFAULT_LAMBDA = 1e-4
DEFAULT_PATIENCE = 10
DEFAULT_MIN_DELTA = 1e-4


class RegimeId(str, enum.Enum):
    B1 = "B1"
    R1 = "R1"
    R2 = "R2"
    R3 = "R3"
    R4 = "R4"

    @classmethod
    def parse(cls, text) -> "RegimeId":
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).strip().upper())
        except ValueError:
            raise ValueError(f"unknown regime {text!r}") from None


class Penalty(str, enum.Enum):
    NONE = "none"
    L1 = "L1"
    L2 = "L2"


@dataclass(frozen=True)
class RegimeSpec:
    early_stopping: bool
    dropout_rate: float
    penalty: Penalty
    lam: float = DEFAULT_LAMBDA
    patience: int = DEFAULT_PATIENCE
    min_delta: float = DEFAULT_MIN_DELTA

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.min_delta < 0:
            raise ValueError("min_delta must be >= 0")

    def with_overrides(self, **kw) -> "RegimeSpec":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)


_TABLE = {
    RegimeId.B1: (False, 0.0, Penalty.NONE),
    RegimeId.R1: (True, 0.0, Penalty.NONE),
    RegimeId.R2: (True, DEFAULT_DROPOUT, Penalty.NONE),
    RegimeId.R3: (True, DEFAULT_DROPOUT, Penalty.L1),
    RegimeId.R4: (True, DEFAULT_DROPOUT, Penalty.L2),
}

DESCRIPTIONS = {
    RegimeId.B1: "none",
    RegimeId.R1: "early stopping",
    RegimeId.R2: "early stopping + dropout",
    RegimeId.R3: "early stopping + dropout + L1",
    RegimeId.R4: "early stopping + dropout + L2",
}


def regime_spec(regime, **overrides) -> RegimeSpec:
    es, rate, pen = _TABLE[RegimeId.parse(regime)]
    return RegimeSpec(es, rate, pen).with_overrides(**overrides)


def penalty(params: ParamSet, kind, lam: float, accumulate: bool = True) -> float:
    """Value of the weight penalty; gradients are added into ``params`` grads.

    Only parameters registered as penalized (weight matrices and kernels)
    contribute. L1 uses the subgradient ``lam * sign(w)`` with sign(0) = 0.
    """
    kind = Penalty(kind)
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if kind is Penalty.NONE or lam == 0.0:
        return 0.0
    total = 0.0
    for name, w, g in params.items():
        if not params.is_penalized(name):
            continue
        if kind is Penalty.L1:
            total += float(np.abs(w).sum())
            if accumulate:
                g += lam * np.sign(w)
        else:
            total += float((w * w).sum())
            if accumulate:
                g += 2.0 * lam * w
    return lam * total


class Decision(str, enum.Enum):
    CONTINUE = "continue"
    STOP = "stop"


class EarlyStopper:
    """Patience-based stopping on a monitored value that should decrease.

    An observation counts as progress only when it is strictly lower than
    ``best_value - min_delta``; ``patience`` observations in a row without
    progress give STOP. The parameters at the lowest observed value are kept
    so they can be restored afterwards.
    """

    def __init__(self, patience: int = DEFAULT_PATIENCE, min_delta: float = DEFAULT_MIN_DELTA):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        if min_delta < 0:
            raise ValueError("min_delta must be >= 0")
        self.patience = patience
        self.min_delta = min_delta
        self.best_value = math.inf
        self.best_epoch: int | None = None
        self.best_snapshot = None
        self.stall_count = 0
        self.last_epoch: int | None = None

    def observe(self, epoch: int, value: float, params: ParamSet) -> Decision:
        if not math.isfinite(value):
            raise ValueError(f"non-finite monitored value at epoch {epoch}: {value}")
        if self.last_epoch is not None and epoch <= self.last_epoch:
            raise ValueError("epochs must be observed in increasing order")
        self.last_epoch = epoch
        # patience only resets on a min_delta improvement, but the snapshot
        # always tracks the true argmin so restore_best returns it
        if value < self.best_value - self.min_delta:
            self.stall_count = 0
        else:
            self.stall_count += 1
        if value < self.best_value:
            self.best_value = value
            self.best_epoch = epoch
            self.best_snapshot = params.snapshot()
        return Decision.STOP if self.stall_count >= self.patience else Decision.CONTINUE

    def restore_best(self, model):
        if self.best_snapshot is None:
            raise RuntimeError("restore_best called before any observation")
        params = model.params if hasattr(model, "params") else model
        params.load(self.best_snapshot)
        return model
