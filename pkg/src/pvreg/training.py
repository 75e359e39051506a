"""Mini-batch training with Adam, regime wiring and per-epoch history."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import NumericError, ParamSet, SeededRng
from .data import WindowSplit
from .metrics import MetricSet, all_metrics
from .regularization import Decision, EarlyStopper, Penalty, RegimeSpec, penalty

LOSSES = ("mse", "huber")
CLOCKS = ("wall", "work")
# seconds charged per processed sample under the deterministic "work" clock
WORK_SECONDS_PER_SAMPLE = 1e-6


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    training_loss: str = "mse"
    huber_delta: float = 1.0
    clock: str = "wall"

    def __post_init__(self):
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in (0, 1)")
        if not self.adam_epsilon > 0:
            raise ValueError("adam_epsilon must be positive")
        if self.training_loss not in LOSSES:
            raise ValueError(f"training_loss must be one of {LOSSES}")
        if not self.huber_delta > 0:
            raise ValueError("huber_delta must be positive")
        if self.clock not in CLOCKS:
            raise ValueError(f"clock must be one of {CLOCKS}")


@dataclass
class OptimizerState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: ParamSet, state: OptimizerState, cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place."""
    for name, _, g in params.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    state.step += 1
    t = state.step
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, w, g in params.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        w -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_epsilon)


def data_loss(pred, target, kind: str = "mse", delta: float = 1.0):
    """Loss over a batch and its gradient with respect to ``pred`` (shape (B, 1))."""
    r = pred[:, 0] - target
    n = r.size
    if kind == "mse":
        return float(np.mean(r * r)), (2.0 * r / n)[:, None]
    a = np.abs(r)
    per = np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))
    return float(np.mean(per)), (np.clip(r, -delta, delta) / n)[:, None]


def loss_and_grad(model, x, y, regime: RegimeSpec, cfg: TrainConfig, rng: SeededRng | None = None,
                  train: bool = True) -> float:
    """Total loss for one batch; parameter gradients are left in ``model.params``.

    total = data loss + weight penalty (+ beta * reconstruction MSE for the
    autoencoder).
    """
    params = model.params
    params.zero_grad()
    out = model.forward(x, train=train, rng=rng)
    loss, dpred = data_loss(out.prediction, np.asarray(y, dtype=np.float64), cfg.training_loss, cfg.huber_delta)
    drecon = None
    if out.reconstruction is not None:
        beta = model.spec.beta
        flat = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
        diff = out.reconstruction - flat
        loss += beta * float(np.mean(diff * diff))
        drecon = 2.0 * beta * diff / diff.size
    model.backward(out.cache, dpred, drecon)
    loss += penalty(params, regime.penalty, regime.lam)
    if not math.isfinite(loss):
        raise NumericError("non-finite loss")
    return loss


@dataclass
class EpochRecord:
    epoch: int
    train: MetricSet
    val: MetricSet
    penalty: float
    wall_time_seconds: float
    samples: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = self.train.as_dict()
        d["val"] = self.val.as_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EpochRecord":
        return cls(int(d["epoch"]), MetricSet(**d["train"]), MetricSet(**d["val"]), float(d["penalty"]),
                   float(d["wall_time_seconds"]), int(d["samples"]))


@dataclass
class TrainingHistory:
    records: list = field(default_factory=list)
    stopped_early: bool = False
    best_epoch: int = 0
    total_wall_time: float = 0.0

    def series(self, part: str, metric: str) -> np.ndarray:
        return np.array([getattr(getattr(r, part), metric) for r in self.records])

    def to_dict(self) -> dict:
        return {"records": [r.to_dict() for r in self.records], "stopped_early": self.stopped_early,
                "best_epoch": self.best_epoch, "total_wall_time": self.total_wall_time}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingHistory":
        return cls([EpochRecord.from_dict(r) for r in d["records"]], bool(d["stopped_early"]),
                   int(d["best_epoch"]), float(d["total_wall_time"]))


def evaluate_split(model, windows, delta: float = 1.0) -> MetricSet:
    return all_metrics(windows.targets, model.predict(windows.inputs), delta)


def train(model, windows: WindowSplit, regime: RegimeSpec, cfg: TrainConfig = TrainConfig(),
          log=None):
    """Fit ``model`` on ``windows.train``; monitor ``windows.val``.

    Each epoch shuffles the training windows with a stream derived from
    ``(cfg.seed, epoch)``, runs Adam over mini-batches (the last one may be
    short), then scores train and validation in eval mode. With early
    stopping the validation MSE is monitored and the best parameters are
    restored at the end.
    """
    tr, va = windows.train, windows.val
    if len(tr) == 0 or len(va) == 0:
        raise TrainingError("training and validation windows must be non-empty")
    model.set_dropout(regime.dropout_rate)
    base = SeededRng(cfg.seed, 0x7A1)
    state = OptimizerState()
    stopper = EarlyStopper(regime.patience, regime.min_delta) if regime.early_stopping else None
    history = TrainingHistory()
    processed = 0
    best_val = math.inf
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = base.child(1, epoch).permutation(len(tr))
        drop_rng = base.child(2, epoch)
        epoch_samples = 0
        for b, s in enumerate(range(0, len(tr), cfg.batch_size)):
            idx = order[s:s + cfg.batch_size]
            try:
                loss_and_grad(model, tr.inputs[idx], tr.targets[idx], regime, cfg, drop_rng, train=True)
                adam_step(model.params, state, cfg)
            except NumericError as e:
                raise TrainingError(f"epoch {epoch}, batch {b}: {e}") from e
            epoch_samples += len(idx)
        processed += epoch_samples
        try:
            train_m = evaluate_split(model, tr, cfg.huber_delta)
            val_m = evaluate_split(model, va, cfg.huber_delta)
        except (NumericError, ValueError) as e:
            raise TrainingError(f"epoch {epoch}, evaluation: {e}") from e
        pen = penalty(model.params, regime.penalty, regime.lam, accumulate=False)
        if cfg.clock == "wall":
            elapsed = max(time.perf_counter() - t0, 1e-9)
        else:
            elapsed = epoch_samples * WORK_SECONDS_PER_SAMPLE
        history.records.append(EpochRecord(epoch, train_m, val_m, pen, elapsed, epoch_samples))
        history.total_wall_time += elapsed
        if val_m.mse < best_val:
            best_val = val_m.mse
            history.best_epoch = epoch
        if log is not None:
            log(history.records[-1])
        if stopper is not None:
            if stopper.observe(epoch, val_m.mse, model.params) is Decision.STOP:
                history.stopped_early = True
                break
    if stopper is not None:
        stopper.restore_best(model)
        history.best_epoch = stopper.best_epoch
    return model, history


def weight_sparsity(params: ParamSet, threshold: float = 1e-3) -> float:
    """Fraction of penalized weights with magnitude below ``threshold``."""
    total = small = 0
    for name, w, _ in params.items():
        if params.is_penalized(name):
            total += w.size
            small += int(np.count_nonzero(np.abs(w) < threshold))
    return small / total if total else 0.0


__all__ = [
    "TrainConfig", "OptimizerState", "adam_step", "loss_and_grad", "data_loss", "EpochRecord",
    "TrainingHistory", "train", "TrainingError", "weight_sparsity", "Penalty",
]
