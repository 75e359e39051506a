"""Point-forecast error metrics and train/test differences.

An undefined value (MSLE outside its domain, R^2 on a constant target) is
represented as ``nan`` inside :class:`MetricSet` and :class:`DiffSet`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

METRIC_NAMES = ("rmse", "mse", "huber", "mae", "msle", "r2")
# error metrics: lower is better
ERROR_METRICS = ("rmse", "mse", "huber", "mae", "msle")
DIFF_NAMES = ("rmse_diff", "mse_diff", "loss_diff", "mae_diff", "msle_diff", "r2s_diff")


class MetricDomainError(ValueError):
    pass


def _pair(y, yhat):
    y = np.asarray(y, dtype=np.float64).ravel()
    yhat = np.asarray(yhat, dtype=np.float64).ravel()
    if y.shape != yhat.shape:
        raise ValueError(f"length mismatch: {y.size} actual vs {yhat.size} predicted")
    if y.size == 0:
        raise ValueError("metrics need at least one sample")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(yhat))):
        raise ValueError("metric inputs must be finite")
    return y, yhat


def mse(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    r = y - yhat
    return float(np.mean(r * r))


def rmse(y, yhat) -> float:
    return math.sqrt(mse(y, yhat))


def mae(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def huber(y, yhat, delta: float = 1.0) -> float:
    if not delta > 0:
        raise ValueError("huber delta must be positive")
    y, yhat = _pair(y, yhat)
    a = np.abs(y - yhat)
    per = np.where(a <= delta, 0.5 * a * a, delta * (a - 0.5 * delta))
    return float(np.mean(per))


def msle(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    if np.any(y <= -1.0) or np.any(yhat <= -1.0):
        raise MetricDomainError("msle needs every value > -1")
    d = np.log1p(y) - np.log1p(yhat)
    return float(np.mean(d * d))


def r2(y, yhat) -> float:
    y, yhat = _pair(y, yhat)
    if y.size < 2:
        raise MetricDomainError("r2 needs at least two samples")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise MetricDomainError("r2 undefined for a constant target")
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss_tot


@dataclass(frozen=True)
class MetricSet:
    rmse: float
    mse: float
    huber: float
    mae: float
    msle: float
    r2: float

    def as_dict(self) -> dict:
        return asdict(self)

    def get(self, name: str) -> float:
        return getattr(self, name)

    def is_defined(self, name: str) -> bool:
        return not math.isnan(getattr(self, name))


def all_metrics(y, yhat, delta: float = 1.0) -> MetricSet:
    y, yhat = _pair(y, yhat)
    m = mse(y, yhat)
    try:
        ms = msle(y, yhat)
    except MetricDomainError:
        ms = math.nan
    try:
        rr = r2(y, yhat)
    except MetricDomainError:
        rr = math.nan
    return MetricSet(rmse=math.sqrt(m), mse=m, huber=huber(y, yhat, delta), mae=mae(y, yhat), msle=ms, r2=rr)


@dataclass(frozen=True)
class DiffSet:
    """Test value minus train value for each metric (``loss`` is Huber)."""

    rmse_diff: float
    mse_diff: float
    loss_diff: float
    mae_diff: float
    msle_diff: float
    r2s_diff: float

    def as_dict(self) -> dict:
        return asdict(self)

    def __neg__(self) -> "DiffSet":
        return DiffSet(*(-getattr(self, f.name) for f in fields(self)))


def metric_diff(test: MetricSet, train: MetricSet) -> DiffSet:
    # nan - x stays nan, which is how undefined components propagate
    return DiffSet(
        rmse_diff=test.rmse - train.rmse,
        mse_diff=test.mse - train.mse,
        loss_diff=test.huber - train.huber,
        mae_diff=test.mae - train.mae,
        msle_diff=test.msle - train.msle,
        r2s_diff=test.r2 - train.r2,
    )
