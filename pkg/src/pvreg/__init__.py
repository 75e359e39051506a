"""From-scratch numpy forecasting models and a regularization benchmark for PV power."""

__version__ = "0.1.0"

from .core import ParamSet, SeededRng, finite_diff_grad, glorot_init, matmul, reduce_sum, relative_error
from .data import load_csv, make_windows, plan_splits, prepare, synthesize
from .metrics import MetricSet, all_metrics, metric_diff
from .models import ModelKind, ModelSpec, build
from .regularization import EarlyStopper, RegimeId, regime_spec
from .training import TrainConfig, train

__all__ = [
    "ParamSet", "SeededRng", "finite_diff_grad", "glorot_init", "matmul", "reduce_sum", "relative_error",
    "load_csv", "make_windows", "plan_splits", "prepare", "synthesize",
    "MetricSet", "all_metrics", "metric_diff",
    "ModelKind", "ModelSpec", "build",
    "EarlyStopper", "RegimeId", "regime_spec",
    "TrainConfig", "train",
]
