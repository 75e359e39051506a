"""Evaluation, overfitting detection, regime ranking and the benchmark grid."""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import SeededRng
from .data import SeriesFrame, prepare
from .metrics import ERROR_METRICS, METRIC_NAMES, DiffSet, MetricSet, all_metrics, metric_diff
from .models import ModelKind, ModelSpec, build
from .regularization import RegimeId, regime_spec
from .training import TrainConfig, TrainingHistory, train, weight_sparsity

CANDIDATE_REGIMES = (RegimeId.R1, RegimeId.R2, RegimeId.R3, RegimeId.R4)


@dataclass(frozen=True)
class OverfitCriterion:
    mode: str = "relative-gap"
    tau: float = 0.10
    k: int = 3
    eps: float = 1e-9

    def __post_init__(self):
        if self.mode not in ("relative-gap", "divergence"):
            raise ValueError(f"unknown overfit criterion {self.mode!r}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.k < 1:
            raise ValueError("k must be >= 1")


@dataclass
class EvaluationReport:
    kind: ModelKind
    regime: RegimeId
    ratio: float
    train: MetricSet | None = None
    test: MetricSet | None = None
    diff: DiffSet | None = None
    flags: dict = field(default_factory=dict)
    wall_time: float = 0.0
    history: TrainingHistory | None = None
    seed: int = 0
    param_count: int = 0
    sparsity: float = math.nan
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def gap(self, metric: str) -> float:
        """Overfitting gap oriented so that larger means worse generalisation."""
        if metric == "r2":
            return self.train.r2 - self.test.r2
        return self.test.get(metric) - self.train.get(metric)


def evaluate(model, windows, scaler=None, *, kind=None, regime=RegimeId.B1, ratio=0.0,
             criterion: OverfitCriterion = OverfitCriterion(), history=None, delta: float = 1.0) -> EvaluationReport:
    """Score a trained model on its train and test windows in original units."""
    if len(windows.train) == 0 or len(windows.test) == 0:
        raise ValueError("train and test windows must be non-empty")
    inv = scaler.inverse_target if scaler is not None else (lambda v: np.asarray(v, dtype=np.float64))
    tr = all_metrics(inv(windows.train.targets), inv(model.predict(windows.train.inputs)), delta)
    te = all_metrics(inv(windows.test.targets), inv(model.predict(windows.test.inputs)), delta)
    if kind is None:
        kind = model.spec.kind
    report = EvaluationReport(
        kind=ModelKind.parse(kind), regime=RegimeId.parse(regime), ratio=float(ratio), train=tr, test=te,
        diff=metric_diff(te, tr), history=history,
        wall_time=history.total_wall_time if history is not None else 0.0,
    )
    report.flags = detect_overfit(report, criterion)
    return report


def _divergence(train_s, val_s, k, higher_is_better=False) -> bool | None:
    if np.any(np.isnan(train_s)) or np.any(np.isnan(val_s)):
        return None
    if higher_is_better:
        train_s, val_s = -train_s, -val_s
    run = 0
    for t in range(1, len(val_s)):
        if val_s[t] > val_s[t - 1] and train_s[t] < train_s[t - 1]:
            run += 1
            if run >= k:
                return True
        else:
            run = 0
    return False


def detect_overfit(report: EvaluationReport, criterion: OverfitCriterion = OverfitCriterion()) -> dict:
    """Per-metric overfitting flags; ``None`` where the metric is undefined."""
    flags = {}
    if not report.ok:
        return {m: None for m in METRIC_NAMES}
    if criterion.mode == "relative-gap":
        for m in METRIC_NAMES:
            tr, te = report.train.get(m), report.test.get(m)
            if math.isnan(tr) or math.isnan(te):
                flags[m] = None
            elif m == "r2":
                flags[m] = (tr - te) > criterion.tau
            else:
                flags[m] = (te - tr) / max(criterion.eps, tr) > criterion.tau
        return flags
    hist = report.history
    for m in METRIC_NAMES:
        if hist is None or not hist.records:
            flags[m] = None
        else:
            flags[m] = _divergence(hist.series("train", m), hist.series("val", m), criterion.k,
                                   higher_is_better=(m == "r2"))
    return flags


@dataclass
class BenchmarkMatrix:
    cells: dict = field(default_factory=dict)   # (ModelKind, RegimeId, ratio) -> EvaluationReport
    base_seed: int = 0
    fingerprint: str = ""
    criterion: OverfitCriterion = field(default_factory=OverfitCriterion)

    def get(self, kind, regime, ratio) -> EvaluationReport:
        return self.cells[(ModelKind.parse(kind), RegimeId.parse(regime), float(ratio))]

    @property
    def kinds(self) -> list:
        return list(dict.fromkeys(k for k, _, _ in self.cells))

    @property
    def regimes(self) -> list:
        return list(dict.fromkeys(r for _, r, _ in self.cells))

    @property
    def ratios(self) -> list:
        return sorted(dict.fromkeys(x for _, _, x in self.cells))


class MissingCellError(KeyError):
    pass


def _ranked(matrix, kind, ratio, metric):
    sign = -1.0 if metric == "r2" else 1.0
    ranked = []
    for order, reg in enumerate(CANDIDATE_REGIMES):
        key = (ModelKind.parse(kind), reg, float(ratio))
        cell = matrix.cells.get(key)
        if cell is None or not cell.ok:
            raise MissingCellError(f"no usable cell for {key}")
        gap, test = cell.gap(metric), sign * cell.test.get(metric)
        if math.isnan(gap) or math.isnan(test):
            raise MissingCellError(f"{metric} undefined for {key}")
        ranked.append((gap, test, order, reg))
    ranked.sort()
    return ranked


def best_regime(matrix: BenchmarkMatrix, kind, ratio, metric: str) -> RegimeId:
    """Regime among R1-R4 with the smallest train/test gap on ``metric``.

    Ties go to the lower test error (higher test R^2), then to the earlier
    regime.
    """
    return _ranked(matrix, kind, ratio, metric)[0][3]


def best_regimes(matrix: BenchmarkMatrix, kind, ratio, metric: str) -> list:
    """All regimes tied with the winner on both gap and test value."""
    ranked = _ranked(matrix, kind, ratio, metric)
    head = ranked[0][:2]
    return [r for gap, test, _, r in ranked if (gap, test) == head]


def best_regime_table(matrix: BenchmarkMatrix, kind, metrics=ERROR_METRICS) -> dict:
    table = {}
    for ratio in matrix.ratios:
        row = {}
        for m in metrics:
            try:
                row[m] = best_regimes(matrix, kind, ratio, m)
            except MissingCellError:
                row[m] = None
        table[ratio] = row
    return table


# -- grid runner ------------------------------------------------------------

@dataclass(frozen=True)
class BenchSettings:
    lookback: int = 24
    horizon: int = 1
    shuffle: bool = False
    train: TrainConfig = field(default_factory=TrainConfig)
    regime_overrides: dict = field(default_factory=dict)
    hidden: dict = field(default_factory=dict)
    beta: float = 0.5
    criterion: OverfitCriterion = field(default_factory=OverfitCriterion)


def cell_seed(base_seed: int, kind, regime, ratio) -> int:
    key = f"{int(base_seed)}|{ModelKind.parse(kind).value}|{RegimeId.parse(regime).value}|{float(ratio)!r}"
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")


def regime_override(regime, overrides: dict):
    """Apply user overrides, but never switch on dropout for a regime without it."""
    base = regime_spec(regime)
    kw = dict(overrides)
    if base.dropout_rate == 0.0:
        kw.pop("dropout_rate", None)
    return regime_spec(regime, **kw)


def run_cell(frame: SeriesFrame, kind, regime, ratio, settings: BenchSettings, base_seed: int = 0,
             return_model: bool = False):
    """Train and evaluate a single (model, regime, ratio) cell.

    Failures are caught and recorded on the report instead of propagating.
    """
    kind, regime = ModelKind.parse(kind), RegimeId.parse(regime)
    seed = cell_seed(base_seed, kind, regime, ratio)
    report = EvaluationReport(kind, regime, float(ratio), seed=seed)
    model = scaler = windows = None
    try:
        windows, scaler, _ = prepare(frame, ratio, settings.lookback, settings.horizon,
                                     shuffle=settings.shuffle, seed=seed)
        reg = regime_override(regime, settings.regime_overrides)
        hidden = settings.hidden.get(kind.value)
        spec = ModelSpec(kind, settings.lookback, len(windows.feature_names),
                         hidden=tuple(hidden) if hidden else None, beta=settings.beta)
        model = build(spec, SeededRng(seed, 1))
        cfg = replace(settings.train, seed=seed)
        model, history = train(model, windows, reg, cfg)
        report = evaluate(model, windows, scaler, kind=kind, regime=regime, ratio=ratio,
                          criterion=settings.criterion, history=history, delta=cfg.huber_delta)
        report.seed = seed
        report.param_count = model.param_count
        report.sparsity = weight_sparsity(model.params)
    except Exception as e:  # noqa: BLE001 - a cell failure must not sink the grid
        report.error = f"{type(e).__name__}: {e}"
        report.flags = detect_overfit(report)
    if return_model:
        return report, model, windows, scaler
    return report


def _limit_threads():
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return None
    return threadpool_limits(1)


def _worker_init():
    # keeps BLAS reductions identical between pooled and serial runs
    global _LIMITER
    _LIMITER = _limit_threads()


def _cell_task(args):
    frame, kind, regime, ratio, settings, base_seed = args
    return run_cell(frame, kind, regime, ratio, settings, base_seed)


def run_matrix(kinds, regimes, ratios, frame: SeriesFrame, settings: BenchSettings = BenchSettings(),
               base_seed: int = 0, workers: int = 1, fingerprint: str = "", progress=None) -> BenchmarkMatrix:
    """Train every (kind, regime, ratio) cell; output is independent of ``workers``."""
    keys = [(ModelKind.parse(k), RegimeId.parse(r), float(x)) for k in kinds for r in regimes for x in ratios]
    if not keys:
        raise ValueError("empty benchmark request")
    tasks = [(frame, k, r, x, settings, base_seed) for k, r, x in keys]
    results = {}
    if workers <= 1:
        limiter = _limit_threads()
        try:
            for key, task in zip(keys, tasks):
                results[key] = _cell_task(task)
                if progress:
                    progress(results[key])
        finally:
            if limiter is not None:
                limiter.unregister()
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init) as pool:
            for key, rep in zip(keys, pool.map(_cell_task, tasks)):
                results[key] = rep
                if progress:
                    progress(rep)
    # ordered merge: insertion order follows the request, never completion order
    cells = {key: results[key] for key in keys}
    return BenchmarkMatrix(cells, base_seed, fingerprint, settings.criterion)
