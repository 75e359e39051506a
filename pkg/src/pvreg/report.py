"""Report files for a benchmark matrix: CSV tables, SVG curves and JSON.

File names are fixed:

``overfit_table.csv``   per model and regime, the ratios flagged per metric
``best_regime.csv``     per model and ratio, the winning regime per metric
``learning_curves.csv`` per-epoch train/validation metrics of every cell
``curves/<model>_<regime>_<ratio>.svg``  train vs validation MSE chart
``time_vs_diff.csv``    training time next to every test-train difference
``matrix.json``         the full matrix, readable with :func:`load_matrix`

Every CSV opens with one ``#`` comment line carrying the config fingerprint
and the overfitting criterion; the rest is plain RFC-4180.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from .analysis import BenchmarkMatrix, EvaluationReport, OverfitCriterion, best_regime_table, detect_overfit
from .metrics import DIFF_NAMES, ERROR_METRICS, METRIC_NAMES, DiffSet, MetricSet
from .models import ModelKind
from .regularization import RegimeId
from .training import TrainingHistory

FILES = ("overfit_table.csv", "best_regime.csv", "learning_curves.csv", "time_vs_diff.csv", "matrix.json")
METRIC_LABELS = {"rmse": "RMSE", "mse": "MSE", "huber": "HUBER LOSS", "mae": "MAE", "msle": "MSLE", "r2": "R2"}


def ratio_label(ratio: float) -> str:
    return f"{ratio * 100:g}%"


def _num(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


def _denum(x):
    return math.nan if x is None else float(x)


def json_ready(obj):
    if isinstance(obj, float):
        return _num(obj)
    if isinstance(obj, dict):
        return {k: json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_ready(v) for v in obj]
    return obj


def report_to_dict(rep: EvaluationReport) -> dict:
    return {
        "model": rep.kind.value,
        "regime": rep.regime.value,
        "ratio": rep.ratio,
        "seed": rep.seed,
        "param_count": rep.param_count,
        "sparsity": rep.sparsity,
        "wall_time": rep.wall_time,
        "error": rep.error,
        "train": rep.train.as_dict() if rep.train else None,
        "test": rep.test.as_dict() if rep.test else None,
        "diff": rep.diff.as_dict() if rep.diff else None,
        "flags": {m: rep.flags.get(m) for m in METRIC_NAMES},
        "history": rep.history.to_dict() if rep.history else None,
    }


def _metricset(d):
    return None if d is None else MetricSet(**{k: _denum(v) for k, v in d.items()})


def _history(d):
    if d is None:
        return None
    recs = []
    for r in d["records"]:
        r = dict(r)
        r["train"] = {k: _denum(v) for k, v in r["train"].items()}
        r["val"] = {k: _denum(v) for k, v in r["val"].items()}
        recs.append(r)
    return TrainingHistory.from_dict({**d, "records": recs})


def report_from_dict(d: dict) -> EvaluationReport:
    return EvaluationReport(
        kind=ModelKind.parse(d["model"]), regime=RegimeId.parse(d["regime"]), ratio=float(d["ratio"]),
        train=_metricset(d["train"]), test=_metricset(d["test"]),
        diff=None if d["diff"] is None else DiffSet(**{k: _denum(v) for k, v in d["diff"].items()}),
        flags=dict(d["flags"]), wall_time=float(d["wall_time"]), history=_history(d["history"]),
        seed=int(d["seed"]), param_count=int(d["param_count"]), sparsity=_denum(d["sparsity"]),
        error=d["error"],
    )


def matrix_to_dict(matrix: BenchmarkMatrix) -> dict:
    c = matrix.criterion
    return {
        "format": "pvreg-matrix/1",
        "fingerprint": matrix.fingerprint,
        "base_seed": matrix.base_seed,
        "criterion": {"mode": c.mode, "tau": c.tau, "k": c.k, "eps": c.eps},
        "cells": [report_to_dict(rep) for rep in matrix.cells.values()],
    }


def matrix_from_dict(d: dict) -> BenchmarkMatrix:
    cells = {}
    for cd in d["cells"]:
        rep = report_from_dict(cd)
        cells[(rep.kind, rep.regime, rep.ratio)] = rep
    return BenchmarkMatrix(cells, int(d["base_seed"]), d["fingerprint"], OverfitCriterion(**d["criterion"]))


def dumps_matrix(matrix: BenchmarkMatrix) -> str:
    return json.dumps(json_ready(matrix_to_dict(matrix)), sort_keys=True, indent=1, allow_nan=False) + "\n"


def load_matrix(path) -> BenchmarkMatrix:
    with open(path, encoding="utf-8") as fh:
        return matrix_from_dict(json.load(fh))


def _header(matrix: BenchmarkMatrix, criterion: OverfitCriterion) -> str:
    extra = f"; k={criterion.k}" if criterion.mode == "divergence" else ""
    return f"# fingerprint={matrix.fingerprint}; criterion={criterion.mode}; tau={criterion.tau!r}{extra}\n"


def _csv_text(header: str, rows) -> str:
    buf = io.StringIO()
    buf.write(header)
    w = csv.writer(buf, lineterminator="\r\n")
    for row in rows:
        w.writerow(["" if v is None else v for v in row])
    return buf.getvalue()


def read_csv(path) -> list[dict]:
    """Read one of the report CSVs (skipping the ``#`` line) into dicts."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def overfit_rows(matrix: BenchmarkMatrix, criterion: OverfitCriterion):
    yield ["model", "regime"] + [METRIC_LABELS[m] for m in ERROR_METRICS]
    for kind in matrix.kinds:
        for regime in matrix.regimes:
            row = [kind.label, regime.value]
            for m in ERROR_METRICS:
                flagged = []
                for ratio in matrix.ratios:
                    rep = matrix.cells.get((kind, regime, ratio))
                    if rep is not None and detect_overfit(rep, criterion).get(m):
                        flagged.append(ratio_label(ratio))
                row.append(", ".join(flagged))
            yield row


def best_regime_rows(matrix: BenchmarkMatrix):
    yield ["model", "ratio"] + [METRIC_LABELS[m] for m in ERROR_METRICS]
    for kind in matrix.kinds:
        table = best_regime_table(matrix, kind)
        for ratio, row in table.items():
            yield [kind.label, ratio_label(ratio)] + [
                "n/a" if row[m] is None else ", ".join(r.value for r in row[m]) for m in ERROR_METRICS]


def curve_rows(matrix: BenchmarkMatrix):
    yield (["model", "regime", "ratio", "epoch"] + [f"train_{m}" for m in METRIC_NAMES]
           + [f"val_{m}" for m in METRIC_NAMES] + ["penalty", "wall_time_seconds"])
    for (kind, regime, ratio), rep in matrix.cells.items():
        if rep.history is None:
            continue
        for r in rep.history.records:
            yield ([kind.value, regime.value, ratio, r.epoch]
                   + [_num(r.train.get(m)) for m in METRIC_NAMES]
                   + [_num(r.val.get(m)) for m in METRIC_NAMES] + [r.penalty, r.wall_time_seconds])


def time_diff_rows(matrix: BenchmarkMatrix):
    yield ["model", "regime", "ratio", "wall_time_seconds", "epochs", "error"] + list(DIFF_NAMES)
    for (kind, regime, ratio), rep in matrix.cells.items():
        epochs = len(rep.history.records) if rep.history else 0
        diffs = [_num(rep.diff.as_dict()[d]) if rep.diff else None for d in DIFF_NAMES]
        yield [kind.value, regime.value, ratio, rep.wall_time, epochs, rep.error] + diffs


def svg_curve(rep: EvaluationReport, metric: str = "mse", fingerprint: str = "",
              width: int = 480, height: int = 300) -> str:
    """Line chart of the train and validation metric per epoch (SVG 1.1)."""
    hist = rep.history
    train = hist.series("train", metric) if hist else []
    val = hist.series("val", metric) if hist else []
    pts = [v for v in list(train) + list(val) if math.isfinite(v)]
    lo, hi = (min(pts), max(pts)) if pts else (0.0, 1.0)
    if hi == lo:
        hi = lo + 1.0
    left, right, top, bottom = 56, 16, 28, 36
    pw, ph = width - left - right, height - top - bottom
    n = max(len(train), 2)

    def xy(i, v):
        return left + pw * i / (n - 1), top + ph * (1.0 - (v - lo) / (hi - lo))

    def line(series, color, dash):
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in (xy(i, v) for i, v in enumerate(series) if math.isfinite(v)))
        extra = ' stroke-dasharray="6,4"' if dash else ""
        return f'<polyline fill="none" stroke="{color}" stroke-width="2"{extra} points="{coords}"/>'

    title = f"{rep.kind.label} {rep.regime.value} test {ratio_label(rep.ratio)}: {metric.upper()} per epoch"
    return "\n".join([
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f"<desc>fingerprint={fingerprint}</desc>",
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>',
        f'<text x="{left}" y="18" font-family="sans-serif" font-size="12">{title}</text>',
        f'<text x="4" y="{top + 10}" font-family="sans-serif" font-size="10">{hi:.4g}</text>',
        f'<text x="4" y="{top + ph}" font-family="sans-serif" font-size="10">{lo:.4g}</text>',
        f'<text x="{left}" y="{height - 8}" font-family="sans-serif" font-size="10">epoch 1</text>',
        f'<text x="{left + pw - 50}" y="{height - 8}" font-family="sans-serif" font-size="10">epoch {len(train)}</text>',
        line(train, "#d4a017", False),
        line(val, "#1f5fbf", True),
        f'<text x="{left + pw - 130}" y="{top + 14}" font-family="sans-serif" font-size="10" fill="#d4a017">train</text>',
        f'<text x="{left + pw - 80}" y="{top + 14}" font-family="sans-serif" font-size="10" fill="#1f5fbf">validation</text>',
        "</svg>",
        "",
    ])


def render(matrix: BenchmarkMatrix, out_dir, criterion: OverfitCriterion | None = None) -> list[Path]:
    if not matrix.cells:
        raise ValueError("nothing to render: empty matrix")
    criterion = criterion or matrix.criterion
    out = Path(out_dir)
    try:
        (out / "curves").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot write to {out}: {e}") from e
    head = _header(matrix, criterion)
    texts = {
        "overfit_table.csv": _csv_text(head, overfit_rows(matrix, criterion)),
        "best_regime.csv": _csv_text(head, best_regime_rows(matrix)),
        "learning_curves.csv": _csv_text(head, curve_rows(matrix)),
        "time_vs_diff.csv": _csv_text(head, time_diff_rows(matrix)),
        "matrix.json": dumps_matrix(matrix),
    }
    for (kind, regime, ratio), rep in matrix.cells.items():
        if rep.history is not None:
            name = f"curves/{kind.value}_{regime.value}_{ratio_label(ratio).rstrip('%')}.svg"
            texts[name] = svg_curve(rep, "mse", matrix.fingerprint)
    written = []
    for name, text in texts.items():
        p = out / name
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        written.append(p)
    return written
