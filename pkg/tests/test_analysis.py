import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pvreg.analysis import (
    BenchmarkMatrix, BenchSettings, EvaluationReport, MissingCellError, OverfitCriterion, best_regime,
    best_regimes, cell_seed, detect_overfit, evaluate, run_cell, run_matrix,
)
from pvreg.data import WindowSet, WindowSplit, synthesize
from pvreg.metrics import ERROR_METRICS, METRIC_NAMES, MetricSet, metric_diff
from pvreg.models import ModelKind
from pvreg.regularization import RegimeId
from pvreg.report import FILES, dumps_matrix, load_matrix, read_csv, render
from pvreg.training import EpochRecord, TrainConfig, TrainingHistory


class StubModel:
    def __init__(self, train_pred, test_pred, windows):
        self.preds = {id(windows.train.inputs): train_pred, id(windows.test.inputs): test_pred}
        self.spec = type("S", (), {"kind": ModelKind.DNN})()

    def predict(self, x):
        return np.asarray(self.preds[id(x)], dtype=float)


def split(train_y, test_y):
    def ws(y):
        y = np.asarray(y, dtype=float)
        return WindowSet(np.zeros((len(y), 1, 1)), y, np.arange(len(y)), np.arange(len(y)))
    return WindowSplit(ws(train_y), ws(train_y[:2]), ws(test_y), ["x"])


def test_perfect_model():
    w = split([1.0, 2.0, 3.0, 4.0], [2.0, 5.0, 1.0])
    rep = evaluate(StubModel(w.train.targets, w.test.targets, w), w)
    assert all(rep.train.get(m) == 0 for m in ERROR_METRICS) and rep.test.r2 == 1
    assert all(v == 0 for v in rep.diff.as_dict().values())
    assert not any(rep.flags.values())


def test_stub_mse_gap():
    w = split([0.0, 0.0, 0.0, 0.0], [0.0, 0.0])
    s15 = math.sqrt(1.5)
    rep = evaluate(StubModel([1, -1, 1, -1], [s15, -s15], w), w)
    assert rep.train.mse == 1.0
    assert rep.diff.mse_diff == pytest.approx(0.5, abs=1e-15)
    assert rep.flags["mse"] is True
    better = evaluate(StubModel([2, -2, 2, -2], [1, -1], w), w)
    assert better.diff.rmse_diff < 0 and better.diff.mae_diff < 0


def test_evaluate_inverse_scales():
    class Scaler:
        @staticmethod
        def inverse_target(v):
            return np.asarray(v) * 10 + 5
    w = split([0.0, 1.0, 2.0, 3.0], [0.0, 1.0])
    rep = evaluate(StubModel([0, 1, 2, 4], [0, 1], w), w, Scaler())
    assert rep.train.mae == pytest.approx(2.5)


def test_evaluate_empty():
    w = split([1.0, 2.0], [])
    with pytest.raises(ValueError):
        evaluate(StubModel([1, 2], [], w), w)


def cell(kind, regime, ratio, train_v, test_v, history=None):
    tr = MetricSet(*[train_v.get(m, 1.0) for m in METRIC_NAMES])
    te = MetricSet(*[test_v.get(m, 1.0) for m in METRIC_NAMES])
    rep = EvaluationReport(ModelKind.parse(kind), RegimeId.parse(regime), ratio, tr, te, metric_diff(te, tr),
                           history=history)
    return rep


def test_relative_gap_examples():
    rep = cell("dnn", "B1", 0.1, {"mse": 1.0}, {"mse": 1.5})
    assert detect_overfit(rep, OverfitCriterion(tau=0.1))["mse"] is True
    same = cell("dnn", "B1", 0.1, {}, {})
    for tau in (1e-9, 0.1, 5.0):
        assert not any(detect_overfit(same, OverfitCriterion(tau=tau)).values())
    r2 = cell("dnn", "B1", 0.1, {"r2": 0.9}, {"r2": 0.7})
    assert detect_overfit(r2)["r2"] is True


def test_undefined_metric_gives_undefined_flag():
    rep = cell("dnn", "B1", 0.1, {"msle": math.nan}, {})
    assert detect_overfit(rep)["msle"] is None


def _history(train_series, val_series):
    recs = []
    for e, (t, v) in enumerate(zip(train_series, val_series), start=1):
        tr = MetricSet(*[t] * 5, 1 - t)
        va = MetricSet(*[v] * 5, 1 - v)
        recs.append(EpochRecord(e, tr, va, 0.0, 0.1, 10))
    return TrainingHistory(recs)


def test_divergence_mode():
    crit = OverfitCriterion("divergence", k=3)
    co = cell("dnn", "B1", 0.1, {}, {}, _history([5, 4, 3, 2, 1], [6, 5, 4, 3, 2]))
    assert not any(detect_overfit(co, crit).values())
    div = cell("dnn", "B1", 0.1, {}, {}, _history([5, 4, 3, 2, 1], [3, 2, 2.5, 2.8, 3.0]))
    assert all(detect_overfit(div, crit).values())
    short = cell("dnn", "B1", 0.1, {}, {}, _history([5, 4, 3], [3, 4, 5]))
    assert not any(detect_overfit(short, crit).values())


def test_criterion_validation():
    for kw in ({"mode": "vibes"}, {"tau": 0.0}, {"k": 0}):
        with pytest.raises(ValueError):
            OverfitCriterion(**kw)


@given(st.floats(0.01, 100), st.floats(0.01, 100), st.floats(1e-3, 2), st.floats(1e-3, 2))
def test_flags_monotone_in_tau(tr, te, tau_lo, extra):
    rep = cell("dnn", "B1", 0.1, {m: tr for m in METRIC_NAMES}, {m: te for m in METRIC_NAMES})
    lo = detect_overfit(rep, OverfitCriterion(tau=tau_lo))
    hi = detect_overfit(rep, OverfitCriterion(tau=tau_lo + extra))
    for m in METRIC_NAMES:
        assert not (hi[m] and not lo[m])


def matrix_from_gaps(gaps_by_ratio, tests_by_ratio=None, kind="dnn"):
    cells = {}
    for ratio, gaps in gaps_by_ratio.items():
        for reg, gap in gaps.items():
            test_v = (tests_by_ratio or {}).get(ratio, {}).get(reg, 1.0)
            rep = cell(kind, reg, ratio, {m: test_v - gap for m in METRIC_NAMES if m != "r2"},
                       {m: test_v for m in METRIC_NAMES if m != "r2"})
            cells[(rep.kind, rep.regime, ratio)] = rep
    return BenchmarkMatrix(cells)


def test_best_regime_examples():
    mat = matrix_from_gaps({0.1: {"R1": 0.5, "R2": 0.4, "R3": 0.1, "R4": 0.2}})
    assert best_regime(mat, "dnn", 0.1, "rmse") is RegimeId.R3
    tied = matrix_from_gaps({0.1: {r: 0.3 for r in ("R1", "R2", "R3", "R4")}},
                            {0.1: {"R1": 1.0, "R2": 0.9, "R3": 0.95, "R4": 1.1}})
    assert best_regime(tied, "dnn", 0.1, "mse") is RegimeId.R2
    full_tie = matrix_from_gaps({0.1: {r: 0.3 for r in ("R1", "R2", "R3", "R4")}})
    assert best_regime(full_tie, "dnn", 0.1, "mae") is RegimeId.R1
    assert best_regimes(full_tie, "dnn", 0.1, "mae") == list(RegimeId)[1:]


def test_best_regime_ignores_b1_and_needs_all_cells():
    mat = matrix_from_gaps({0.1: {"B1": -5.0, "R1": 0.5, "R2": 0.4, "R3": 0.1, "R4": 0.2}})
    assert best_regime(mat, "dnn", 0.1, "rmse") is RegimeId.R3
    partial = matrix_from_gaps({0.1: {"R1": 0.5, "R2": 0.4, "R3": 0.1}})
    with pytest.raises(MissingCellError):
        best_regime(partial, "dnn", 0.1, "rmse")


def test_table_rows_follow_ratio_pattern(tmp_path):
    mat = matrix_from_gaps({0.1: {"R1": 0.5, "R2": 0.4, "R3": 0.1, "R4": 0.2},
                            0.5: {"R1": 0.5, "R2": 0.4, "R3": 0.3, "R4": 0.05}})
    mat.fingerprint = "f"
    render(mat, tmp_path)
    rows = read_csv(tmp_path / "best_regime.csv")
    assert [(r["ratio"], r["RMSE"], r["MAE"]) for r in rows] == [("10%", "R3", "R3"), ("50%", "R4", "R4")]


@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=4, max_size=4, unique=True),
       st.sampled_from([lambda g: 3 * g + 1, np.exp, np.arctan, lambda g: g ** 3]))
def test_best_regime_argmin_invariance(gaps, f):
    regs = ("R1", "R2", "R3", "R4")
    a = matrix_from_gaps({0.2: dict(zip(regs, gaps))})
    b = matrix_from_gaps({0.2: dict(zip(regs, (float(f(g)) for g in gaps)))})
    assert best_regime(a, "dnn", 0.2, "mse") == best_regime(b, "dnn", 0.2, "mse")


def test_overfit_table_cell_format(tmp_path):
    cells = {}
    for ratio, gap in ((0.1, 0.5), (0.2, 0.0), (0.3, 0.5)):
        rep = cell("cnn", "B1", ratio, {}, {m: 1.0 + gap for m in METRIC_NAMES if m != "r2"})
        rep.flags = detect_overfit(rep)
        cells[(rep.kind, rep.regime, ratio)] = rep
    render(BenchmarkMatrix(cells, fingerprint="abc"), tmp_path)
    rows = read_csv(tmp_path / "overfit_table.csv")
    assert rows[0]["model"] == "CNN" and rows[0]["RMSE"] == "10%, 30%"
    head = (tmp_path / "overfit_table.csv").read_text().splitlines()[0]
    assert head.startswith("#") and "abc" in head and "tau=0.1" in head


SETTINGS = BenchSettings(lookback=4, train=TrainConfig(max_epochs=2, clock="work"),
                         hidden={"dnn": [8], "rnn-lstm": [4]})


@pytest.fixture(scope="module")
def frame():
    return synthesize(1, 400)


def test_one_cell_matrix_render(frame, tmp_path):
    s1 = BenchSettings(lookback=4, train=TrainConfig(max_epochs=1, clock="work"), hidden={"dnn": [8]})
    mat = run_matrix(["dnn"], ["B1"], [0.2], frame, s1, base_seed=3, fingerprint="fp")
    assert len(mat.cells) == 1
    render(mat, tmp_path)
    for name in FILES:
        assert (tmp_path / name).exists()
    for name in FILES[:-1]:
        assert len(read_csv(tmp_path / name)) == 1
    assert (tmp_path / "curves" / "dnn_B1_20.svg").read_text().startswith("<?xml")


def test_run_matrix_deterministic_and_worker_independent(frame):
    args = (["dnn", "rnn-lstm"], ["B1", "R2"], [0.2, 0.3], frame, SETTINGS)
    a = run_matrix(*args, base_seed=5, workers=1)
    b = run_matrix(*args, base_seed=5, workers=1)
    c = run_matrix(*args, base_seed=5, workers=8)
    assert list(a.cells) == list(c.cells)
    assert dumps_matrix(a) == dumps_matrix(b) == dumps_matrix(c)


def test_json_round_trip(frame, tmp_path):
    mat = run_matrix(["dnn"], ["B1", "R4"], [0.2], frame, SETTINGS, base_seed=1, fingerprint="x")
    render(mat, tmp_path)
    back = load_matrix(tmp_path / "matrix.json")
    assert dumps_matrix(back) == dumps_matrix(mat)
    for key, rep in mat.cells.items():
        other = back.cells[key]
        assert rep.train == other.train or all(
            (math.isnan(a) and math.isnan(b)) or a == b
            for a, b in zip(rep.train.as_dict().values(), other.train.as_dict().values()))
        assert rep.history.to_dict() == other.history.to_dict()


def test_cell_seed_stable():
    assert cell_seed(0, "dnn", "B1", 0.1) == cell_seed(0, ModelKind.DNN, RegimeId.B1, 0.1)
    assert cell_seed(0, "dnn", "B1", 0.1) != cell_seed(0, "dnn", "B1", 0.2)


def test_cell_failure_is_recorded(frame):
    bad = BenchSettings(lookback=500, train=TrainConfig(max_epochs=1))
    mat = run_matrix(["dnn"], ["B1"], [0.2, 0.3], frame, bad)
    assert all(not r.ok and "DataError" in r.error for r in mat.cells.values())
    assert run_cell(frame, "dnn", "B1", 0.2, SETTINGS).ok


def test_empty_matrix_errors(tmp_path):
    with pytest.raises(ValueError):
        render(BenchmarkMatrix(), tmp_path)
    with pytest.raises(ValueError):
        run_matrix([], ["B1"], [0.1], None)
