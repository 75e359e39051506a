import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pvreg.core import ParamSet, finite_diff_grad, relative_error
from pvreg.regularization import Decision, EarlyStopper, Penalty, RegimeId, penalty, regime_spec


def params_of(w, bias=None):
    ps = ParamSet()
    ps.add("w", np.asarray(w, dtype=float), np.zeros(np.shape(w)))
    if bias is not None:
        ps.add("b", np.asarray(bias, dtype=float), np.zeros(np.shape(bias)), penalized=False)
    return ps


def test_regime_table():
    expect = {
        "B1": (False, 0.0, Penalty.NONE),
        "R1": (True, 0.0, Penalty.NONE),
        "R2": (True, 0.10, Penalty.NONE),
        "R3": (True, 0.10, Penalty.L1),
        "R4": (True, 0.10, Penalty.L2),
    }
    assert [r.value for r in RegimeId] == list(expect)
    for rid, (es, rate, pen) in expect.items():
        spec = regime_spec(rid)
        assert (spec.early_stopping, spec.dropout_rate, spec.penalty) == (es, rate, pen)
        assert spec.lam == 1e-4 and spec.patience == 10 and spec.min_delta == 1e-4


def test_regime_overrides():
    assert regime_spec("r3", lam=0.01).lam == 0.01
    with pytest.raises(ValueError):
        regime_spec("R5")
    with pytest.raises(ValueError):
        regime_spec("R2", dropout_rate=1.0)


def test_penalty_examples():
    ps = params_of([1.0, -2.0])
    assert penalty(ps, "L1", 0.1) == pytest.approx(0.3, abs=1e-15)
    assert np.allclose(ps.grad("w"), [0.1, -0.1], atol=1e-15)
    ps = params_of([1.0, -2.0])
    assert penalty(ps, "L2", 0.1) == pytest.approx(0.5, abs=1e-15)
    assert np.allclose(ps.grad("w"), [0.2, -0.4], atol=1e-15)
    ps = params_of([1.0, -2.0])
    assert penalty(ps, "L2", 0.0) == 0.0 and not ps.grad("w").any()


def test_penalty_skips_biases_and_sign_zero():
    ps = params_of([0.0, 3.0], bias=[5.0])
    assert penalty(ps, "L1", 1.0) == 3.0
    assert ps.grad("w").tolist() == [0.0, 1.0]
    assert not ps.grad("b").any()


def test_penalty_negative_lambda():
    with pytest.raises(ValueError):
        penalty(params_of([1.0]), "L1", -1.0)


vecs = arrays(np.float64, st.integers(1, 20), elements=st.floats(-10, 10, allow_nan=False))


@given(vecs, st.floats(0.0, 1.0))
def test_penalty_homogeneity(w, lam):
    v1 = penalty(params_of(w), "L1", lam, accumulate=False)
    v2 = penalty(params_of(w), "L2", lam, accumulate=False)
    assert penalty(params_of(2 * w), "L1", lam, accumulate=False) == pytest.approx(2 * v1, rel=1e-12, abs=1e-300)
    assert penalty(params_of(2 * w), "L2", lam, accumulate=False) == pytest.approx(4 * v2, rel=1e-12, abs=1e-300)


@settings(max_examples=50)
@given(vecs, st.floats(1e-3, 1.0), st.sampled_from(["L1", "L2"]))
def test_penalty_gradient_matches_fd(w, lam, kind):
    w = np.where(np.abs(w) < 1e-3, 0.5, w)  # L1 is not differentiable at 0
    ps = params_of(w)
    penalty(ps, kind, lam)
    num = finite_diff_grad(lambda v: penalty(params_of(v), kind, lam, accumulate=False), w, 1e-6)
    assert relative_error(ps.grad("w"), num) < 1e-6


def run_trace(values, patience, min_delta=0.0):
    ps = params_of([0.0])
    stopper = EarlyStopper(patience, min_delta)
    decisions = []
    for epoch, v in enumerate(values, start=1):
        ps.value("w")[...] = epoch  # parameters tagged with their epoch
        decisions.append(stopper.observe(epoch, v, ps))
        if decisions[-1] is Decision.STOP:
            break
    return stopper, ps, decisions


def test_early_stop_trace():
    stopper, ps, decisions = run_trace([5, 4, 3, 3.1, 3.2], patience=2)
    assert len(decisions) == 5 and decisions[-1] is Decision.STOP
    assert stopper.best_epoch == 3 and stopper.best_value == 3
    stopper.restore_best(ps)
    assert ps.value("w").tolist() == [3.0]


def test_equal_value_is_not_improvement():
    _, _, decisions = run_trace([2, 2], patience=1)
    assert decisions == [Decision.CONTINUE, Decision.STOP]


@given(st.integers(1, 5), st.integers(2, 30))
def test_decreasing_never_stops(patience, n):
    _, _, decisions = run_trace(list(range(n, 0, -1)), patience)
    assert Decision.STOP not in decisions


@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=40), st.integers(1, 6),
       st.floats(0, 1))
def test_stopper_invariants(values, patience, min_delta):
    stopper = EarlyStopper(patience, min_delta)
    ps = params_of([0.0])
    seen = []
    for epoch, v in enumerate(values, start=1):
        ps.value("w")[...] = epoch
        seen.append(v)
        d = stopper.observe(epoch, v, ps)
        if d is Decision.CONTINUE:
            assert stopper.stall_count <= patience
        assert stopper.best_value == min(seen)
        if d is Decision.STOP:
            break
    stopper.restore_best(ps)
    assert ps.value("w")[0] == seen.index(min(seen)) + 1


def test_restore_single_and_errors():
    stopper, ps, _ = run_trace([7.0], patience=3)
    ps.value("w")[...] = 99
    stopper.restore_best(ps)
    assert ps.value("w").tolist() == [1.0]
    with pytest.raises(RuntimeError):
        EarlyStopper(2).restore_best(params_of([0.0]))
    with pytest.raises(ValueError):
        EarlyStopper(2).observe(1, float("nan"), params_of([0.0]))
    s = EarlyStopper(2)
    s.observe(2, 1.0, params_of([0.0]))
    with pytest.raises(ValueError):
        s.observe(2, 1.0, params_of([0.0]))
