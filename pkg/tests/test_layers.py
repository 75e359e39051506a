import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import layer_grad_errors
from pvreg.core import SeededRng, ShapeError, finite_diff_grad, relative_error
from pvreg.layers import (
    Activation, Conv1d, Dense, Dropout, Lstm, MaxPool1d, StaleCacheError, activation_backward,
    activation_forward,
)

TOL = 1e-4
seeds = st.integers(0, 2**32 - 1)


# -- dense ------------------------------------------------------------------

def test_dense_examples():
    d = Dense(2, 2, weights=np.eye(2))
    assert np.array_equal(d.forward([[1.0, 2.0]])[0], [[1.0, 2.0]])
    d = Dense(2, 1, weights=[[1.0], [1.0]], bias=[0.5])
    assert np.array_equal(d.forward([[2.0, 3.0]])[0], [[5.5]])
    with pytest.raises(ShapeError):
        d.forward([[1.0, 2.0, 3.0]])


def test_dense_backward_hand_value():
    d = Dense(1, 1, weights=[[2.0]])
    _, cache = d.forward([[3.0]])
    dx = d.backward(cache, [[1.0]])
    assert d.grads["W"].tolist() == [[3.0]]
    assert dx.tolist() == [[2.0]]


def test_dense_zero_upstream():
    d = Dense(3, 2, SeededRng(0))
    _, cache = d.forward(np.ones((4, 3)))
    dx = d.backward(cache, np.zeros((4, 2)))
    assert not dx.any() and not d.grads["W"].any() and not d.grads["b"].any()


def test_cache_is_single_use():
    d = Dense(2, 2, SeededRng(0))
    _, cache = d.forward(np.ones((1, 2)))
    d.backward(cache, np.ones((1, 2)))
    with pytest.raises(StaleCacheError):
        d.backward(cache, np.ones((1, 2)))
    other = Dense(2, 2, SeededRng(1))
    _, cache = d.forward(np.ones((1, 2)))
    with pytest.raises(StaleCacheError):
        other.backward(cache, np.ones((1, 2)))


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_dense_gradcheck(seed):
    rng = np.random.default_rng(seed)
    n_in, n_out, batch = rng.integers(1, 5, size=3)
    layer = Dense(int(n_in), int(n_out), SeededRng(seed), bias=rng.normal(size=n_out))
    errs = layer_grad_errors(layer, rng.normal(size=(batch, n_in)), rng)
    assert max(errs.values()) < TOL, errs


# -- conv1d -----------------------------------------------------------------

def test_conv_examples():
    c = Conv1d(1, 1, 3, kernels=[[[0.0, 1.0, 0.0]]])
    assert c.forward([[[1.0, 2.0, 3.0, 4.0]]])[0].tolist() == [[[2.0, 3.0]]]
    z = Conv1d(2, 3, 2)
    assert not z.forward(np.ones((1, 2, 5)))[0].any()
    with pytest.raises(ShapeError):
        Conv1d(1, 1, 5).forward(np.ones((1, 1, 3)))


def test_conv_backward_hand_value():
    # y = 2*x0 + 3*x1 + 1 over one window
    c = Conv1d(1, 1, 2, kernels=[[[2.0, 3.0]]], bias=[1.0])
    y, cache = c.forward([[[5.0, 7.0]]])
    assert y.tolist() == [[[32.0]]]
    dx = c.backward(cache, [[[1.0]]])
    assert dx.tolist() == [[[2.0, 3.0]]]
    assert c.grads["K"].tolist() == [[[5.0, 7.0]]]
    assert c.grads["b"].tolist() == [1.0]


def test_conv_zero_upstream():
    c = Conv1d(2, 2, 2, rng=SeededRng(0))
    _, cache = c.forward(np.ones((2, 2, 6)))
    assert not c.backward(cache, np.zeros((2, 2, 5))).any()
    assert not c.grads["K"].any()


@given(st.integers(1, 30), st.integers(1, 6), st.integers(1, 4))
def test_conv_out_length(length, width, stride):
    c = Conv1d(1, 1, width, stride)
    if length < width:
        with pytest.raises(ShapeError):
            c.forward(np.ones((1, 1, length)))
    else:
        assert c.forward(np.ones((1, 1, length)))[0].shape[2] == (length - width) // stride + 1


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_conv_gradcheck(seed):
    rng = np.random.default_rng(seed)
    ch, filt, width, stride = (int(v) for v in rng.integers(1, 4, size=4))
    length = width + int(rng.integers(0, 5))
    layer = Conv1d(ch, filt, width, stride, rng=SeededRng(seed), bias=rng.normal(size=filt))
    errs = layer_grad_errors(layer, rng.normal(size=(2, ch, length)), rng)
    assert max(errs.values()) < TOL, errs


# -- lstm -------------------------------------------------------------------

def _sig(z):
    return 1.0 / (1.0 + math.exp(-z))


def test_lstm_zero_params_give_zero_states():
    cell = Lstm(3, 4)
    hs, _ = cell.forward(np.random.default_rng(0).normal(size=(2, 5, 3)) * 10)
    assert hs.shape == (2, 5, 4)
    assert not hs.any()


def test_lstm_scalar_single_step_oracle():
    cell = Lstm(1, 1)
    vals = {"i": (0.5, 0.1, 0.2), "f": (-0.3, 0.4, 0.1), "o": (0.7, -0.2, 0.0), "g": (1.1, 0.3, -0.4)}
    for gate, (w, u, b) in vals.items():
        cell.gate("W", gate)[...] = w
        cell.gate("U", gate)[...] = u
        cell.gate("b", gate)[...] = b
    x, h0, c0 = 0.8, 0.25, -0.5
    pre = {k: w * x + u * h0 + b for k, (w, u, b) in vals.items()}
    c1 = _sig(pre["f"]) * c0 + _sig(pre["i"]) * math.tanh(pre["g"])
    h1 = _sig(pre["o"]) * math.tanh(c1)
    hs, _ = cell.forward([[[x]]], h0=np.array([[h0]]), c0=np.array([[c0]]))
    assert abs(hs[0, 0, 0] - h1) < 1e-12


def test_lstm_errors():
    cell = Lstm(2, 3)
    with pytest.raises(ShapeError):
        cell.forward(np.ones((1, 0, 2)))
    with pytest.raises(ShapeError):
        cell.forward(np.ones((1, 2, 3)))
    with pytest.raises(ShapeError):
        cell.forward(np.ones((2, 2, 2)), h0=np.zeros((1, 3)), c0=np.zeros((1, 3)))


def test_lstm_zero_upstream():
    cell = Lstm(2, 3, SeededRng(0))
    _, cache = cell.forward(np.ones((2, 3, 2)))
    assert not cell.backward(cache, np.zeros((2, 3, 3))).any()
    assert not any(g.any() for g in cell.grads.values())


def test_lstm_param_count():
    cell = Lstm(3, 4, SeededRng(0))
    assert sum(p.size for p in cell.params.values()) == 4 * (3 * 4 + 4 * 4 + 4) == 128


def test_lstm_gradcheck_fixed_case():
    rng = np.random.default_rng(1)
    cell = Lstm(3, 4, SeededRng(1))
    cell.params["b"][...] = rng.normal(size=16) * 0.3
    errs = layer_grad_errors(cell, rng.normal(size=(2, 3, 3)), rng)
    assert max(errs.values()) < TOL, errs


def test_lstm_single_step_state_grads():
    # one step: dh0/dc0 from BPTT equal the finite difference through h0 / c0
    rng = np.random.default_rng(5)
    cell = Lstm(2, 3, SeededRng(5))
    x = rng.normal(size=(2, 1, 2))
    h0, c0 = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    R = rng.normal(size=(2, 1, 3))
    _, cache = cell.forward(x, h0=h0, c0=c0)
    _, dh0, dc0 = cell.backward(cache, R, return_state_grads=True)
    nh = finite_diff_grad(lambda v: float(np.sum(cell.forward(x, h0=v, c0=c0)[0] * R)), h0)
    nc = finite_diff_grad(lambda v: float(np.sum(cell.forward(x, h0=h0, c0=v)[0] * R)), c0)
    assert relative_error(dh0, nh) < TOL
    assert relative_error(dc0, nc) < TOL


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_lstm_gradcheck(seed):
    rng = np.random.default_rng(seed)
    n_in, hidden, steps = (int(v) for v in rng.integers(1, 4, size=3))
    cell = Lstm(n_in, hidden, SeededRng(seed))
    cell.params["b"][...] = rng.normal(size=4 * hidden) * 0.3
    errs = layer_grad_errors(cell, rng.normal(size=(2, steps, n_in)), rng)
    assert max(errs.values()) < TOL, errs


# -- dropout ----------------------------------------------------------------

def test_dropout_identities():
    x = np.random.default_rng(0).normal(size=(10, 10))
    assert np.array_equal(Dropout(0.0).forward(x, train=True, rng=SeededRng(0))[0], x)
    assert np.array_equal(Dropout(0.5).forward(x, train=False)[0], x)


def test_dropout_rejects_rate_one():
    with pytest.raises(ValueError):
        Dropout(1.0)


def test_dropout_statistics():
    x = np.ones(10**5)
    y, _ = Dropout(0.1).forward(x, train=True, rng=SeededRng(42))
    dropped = float(np.mean(y == 0.0))
    assert 0.09 <= dropped <= 0.11
    assert abs(y.mean() - 1.0) < 0.01
    assert np.allclose(y[y != 0], 1.0 / 0.9)


def test_dropout_backward_uses_mask():
    layer = Dropout(0.5)
    y, cache = layer.forward(np.ones(100), train=True, rng=SeededRng(1))
    assert np.array_equal(layer.backward(cache, np.ones(100)), y)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.integers(1, 50), elements=st.floats(-1e6, 1e6)), st.floats(0.0, 0.99))
def test_dropout_eval_is_identity(x, rate):
    assert np.array_equal(Dropout(rate).forward(x, train=False)[0], x)


# -- activations and pooling ------------------------------------------------

def test_activation_examples():
    assert activation_forward("relu", np.array([-1.0, 0.0, 2.0])).tolist() == [0.0, 0.0, 2.0]
    assert activation_forward("sigmoid", np.array([0.0]))[0] == 0.5
    assert activation_forward("linear", np.array([3.0]))[0] == 3.0
    with pytest.raises(ValueError):
        Activation("softplus")


@pytest.mark.parametrize("kind", ["tanh", "sigmoid", "linear", "relu"])
def test_activation_gradcheck(kind):
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = rng.normal(size=(3, 4))
        x[np.abs(x) < 1e-3] = 0.5  # keep relu off its kink
        errs = layer_grad_errors(Activation(kind), x, rng)
        assert errs["x"] < TOL


def test_activation_backward_helper():
    x = np.array([-1.0, 2.0])
    assert activation_backward("relu", x, np.ones(2)).tolist() == [0.0, 1.0]


def test_maxpool_examples():
    y, cache = MaxPool1d(2).forward(np.array([[1.0, 3.0, 2.0, 2.0]]))
    assert y.tolist() == [[3.0, 2.0]]
    x = np.array([[1.0, 5.0, 2.0]])
    assert np.array_equal(MaxPool1d(1).forward(x)[0], x)
    pool = MaxPool1d(2)
    _, cache = pool.forward(np.array([[2.0, 2.0]]))
    assert pool.backward(cache, np.array([[1.0]])).tolist() == [[1.0, 0.0]]
    with pytest.raises(ValueError):
        MaxPool1d(0)


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_maxpool_gradcheck(seed):
    rng = np.random.default_rng(seed)
    win = int(rng.integers(1, 4))
    x = rng.normal(size=(2, 3, win * 3 + int(rng.integers(0, win))))
    errs = layer_grad_errors(MaxPool1d(win), x, rng)
    assert errs["x"] < TOL
