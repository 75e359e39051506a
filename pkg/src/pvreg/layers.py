"""Layer kinds with hand-written forward and backward passes.

Every layer follows the same small protocol::

    y, cache = layer.forward(x, train=False, rng=None)
    dx = layer.backward(cache, dy)      # accumulates into layer.grads

Caches are single use. Handing one back a second time, or to a different
layer, raises :class:`StaleCacheError`.
"""

from __future__ import annotations

import numpy as np

from .core import SeededRng, ShapeError, as_tensor, glorot_init


class StaleCacheError(RuntimeError):
    pass


class LayerCache:
    __slots__ = ("owner", "data", "consumed")

    def __init__(self, owner, **data):
        self.owner = owner
        self.data = data
        self.consumed = False

    def take(self, layer) -> dict:
        if self.owner is not layer:
            raise StaleCacheError("cache belongs to a different layer")
        if self.consumed:
            raise StaleCacheError("cache already consumed by an earlier backward call")
        self.consumed = True
        return self.data


def sigmoid(z):
    # tanh form avoids overflow in exp for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Layer:
    """Base class: parameter-free layers only override forward/backward."""

    params: dict
    grads: dict
    penalized: tuple = ()

    def __init__(self):
        self.params = {}
        self.grads = {}

    def _add_param(self, name, value, penalized):
        value = as_tensor(value).copy()
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        if penalized:
            self.penalized = self.penalized + (name,)

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, cache, dy):
        raise NotImplementedError


class Dense(Layer):
    """y = x W + b over the last axis. Leading axes are treated as batch."""

    def __init__(self, n_in: int, n_out: int, rng: SeededRng | None = None, weights=None, bias=None):
        super().__init__()
        if n_in <= 0 or n_out <= 0:
            raise ShapeError(f"dense sizes must be positive, got {n_in}->{n_out}")
        if weights is None:
            weights = glorot_init((n_in, n_out), rng) if rng is not None else np.zeros((n_in, n_out))
        if bias is None:
            bias = np.zeros(n_out)
        weights = as_tensor(weights)
        bias = as_tensor(bias)
        if weights.shape != (n_in, n_out) or bias.shape != (n_out,):
            raise ShapeError(f"dense params {weights.shape}/{bias.shape} do not match {n_in}->{n_out}")
        self._add_param("W", weights, penalized=True)
        self._add_param("b", bias, penalized=False)
        self.n_in, self.n_out = n_in, n_out

    def forward(self, x, train=False, rng=None):
        x = as_tensor(x)
        if x.ndim < 2 or x.shape[-1] != self.n_in:
            raise ShapeError(f"dense expects (..., {self.n_in}), got {x.shape}")
        lead = x.shape[:-1]
        x2 = x.reshape(-1, self.n_in)
        y = x2 @ self.params["W"] + self.params["b"]
        return y.reshape(lead + (self.n_out,)), LayerCache(self, x2=x2, lead=lead)

    def backward(self, cache, dy):
        c = cache.take(self)
        dy2 = as_tensor(dy).reshape(-1, self.n_out)
        self.grads["W"] += c["x2"].T @ dy2
        self.grads["b"] += dy2.sum(axis=0)
        dx = dy2 @ self.params["W"].T
        return dx.reshape(c["lead"] + (self.n_in,))


class Conv1d(Layer):
    """Valid (unpadded) cross-correlation over inputs shaped (batch, channels, length)."""

    def __init__(self, channels: int, filters: int, width: int, stride: int = 1,
                 rng: SeededRng | None = None, kernels=None, bias=None):
        super().__init__()
        if min(channels, filters, width) <= 0:
            raise ShapeError("conv1d sizes must be positive")
        if stride < 1:
            raise ValueError("stride must be >= 1")
        shape = (filters, channels, width)
        if kernels is None:
            kernels = glorot_init(shape, rng) if rng is not None else np.zeros(shape)
        if bias is None:
            bias = np.zeros(filters)
        kernels = as_tensor(kernels)
        bias = as_tensor(bias)
        if kernels.shape != shape or bias.shape != (filters,):
            raise ShapeError(f"conv1d params {kernels.shape}/{bias.shape} do not match {shape}")
        self._add_param("K", kernels, penalized=True)
        self._add_param("b", bias, penalized=False)
        self.channels, self.filters, self.width, self.stride = channels, filters, width, stride

    def out_length(self, length: int) -> int:
        if length < self.width:
            raise ShapeError(f"input length {length} shorter than kernel width {self.width}")
        return (length - self.width) // self.stride + 1

    def forward(self, x, train=False, rng=None):
        x = as_tensor(x)
        if x.ndim != 3 or x.shape[1] != self.channels:
            raise ShapeError(f"conv1d expects (batch, {self.channels}, length), got {x.shape}")
        batch, _, length = x.shape
        out_len = self.out_length(length)
        idx = np.arange(out_len)[:, None] * self.stride + np.arange(self.width)[None, :]
        cols = x[:, :, idx]                                    # (B, C, O, W)
        cols = cols.transpose(0, 2, 1, 3).reshape(batch, out_len, -1)
        kmat = self.params["K"].reshape(self.filters, -1)
        y = cols @ kmat.T + self.params["b"]                   # (B, O, F)
        return y.transpose(0, 2, 1), LayerCache(self, cols=cols, idx=idx, x_shape=x.shape)

    def backward(self, cache, dy):
        c = cache.take(self)
        batch, _, length = c["x_shape"]
        out_len = c["idx"].shape[0]
        dyt = as_tensor(dy).transpose(0, 2, 1)                 # (B, O, F)
        kmat = self.params["K"].reshape(self.filters, -1)
        self.grads["K"] += (dyt.reshape(-1, self.filters).T @ c["cols"].reshape(-1, kmat.shape[1])
                            ).reshape(self.params["K"].shape)
        self.grads["b"] += dyt.sum(axis=(0, 1))
        dcols = (dyt @ kmat).reshape(batch, out_len, self.channels, self.width)
        dx = np.zeros(c["x_shape"])
        for w in range(self.width):
            # positions within one kernel tap are distinct, so plain += is safe
            dx[:, :, c["idx"][:, w]] += dcols[:, :, :, w].transpose(0, 2, 1)
        return dx


class Lstm(Layer):
    """Single LSTM layer unrolled over (batch, steps, features) input.

    Gate blocks are stored concatenated in the order input, forget, output,
    candidate: ``W`` is (in, 4H), ``U`` is (H, 4H), ``b`` is (4H,).
    Returns the full hidden sequence (batch, steps, hidden).
    """

    GATES = ("i", "f", "o", "g")

    def __init__(self, n_in: int, hidden: int, rng: SeededRng | None = None):
        super().__init__()
        if n_in <= 0 or hidden <= 0:
            raise ShapeError("lstm sizes must be positive")
        self.n_in, self.hidden = n_in, hidden
        if rng is not None:
            W = np.concatenate([glorot_init((n_in, hidden), rng) for _ in range(4)], axis=1)
            U = np.concatenate([glorot_init((hidden, hidden), rng) for _ in range(4)], axis=1)
        else:
            W = np.zeros((n_in, 4 * hidden))
            U = np.zeros((hidden, 4 * hidden))
        self._add_param("W", W, penalized=True)
        self._add_param("U", U, penalized=True)
        self._add_param("b", np.zeros(4 * hidden), penalized=False)

    def gate(self, which: str, gate: str) -> np.ndarray:
        """View of one gate block, e.g. ``gate('W', 'f')``."""
        k = self.GATES.index(gate)
        H = self.hidden
        p = self.params[which]
        return p[..., k * H:(k + 1) * H]

    def forward(self, x, train=False, rng=None, h0=None, c0=None):
        xs = as_tensor(x)
        if xs.ndim != 3 or xs.shape[2] != self.n_in:
            raise ShapeError(f"lstm expects (batch, steps, {self.n_in}), got {xs.shape}")
        batch, steps, _ = xs.shape
        if steps == 0:
            raise ShapeError("lstm needs at least one step")
        H = self.hidden
        h = np.zeros((batch, H)) if h0 is None else as_tensor(h0)
        c = np.zeros((batch, H)) if c0 is None else as_tensor(c0)
        if h.shape != (batch, H) or c.shape != (batch, H):
            raise ShapeError(f"h0/c0 must be ({batch}, {H})")
        W, U, b = self.params["W"], self.params["U"], self.params["b"]
        xw = (xs.reshape(-1, self.n_in) @ W).reshape(batch, steps, 4 * H) + b
        hs = np.empty((batch, steps, H))
        cs = np.empty((batch, steps, H))
        acts = np.empty((batch, steps, 4 * H))
        tcs = np.empty((batch, steps, H))
        h_init, c_init = h, c
        for t in range(steps):
            z = xw[:, t] + h @ U
            a = acts[:, t]
            a[:, :3 * H] = sigmoid(z[:, :3 * H])
            a[:, 3 * H:] = np.tanh(z[:, 3 * H:])
            i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            cs[:, t], tcs[:, t], hs[:, t] = c, tc, h
        cache = LayerCache(self, xs=xs, hs=hs, cs=cs, acts=acts, tcs=tcs, h0=h_init, c0=c_init)
        return hs, cache

    def backward(self, cache, dy, return_state_grads=False):
        c = cache.take(self)
        xs, hs, cs, acts, tcs = c["xs"], c["hs"], c["cs"], c["acts"], c["tcs"]
        batch, steps, H = hs.shape
        dhs = as_tensor(dy)
        U = self.params["U"]
        dz_all = np.empty((batch, steps, 4 * H))
        dh_next = np.zeros((batch, H))
        dc_next = np.zeros((batch, H))
        dU = np.zeros_like(U)
        for t in range(steps - 1, -1, -1):
            a = acts[:, t]
            i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
            c_prev = cs[:, t - 1] if t > 0 else c["c0"]
            h_prev = hs[:, t - 1] if t > 0 else c["h0"]
            tc = tcs[:, t]
            dh = dhs[:, t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = dz_all[:, t]
            dz[:, :H] = dc * g * i * (1.0 - i)
            dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
            dz[:, 3 * H:] = dc * i * (1.0 - g * g)
            dU += h_prev.T @ dz
            dh_next = dz @ U.T
            dc_next = dc * f
        dz2 = dz_all.reshape(-1, 4 * H)
        self.grads["W"] += xs.reshape(-1, self.n_in).T @ dz2
        self.grads["U"] += dU
        self.grads["b"] += dz2.sum(axis=0)
        dxs = (dz2 @ self.params["W"].T).reshape(xs.shape)
        if return_state_grads:
            return dxs, dh_next, dc_next
        return dxs


class LastStep(Layer):
    """Select the final step of a (batch, steps, features) sequence."""

    def forward(self, x, train=False, rng=None):
        x = as_tensor(x)
        return x[:, -1, :], LayerCache(self, shape=x.shape)

    def backward(self, cache, dy):
        c = cache.take(self)
        dx = np.zeros(c["shape"])
        dx[:, -1, :] = dy
        return dx


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time."""

    def __init__(self, rate: float = 0.0):
        super().__init__()
        self.rate = rate

    @property
    def rate(self) -> float:
        return self._rate

    @rate.setter
    def rate(self, value: float) -> None:
        if not 0.0 <= value < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {value}")
        self._rate = float(value)

    def forward(self, x, train=False, rng=None):
        x = as_tensor(x)
        if not train or self._rate == 0.0:
            return x, LayerCache(self, mask=None)
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        keep = 1.0 - self._rate
        mask = (rng.random(x.shape) < keep) / keep
        return x * mask, LayerCache(self, mask=mask)

    def backward(self, cache, dy):
        mask = cache.take(self)["mask"]
        return as_tensor(dy) if mask is None else dy * mask


ACTIVATIONS = ("relu", "tanh", "sigmoid", "linear")


class Activation(Layer):
    def __init__(self, kind: str):
        super().__init__()
        if kind not in ACTIVATIONS:
            raise ValueError(f"unknown activation {kind!r}")
        self.kind = kind

    def forward(self, x, train=False, rng=None):
        x = as_tensor(x)
        if self.kind == "relu":
            y = np.maximum(x, 0.0)
        elif self.kind == "tanh":
            y = np.tanh(x)
        elif self.kind == "sigmoid":
            y = sigmoid(x)
        else:
            y = x
        return y, LayerCache(self, x=x, y=y)

    def backward(self, cache, dy):
        c = cache.take(self)
        dy = as_tensor(dy)
        if self.kind == "relu":
            return dy * (c["x"] > 0)
        if self.kind == "tanh":
            return dy * (1.0 - c["y"] ** 2)
        if self.kind == "sigmoid":
            return dy * c["y"] * (1.0 - c["y"])
        return dy


def activation_forward(kind: str, x):
    layer = Activation(kind)
    return layer.forward(x)[0]


def activation_backward(kind: str, x, dy):
    layer = Activation(kind)
    _, cache = layer.forward(x)
    return layer.backward(cache, dy)


class MaxPool1d(Layer):
    """Non-overlapping max over the last axis.

    A trailing remainder shorter than ``window`` is dropped. Ties route the
    gradient to the first maximal position.
    """

    def __init__(self, window: int):
        super().__init__()
        if window < 1:
            raise ValueError("pool window must be >= 1")
        self.window = window

    def forward(self, x, train=False, rng=None):
        x = as_tensor(x)
        n = x.shape[-1] // self.window
        if n == 0:
            raise ShapeError(f"pool window {self.window} exceeds axis length {x.shape[-1]}")
        blocks = x[..., :n * self.window].reshape(x.shape[:-1] + (n, self.window))
        arg = blocks.argmax(axis=-1)
        y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
        return y, LayerCache(self, arg=arg, shape=x.shape, n=n)

    def backward(self, cache, dy):
        c = cache.take(self)
        shape, n = c["shape"], c["n"]
        dblocks = np.zeros(shape[:-1] + (n, self.window))
        np.put_along_axis(dblocks, c["arg"][..., None], as_tensor(dy)[..., None], axis=-1)
        dx = np.zeros(shape)
        dx[..., :n * self.window] = dblocks.reshape(shape[:-1] + (n * self.window,))
        return dx


class Flatten(Layer):
    def forward(self, x, train=False, rng=None):
        x = as_tensor(x)
        return x.reshape(x.shape[0], -1), LayerCache(self, shape=x.shape)

    def backward(self, cache, dy):
        return as_tensor(dy).reshape(cache.take(self)["shape"])


class SwapAxes(Layer):
    """Swap axes 1 and 2: (batch, steps, features) <-> (batch, channels, length)."""

    def forward(self, x, train=False, rng=None):
        return as_tensor(x).transpose(0, 2, 1), LayerCache(self)

    def backward(self, cache, dy):
        cache.take(self)
        return as_tensor(dy).transpose(0, 2, 1)
