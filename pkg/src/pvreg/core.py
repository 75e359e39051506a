"""Numeric primitives shared by every layer and model.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. The helpers here
add the few guarantees the rest of the package depends on: shape-checked
products, order-deterministic reductions, reproducible random streams, and a
central-difference gradient oracle.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Iterator

import numpy as np


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    """Raised when an operation would hand back NaN or Inf."""


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {what}")
    return x


def matmul(a, b) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return check_finite(a @ b, "matmul result")


def reduce_sum(t) -> float:
    """Left-to-right sum over the flattened tensor.

    ``np.sum`` uses pairwise summation whose grouping depends on the array
    length and SIMD width; ``cumsum`` is strictly sequential, so the result
    does not depend on how the caller's environment is configured.
    """
    flat = as_tensor(t).ravel()
    if flat.size == 0:
        return 0.0
    return float(np.cumsum(flat)[-1])


class SeededRng:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Backed by PCG64, whose output is specified independently of platform.
    Child streams are derived through ``SeedSequence`` spawn keys, so two
    children with different keys never share state.
    """

    def __init__(self, seed: int, stream_id: int = 0, _key: tuple[int, ...] | None = None):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        self._key = _key if _key is not None else (self.stream_id,)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self._key)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def child(self, *stream_ids: int) -> "SeededRng":
        key = self._key + tuple(int(s) & 0xFFFFFFFFFFFFFFFF for s in stream_ids)
        return SeededRng(self.seed, key[-1], _key=key)

    def uniform(self, low, high, size) -> np.ndarray:
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def random(self, size=None):
        return self.generator.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)


def glorot_init(shape, rng: SeededRng) -> np.ndarray:
    shape = tuple(int(s) for s in shape)
    if len(shape) == 0:
        raise ShapeError("glorot_init needs at least one dimension")
    if any(s <= 0 for s in shape):
        raise ShapeError(f"dimensions must be positive, got {shape}")
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    elif len(shape) == 2:
        fan_in, fan_out = shape
    else:
        # conv kernels are (filters, channels, width)
        receptive = int(np.prod(shape[2:]))
        fan_in = shape[1] * receptive
        fan_out = shape[0] * receptive
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


def finite_diff_grad(f: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = as_tensor(x).copy()
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"f is not finite near coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def relative_error(a, b) -> float:
    """Largest elementwise ``|a-b| / max(1e-8, |a|+|b|)``."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"{a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    err = np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))
    return float(err.max())


class ParamSet:
    """Ordered name -> (value, gradient) registry.

    The arrays are shared with the layers that own them; updates are always
    made in place so those references stay valid.
    """

    def __init__(self):
        self._values: OrderedDict[str, np.ndarray] = OrderedDict()
        self._grads: OrderedDict[str, np.ndarray] = OrderedDict()
        self._penalized: dict[str, bool] = {}

    def add(self, name: str, value: np.ndarray, grad: np.ndarray, penalized: bool = True) -> None:
        if name in self._values:
            raise KeyError(f"duplicate parameter {name!r}")
        if value.shape != grad.shape:
            raise ShapeError(f"{name}: value {value.shape} vs grad {grad.shape}")
        self._values[name] = value
        self._grads[name] = grad
        self._penalized[name] = penalized

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __contains__(self, name) -> bool:
        return name in self._values

    def names(self) -> list[str]:
        return list(self._values)

    def value(self, name: str) -> np.ndarray:
        return self._values[name]

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def is_penalized(self, name: str) -> bool:
        return self._penalized[name]

    def items(self):
        for name in self._values:
            yield name, self._values[name], self._grads[name]

    def zero_grad(self) -> None:
        for g in self._grads.values():
            g.fill(0.0)

    def snapshot(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.copy()) for k, v in self._values.items())

    def load(self, values) -> None:
        for name, v in values.items():
            target = self._values[name]
            if target.shape != np.shape(v):
                raise ShapeError(f"{name}: expected {target.shape}, got {np.shape(v)}")
            np.copyto(target, v)

    def grads_snapshot(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, g.copy()) for k, g in self._grads.items())

    def count(self) -> int:
        return int(sum(v.size for v in self._values.values()))
