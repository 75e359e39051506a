"""The seven forecasting architectures, built from :mod:`pvreg.layers`.

Each model maps a window shaped (batch, lookback, features) to a one-step
forecast shaped (batch, 1). The autoencoder additionally returns a
reconstruction of the flattened window.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import NumericError, ParamSet, SeededRng, ShapeError, as_tensor
from .layers import (
    Activation,
    Conv1d,
    Dense,
    Dropout,
    Flatten,
    LastStep,
    Layer,
    Lstm,
    MaxPool1d,
    StaleCacheError,
    SwapAxes,
)


class ModelKind(str, enum.Enum):
    RNN_LSTM = "rnn-lstm"
    STACKED_LSTM = "stacked-lstm"
    CNN = "cnn"
    CNN_LSTM = "cnn-lstm"
    DNN = "dnn"
    TD_MLP = "td-mlp"
    AUTOENCODER = "ae"

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def parse(cls, text) -> "ModelKind":
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower()
        for kind in cls:
            if key in (kind.value, kind.name.lower(), kind.label.lower()):
                return kind
        raise ValueError(f"unknown model kind {text!r}")


_LABELS = {
    ModelKind.RNN_LSTM: "RNN-LSTM",
    ModelKind.STACKED_LSTM: "Stacked-LSTM",
    ModelKind.CNN: "CNN",
    ModelKind.CNN_LSTM: "CNN-LSTM",
    ModelKind.DNN: "DNN",
    ModelKind.TD_MLP: "TD-MLP",
    ModelKind.AUTOENCODER: "AE",
}

# Meaning of the hidden tuple per kind:
#   rnn-lstm (lstm,)            stacked-lstm (lstm1, lstm2)
#   cnn (filters, dense)        cnn-lstm (filters, lstm)
#   dnn (dense, dense, ...)     td-mlp (per-step dense,)
#   ae (encoder, latent)
DEFAULT_HIDDEN = {
    ModelKind.RNN_LSTM: (64,),
    ModelKind.STACKED_LSTM: (64, 64),
    ModelKind.CNN: (32, 64),
    ModelKind.CNN_LSTM: (32, 64),
    ModelKind.DNN: (128, 64, 32),
    ModelKind.TD_MLP: (32,),
    ModelKind.AUTOENCODER: (64, 16),
}

_HIDDEN_ARITY = {
    ModelKind.RNN_LSTM: 1,
    ModelKind.STACKED_LSTM: 2,
    ModelKind.CNN: 2,
    ModelKind.CNN_LSTM: 2,
    ModelKind.TD_MLP: 1,
    ModelKind.AUTOENCODER: 2,
}


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    lookback: int
    n_features: int
    hidden: tuple[int, ...] | None = None
    dropout: float = 0.0
    beta: float = 0.5
    kernel_width: int = 3
    pool: int = 2

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind.parse(self.kind))
        hidden = DEFAULT_HIDDEN[self.kind] if self.hidden is None else tuple(int(h) for h in self.hidden)
        object.__setattr__(self, "hidden", hidden)
        if self.lookback <= 0 or self.n_features <= 0:
            raise ValueError("lookback and n_features must be positive")
        if not hidden or any(h <= 0 for h in hidden):
            raise ValueError(f"hidden sizes must be a non-empty list of positive ints, got {hidden}")
        arity = _HIDDEN_ARITY.get(self.kind)
        if arity is not None and len(hidden) != arity:
            raise ValueError(f"{self.kind.value} takes {arity} hidden sizes, got {len(hidden)}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.kind in (ModelKind.CNN, ModelKind.CNN_LSTM) and self.lookback < self.kernel_width:
            raise ValueError("lookback shorter than the convolution width")
        if self.kind is ModelKind.CNN and (self.lookback - self.kernel_width + 1) // self.pool < 1:
            raise ValueError("lookback too short for conv + pooling")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["hidden"] = tuple(d["hidden"]) if d.get("hidden") is not None else None
        return cls(**d)


@dataclass
class ForwardResult:
    prediction: np.ndarray
    reconstruction: np.ndarray | None
    cache: "ModelCache"


@dataclass
class ModelCache:
    trunk: list
    head: list
    decoder: list = field(default_factory=list)
    consumed: bool = False


def _run(layers, x, train, rng):
    caches = []
    for layer in layers:
        x, c = layer.forward(x, train=train, rng=rng)
        caches.append(c)
    return x, caches


def _back(layers, caches, dy):
    for layer, c in zip(reversed(layers), reversed(caches)):
        dy = layer.backward(c, dy)
    return dy


class Model:
    def __init__(self, spec: ModelSpec, trunk, head, decoder=None):
        self.spec = spec
        self.trunk: list[Layer] = list(trunk)
        self.head: list[Layer] = list(head)
        self.decoder: list[Layer] | None = list(decoder) if decoder is not None else None
        self.params = ParamSet()
        for section, layers in (("trunk", self.trunk), ("head", self.head), ("decoder", self.decoder or [])):
            for i, layer in enumerate(layers):
                for pname, value in layer.params.items():
                    name = f"{section}.{i}.{type(layer).__name__.lower()}.{pname}"
                    self.params.add(name, value, layer.grads[pname], penalized=pname in layer.penalized)

    @property
    def kind(self) -> ModelKind:
        return self.spec.kind

    @property
    def param_count(self) -> int:
        return self.params.count()

    def layers(self):
        yield from self.trunk
        yield from self.head
        yield from self.decoder or []

    def set_dropout(self, rate: float) -> None:
        for layer in self.layers():
            if isinstance(layer, Dropout):
                layer.rate = rate

    @property
    def dropout(self) -> float:
        rates = [layer.rate for layer in self.layers() if isinstance(layer, Dropout)]
        return rates[0] if rates else 0.0

    def forward(self, x, train: bool = False, rng: SeededRng | None = None) -> ForwardResult:
        x = as_tensor(x)
        expect = (self.spec.lookback, self.spec.n_features)
        if x.ndim != 3 or x.shape[1:] != expect:
            raise ShapeError(f"expected (batch, {expect[0]}, {expect[1]}), got {x.shape}")
        z, trunk_c = _run(self.trunk, x, train, rng)
        pred, head_c = _run(self.head, z, train, rng)
        recon, dec_c = None, []
        if self.decoder is not None:
            recon, dec_c = _run(self.decoder, z, train, rng)
        if not np.all(np.isfinite(pred)) or (recon is not None and not np.all(np.isfinite(recon))):
            raise NumericError("model output is not finite")
        return ForwardResult(pred, recon, ModelCache(trunk_c, head_c, dec_c))

    def predict(self, x, batch_size: int = 1024) -> np.ndarray:
        """Eval-mode predictions as a flat vector."""
        x = as_tensor(x)
        out = [self.forward(x[s:s + batch_size]).prediction[:, 0] for s in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros(0)

    def backward(self, cache: ModelCache, dpred, drecon=None) -> None:
        """Accumulate parameter gradients for d(loss)/d(prediction) [and reconstruction]."""
        if cache.consumed:
            raise StaleCacheError("model cache already consumed")
        cache.consumed = True
        dz = _back(self.head, cache.head, as_tensor(dpred))
        if self.decoder is not None and drecon is not None:
            dz = dz + _back(self.decoder, cache.decoder, as_tensor(drecon))
        _back(self.trunk, cache.trunk, dz)


def build(spec: ModelSpec, rng: SeededRng) -> Model:
    kind, L, F, h = spec.kind, spec.lookback, spec.n_features, spec.hidden
    drop = spec.dropout
    seq = iter(range(1, 1_000))

    def r():
        return rng.child(next(seq))

    decoder = None
    if kind is ModelKind.RNN_LSTM:
        trunk = [Lstm(F, h[0], r()), LastStep(), Dropout(drop)]
        top = h[0]
    elif kind is ModelKind.STACKED_LSTM:
        trunk = [Lstm(F, h[0], r()), Dropout(drop), Lstm(h[0], h[1], r()), LastStep(), Dropout(drop)]
        top = h[1]
    elif kind is ModelKind.CNN:
        conv = Conv1d(F, h[0], spec.kernel_width, rng=r())
        pooled = conv.out_length(L) // spec.pool
        trunk = [SwapAxes(), conv, Activation("relu"), MaxPool1d(spec.pool), Flatten(),
                 Dense(h[0] * pooled, h[1], r()), Activation("relu"), Dropout(drop)]
        top = h[1]
    elif kind is ModelKind.CNN_LSTM:
        trunk = [SwapAxes(), Conv1d(F, h[0], spec.kernel_width, rng=r()), Activation("relu"), SwapAxes(),
                 Lstm(h[0], h[1], r()), LastStep(), Dropout(drop)]
        top = h[1]
    elif kind is ModelKind.DNN:
        trunk = [Flatten()]
        width = L * F
        for size in h:
            trunk += [Dense(width, size, r()), Activation("relu"), Dropout(drop)]
            width = size
        top = width
    elif kind is ModelKind.TD_MLP:
        # one Dense applied to the last axis of (batch, steps, features): weights shared across steps
        trunk = [Dense(F, h[0], r()), Activation("relu"), Dropout(drop), Flatten()]
        top = L * h[0]
    elif kind is ModelKind.AUTOENCODER:
        enc, lat = h
        trunk = [Flatten(), Dense(L * F, enc, r()), Activation("relu"), Dropout(drop),
                 Dense(enc, lat, r()), Activation("relu"), Dropout(drop)]
        decoder = [Dense(lat, enc, r()), Activation("relu"), Dropout(drop), Dense(enc, L * F, r())]
        top = lat
    else:  # pragma: no cover
        raise ValueError(kind)
    head = [Dense(top, 1, r())]
    return Model(spec, trunk, head, decoder)


def param_count(model: Model) -> int:
    return model.param_count


def save_checkpoint(model: Model, path) -> Path:
    """Write parameters as an ``.npz`` archive.

    One array per parameter name, plus ``__spec__`` holding the model spec as
    a JSON string. Arrays are stored raw, so loading is bit exact.
    """
    path = Path(path)
    arrays = {name: value for name, value, _ in model.params.items()}
    arrays["__spec__"] = np.array(json.dumps(model.spec.to_dict(), sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> Model:
    with np.load(path, allow_pickle=False) as data:
        spec = ModelSpec.from_dict(json.loads(str(data["__spec__"])))
        model = build(spec, SeededRng(0))
        model.params.load({name: data[name] for name in model.params})
    return model
