"""Parameter storage and multilayer perceptrons built on the tensor engine."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class Param:
    tensor: Tensor
    trainable: bool = True


class ParameterStore:
    """Named parameters; iteration is always in lexicographic name order."""

    def __init__(self):
        self._params: dict[str, Param] = {}

    def add(self, name: str, value, trainable: bool = True, dtype=None) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        if not name or any(c.isspace() for c in name):
            raise ValueError(f"parameter names must be non-empty without whitespace: {name!r}")
        t = Tensor(np.array(value, dtype=dtype or T.DEFAULT_DTYPE), requires_grad=trainable, name=name)
        self._params[name] = Param(t, trainable)
        return t

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name) -> Tensor:
        return self._params[name].tensor

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> Iterator[tuple[str, Param]]:
        for name in self.names():
            yield name, self._params[name]

    def trainable_names(self) -> list[str]:
        return [n for n, p in self.items() if p.trainable]

    def is_trainable(self, name: str) -> bool:
        return self._params[name].trainable

    def set_trainable(self, name: str, flag: bool):
        p = self._params[name]
        p.trainable = flag
        p.tensor.requires_grad = flag

    def freeze(self, prefix: str = ""):
        for name in self.names():
            if name.startswith(prefix):
                self.set_trainable(name, False)

    def set_value(self, name: str, value):
        t = self._params[name].tensor
        value = np.asarray(value, dtype=t.dtype)
        if value.shape != t.shape:
            raise T.ShapeError(f"set_value({name!r}): shape {value.shape} does not match {t.shape}")
        t.data = value.copy()

    def state(self) -> dict[str, np.ndarray]:
        return {n: p.tensor.data for n, p in self.items()}

    def astype(self, dtype) -> "ParameterStore":
        """Copy of the store with every tensor cast (used for 64-bit gradient checks)."""
        out = ParameterStore()
        for n, p in self.items():
            out.add(n, p.tensor.data.astype(dtype), p.trainable, dtype=dtype)
        return out


def backward(loss: Tensor, store: ParameterStore) -> dict[str, np.ndarray]:
    """Gradient of ``loss`` for every trainable parameter in ``store``.

    Parameters the loss never touches receive zeros.
    """
    names = store.trainable_names()
    grads = T.gradients(loss, [store[n] for n in names])
    return dict(zip(names, grads))


@dataclass
class MlpConfig:
    """Fully connected network layout.

    ``widths`` lists every layer size from input to output, so
    ``[in, h1, h2, out]`` has two hidden layers. ``skips`` holds hidden-layer
    indices whose input is concatenated with the network input.
    """

    widths: list[int]
    activation: str = "relu"
    beta: float = 100.0
    output: str = "none"
    skips: tuple[int, ...] = ()
    init: str = "default"
    zero_last: bool = False
    geometric_radius: float = 0.5
    # input columns carrying raw xyz under geometric init; the rest start at zero
    geometric_xyz: int = 3

    def __post_init__(self):
        if len(self.widths) < 3:
            raise ValueError("an MLP needs at least one hidden layer")
        if any(w <= 0 for w in self.widths):
            raise ValueError(f"widths must be positive: {self.widths}")
        if self.activation not in ("relu", "softplus"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.output not in ("none", "sigmoid", "tanh"):
            raise ValueError(f"unknown output activation {self.output!r}")
        for s in self.skips:
            if not 1 <= s < len(self.widths) - 1:
                raise ValueError(f"skip index {s} outside hidden layers")


class Mlp:
    def __init__(self, cfg: MlpConfig, store: ParameterStore, prefix: str, rng: np.random.Generator,
                 dtype=None):
        self.cfg = cfg
        self.prefix = prefix
        self.n_layers = len(cfg.widths) - 1
        dtype = dtype or T.DEFAULT_DTYPE
        d_in = cfg.widths[0]
        for i in range(self.n_layers):
            fan_in = cfg.widths[i] + (d_in if i in cfg.skips else 0)
            fan_out = cfg.widths[i + 1]
            w, b = self._init_layer(i, fan_in, fan_out, rng)
            store.add(f"{prefix}.l{i}.w", w.astype(dtype), dtype=dtype)
            store.add(f"{prefix}.l{i}.b", b.astype(dtype), dtype=dtype)
        self.store = store

    def _init_layer(self, i, fan_in, fan_out, rng):
        cfg = self.cfg
        last = i == self.n_layers - 1
        if last and cfg.zero_last:
            return np.zeros((fan_in, fan_out)), np.zeros(fan_out)
        if cfg.init == "geometric":
            # SAL-style initialisation: the network starts close to |x| - r
            if last:
                w = rng.normal(math.sqrt(math.pi) / math.sqrt(fan_in), 1e-4, size=(fan_in, fan_out))
                b = np.full(fan_out, -cfg.geometric_radius)
                return w, b
            w = rng.normal(0.0, math.sqrt(2.0) / math.sqrt(fan_out), size=(fan_in, fan_out))
            d_in = cfg.widths[0]
            if i == 0:
                w[cfg.geometric_xyz:, :] = 0.0
            elif i in cfg.skips:
                w[fan_in - d_in + cfg.geometric_xyz:, :] = 0.0
            return w, np.zeros(fan_out)
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)

    def params(self):
        return [self.store[f"{self.prefix}.l{i}.{k}"] for i in range(self.n_layers) for k in "wb"]

    def __call__(self, x: Tensor, return_hidden: bool = False):
        cfg = self.cfg
        inp = x
        h = x
        for i in range(self.n_layers):
            if i in cfg.skips:
                h = T.concat([h, inp], axis=-1) * (1.0 / math.sqrt(2.0))
            h = h @ self.store[f"{self.prefix}.l{i}.w"] + self.store[f"{self.prefix}.l{i}.b"]
            if i < self.n_layers - 1:
                h = T.softplus(h, cfg.beta) if cfg.activation == "softplus" else T.relu(h)
        if cfg.output == "sigmoid":
            h = T.sigmoid(h)
        elif cfg.output == "tanh":
            h = T.tanh(h)
        return h
