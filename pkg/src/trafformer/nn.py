"""Parameter containers, initializers and recurrent cells shared by the models."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Any

import numpy as np

from . import autodiff as ad
from .data import Normalizer


@dataclass
class ModelParams:
    """All learnable arrays of one model, keyed by a stable name."""

    kind: str
    config: Any
    tensors: dict[str, ad.Tensor]

    def parameters(self) -> list[ad.Tensor]:
        return [t for t in self.tensors.values() if t.requires_grad]

    def named_parameters(self) -> list[tuple[str, ad.Tensor]]:
        return [(k, t) for k, t in self.tensors.items() if t.requires_grad]

    def __getitem__(self, name: str) -> ad.Tensor:
        return self.tensors[name]

    def copy(self) -> ModelParams:
        tensors = {
            k: ad.Tensor(t.data, requires_grad=t.requires_grad, name=k) for k, t in self.tensors.items()
        }
        return ModelParams(self.kind, copy.deepcopy(self.config), tensors)

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, t in self.tensors.items():
            t.data = np.array(state[k], dtype=np.float64)


@dataclass
class Prediction:
    """Model output ``[batch, 12, sensors]`` in normalized units."""

    y_hat: ad.Tensor

    @property
    def shape(self) -> tuple[int, ...]:
        return self.y_hat.shape

    def to_mph(self, normalizer: Normalizer) -> np.ndarray:
        return normalizer.denormalize(self.y_hat.data)


class ParamBuilder:
    """Collects named parameters drawn from one generator, in creation order."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        self.tensors: dict[str, ad.Tensor] = {}

    def _add(self, name: str, data: np.ndarray) -> ad.Tensor:
        if name in self.tensors:
            raise KeyError(f"duplicate parameter {name}")
        t = ad.Tensor(data, requires_grad=True, name=name)
        self.tensors[name] = t
        return t

    def uniform(self, name: str, shape: tuple[int, ...], fan_in: int) -> ad.Tensor:
        bound = np.sqrt(1.0 / fan_in)
        return self._add(name, self.rng.uniform(-bound, bound, size=shape))

    def normal(self, name: str, shape: tuple[int, ...], std: float) -> ad.Tensor:
        return self._add(name, self.rng.normal(0.0, std, size=shape))

    def zeros(self, name: str, shape: tuple[int, ...]) -> ad.Tensor:
        return self._add(name, np.zeros(shape))

    def ones(self, name: str, shape: tuple[int, ...]) -> ad.Tensor:
        return self._add(name, np.ones(shape))

    def linear(self, prefix: str, n_in: int, n_out: int) -> None:
        self.uniform(f"{prefix}.w", (n_in, n_out), n_in)
        self.zeros(f"{prefix}.b", (n_out,))


def linear(x: ad.Tensor, p: dict[str, ad.Tensor], prefix: str) -> ad.Tensor:
    return x @ p[f"{prefix}.w"] + p[f"{prefix}.b"]


def gru_layer(xs: ad.Tensor, p: dict[str, ad.Tensor], prefix: str, hidden: int) -> list[ad.Tensor]:
    """Run a GRU over ``xs [batch, steps, features]``; returns every hidden state.

    Gate layout in the fused weights is (reset, update, candidate)::

        r = sigmoid(x Wr + h Ur + b_r)
        z = sigmoid(x Wz + h Uz + b_z)
        n = tanh(x Wn + r * (h Un + c_n) + b_n)
        h = (1 - z) * n + z * h
    """
    batch, steps, _ = xs.shape
    H = hidden
    gx = xs @ p[f"{prefix}.wx"] + p[f"{prefix}.bx"]
    uh, bh = p[f"{prefix}.wh"], p[f"{prefix}.bh"]
    h = ad.Tensor(np.zeros((batch, H)))
    out = []
    for t in range(steps):
        gh = h @ uh + bh
        r = ad.sigmoid(gx[:, t, 0:H] + gh[:, 0:H])
        z = ad.sigmoid(gx[:, t, H:2 * H] + gh[:, H:2 * H])
        n = ad.tanh(gx[:, t, 2 * H:] + r * gh[:, 2 * H:])
        h = (1.0 - z) * n + z * h
        out.append(h)
    return out


def init_gru(b: ParamBuilder, prefix: str, n_in: int, hidden: int) -> None:
    b.uniform(f"{prefix}.wx", (n_in, 3 * hidden), n_in)
    b.uniform(f"{prefix}.wh", (hidden, 3 * hidden), hidden)
    b.zeros(f"{prefix}.bx", (3 * hidden,))
    b.zeros(f"{prefix}.bh", (3 * hidden,))


def lstm_cell(
    x: ad.Tensor, h: ad.Tensor, c: ad.Tensor, p: dict[str, ad.Tensor], prefix: str, hidden: int
) -> tuple[ad.Tensor, ad.Tensor]:
    """One LSTM step; fused gate order (input, forget, cell, output)."""
    H = hidden
    g = x @ p[f"{prefix}.wx"] + h @ p[f"{prefix}.wh"] + p[f"{prefix}.b"]
    i = ad.sigmoid(g[:, 0:H])
    f = ad.sigmoid(g[:, H:2 * H])
    cand = ad.tanh(g[:, 2 * H:3 * H])
    o = ad.sigmoid(g[:, 3 * H:])
    c = f * c + i * cand
    h = o * ad.tanh(c)
    return h, c


def init_lstm(b: ParamBuilder, prefix: str, n_in: int, hidden: int) -> None:
    b.uniform(f"{prefix}.wx", (n_in, 4 * hidden), n_in)
    b.uniform(f"{prefix}.wh", (hidden, 4 * hidden), hidden)
    b.zeros(f"{prefix}.b", (4 * hidden,))


def sinusoidal_positions(steps: int, dim: int) -> np.ndarray:
    pos = np.arange(steps)[:, None]
    freq = np.exp(-np.log(10000.0) * (np.arange(0, dim, 2) / dim))
    pe = np.zeros((steps, dim))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)[:, : dim // 2]
    return pe
