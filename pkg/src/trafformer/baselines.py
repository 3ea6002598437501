"""General-purpose baselines fed the same inputs as TrafFormer, plus the
historical-average reference predictor."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np

from . import autodiff as ad
from . import features
from .data import Batch, Normalizer, Segment, TrafficSeries
from .errors import ContractError, DimensionError
from .nn import (
    ModelParams,
    ParamBuilder,
    Prediction,
    gru_layer,
    init_gru,
    init_lstm,
    linear,
    lstm_cell,
)
from .trafformer import EMBED_STD


def _check_common(cfg) -> None:
    if cfg.n_sensors < 1:
        raise ContractError("n_sensors must be positive")
    if cfg.embed_dim != 64 or cfg.horizon_steps != 12:
        raise ContractError("embed_dim=64 and horizon_steps=12 are fixed")
    features.check_mode(cfg.input_mode)


def _init_tables(b: ParamBuilder, cfg) -> None:
    if features.uses_embeddings(cfg.input_mode):
        b.normal("time_table", (288, cfg.embed_dim), EMBED_STD)
        b.normal("day_table", (7, cfg.embed_dim), EMBED_STD)


def _check_batch(cfg, batch: Batch) -> None:
    if batch.n_sensors != cfg.n_sensors:
        raise DimensionError(f"batch has {batch.n_sensors} sensors, model expects {cfg.n_sensors}")


# ---------------------------------------------------------------------------
# FNN


@dataclass(frozen=True)
class FNNConfig:
    kind: ClassVar[str] = "fnn"

    n_sensors: int
    hidden: tuple[int, ...] = (256, 64, 16)
    embed_dim: int = 64
    horizon_steps: int = 12
    input_mode: str = "default"

    def __post_init__(self):
        _check_common(self)
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if not self.hidden or min(self.hidden) < 1:
            raise ContractError("hidden sizes must be positive")


def init_fnn(config: FNNConfig, seed: int) -> ModelParams:
    b = ParamBuilder(seed)
    _init_tables(b, config)
    steps = features.n_steps(config.input_mode)
    n_in = steps * (1 + features.context_dim(config.input_mode, config.embed_dim))
    for i, width in enumerate(config.hidden):
        b.linear(f"fc{i}", n_in, width)
        n_in = width
    b.linear("head", n_in, config.horizon_steps)
    return ModelParams(FNNConfig.kind, config, b.tensors)


def fnn_forward(params: ModelParams, batch: Batch, **_) -> Prediction:
    """Per sensor, the flattened input ``[speeds of every step || context of
    every step]`` passes through ReLU layers and a linear head to 12 outputs."""
    cfg = params.config
    _check_batch(cfg, batch)
    p = params.tensors
    speeds, context = features.step_inputs(p, batch, cfg.input_mode, cfg.embed_dim)
    B, T, S = speeds.shape
    w = p["fc0.w"]
    per_sensor = ad.transpose(speeds, (2, 0, 1)) @ w[0:T]  # [S, B, width]
    shared = context.reshape(B, T * context.shape[-1]) @ w[T:] + p["fc0.b"]  # [B, width]
    h = ad.relu(per_sensor + shared)
    for i in range(1, len(cfg.hidden)):
        h = ad.relu(linear(h, p, f"fc{i}"))
    out = linear(h, p, "head")  # [S, B, 12]
    return Prediction(ad.transpose(out, (1, 2, 0)))


# ---------------------------------------------------------------------------
# stacked GRU


@dataclass(frozen=True)
class GRUConfig:
    kind: ClassVar[str] = "gru"

    n_sensors: int
    hidden: int = 128
    n_layers: int = 2
    embed_dim: int = 64
    horizon_steps: int = 12
    input_mode: str = "default"

    def __post_init__(self):
        _check_common(self)
        if self.hidden < 1 or self.n_layers < 1:
            raise ContractError("hidden and n_layers must be positive")


def _sequence(p, batch: Batch, cfg) -> ad.Tensor:
    """Per step ``[all sensor speeds || context]`` -> ``[batch, steps, S + C]``."""
    speeds, context = features.step_inputs(p, batch, cfg.input_mode, cfg.embed_dim)
    return ad.concat([speeds, context], axis=-1)


def init_gru_model(config: GRUConfig, seed: int) -> ModelParams:
    b = ParamBuilder(seed)
    _init_tables(b, config)
    n_in = config.n_sensors + features.context_dim(config.input_mode, config.embed_dim)
    for layer in range(config.n_layers):
        init_gru(b, f"gru{layer}", n_in, config.hidden)
        n_in = config.hidden
    b.linear("head", config.hidden, config.horizon_steps * config.n_sensors)
    return ModelParams(GRUConfig.kind, config, b.tensors)


def gru_forward(params: ModelParams, batch: Batch, **_) -> Prediction:
    cfg = params.config
    _check_batch(cfg, batch)
    p = params.tensors
    xs = _sequence(p, batch, cfg)
    for layer in range(cfg.n_layers):
        states = gru_layer(xs, p, f"gru{layer}", cfg.hidden)
        xs = ad.stack(states, axis=1)
    out = linear(states[-1], p, "head")
    return Prediction(out.reshape(batch.size, cfg.horizon_steps, cfg.n_sensors))


# ---------------------------------------------------------------------------
# sequence-to-sequence LSTM


@dataclass(frozen=True)
class Seq2SeqConfig:
    kind: ClassVar[str] = "seq2seq"

    n_sensors: int
    hidden: int = 64
    embed_dim: int = 64
    horizon_steps: int = 12
    input_mode: str = "default"
    teacher_forcing: bool = False

    def __post_init__(self):
        _check_common(self)
        if self.hidden < 1:
            raise ContractError("hidden must be positive")


def init_seq2seq(config: Seq2SeqConfig, seed: int) -> ModelParams:
    b = ParamBuilder(seed)
    _init_tables(b, config)
    n_in = config.n_sensors + features.context_dim(config.input_mode, config.embed_dim)
    init_lstm(b, "encoder", n_in, config.hidden)
    init_lstm(b, "decoder", config.n_sensors, config.hidden)
    b.linear("head", config.hidden, config.n_sensors)
    return ModelParams(Seq2SeqConfig.kind, config, b.tensors)


def seq2seq_lstm_forward(params: ModelParams, batch: Batch, *, train: bool = False, targets=None, **_) -> Prediction:
    """Encoder LSTM over the input steps; the decoder starts from the final
    encoder state and the latest reading and feeds back its own output.

    With ``teacher_forcing`` set and ``train=True`` the decoder is fed the
    normalized ground truth ``targets [batch, 12, sensors]`` instead.
    """
    cfg = params.config
    _check_batch(cfg, batch)
    p = params.tensors
    xs = _sequence(p, batch, cfg)
    B, H = batch.size, cfg.hidden
    h = ad.Tensor(np.zeros((B, H)))
    c = ad.Tensor(np.zeros((B, H)))
    for t in range(xs.shape[1]):
        h, c = lstm_cell(xs[:, t, :], h, c, p, "encoder", H)
    forcing = cfg.teacher_forcing and train
    if forcing and targets is None:
        raise ContractError("teacher forcing needs normalized targets")
    prev = xs[:, -1, 0:cfg.n_sensors]
    outputs = []
    for k in range(cfg.horizon_steps):
        h, c = lstm_cell(prev, h, c, p, "decoder", H)
        y = linear(h, p, "head")
        outputs.append(y)
        prev = ad.Tensor(np.asarray(targets)[:, k, :]) if forcing else y
    return Prediction(ad.stack(outputs, axis=1))


# ---------------------------------------------------------------------------
# historical average


@dataclass(frozen=True)
class HistoricalAverageConfig:
    """Mean of observed training speeds per (5-minute slot, weekday/weekend)."""

    kind: ClassVar[str] = "historical_average"

    n_sensors: int
    input_mode: str = field(default="default")

    def __post_init__(self):
        if self.n_sensors < 1:
            raise ContractError("n_sensors must be positive")


def init_historical_average(config: HistoricalAverageConfig, seed: int = 0) -> ModelParams:
    profile = ad.Tensor(np.zeros((2, 288, config.n_sensors)), name="profile")
    return ModelParams(HistoricalAverageConfig.kind, config, {"profile": profile})


def fit_historical_average(series: TrafficSeries, segment: Segment, normalizer: Normalizer) -> ModelParams:
    """Average observed (normalized) speeds in ``segment`` by day type and slot.

    Cells never observed fall back to the sensor's mean over the segment.
    """
    if series.step_minutes != 5:
        raise ContractError("historical average needs 5-minute steps")
    sl = slice(segment.start, segment.stop)
    values = normalizer.normalize(series.values[sl])
    mask = series.mask[sl]
    slots = series.time_slots()[sl]
    day_type = (series.day_indices()[sl] >= 5).astype(int)
    S = series.n_sensors
    sums = np.zeros((2, 288, S))
    counts = np.zeros((2, 288, S))
    np.add.at(sums, (day_type, slots), np.where(mask, values, 0.0))
    np.add.at(counts, (day_type, slots), mask.astype(float))
    fallback = np.where(mask, values, 0.0).sum(axis=0) / np.maximum(mask.sum(axis=0), 1)
    profile = np.where(counts > 0, sums / np.maximum(counts, 1), fallback[None, None, :])
    params = init_historical_average(HistoricalAverageConfig(n_sensors=S))
    params.tensors["profile"].data = profile
    return params


def historical_average_forward(params: ModelParams, batch: Batch, **_) -> Prediction:
    _check_batch(params.config, batch)
    profile = params["profile"].data
    day_type = (batch.d_idx_target >= 5).astype(int)
    return Prediction(ad.Tensor(profile[day_type, batch.t_idx_target]))
