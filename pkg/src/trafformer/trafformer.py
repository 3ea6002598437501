"""TrafFormer: time/day embeddings, joint (time x sensor) attention encoder,
outer residual and a pooled prediction head."""

from __future__ import annotations

from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from . import autodiff as ad
from . import features
from .data import Batch
from .errors import ContractError, DimensionError
from .nn import ModelParams, ParamBuilder, Prediction, linear, sinusoidal_positions

EMBED_STD = 0.02


@dataclass(frozen=True)
class TrafFormerConfig:
    kind: ClassVar[str] = "trafformer"

    n_sensors: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 1
    ff_width: int = 64
    time_slots: int = 288
    day_slots: int = 7
    embed_dim: int = 64
    horizon_steps: int = 12
    dropout: float = 0.0
    input_mode: str = "default"
    positional_encoding: bool = False

    def __post_init__(self):
        if self.n_sensors < 1 or self.d_model < 1 or self.n_heads < 1 or self.n_layers < 1 or self.ff_width < 1:
            raise ContractError("n_sensors, d_model, n_heads, n_layers and ff_width must be positive")
        if self.d_model % self.n_heads:
            raise ContractError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if (self.time_slots, self.day_slots, self.embed_dim) != (288, 7, 64):
            raise ContractError("time_slots=288, day_slots=7 and embed_dim=64 are fixed")
        if self.horizon_steps != 12:
            raise ContractError("horizon_steps is fixed at 12")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError("dropout must be in [0, 1)")
        features.check_mode(self.input_mode)

    @property
    def token_dim(self) -> int:
        return 1 + features.context_dim(self.input_mode, self.embed_dim)

    @property
    def seq_steps(self) -> int:
        return features.n_steps(self.input_mode)


def init_trafformer(config: TrafFormerConfig, seed: int) -> ModelParams:
    b = ParamBuilder(seed)
    d = config.d_model
    if features.uses_embeddings(config.input_mode):
        b.normal("time_table", (config.time_slots, config.embed_dim), EMBED_STD)
        b.normal("day_table", (config.day_slots, config.embed_dim), EMBED_STD)
    b.linear("input", config.token_dim, d)
    for layer in range(config.n_layers):
        pre = f"enc{layer}"
        for name in ("q", "k", "v", "o"):
            b.linear(f"{pre}.{name}", d, d)
        b.ones(f"{pre}.ln1.gain", (d,))
        b.zeros(f"{pre}.ln1.bias", (d,))
        b.linear(f"{pre}.ff1", d, config.ff_width)
        b.linear(f"{pre}.ff2", config.ff_width, d)
        b.ones(f"{pre}.ln2.gain", (d,))
        b.zeros(f"{pre}.ln2.bias", (d,))
    b.linear("head", d, config.horizon_steps)
    return ModelParams(TrafFormerConfig.kind, config, b.tensors)


def embed_time_day(params: ModelParams, t_idx, d_idx) -> ad.Tensor:
    """``[steps, 128]`` rows of ``time_table[t] || day_table[d]``."""
    return features.embed_time_day(params["time_table"], params["day_table"], t_idx, d_idx)


def token_features(params: ModelParams, batch: Batch) -> ad.Tensor:
    """Unprojected tokens ``[batch, steps * sensors, token_dim]``.

    Token ``k * n_sensors + j`` is sensor ``j`` at step ``k``; each token is
    ``[speed || time embedding || day embedding]``.
    """
    cfg = params.config
    speeds, context = features.step_inputs(params.tensors, batch, cfg.input_mode, cfg.embed_dim)
    B, T, S = speeds.shape
    per_sensor = ad.concat([context] * S, axis=-1).reshape(B, T, S, context.shape[-1])
    tokens = ad.concat([speeds.reshape(B, T, S, 1), per_sensor], axis=-1)
    return tokens.reshape(B, T * S, cfg.token_dim)


def assemble_tokens(params: ModelParams, batch: Batch) -> ad.Tensor:
    """Projected tokens ``[batch, steps * sensors, d_model]``.

    Equal to ``token_features(...) @ W + b`` but computed without materializing
    the context once per sensor: the speed row and the context rows of ``W``
    are applied separately and summed.
    """
    cfg = params.config
    if batch.n_sensors != cfg.n_sensors:
        raise DimensionError(f"batch has {batch.n_sensors} sensors, model expects {cfg.n_sensors}")
    speeds, context = features.step_inputs(params.tensors, batch, cfg.input_mode, cfg.embed_dim)
    B, T, S = speeds.shape
    w = params["input.w"]
    speed_part = speeds.reshape(B, T, S, 1) @ w[0:1]  # [B, T, S, d]
    context_part = context @ w[1:] + params["input.b"]  # [B, T, d]
    if cfg.positional_encoding:
        context_part = context_part + ad.Tensor(sinusoidal_positions(T, cfg.d_model))
    tokens = ad.transpose(speed_part, (2, 0, 1, 3)) + context_part  # [S, B, T, d]
    return ad.transpose(tokens, (1, 2, 0, 3)).reshape(B, T * S, cfg.d_model)


def _heads(x: ad.Tensor, n_heads: int) -> ad.Tensor:
    B, L, d = x.shape
    return ad.transpose(x.reshape(B, L, n_heads, d // n_heads), (0, 2, 1, 3))


def st_attention(
    tokens: ad.Tensor,
    params: ModelParams,
    layer: int = 0,
    *,
    rng: np.random.Generator | None = None,
    train: bool = False,
    return_weights: bool = False,
):
    """One encoder block over the joint (time x sensor) token sequence.

    Multi-head scaled dot-product self-attention without a mask, then
    add & layer-norm, a ReLU feed-forward of width ``ff_width`` and a second
    add & layer-norm.
    """
    cfg = params.config
    p = params.tensors
    pre = f"enc{layer}"
    B, L, d = tokens.shape
    if L % cfg.n_sensors:
        raise DimensionError(f"sequence length {L} is not a multiple of n_sensors={cfg.n_sensors}")
    H = cfg.n_heads
    # scaling q rather than the [L x L] scores is cheaper and identical
    q = ad.scale(_heads(linear(tokens, p, f"{pre}.q"), H), 1.0 / np.sqrt(d // H))
    k = _heads(linear(tokens, p, f"{pre}.k"), H)
    v = _heads(linear(tokens, p, f"{pre}.v"), H)
    scores = q @ ad.transpose(k, (0, 1, 3, 2))
    weights = ad.softmax(scores, axis=-1)
    mixed = ad.transpose(weights @ v, (0, 2, 1, 3)).reshape(B, L, d)
    attn = linear(mixed, p, f"{pre}.o")
    rate = cfg.dropout if train else 0.0
    if rate:
        attn = ad.dropout(attn, rate, rng)
    h = ad.layer_norm(tokens + attn, p[f"{pre}.ln1.gain"], p[f"{pre}.ln1.bias"])
    ff = linear(ad.relu(linear(h, p, f"{pre}.ff1")), p, f"{pre}.ff2")
    if rate:
        ff = ad.dropout(ff, rate, rng)
    out = ad.layer_norm(h + ff, p[f"{pre}.ln2.gain"], p[f"{pre}.ln2.bias"])
    if return_weights:
        return out, weights
    return out


def trafformer_forward(
    params: ModelParams,
    batch: Batch,
    *,
    train: bool = False,
    rng: np.random.Generator | None = None,
    targets=None,
) -> Prediction:
    """Tokens -> encoder blocks -> + projected tokens -> per-sensor mean over
    steps -> shared linear head -> ``[batch, 12, sensors]``."""
    cfg = params.config
    if train and cfg.dropout and rng is None:
        raise ContractError("dropout during training needs an rng")
    tokens = assemble_tokens(params, batch)
    h = tokens
    for layer in range(cfg.n_layers):
        h = st_attention(h, params, layer, rng=rng, train=train)
    h = h + tokens
    B, S, T = batch.size, cfg.n_sensors, cfg.seq_steps
    pooled = ad.mean(h.reshape(B, T, S, cfg.d_model), axis=1)  # [B, S, d]
    out = linear(pooled, params.tensors, "head")  # [B, S, 12]
    return Prediction(ad.transpose(out, (0, 2, 1)))
