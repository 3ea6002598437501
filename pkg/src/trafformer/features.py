"""Per-step model inputs: speeds plus time-of-day / day-of-week context.

Input modes select which steps and which context a model sees:

``default``     12 short + 12 medium steps, learned time and day embeddings
``hour_only``   the 12 short steps only
``day_only``    the 12 medium steps only
``speed_only``  24 steps, embeddings replaced by zeros
``cyclical``    24 steps, each embedding replaced by a (sin, cos) pair
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .data import Batch
from .errors import ContractError, LookupIndexError

INPUT_MODES = ("default", "hour_only", "day_only", "cyclical", "speed_only")
TIME_SLOTS = 288
DAY_SLOTS = 7


@dataclass(frozen=True)
class CyclicalFeatures:
    x_sin: np.ndarray
    x_cos: np.ndarray


def cyclical_transform(x, max_x: int) -> CyclicalFeatures:
    """Map a periodic index onto ((sin + 1) / 2, (cos + 1) / 2) of its angle."""
    x = np.asarray(x)
    if max_x not in (TIME_SLOTS, DAY_SLOTS):
        raise ContractError(f"max_x must be {TIME_SLOTS} or {DAY_SLOTS}, got {max_x}")
    if x.size and (x.min() < 0 or x.max() >= max_x):
        raise LookupIndexError(f"value out of range [0, {max_x})")
    angle = x * 2.0 * np.pi / max_x
    return CyclicalFeatures(x_sin=(np.sin(angle) + 1.0) / 2.0, x_cos=(np.cos(angle) + 1.0) / 2.0)


def check_mode(mode: str) -> str:
    if mode not in INPUT_MODES:
        raise ContractError(f"unknown input mode {mode!r}; expected one of {INPUT_MODES}")
    return mode


def uses_embeddings(mode: str) -> bool:
    return mode in ("default", "hour_only", "day_only")


def context_dim(mode: str, embed_dim: int) -> int:
    return 4 if mode == "cyclical" else 2 * embed_dim


def n_steps(mode: str) -> int:
    return 12 if mode in ("hour_only", "day_only") else 24


def _select(batch: Batch, mode: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if mode == "hour_only":
        return batch.x_short, batch.t_idx_short, batch.d_idx_short
    if mode == "day_only":
        return batch.x_medium, batch.t_idx_medium, batch.d_idx_medium
    return (
        np.concatenate([batch.x_short, batch.x_medium], axis=1),
        np.concatenate([batch.t_idx_short, batch.t_idx_medium], axis=1),
        np.concatenate([batch.d_idx_short, batch.d_idx_medium], axis=1),
    )


def embed_time_day(time_table: ad.Tensor, day_table: ad.Tensor, t_idx, d_idx) -> ad.Tensor:
    """``[time_table[t] || day_table[d]]`` for every step."""
    t_idx, d_idx = np.asarray(t_idx), np.asarray(d_idx)
    if t_idx.shape != d_idx.shape:
        raise ContractError("time and day index arrays must have equal shapes")
    return ad.concat(
        [ad.embedding_lookup(time_table, t_idx), ad.embedding_lookup(day_table, d_idx)],
        axis=-1,
    )


def step_inputs(params: dict[str, ad.Tensor], batch: Batch, mode: str, embed_dim: int):
    """Return ``(speeds, context)``.

    ``speeds`` is a constant ``[batch, steps, sensors]`` tensor of normalized
    readings, oldest step first (short window before medium window).
    ``context`` is ``[batch, steps, context_dim]`` and is shared by all sensors.
    """
    speeds, t_idx, d_idx = _select(batch, mode)
    if mode == "cyclical":
        t = cyclical_transform(t_idx, TIME_SLOTS)
        d = cyclical_transform(d_idx, DAY_SLOTS)
        context = ad.Tensor(np.stack([t.x_sin, t.x_cos, d.x_sin, d.x_cos], axis=-1))
    elif mode == "speed_only":
        context = ad.Tensor(np.zeros(t_idx.shape + (2 * embed_dim,)))
    else:
        context = embed_time_day(params["time_table"], params["day_table"], t_idx, d_idx)
    return ad.Tensor(speeds), context
