"""Losses, the triangular2 cyclical schedule, optimizers and the epoch loop."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .data import Batch, Normalizer, WindowSample, batches
from .errors import ContractError, DataError, NumericError, TrainingError
from .models import forward, init_model
from .nn import ModelParams

logger = logging.getLogger(__name__)

LOSSES = ("mae", "mse")
OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 50
    patience: int = 2
    batch_size: int = 64
    base_lr: float = 1e-3
    max_lr: float = 6e-3
    momentum: float = 0.9
    loss: str = "mae"
    seed: int = 0
    optimizer: str = "sgd"
    clip_grad_norm: float | None = None
    # stop as soon as an epoch's mean training loss falls below this value
    target_train_loss: float | None = None

    def __post_init__(self):
        if not 0 < self.base_lr < self.max_lr:
            raise ContractError(f"need 0 < base_lr < max_lr, got {self.base_lr}, {self.max_lr}")
        if self.patience < 1 or self.max_epochs < 1 or self.batch_size < 1:
            raise ContractError("patience, max_epochs and batch_size must be >= 1")
        if self.loss not in LOSSES:
            raise ContractError(f"loss must be one of {LOSSES}")
        if self.optimizer not in OPTIMIZERS:
            raise ContractError(f"optimizer must be one of {OPTIMIZERS}")
        if not 0.0 <= self.momentum < 1.0:
            raise ContractError("momentum must be in [0, 1)")


@dataclass
class TrainHistory:
    lr: list[float] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stop_reason: str = ""
    wall_time: float = 0.0

    @property
    def epochs(self) -> int:
        return len(self.val_loss)

    def to_dict(self) -> dict:
        # wall time varies between identical runs, so it stays out of the document
        return {
            "iterations": {"lr": self.lr, "loss": self.loss},
            "epochs": [
                {"epoch": i + 1, "train_loss": tr, "val_loss": va}
                for i, (tr, va) in enumerate(zip(self.train_loss, self.val_loss))
            ],
            "best_epoch": self.best_epoch,
            "stop_reason": self.stop_reason,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"


# ---------------------------------------------------------------------------
# losses


def _masked(y_hat: ad.Tensor, y, y_mask) -> tuple[ad.Tensor, ad.Tensor, int]:
    y = np.asarray(y.data if isinstance(y, ad.Tensor) else y, dtype=np.float64)
    mask = np.asarray(y_mask, dtype=bool)
    if y_hat.shape != y.shape or mask.shape != y.shape:
        raise ContractError(f"shape mismatch: y_hat {y_hat.shape}, y {y.shape}, mask {mask.shape}")
    n = int(mask.sum())
    if n == 0:
        raise DataError("every target is masked")
    return y_hat - ad.Tensor(np.where(mask, y, 0.0)), ad.Tensor(mask.astype(np.float64)), n


def mae_loss(y_hat: ad.Tensor, y, y_mask) -> ad.Tensor:
    """Mean |y_hat - y| over observed entries."""
    diff, mask, n = _masked(y_hat, y, y_mask)
    return ad.scale(ad.sum(ad.abs(diff) * mask), 1.0 / n)


def mse_loss(y_hat: ad.Tensor, y, y_mask) -> ad.Tensor:
    """Mean (y_hat - y)^2 over observed entries."""
    diff, mask, n = _masked(y_hat, y, y_mask)
    return ad.scale(ad.sum(ad.square(diff) * mask), 1.0 / n)


LOSS_FNS = {"mae": mae_loss, "mse": mse_loss}


# ---------------------------------------------------------------------------
# schedule and optimizers


def triangular2_lr(iteration: int, base_lr: float, max_lr: float, step_size: int) -> float:
    """Cyclical learning rate whose triangle amplitude halves every cycle."""
    if iteration < 0 or step_size < 1:
        raise ContractError("iteration must be >= 0 and step_size >= 1")
    cycle = math.floor(1 + iteration / (2 * step_size))
    x = abs(iteration / step_size - 2 * cycle + 1)
    # ldexp halves the amplitude per cycle and underflows to 0 instead of overflowing
    return base_lr + math.ldexp((max_lr - base_lr) * max(0.0, 1.0 - x), 1 - cycle)


def _require_grads(params: Sequence[ad.Tensor]) -> None:
    for i, p in enumerate(params):
        if p.grad is None:
            raise ContractError(f"parameter {p.name or i} has no gradient")


def sgd_momentum_step(
    params: Sequence[ad.Tensor], lr: float, momentum: float, velocity: list[np.ndarray] | None = None
) -> list[np.ndarray]:
    """``v <- momentum * v + g``; ``p <- p - lr * v``; gradients are cleared.

    Returns the updated velocity buffers (zeros are used when ``velocity`` is None).
    """
    _require_grads(params)
    if velocity is None:
        velocity = [np.zeros(p.shape) for p in params]
    new_velocity = []
    for p, v in zip(params, velocity):
        v = momentum * v + p.grad
        p.data = p.data - lr * v
        p.grad = None
        new_velocity.append(v)
    return new_velocity


class Adam:
    """Adam with bias correction; the learning rate is supplied per step."""

    def __init__(self, params: Sequence[ad.Tensor], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        _require_grads(self.params)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p.data = p.data - lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p.grad = None


def clip_grad_norm(params: Sequence[ad.Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad * p.grad).sum()) for p in params if p.grad is not None))
    if total > max_norm:
        factor = max_norm / total
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return total


# ---------------------------------------------------------------------------
# evaluation helpers


def masked_mae(params: ModelParams, samples: Sequence[WindowSample], normalizer: Normalizer, batch_size: int = 256) -> float:
    """MAE in normalized units over every observed target of ``samples``."""
    total, count = 0.0, 0
    with ad.no_grad():
        for batch in batches(samples, batch_size):
            y_hat = forward(params, batch).y_hat.data
            err = np.abs(y_hat - normalizer.normalize(batch.y))
            total += float(err[batch.y_mask].sum())
            count += int(batch.y_mask.sum())
    if count == 0:
        raise DataError("no observed targets")
    return total / count


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# training loop


def train(
    model_config,
    train_samples: Sequence[WindowSample],
    val_samples: Sequence[WindowSample],
    config: TrainConfig,
    normalizer: Normalizer,
    *,
    validate: Callable[[ModelParams, int], float] | None = None,
    init_params: ModelParams | None = None,
) -> tuple[ModelParams, TrainHistory]:
    """Train with the cyclical schedule and early stopping.

    Validation MAE (normalized units) is computed after every epoch, or by
    ``validate(params, epoch)`` when given.  Training stops once the
    validation loss has failed to drop below the best value for ``patience``
    consecutive epochs, and the parameters of the best epoch are returned.
    With ``target_train_loss`` set, training also stops after the first
    epoch whose mean training loss is below it.
    """
    if not train_samples or not val_samples:
        raise DataError("training and validation sample sets must be non-empty")
    params = init_params if init_params is not None else init_model(model_config, config.seed)
    trainable = params.parameters()
    if not trainable:
        raise ContractError(f"model kind {params.kind!r} has no trainable parameters")
    loss_fn = LOSS_FNS[config.loss]
    n_batches = math.ceil(len(train_samples) / config.batch_size)
    step_size = 2 * n_batches
    history = TrainHistory()
    rng = np.random.default_rng([config.seed, 1])
    velocity = None
    adam = Adam(trainable) if config.optimizer == "adam" else None
    teacher = getattr(params.config, "teacher_forcing", False)

    best_val = math.inf
    best_state = params.state()
    stale = 0
    iteration = 0
    started = time.perf_counter()
    for epoch in range(1, config.max_epochs + 1):
        epoch_losses = []
        for batch in batches(train_samples, config.batch_size, shuffle_seed=_epoch_seed(config.seed, epoch)):
            lr = triangular2_lr(iteration, config.base_lr, config.max_lr, step_size)
            y_norm = normalizer.normalize(batch.y)
            try:
                pred = forward(params, batch, train=True, rng=rng, targets=y_norm if teacher else None)
                loss = loss_fn(pred.y_hat, y_norm, batch.y_mask)
                ad.zero_grad(trainable)
                loss.backward()
            except NumericError as exc:
                raise TrainingError(f"non-finite value ({exc})", iteration) from exc
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError("non-finite loss", iteration)
            if config.clip_grad_norm is not None:
                clip_grad_norm(trainable, config.clip_grad_norm)
            if adam is not None:
                adam.step(lr)
            else:
                velocity = sgd_momentum_step(trainable, lr, config.momentum, velocity)
            history.lr.append(lr)
            history.loss.append(value)
            epoch_losses.append(value)
            iteration += 1

        val = validate(params, epoch) if validate is not None else masked_mae(params, val_samples, normalizer)
        history.train_loss.append(float(np.mean(epoch_losses)))
        history.val_loss.append(float(val))
        logger.info(
            "epoch %d train %.5f val %.5f lr %.3g", epoch, history.train_loss[-1], val, history.lr[-1]
        )
        if val < best_val:
            best_val = val
            best_state = params.state()
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                history.stop_reason = "early_stopping"
                break
        if config.target_train_loss is not None and history.train_loss[-1] < config.target_train_loss:
            history.stop_reason = "target_reached"
            break
    else:
        history.stop_reason = "max_epochs"
    params.load_state(best_state)
    history.wall_time = time.perf_counter() - started
    return params, history


def train_config_fields() -> list[str]:
    return [f.name for f in dataclasses.fields(TrainConfig)]
