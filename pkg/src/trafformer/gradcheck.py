"""Finite-difference gradient suite: every op, the encoder block and each model.

Ops are reached through ``ad.<name>`` at call time so a test can swap in a
broken implementation and watch the suite fail.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import data, models
from .trafformer import assemble_tokens, st_attention

OP_TOL = 1e-4
MODEL_TOL = 1e-3
MODEL_KINDS = ("trafformer", "fnn", "gru", "seq2seq")
# central differences in float64 balance truncation against round-off near
# eps ~ (machine epsilon)^(1/3) ~ 6e-6
EPS = 1e-5


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    group: str  # "op", "block" or "model"
    max_rel_error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


@dataclass(frozen=True)
class _Case:
    name: str
    group: str
    build: Callable[[np.random.Generator], tuple[Callable[..., ad.Tensor], list[ad.Tensor]]]
    tolerance: float
    max_coords: int | None = None


def _t(x) -> ad.Tensor:
    return ad.Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x) + 0.0


def _weighted(op, weights):
    """Scalar loss ``sum(op(...) * weights)`` so every output element matters."""
    def f(*xs):
        return ad.sum(op(*xs) * ad.Tensor(weights))
    return f


def _unary(name, op, make_x):
    def build(rng):
        x = make_x(rng)
        out_shape = op(ad.Tensor(x)).shape
        return _weighted(op, rng.normal(size=out_shape)), [_t(x)]
    return _Case(name, "op", build, OP_TOL)


def _multi(name, op, makers):
    def build(rng):
        xs = [m(rng) for m in makers]
        with ad.no_grad():
            out_shape = op(*[ad.Tensor(x) for x in xs]).shape
        return _weighted(op, rng.normal(size=out_shape)), [_t(x) for x in xs]
    return _Case(name, "op", build, OP_TOL)


def _normal(*shape):
    return lambda rng: rng.normal(size=shape)


def _dropout(x):
    # a fresh generator per call keeps the mask fixed across probes
    return ad.dropout(x, 0.3, np.random.default_rng(7))


def _embedding(table):
    return ad.embedding_lookup(table, np.array([[0, 3, 3], [1, 0, 4]]))


def op_cases() -> list[_Case]:
    return [
        _multi("add", lambda a, b: ad.add(a, b), [_normal(3, 4), _normal(4)]),
        _multi("sub", lambda a, b: ad.sub(a, b), [_normal(2, 3, 4), _normal(3, 4)]),
        _multi("mul", lambda a, b: ad.mul(a, b), [_normal(3, 4), _normal(4)]),
        _unary("scale", lambda x: ad.scale(x, -1.7), _normal(3, 4)),
        _unary("relu", lambda x: ad.relu(x), lambda r: _away_from_zero(r, (4, 5))),
        _unary("tanh", lambda x: ad.tanh(x), _normal(4, 5)),
        _unary("sigmoid", lambda x: ad.sigmoid(x), lambda r: 3 * r.normal(size=(4, 5))),
        _unary("abs", lambda x: ad.abs(x), lambda r: _away_from_zero(r, (4, 5))),
        _unary("square", lambda x: ad.square(x), _normal(4, 5)),
        _unary("sqrt", lambda x: ad.sqrt(x), lambda r: r.uniform(0.5, 2.0, size=(4, 5))),
        _unary("dropout", _dropout, _normal(4, 5)),
        _unary("sum", lambda x: ad.sum(x, axis=1), _normal(3, 4, 2)),
        _unary("mean", lambda x: ad.mean(x, axis=(0, 2), keepdims=True), _normal(3, 4, 2)),
        _multi("matmul", lambda a, b: ad.matmul(a, b), [_normal(3, 4), _normal(4, 5)]),
        _multi("matmul_batched", lambda a, b: ad.matmul(a, b), [_normal(2, 3, 4), _normal(2, 4, 5)]),
        _multi("matmul_shared", lambda a, b: ad.matmul(a, b), [_normal(2, 2, 3, 4), _normal(4, 5)]),
        _unary("softmax", lambda x: ad.softmax(x, axis=-1), _normal(3, 6)),
        _multi(
            "layer_norm",
            lambda x, g, b: ad.layer_norm(x, g, b),
            [_normal(3, 6), lambda r: 1 + 0.1 * r.normal(size=6), _normal(6)],
        ),
        _unary("embedding_lookup", _embedding, _normal(5, 3)),
        _unary("reshape", lambda x: ad.reshape(x, (6, 2)) @ ad.Tensor(np.ones((2, 2))), _normal(3, 4)),
        _unary("transpose", lambda x: ad.transpose(x, (2, 0, 1)), _normal(2, 3, 4)),
        _multi("concat", lambda a, b: ad.concat([a, b], axis=1), [_normal(2, 3), _normal(2, 4)]),
        _multi("stack", lambda a, b: ad.stack([a, b], axis=1), [_normal(2, 3), _normal(2, 3)]),
        _unary("index", lambda x: ad.index(x, (slice(1, 3), 0, ...)), _normal(4, 3, 2)),
    ]


# ---------------------------------------------------------------------------
# blocks and models at tiny size


def _tiny_batch(n_sensors: int = 2, n: int = 2) -> tuple[data.Batch, data.Normalizer]:
    series = data.generate_synthetic(n_sensors, 3, seed=3, noise_std=1.0)
    norm = data.fit_normalizer(series, data.Segment("all", 0, series.n_steps))
    samples = data.build_windows(series, norm, data.Segment("all", 0, series.n_steps))
    batch = data.Batch.from_samples(samples[:: len(samples) // n][:n])
    return batch, norm


TINY_CONFIGS = {
    "trafformer": dict(d_model=8, n_heads=2, ff_width=8),
    "fnn": dict(hidden=(8, 8, 4)),
    "gru": dict(hidden=6, n_layers=2),
    "seq2seq": dict(hidden=6),
}


def _model_case(kind: str) -> _Case:
    def build(rng):
        batch, norm = _tiny_batch()
        config = models.make_config(kind, n_sensors=2, **TINY_CONFIGS[kind])
        params = models.init_model(config, seed=int(rng.integers(1 << 30)))
        # the tables start near zero; larger rows make their gradients informative
        for name in ("time_table", "day_table"):
            if name in params.tensors:
                params.tensors[name].data = rng.normal(size=params.tensors[name].shape)
        names = [n for n, _ in params.named_parameters()]
        target = norm.normalize(batch.y)

        def f(*tensors):
            for n, t in zip(names, tensors):
                params.tensors[n] = t
            y_hat = models.forward(params, batch).y_hat
            return ad.mean(ad.square(y_hat - ad.Tensor(target)))

        return f, [params.tensors[n] for n in names]

    return _Case(f"model:{kind}", "model", build, MODEL_TOL, max_coords=12)


def _block_case() -> _Case:
    def build(rng):
        batch, _ = _tiny_batch()
        config = models.make_config("trafformer", n_sensors=2, **TINY_CONFIGS["trafformer"])
        params = models.init_model(config, seed=int(rng.integers(1 << 30)))
        with ad.no_grad():
            tokens = assemble_tokens(params, batch).data
        names = [n for n, _ in params.named_parameters() if n.startswith("enc0.")]
        weights = rng.normal(size=tokens.shape)

        def f(x, *tensors):
            for n, t in zip(names, tensors):
                params.tensors[n] = t
            return ad.sum(st_attention(x, params, 0) * ad.Tensor(weights))

        return f, [_t(tokens)] + [params.tensors[n] for n in names]

    return _Case("block:st_attention", "block", build, OP_TOL, max_coords=16)


def all_cases() -> list[_Case]:
    return op_cases() + [_block_case()] + [_model_case(k) for k in MODEL_KINDS]


def run_suite(seed: int = 0, only: str | None = None) -> list[GradCheckResult]:
    """Run every check (or those whose name contains ``only``)."""
    results = []
    for i, case in enumerate(all_cases()):
        if only is not None and only not in case.name:
            continue
        rng = np.random.default_rng([seed, i])
        started = time.perf_counter()
        f, inputs = case.build(rng)
        err = ad.grad_check(f, inputs, eps=EPS, atol=1e-5, max_coords=case.max_coords, seed=seed)
        results.append(GradCheckResult(case.name, case.group, err, case.tolerance, time.perf_counter() - started))
    return results


def format_summary(results: list[GradCheckResult]) -> str:
    width = max([len(r.name) for r in results] + [4])
    lines = [f"{'check':<{width}}  {'max rel err':>11}  {'tol':>7}  result"]
    for r in results:
        lines.append(
            f"{r.name:<{width}}  {r.max_rel_error:11.3e}  {r.tolerance:7.0e}  {'ok' if r.passed else 'FAIL'}"
        )
    failed = sum(not r.passed for r in results)
    total = sum(r.seconds for r in results)
    lines.append(f"{len(results) - failed}/{len(results)} passed in {total:.1f}s")
    return "\n".join(lines) + "\n"
