"""Dense float64 tensors with reverse-mode automatic differentiation.

Every operation validates its operands, computes the forward value with numpy,
rejects non-finite results, and (when any input requires a gradient) records a
closure that maps the output gradient to input gradients.  ``backward`` walks
the recorded graph in reverse topological order.

Broadcasting is deliberately narrow: two operands must have identical shapes,
or one of them must be a scalar, or the shape of one must be a suffix of the
other's (broadcast over leading axes, e.g. a ``(d,)`` bias added to a
``(batch, seq, d)`` activation).  Everything else raises ``DimensionError``.

Outputs of ``reshape``/``transpose`` may share memory with their input.  No
operation mutates an array in place, so the sharing is never observable.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, LookupIndexError, NumericError

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (thread-local)."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def _check_finite(data: np.ndarray, op: str) -> None:
    # a finite sum implies finite elements; only a non-finite sum needs the full scan
    with np.errstate(over="ignore", invalid="ignore"):
        total = data.sum()
    if not np.isfinite(total) and not np.isfinite(data).all():
        raise NumericError(f"{op}: produced non-finite values")


class Tensor:
    """A float64 array that can take part in a differentiation graph.

    ``grad`` is ``None`` until a backward pass reaches the tensor.  Gradients
    accumulate across backward calls; use :func:`zero_grad` to reset them.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, "tensor")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._op = "leaf"

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn, op: str) -> Tensor:
        data = np.asarray(data, dtype=np.float64)
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out._op = op
        out.requires_grad = is_grad_enabled() and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{label}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise ContractError("division by a tensor is not supported; multiply by a reciprocal")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> None:
        backward(self)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# broadcasting helpers


def _broadcast_shape(a: tuple[int, ...], b: tuple[int, ...], op: str) -> tuple[int, ...]:
    if a == b:
        return a
    if len(a) == 0:
        return b
    if len(b) == 0:
        return a
    if len(a) >= len(b) and a[len(a) - len(b):] == b:
        return a
    if len(b) > len(a) and b[len(b) - len(a):] == a:
        return b
    raise DimensionError(f"{op}: shapes {a} and {b} are not compatible (only leading-axis broadcast)")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if len(shape) == 0:
        return np.asarray(grad.sum())
    lead = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(lead)))


# ---------------------------------------------------------------------------
# elementwise binary ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add"
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub"
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor._from_op(ad * bd, (a, b), backward, "mul")


def scale(x: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return Tensor._from_op(x.data * factor, (x,), lambda g: (g * factor,), "scale")


# ---------------------------------------------------------------------------
# elementwise unary ops


def relu(x: Tensor) -> Tensor:
    on = x.data > 0
    return Tensor._from_op(np.where(on, x.data, 0.0), (x,), lambda g: (g * on,), "relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return Tensor._from_op(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor._from_op(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    s = np.sign(x.data)
    return Tensor._from_op(np.abs(x.data), (x,), lambda g: (g * s,), "abs")


def square(x: Tensor) -> Tensor:
    d = x.data
    return Tensor._from_op(d * d, (x,), lambda g: (2.0 * d * g,), "square")


def sqrt(x: Tensor) -> Tensor:
    if (x.data < 0).any():
        raise NumericError("sqrt: negative input")
    y = np.sqrt(x.data)
    with np.errstate(divide="ignore"):
        return Tensor._from_op(y, (x,), lambda g: (g * 0.5 / y,), "sqrt")


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when ``rate`` is 0."""
    if rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return Tensor._from_op(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ---------------------------------------------------------------------------
# reductions


def _norm_axes(axis, ndim: int, op: str) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise DimensionError(f"{op}: axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, x.ndim, "sum")
    shape = x.shape
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._from_op(out, (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim, "mean")
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise DimensionError("mean: reduction over an empty axis")
    return scale(sum(x, axis=axes, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    Supported forms: rank-2 @ rank-2; rank-n @ rank-n with identical leading
    axes (batched); rank-n @ rank-2 (the matrix is shared across leading axes).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: operands must have rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    if b.ndim == 2:
        shared = True
    elif a.shape[:-2] == b.shape[:-2]:
        shared = False
    else:
        raise DimensionError(f"matmul: leading axes differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if shared:
            k, m = bd.shape
            gb = ad.reshape(-1, k).T @ g.reshape(-1, m)
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return Tensor._from_op(ad @ bd, (a, b), backward, "matmul")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    (ax,) = _norm_axes(axis, x.ndim, "softmax")
    y = x.data - x.data.max(axis=ax, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=ax, keepdims=True)

    def backward(g):
        gy = g * y
        gx = g - gy.sum(axis=ax, keepdims=True)
        gx *= y
        return (gx,)

    return Tensor._from_op(y, (x,), backward, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply ``gain * xhat + bias``."""
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError("layer_norm: normalization axis is empty")
    n = x.shape[-1]
    _broadcast_shape(x.shape, gain.shape, "layer_norm gain")
    _broadcast_shape(x.shape, bias.shape, "layer_norm bias")
    if gain.shape[-1:] != (n,) and gain.ndim:
        raise DimensionError(f"layer_norm: gain shape {gain.shape} does not match axis {n}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std
    _check_finite(xhat, "layer_norm")
    gd = gain.data

    def backward(g):
        dxhat = g * gd
        dx = inv_std / n * (
            n * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return dx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)

    return Tensor._from_op(xhat * gd + bias.data, (x, gain, bias), backward, "layer_norm")


def embedding_lookup(table: Tensor, indices) -> Tensor:
    """Gather rows of ``table``; output shape is ``indices.shape + (dim,)``."""
    if table.ndim != 2:
        raise DimensionError(f"embedding_lookup: table must be rank 2, got {table.shape}")
    idx = np.asarray(indices)
    if idx.size and not np.issubdtype(idx.dtype, np.integer):
        raise LookupIndexError("embedding_lookup: indices must be integers")
    idx = idx.astype(np.int64)
    rows = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        raise LookupIndexError(f"embedding_lookup: index out of range [0, {rows})")
    shape = table.shape

    def backward(g):
        gt = np.zeros(shape)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, shape[1]))
        return (gt,)

    return Tensor._from_op(table.data[idx], (table,), backward, "embedding_lookup")


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot reshape {x.shape} to {shape}") from exc
    src = x.shape
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)) or len(axes) != x.ndim:
        raise DimensionError(f"transpose: invalid permutation {axes} for rank {x.ndim}")
    inverse = np.argsort([a % x.ndim for a in axes])
    out = x.data.transpose(axes)
    return Tensor._from_op(out, (x,), lambda g: (g.transpose(inverse),), "transpose")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat: no tensors given")
    ndim = tensors[0].ndim
    if ndim == 0:
        raise DimensionError("concat: cannot concatenate scalars")
    (ax,) = _norm_axes(axis, ndim, "concat")
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != ndim or t.shape[:ax] + t.shape[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise DimensionError(f"concat: shapes {ref} and {t.shape} differ off axis {ax}")
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=ax))

    return Tensor._from_op(
        np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), backward, "concat"
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("stack: no tensors given")
    ref = tensors[0].shape
    if any(t.shape != ref for t in tensors):
        raise DimensionError("stack: all tensors must share a shape")
    (ax,) = _norm_axes(axis, len(ref) + 1, "stack")
    n = len(tensors)

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(n))

    return Tensor._from_op(np.stack([t.data for t in tensors], axis=ax), tuple(tensors), backward, "stack")


def index(x: Tensor, key) -> Tensor:
    """Basic numpy indexing (ints and slices) with a scatter backward."""
    keys = key if isinstance(key, tuple) else (key,)
    for k in keys:
        if not isinstance(k, (int, np.integer, slice)) and k is not Ellipsis:
            raise ContractError("index: only integers, slices and Ellipsis are supported")
    try:
        out = x.data[key]
    except IndexError as exc:
        raise LookupIndexError(f"index: {exc}") from exc
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        full[key] = g
        return (full,)

    return Tensor._from_op(np.array(out), (x,), backward, "index")


# ---------------------------------------------------------------------------
# backward pass


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack_.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf that requires a gradient.

    Leaf gradients accumulate across calls; intermediate gradients do not
    persist.
    """
    if loss.size != 1:
        raise ContractError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss does not depend on any tensor requiring a gradient")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn, name: str) -> Tensor:
    """Record a custom operation; ``backward_fn`` maps the output gradient to
    one gradient (or ``None``) per parent."""
    return Tensor._from_op(np.asarray(data, dtype=np.float64), tuple(parents), backward_fn, name)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(
    f: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-6,
    atol: float = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``f(*inputs)`` must return a scalar tensor.  The relative error of one
    coordinate is ``|a - n| / max(|a|, |n|, atol)``; ``atol`` keeps
    coordinates whose true gradient is ~0 from amplifying round-off.

    With ``max_coords`` set, larger inputs are probed on a subset: half the
    budget goes to the coordinates with the largest analytic gradient, the
    rest is drawn uniformly.
    """
    if not 0.0 < eps <= 1e-2:
        raise ContractError(f"grad_check: eps must be in (0, 1e-2], got {eps}")
    inputs = list(inputs)
    saved = [(t.requires_grad, t.grad) for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    try:
        loss = f(*inputs)
        if loss.size != 1:
            raise ContractError("grad_check: f must return a scalar")
        backward(loss)
        analytic = [t.grad if t.grad is not None else np.zeros(t.shape) for t in inputs]

        def value() -> float:
            with no_grad():
                v = f(*inputs).item()
            if not np.isfinite(v):
                raise NumericError("grad_check: f is not finite at a probe point")
            return v

        rng = np.random.default_rng(seed)
        worst = 0.0
        for t, a in zip(inputs, analytic):
            t.data = np.ascontiguousarray(t.data)
            flat = t.data.reshape(-1)
            a_flat = a.reshape(-1)
            coords = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                top = np.argsort(-np.abs(a_flat), kind="stable")[: max_coords // 2]
                rest = rng.choice(flat.size, size=max_coords - top.size, replace=False)
                coords = np.unique(np.concatenate([top, rest]))
            for i in coords:
                orig = flat[i]
                flat[i] = orig + eps
                up = value()
                flat[i] = orig - eps
                down = value()
                flat[i] = orig
                numeric = (up - down) / (2.0 * eps)
                denom = max(np.abs(a_flat[i]), np.abs(numeric), atol)
                worst = max(worst, float(np.abs(a_flat[i] - numeric) / denom))
        return worst
    finally:
        for t, (req, grad) in zip(inputs, saved):
            t.requires_grad = req
            t.grad = grad
