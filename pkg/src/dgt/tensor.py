"""Dense numpy-backed tensors with reverse-mode automatic differentiation.

Ops are recorded on a dynamic tape: each op output keeps references to its
inputs plus a backward rule, and ``backward`` on a scalar loss walks the
recorded graph once in reverse topological order, accumulating gradients
into every ``requires_grad`` ancestor.

float32 is the working precision; float64 is supported so that central
finite-difference checks of the backward rules are meaningful.

There is deliberately no general broadcasting: only bias-style adds and
row-wise ops broadcast, every other shape mismatch raises ``ShapeError``.
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.dtype(np.float32)

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

# Large negative fill for masked attention scores. Finite (no NaN through
# max-subtraction) but absorbing: exp(fill - rowmax) underflows to 0.
MASK_FILL = -1e30


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


class DegenerateBatchError(ValueError):
    """Every position of a cross-entropy batch was ignored."""


_grad_enabled = True
_check_finite = os.environ.get("DGT_CHECK_FINITE", "") not in ("", "0")


@contextmanager
def no_grad():
    """Disable op recording inside the context (inference, evaluation)."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def grad_enabled() -> bool:
    return _grad_enabled


# A backward rule receives the output gradient and an `accumulate(tensor,
# grad)` callback; it must push a gradient to every tracked input.
BackwardRule = Callable[[np.ndarray, Callable[["Tensor", np.ndarray], None]], None]


class Tensor:
    """Row-major numeric array with an optional gradient.

    Tensors are immutable by convention once consumed by an op; ``grad``
    is the only field mutated afterwards (by ``backward``). ``grad``,
    when present, is congruent with ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is not None:
            dtype = np.dtype(dtype)
            if dtype not in _FLOAT_DTYPES:
                raise ValueError(f"tensor dtype must be float32 or float64, got {dtype}")
            arr = np.asarray(data, dtype=dtype)
        elif isinstance(data, np.ndarray) and data.dtype in _FLOAT_DTYPES:
            arr = data
        else:
            arr = np.asarray(data, dtype=DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: BackwardRule | None = None

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
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else _non_scalar(self)

    def backward(self) -> None:
        backward(self)

    def detach(self) -> "Tensor":
        """A new leaf sharing this tensor's data, cut off from the tape."""
        return Tensor(self.data)

    # Operator sugar for the common cases; everything else is a module fn.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_const(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        return transpose(self, axes)

    def sum(self) -> "Tensor":
        return sum_all(self)

    def __repr__(self) -> str:
        flags = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flags})"


def _non_scalar(t: Tensor):
    raise ValueError(f"expected a scalar tensor, got shape {t.shape}")


def _result(data: np.ndarray, parents: tuple[Tensor, ...], rule: BackwardRule) -> Tensor:
    if _check_finite and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced by a forward op")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = rule
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward_fn = None
    return out


def _topo_order(root: Tensor) -> list[Tensor]:
    """Post-order over the recorded graph: every op's inputs precede it."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tracked ancestor.

    Repeated calls without clearing grads add another full contribution
    (gradient accumulation). Requires a scalar loss.
    """
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    def accumulate(t: Tensor, g: np.ndarray) -> None:
        if not t.requires_grad:
            return
        held = flowing.get(id(t))
        flowing[id(t)] = g if held is None else held + g

    for node in reversed(order):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._backward_fn is not None:
            node._backward_fn(g, accumulate)


# ---------------------------------------------------------------------------
# primitive ops


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")

    def rule(g, acc):
        acc(a, g)
        acc(b, g)

    return _result(a.data + b.data, (a, b), rule)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """x[..., n] + bias[n], the only tensor-tensor broadcast allowed."""
    if bias.ndim != 1 or x.ndim < 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"add_bias: shapes {x.shape} and {bias.shape} are incompatible")
    n = bias.shape[0]

    def rule(g, acc):
        acc(x, g)
        acc(bias, g.reshape(-1, n).sum(axis=0))

    return _result(x.data + bias.data, (x, bias), rule)


def add_const(x: Tensor, c: np.ndarray | float) -> Tensor:
    """Add a non-differentiable constant; may broadcast up to x's shape."""
    c = np.asarray(c, dtype=x.dtype)
    if np.broadcast_shapes(x.shape, c.shape) != x.shape:
        raise ShapeError(f"add_const: constant {c.shape} does not broadcast to {x.shape}")

    def rule(g, acc):
        acc(x, g)

    return _result(x.data + c, (x,), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")

    def rule(g, acc):
        acc(a, g * b.data)
        acc(b, g * a.data)

    return _result(a.data * b.data, (a, b), rule)


def mul_const(x: Tensor, c: np.ndarray | float) -> Tensor:
    """Multiply by a non-differentiable constant (scalar or broadcastable)."""
    c = np.asarray(c, dtype=x.dtype)
    if np.broadcast_shapes(x.shape, c.shape) != x.shape:
        raise ShapeError(f"mul_const: constant {c.shape} does not broadcast to {x.shape}")

    def rule(g, acc):
        acc(x, g * c)

    return _result(x.data * c, (x,), rule)


def relu(x: Tensor) -> Tensor:
    def rule(g, acc):
        acc(x, g * (x.data > 0))

    return _result(np.maximum(x.data, 0), (x,), rule)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    Supported: 2D @ 2D, stacked (leading dims equal on both sides), and
    stacked @ 2D for applying a weight matrix to every row block.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2D, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions disagree, {a.shape} @ {b.shape}")
    if a.ndim == b.ndim:
        if a.shape[:-2] != b.shape[:-2]:
            raise ShapeError(f"matmul: leading dimensions disagree, {a.shape} @ {b.shape}")
    elif b.ndim != 2:
        raise ShapeError(f"matmul: unsupported rank combination, {a.shape} @ {b.shape}")

    out = np.matmul(a.data, b.data)

    def rule(g, acc):
        if a.requires_grad:
            acc(a, np.matmul(g, b.data.swapaxes(-1, -2)))
        if b.requires_grad:
            if b.ndim == a.ndim:
                acc(b, np.matmul(a.data.swapaxes(-1, -2), g))
            else:
                k, n = b.shape
                acc(b, a.data.reshape(-1, k).T @ g.reshape(-1, n))

    return _result(out, (a, b), rule)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from exc

    def rule(g, acc):
        acc(x, g.reshape(x.shape))

    return _result(out, (x,), rule)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} are not a permutation of rank {x.ndim}")
    inverse = tuple(np.argsort(axes))

    def rule(g, acc):
        acc(x, np.transpose(g, inverse))

    return _result(np.transpose(x.data, axes), (x,), rule)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along ``axis`` (max-subtraction before exp)."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def rule(g, acc):
        acc(x, (g - (g * y).sum(axis=axis, keepdims=True)) * y)

    return _result(y, (x,), rule)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance, then affine."""
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")
    n = x.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(
            f"layer_norm: gain {gain.shape} / bias {bias.shape} do not match last axis {n}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def rule(g, acc):
        if gain.requires_grad:
            acc(gain, (g * xhat).reshape(-1, n).sum(axis=0))
        if bias.requires_grad:
            acc(bias, g.reshape(-1, n).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.data
            acc(
                x,
                inv
                * (
                    dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
                ),
            )

    return _result(out, (x, gain, bias), rule)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table`` by integer id; output shape ids.shape + (d,)."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding table must be 2D, got {table.shape}")
    rows = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= rows):
        bad = int(ids.min()) if ids.min() < 0 else int(ids.max())
        raise IndexError(f"embedding id {bad} out of range [0, {rows})")

    def rule(g, acc):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        acc(table, gt)

    return _result(table.data[ids], (table,), rule)


def cross_entropy(logits: Tensor, targets, ignore_id: int | None = None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under row softmaxes.

    ``logits`` is [N, V]; positions whose target equals ``ignore_id``
    contribute nothing to the loss or the gradient.
    """
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [N, V] logits, got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    n, v = logits.shape
    if targets.shape != (n,):
        raise ShapeError(f"cross_entropy: {n} logit rows but targets shape {targets.shape}")
    valid = np.ones(n, dtype=bool) if ignore_id is None else targets != ignore_id
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise DegenerateBatchError("cross_entropy: every target position is ignored")
    checked = targets[valid]
    if checked.size and (checked.min() < 0 or checked.max() >= v):
        bad = int(checked.min()) if checked.min() < 0 else int(checked.max())
        raise ValueError(f"cross_entropy: target id {bad} outside [0, {v})")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    z = e.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(z)
    rows = np.arange(n)[valid]
    loss = -log_probs[rows, targets[valid]].mean(dtype=logits.dtype)

    def rule(g, acc):
        grad = e / z
        grad[rows, targets[valid]] -= 1.0
        grad[~valid] = 0.0
        acc(logits, grad * (g / n_valid))

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), rule)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0. Mask comes from ``rng``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / np.asarray(1.0 - p, dtype=x.dtype)
    return mul_const(x, keep)


def sum_all(x: Tensor) -> Tensor:
    def rule(g, acc):
        acc(x, np.broadcast_to(g, x.shape).astype(x.dtype, copy=False))

    return _result(np.asarray(x.data.sum(dtype=x.dtype), dtype=x.dtype), (x,), rule)
