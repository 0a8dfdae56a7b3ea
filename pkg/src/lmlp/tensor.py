"""Dense tensors with reverse-mode automatic differentiation.

Values are numpy arrays (float64 by default, float32 for training runs).
Every differentiable operation appends a vector-Jacobian callback to a
global tape in execution order; ``backward`` on a scalar loss replays the
tape in exact reverse order and accumulates gradients into the leaves.

The engine refuses to propagate NaN/Inf: any operation whose result is
non-finite raises ``NonFiniteError`` instead of returning garbage.
"""

from __future__ import annotations

import math
import os
from contextlib import contextmanager

import numpy as np
from scipy import special

DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    """Operand extents do not fit the operation."""


class UsageError(ValueError):
    """Operation called outside its domain (bad index, non-scalar loss, ...)."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


def deterministic_mode() -> bool:
    """Whether runs must be bitwise reproducible (LMLP_DETERMINISTIC, on by default).

    All built-in operations are single-threaded and sequential, so results are
    reproducible either way; the flag reserves the right to parallelize across
    the batch extent when it is explicitly switched off with ``0``.
    """
    return os.environ.get("LMLP_DETERMINISTIC", "1") != "0"


# ---------------------------------------------------------------------------
# tape, grad mode, MAC instrumentation
# ---------------------------------------------------------------------------

class _TapeEntry:
    __slots__ = ("out", "parents", "vjp")

    def __init__(self, out, parents, vjp):
        self.out = out
        self.parents = parents
        self.vjp = vjp


_TAPE: list[_TapeEntry] = []
_GRAD_ENABLED = True
_MAC_STACK: list["MacCounter"] = []


def reset_tape() -> None:
    """Drop every recorded operation (call between training steps)."""
    _TAPE.clear()


def tape_size() -> int:
    return len(_TAPE)


@contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class MacCounter:
    """Accumulates multiply-accumulate counts of executed matmuls."""

    def __init__(self):
        self.total = 0


@contextmanager
def count_macs():
    """Count matmul MACs (M*K*N per contraction, times batch) executed inside."""
    counter = MacCounter()
    _MAC_STACK.append(counter)
    try:
        yield counter
    finally:
        _MAC_STACK.pop()


def _note_macs(n: int) -> None:
    for counter in _MAC_STACK:
        counter.total += n


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced a non-finite value")


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------

class Tensor:
    """Contiguous N-d array with an optional gradient of the same shape."""

    __slots__ = ("data", "grad", "requires_grad", "_recorded")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        arr = np.ascontiguousarray(arr)
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._recorded = False

    @classmethod
    def _make(cls, arr: np.ndarray, op: str) -> "Tensor":
        """Engine-internal constructor: one finiteness check, no copies."""
        _check_finite(arr, op)
        out = cls.__new__(cls)
        out.data = np.ascontiguousarray(arr)
        out.grad = None
        out.requires_grad = False
        out._recorded = False
        return out

    # -- introspection ------------------------------------------------------
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
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.size != 1:
            raise UsageError("item() needs a single-element tensor")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def is_leaf(self) -> bool:
        return self.requires_grad and not self._recorded

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # -- operators ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self) -> "Tensor":
        return tensor_sum(self)

    def mean(self) -> "Tensor":
        return tensor_mean(self)

    def backward(self) -> None:
        backward(self)


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _record(out: Tensor, parents: tuple[Tensor, ...], vjp) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._recorded = True
        _TAPE.append(_TapeEntry(out, parents, vjp))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, (g_ext, t_ext) in enumerate(zip(grad.shape, shape)):
        if t_ext == 1 and g_ext != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return np.ascontiguousarray(grad)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _broadcastable(a: tuple[int, ...], b: tuple[int, ...]) -> bool:
    for x, y in zip(reversed(a), reversed(b)):
        if x != y and x != 1 and y != 1:
            return False
    return True


def _elementwise_operands(a, b):
    a = _as_tensor(a, None)
    b = _as_tensor(b, a.dtype)
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(f"elementwise shapes {a.shape} and {b.shape} do not align")
    return a, b


def add(a, b) -> Tensor:
    a, b = _elementwise_operands(a, b)
    out = Tensor._make(a.data + b.data, "add")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _elementwise_operands(a, b)
    out = Tensor._make(a.data - b.data, "sub")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _elementwise_operands(a, b)
    with np.errstate(over="ignore", invalid="ignore"):
        raw = a.data * b.data
    out = Tensor._make(raw, "mul")
    a_data, b_data = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * b_data, a.shape), _unbroadcast(g * a_data, b.shape)

    return _record(out, (a, b), vjp)


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy's stacking rules on leading extents."""
    a = _as_tensor(a, None)
    b = _as_tensor(b, a.dtype)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul needs operands of rank >= 1")
    a_rows = a.shape[-2] if a.ndim >= 2 else 1
    a_inner = a.shape[-1]
    b_inner = b.shape[-2] if b.ndim >= 2 else b.shape[-1]
    b_cols = b.shape[-1] if b.ndim >= 2 else 1
    if a_inner != b_inner:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    lead_a = a.shape[:-2] if a.ndim >= 2 else ()
    lead_b = b.shape[:-2] if b.ndim >= 2 else ()
    if not _broadcastable(lead_a, lead_b):
        raise ShapeError(f"matmul batch extents differ: {a.shape} x {b.shape}")
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            data = np.matmul(a.data, b.data)
    except ValueError as exc:  # pragma: no cover - guarded above
        raise ShapeError(str(exc)) from exc
    batch = 1
    for ext in np.broadcast_shapes(lead_a, lead_b):
        batch *= ext
    _note_macs(batch * a_rows * a_inner * b_cols)
    out = Tensor._make(data, "matmul")
    a_data, b_data = a.data, b.data
    a_vec, b_vec = a.ndim == 1, b.ndim == 1

    def vjp(g):
        g_mat = g
        if a_vec and b_vec:
            g_mat = g.reshape(1, 1)
        elif a_vec:
            g_mat = np.expand_dims(g, -2)
        elif b_vec:
            g_mat = np.expand_dims(g, -1)
        a_mat = a_data.reshape(1, -1) if a_vec else a_data
        b_mat = b_data.reshape(-1, 1) if b_vec else b_data
        ga = np.matmul(g_mat, np.swapaxes(b_mat, -1, -2))
        gb = np.matmul(np.swapaxes(a_mat, -1, -2), g_mat)
        if a_vec:
            ga = ga.reshape(a_data.shape)
        else:
            ga = _unbroadcast(ga, a_data.shape)
        if b_vec:
            gb = gb.reshape(b_data.shape)
        else:
            gb = _unbroadcast(gb, b_data.shape)
        return ga, gb

    return _record(out, (a, b), vjp)


# ---------------------------------------------------------------------------
# shape movement
# ---------------------------------------------------------------------------

def permute(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"axes {axes} is not a permutation of rank {x.ndim}")
    out = Tensor._make(np.transpose(x.data, axes), "permute")
    inverse = np.argsort(axes)

    def vjp(g):
        return (np.ascontiguousarray(np.transpose(g, inverse)),)

    return _record(out, (x,), vjp)


def permute_last_two(x: Tensor) -> Tensor:
    """Swap the trailing two extents: out[..., j, i] == x[..., i, j]."""
    if x.ndim < 2:
        raise ShapeError("permute_last_two needs rank >= 2")
    axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return permute(x, axes)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} into {shape}")
    out = Tensor._make(x.data.reshape(shape), "reshape")
    old_shape = x.shape

    def vjp(g):
        return (np.ascontiguousarray(g.reshape(old_shape)),)

    return _record(out, (x,), vjp)


def concat(parts: list[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeError("concat needs at least one tensor")
    axis = axis % parts[0].ndim
    base = list(parts[0].shape)
    for p in parts[1:]:
        other = list(p.shape)
        if len(other) != len(base) or any(
            o != b for i, (o, b) in enumerate(zip(other, base)) if i != axis
        ):
            raise ShapeError("concat operands differ outside the joined axis")
    out = Tensor._make(np.concatenate([p.data for p in parts], axis=axis), "concat")
    sizes = [p.shape[axis] for p in parts]

    def vjp(g):
        grads = []
        start = 0
        for length in sizes:
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, start + length)
            grads.append(np.ascontiguousarray(g[tuple(index)]))
            start += length
        return tuple(grads)

    return _record(out, tuple(parts), vjp)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    axis = axis % x.ndim
    if start < 0 or length < 0 or start + length > x.shape[axis]:
        raise ShapeError(
            f"narrow [{start}:{start + length}) out of bounds for extent {x.shape[axis]}"
        )
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    out = Tensor._make(x.data[tuple(index)], "narrow")
    in_shape = x.shape

    def vjp(g):
        full = np.zeros(in_shape, dtype=g.dtype)
        full[tuple(index)] = g
        return (full,)

    return _record(out, (x,), vjp)


def pad2d(x: Tensor, pad: int) -> Tensor:
    """Zero-pad the trailing two extents by ``pad`` on every side."""
    if x.ndim < 2:
        raise ShapeError("pad2d needs rank >= 2")
    if pad < 0:
        raise ShapeError("pad must be non-negative")
    widths = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    out = Tensor._make(np.pad(x.data, widths), "pad2d")
    crop = tuple(
        [slice(None)] * (x.ndim - 2) + [slice(pad, pad + x.shape[-2]), slice(pad, pad + x.shape[-1])]
    )

    def vjp(g):
        return (np.ascontiguousarray(g[crop]),)

    return _record(out, (x,), vjp)


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Look up rows of a 2-d table; gradient scatters back into the table."""
    if table.ndim != 2:
        raise ShapeError("gather_rows table must be rank 2")
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise UsageError("gather_rows ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise UsageError(f"token id out of range [0, {table.shape[0]})")
    out = Tensor._make(table.data[ids], "gather_rows")
    table_shape = table.shape

    def vjp(g):
        gt = np.zeros(table_shape, dtype=g.dtype)
        np.add.at(gt, ids, g)
        return (gt,)

    return _record(out, (table,), vjp)


# ---------------------------------------------------------------------------
# nonlinearities and normalization
# ---------------------------------------------------------------------------

def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-error-linear unit x * Phi(x) (erf form, no tanh fit)."""
    x = _as_tensor(x, None)
    cdf = 0.5 * (1.0 + special.erf(x.data * (1.0 / math.sqrt(2.0))))
    out = Tensor._make(x.data * cdf, "gelu")
    x_data = x.data

    def vjp(g):
        pdf = np.exp(-0.5 * x_data * x_data) * (1.0 / math.sqrt(2.0 * math.pi))
        return (g * (cdf + x_data * pdf),)

    return _record(out, (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x, None)
    pos = x.data >= 0
    s = np.empty_like(x.data)
    s[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    s[~pos] = ex / (1.0 + ex)
    out = Tensor._make(s, "sigmoid")

    def vjp(g):
        return (g * s * (1.0 - s),)

    return _record(out, (x,), vjp)


def softmax_last(x: Tensor) -> Tensor:
    """Softmax over the trailing extent."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor._make(s, "softmax")

    def vjp(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - inner),)

    return _record(out, (x,), vjp)


def layer_norm(x: Tensor, normalized_extent: int, gain: Tensor, bias: Tensor,
               eps: float = 1e-6) -> Tensor:
    """Normalize the trailing extent to zero mean / unit (population) variance,
    then apply the learned affine map."""
    if normalized_extent == 0:
        raise ShapeError("cannot normalize an empty extent")
    if x.shape[-1] != normalized_extent:
        raise ShapeError(
            f"layer_norm expected trailing extent {normalized_extent}, got {x.shape[-1]}"
        )
    if gain.shape != (normalized_extent,) or bias.shape != (normalized_extent,):
        raise ShapeError("gain/bias must match the normalized extent")
    if eps <= 0:
        raise UsageError("eps must be positive")
    n = normalized_extent
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    x_hat = centered * inv
    out = Tensor._make(gain.data * x_hat + bias.data, "layer_norm")
    gain_data = gain.data

    def vjp(g):
        dx_hat = g * gain_data
        lead = tuple(range(g.ndim - 1))
        d_gain = (g * x_hat).sum(axis=lead) if g.ndim > 1 else g * x_hat
        d_bias = g.sum(axis=lead) if g.ndim > 1 else g.copy()
        term = dx_hat.sum(axis=-1, keepdims=True) + x_hat * (dx_hat * x_hat).sum(
            axis=-1, keepdims=True
        )
        dx = (inv / n) * (n * dx_hat - term)
        return dx, np.ascontiguousarray(d_gain), np.ascontiguousarray(d_bias)

    return _record(out, (x, gain, bias), vjp)


# ---------------------------------------------------------------------------
# reductions and backward
# ---------------------------------------------------------------------------

def tensor_sum(x: Tensor) -> Tensor:
    out = Tensor._make(np.asarray(x.data.sum(), dtype=x.dtype), "sum")
    shape, dtype = x.shape, x.dtype

    def vjp(g):
        return (np.full(shape, g, dtype=dtype),)

    return _record(out, (x,), vjp)


def tensor_mean(x: Tensor) -> Tensor:
    out = Tensor._make(np.asarray(x.data.mean(), dtype=x.dtype), "mean")
    shape, dtype, size = x.shape, x.dtype, x.size

    def vjp(g):
        return (np.full(shape, g / size, dtype=dtype),)

    return _record(out, (x,), vjp)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad leaf reachable from the scalar loss.

    Repeated calls without zeroing the leaves accumulate. The walk visits tape
    entries in exact reverse execution order; entries not on the path from the
    loss carry no adjoint and are skipped.
    """
    if loss.size != 1:
        raise UsageError("backward needs a scalar loss")
    if not loss.requires_grad:
        raise UsageError("loss is not connected to any requires_grad tensor")
    adjoint: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    if loss.is_leaf():
        loss.grad = (loss.grad if loss.grad is not None else 0) + adjoint[id(loss)]
        return
    for entry in reversed(_TAPE):
        g = adjoint.pop(id(entry.out), None)
        if g is None:
            continue
        grads = entry.vjp(g)
        for parent, grad in zip(entry.parents, grads):
            if grad is None or not parent.requires_grad:
                continue
            _check_finite(grad, "backward")
            if parent._recorded:
                key = id(parent)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + grad
                else:
                    adjoint[key] = grad
            else:
                parent.grad = grad if parent.grad is None else parent.grad + grad


__all__ = [
    "DEFAULT_DTYPE",
    "MacCounter",
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "UsageError",
    "add",
    "backward",
    "concat",
    "count_macs",
    "deterministic_mode",
    "gather_rows",
    "gelu",
    "layer_norm",
    "matmul",
    "mul",
    "narrow",
    "no_grad",
    "pad2d",
    "permute",
    "permute_last_two",
    "reset_tape",
    "reshape",
    "sigmoid",
    "softmax_last",
    "sub",
    "tape_size",
    "tensor_mean",
    "tensor_sum",
]
