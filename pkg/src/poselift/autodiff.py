"""Minimal reverse-mode autodiff on 64-bit numpy arrays.

Every differentiable value is a Tensor. Primitive applications record a
Node carrying the backward closure; nodes get monotonically increasing
sequence ids, so creation order is already a topological order and
backward() never recurses (scans of length 10^4 stay within limits).
Each tape may be walked backward exactly once.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class NumericError(ArithmeticError):
    """A primitive produced NaN or Inf, or a gradient went non-finite."""


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested primitive."""


class TapeError(RuntimeError):
    """Backward misuse: non-scalar loss or walking a consumed tape."""


class _EngineState(threading.local):
    def __init__(self):
        self.grad_enabled = True
        self.next_seq = 0


_STATE = _EngineState()


class no_grad:
    """Context manager that suppresses tape recording."""

    def __enter__(self):
        self._prev = _STATE.grad_enabled
        _STATE.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _STATE.grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _STATE.grad_enabled


class Node:
    __slots__ = ("op", "inputs", "backward_fn", "out", "seq", "consumed")

    def __init__(self, op: str, inputs: tuple, backward_fn: Callable, out: "Tensor"):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.out = out
        self.seq = _STATE.next_seq
        _STATE.next_seq += 1
        self.consumed = False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node: Node | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return np.array(self.data, copy=True)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # ---- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise DimensionError("tensor/tensor division is not a primitive; multiply by a reciprocal")
        return mul(self, _wrap(1.0 / other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def backward(self) -> None:
        backward(self)


def _wrap(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _all_finite(arr: np.ndarray) -> bool:
    # One-pass screen: a finite sum proves finiteness at our magnitudes;
    # a non-finite sum falls back to the exact elementwise test.
    s = arr.sum()
    if np.isfinite(s):
        return True
    return bool(np.all(np.isfinite(arr)))


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not _all_finite(arr):
        raise NumericError(f"{op} produced non-finite values")


def apply_primitive(op: str, out_data: np.ndarray, inputs: Sequence[Tensor],
                    backward_fn: Callable, check: bool = True) -> Tensor:
    """Register one primitive application on the tape.

    backward_fn(grad_out) must return one gradient array (or None) per
    input, already shaped like that input. Data-movement primitives pass
    check=False: they cannot create non-finite values from checked inputs.
    """
    if check:
        _check_finite(out_data, op)
    out = Tensor(out_data)
    if _STATE.grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, tuple(inputs), backward_fn, out)
    return out


def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dLeaf into .grad of every requires_grad ancestor."""
    if loss.data.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad or loss.node is None:
        raise TapeError("loss is not connected to any differentiable input")

    # Collect the reachable subgraph; creation order is topological order.
    nodes = []
    seen = set()
    stack = [loss.node]
    seen.add(id(loss.node))
    while stack:
        node = stack.pop()
        if node.consumed:
            raise TapeError(f"tape already consumed at op '{node.op}'; one backward per forward")
        nodes.append(node)
        for t in node.inputs:
            if t.requires_grad and t.node is not None and id(t.node) not in seen:
                seen.add(id(t.node))
                stack.append(t.node)
    nodes.sort(key=lambda n: n.seq)

    loss.grad = np.ones_like(loss.data)
    for node in reversed(nodes):
        node.consumed = True
        grad_out = node.out.grad
        if grad_out is not None:
            grads = node.backward_fn(grad_out)
            for t, g in zip(node.inputs, grads):
                if g is None or not t.requires_grad:
                    continue
                if not _all_finite(g):
                    raise NumericError(f"backward of {node.op} produced non-finite gradient")
                if g.shape != t.data.shape:
                    raise DimensionError(
                        f"backward of {node.op}: gradient shape {g.shape} != input shape {t.data.shape}")
                if t.grad is None:
                    # Borrow the buffer; backward_fns may alias their grad_out,
                    # so fan-out accumulation below must stay out-of-place.
                    t.grad = g
                else:
                    t.grad = t.grad + g
            # Non-leaf gradients are dead once distributed.
            node.out.grad = None
        # Release closures and input refs; Node.out <-> Tensor.node is a
        # reference cycle, and waiting on the cycle collector with large
        # arrays attached exhausts memory. The consumed husk stays behind
        # so a second backward over this tape still errors.
        node.inputs = ()
        node.backward_fn = None
        node.out = None


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---- elementwise arithmetic ---------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return apply_primitive("add", out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return apply_primitive("sub", out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def bwd(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return apply_primitive("mul", out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return apply_primitive("neg", -a.data, (a,), lambda g: (-g,), check=False)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(
            f"matmul needs ndim >= 2 operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}")
    try:
        np.broadcast_shapes(a.data.shape[:-2], b.data.shape[:-2])
    except ValueError as e:
        raise DimensionError(
            f"matmul batch dimensions do not broadcast: {a.data.shape} @ {b.data.shape}") from e
    out = a.data @ b.data

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        if b.data.ndim == 2 and a.data.ndim > 2:
            # One flat GEMM instead of a batched product plus reduction.
            k, n = b.data.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return ga, gb

    return apply_primitive("matmul", out, (a, b), bwd)


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Fused x @ weight + bias over the last axis."""
    if weight.data.ndim != 2 or x.data.shape[-1] != weight.data.shape[0]:
        raise DimensionError(
            f"affine expects x (.., {weight.data.shape[0]}) @ weight {weight.data.shape}, "
            f"got x {x.data.shape}")
    out = x.data @ weight.data
    if bias is not None:
        out += bias.data

    k, n = weight.data.shape

    def bwd(g):
        g2 = g.reshape(-1, n)
        gw = x.data.reshape(-1, k).T @ g2
        gx = (g2 @ weight.data.T).reshape(x.data.shape)
        gb = None if bias is None else g2.sum(axis=0)
        return (gx, gw) if bias is None else (gx, gw, gb)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return apply_primitive("affine", out, inputs, bwd)


# ---- shape plumbing ------------------------------------------------------

def reshape(a: Tensor, shape: tuple) -> Tensor:
    out = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(a.data.shape),)

    return apply_primitive("reshape", out, (a,), bwd, check=False)


def transpose(a: Tensor, axes: tuple) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = np.transpose(a.data, axes)

    def bwd(g):
        return (np.transpose(g, inv),)

    return apply_primitive("transpose", out, (a,), bwd, check=False)


def broadcast_to(a: Tensor, shape: tuple) -> Tensor:
    out = np.broadcast_to(a.data, shape).copy()

    def bwd(g):
        return (_unbroadcast(g, a.data.shape),)

    return apply_primitive("broadcast_to", out, (a,), bwd, check=False)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = tuple(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return apply_primitive("concat", out, tensors, bwd, check=False)


def getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]
    if np.isscalar(out) or out.ndim == 0:
        out = np.asarray(out, dtype=np.float64)

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return apply_primitive("getitem", out, (a,), bwd, check=False)


def take_indices(a: Tensor, indices: np.ndarray, axis: int) -> Tensor:
    indices = np.asarray(indices, dtype=np.intp)
    out = np.take(a.data, indices, axis=axis)
    is_permutation = (indices.ndim == 1 and indices.size == a.data.shape[axis]
                      and np.array_equal(np.sort(indices), np.arange(indices.size)))

    def bwd(g):
        if is_permutation:
            return (np.take(g, np.argsort(indices), axis=axis),)
        full = np.zeros_like(a.data)
        sel = [slice(None)] * a.data.ndim
        sel[axis] = indices
        np.add.at(full, tuple(sel), g)
        return (full,)

    return apply_primitive("take_indices", out, (a,), bwd, check=False)


# ---- reductions ----------------------------------------------------------

def _restore_axes(g: np.ndarray, in_shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, in_shape).copy()
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(a % len(in_shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, in_shape).copy()


def tensor_sum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    out = np.asarray(out, dtype=np.float64)

    def bwd(g):
        return (_restore_axes(g, a.data.shape, axis, keepdims),)

    return apply_primitive("sum", out, (a,), bwd)


def tensor_mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    out = np.asarray(out, dtype=np.float64)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax % a.data.ndim] for ax in (axis if isinstance(axis, tuple) else (axis,))])

    def bwd(g):
        return (_restore_axes(g, a.data.shape, axis, keepdims) / count,)

    return apply_primitive("mean", out, (a,), bwd)


# ---- nonlinearities ------------------------------------------------------

def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow surfaces as NumericError
        out = np.exp(a.data)

    def bwd(g):
        return (g * out,)

    return apply_primitive("exp", out, (a,), bwd)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of -|x| never overflows; both branches share it.
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    out = _stable_sigmoid(a.data)

    def bwd(g):
        return (g * out * (1.0 - out),)

    return apply_primitive("sigmoid", out, (a,), bwd)


def softplus(a: Tensor) -> Tensor:
    out = np.logaddexp(0.0, a.data)

    def bwd(g):
        return (g * _stable_sigmoid(a.data),)

    return apply_primitive("softplus", out, (a,), bwd)


def gelu(a: Tensor) -> Tensor:
    cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
    out = a.data * cdf

    def bwd(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * a.data * a.data)
        return (g * (cdf + a.data * pdf),)

    return apply_primitive("gelu", out, (a,), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return apply_primitive("softmax", out, (a,), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if gamma.data.shape != (x.data.shape[-1],) or beta.data.shape != (x.data.shape[-1],):
        raise DimensionError(
            f"layer_norm affine shapes {gamma.data.shape}/{beta.data.shape} "
            f"do not match feature width {x.data.shape[-1]}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data * xhat + beta.data

    def bwd(g):
        d = x.data.shape[-1]
        dxhat = g * gamma.data
        dgamma = (g * xhat).reshape(-1, d).sum(axis=0)
        dbeta = g.reshape(-1, d).sum(axis=0)
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta

    return apply_primitive("layer_norm", out, (x, gamma, beta), bwd)


def vector_norm(a: Tensor) -> Tensor:
    """Euclidean norm over the last axis; subgradient 0 at the origin."""
    out = np.sqrt(np.square(a.data).sum(axis=-1))

    def bwd(g):
        safe = np.where(out == 0.0, 1.0, out)
        direction = a.data / safe[..., None]
        direction = np.where(out[..., None] == 0.0, 0.0, direction)
        return (g[..., None] * direction,)

    return apply_primitive("vector_norm", out, (a,), bwd)


# ---- pooling -------------------------------------------------------------

def pool_bins(in_len: int, out_len: int) -> list[tuple[int, int]]:
    """Contiguous near-equal bins, floor/ceil split as in adaptive pooling."""
    if out_len < 1 or out_len > in_len:
        raise DimensionError(f"cannot pool length {in_len} to {out_len}")
    return [(int(np.floor(i * in_len / out_len)),
             int(np.ceil((i + 1) * in_len / out_len))) for i in range(out_len)]


def adaptive_avg_pool(a: Tensor, out_len: int, axis: int = 1) -> Tensor:
    """Adaptive mean pooling along one axis."""
    in_len = a.data.shape[axis]
    bins = pool_bins(in_len, out_len)
    moved = np.moveaxis(a.data, axis, 0)
    pooled = np.stack([moved[s:e].mean(axis=0) for s, e in bins], axis=0)
    out = np.moveaxis(pooled, 0, axis)

    def bwd(g):
        gm = np.moveaxis(g, axis, 0)
        full = np.zeros_like(moved)
        for i, (s, e) in enumerate(bins):
            full[s:e] += gm[i] / (e - s)
        return (np.moveaxis(full, 0, axis),)

    return apply_primitive("adaptive_avg_pool", out, (a,), bwd)


# ---- finite differences --------------------------------------------------

def finite_difference(fn: Callable[[], Tensor], param: Tensor, index: tuple,
                      h: float = 1e-5) -> float:
    """Central finite difference of a scalar-valued fn wrt one entry."""
    original = param.data[index]
    param.data[index] = original + h
    with no_grad():
        hi = fn().item()
    param.data[index] = original - h
    with no_grad():
        lo = fn().item()
    param.data[index] = original
    return (hi - lo) / (2.0 * h)


def gradcheck_entry(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    """Relative error with an absolute floor below FD noise level."""
    scale = max(abs(analytic), abs(numeric), floor)
    return abs(analytic - numeric) / scale
