"""Minimal dense tensor engine with reverse-mode differentiation.

Every :class:`Tensor` wraps a float64 numpy array.  Operations on tensors that
require gradients record a closure describing their local backward rule; the
recorded graph is walked in reverse topological order by :func:`backward` and
then released.

The module also hosts a small FLOP counter used to validate the analytical
cost models: :func:`matmul` reports ``2 * m * p * n`` FLOPs per product to every
active :class:`FlopCounter`, filed under the current :func:`flop_tag`.
"""

from __future__ import annotations

import contextlib
import math
import threading
from collections import defaultdict
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "ShapeError",
    "tensor",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "reshape",
    "transpose",
    "take",
    "crop",
    "tsum",
    "mean",
    "tabs",
    "softmax_lastdim",
    "layer_norm",
    "gelu",
    "conv2d",
    "pad_reflect",
    "roll",
    "backward",
    "finite_diff_grad",
    "max_rel_error",
    "no_grad",
    "FlopCounter",
    "flop_tag",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """Dense float64 array with optional gradient tracking."""

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    track = _grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = track
    if track:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, dim in enumerate(shape):
        if dim == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# FLOP accounting


class FlopCounter:
    """Accumulates matmul FLOPs per tag while active (use as a context manager)."""

    def __init__(self):
        self.counts: dict[str, int] = defaultdict(int)

    def __enter__(self) -> FlopCounter:
        stack = getattr(_state, "counters", None)
        if stack is None:
            stack = _state.counters = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.counters.remove(self)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def __getitem__(self, tag: str) -> int:
        return self.counts.get(tag, 0)


@contextlib.contextmanager
def flop_tag(tag: str):
    """Label matmul FLOPs issued inside the block."""
    prev = getattr(_state, "tag", "untagged")
    _state.tag = tag
    try:
        yield
    finally:
        _state.tag = prev


def _record_flops(n: int) -> None:
    counters = getattr(_state, "counters", None)
    if counters:
        tag = getattr(_state, "tag", "untagged")
        for c in counters:
            c.counts[tag] += n


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result(ad * bd, (a, b), bw)


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def tabs(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return _result(np.abs(a.data), (a,), lambda g: (g * sign,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``a[..., m, p] @ b[..., p, n]``.

    Leading (batch) dimensions follow numpy broadcasting; in practice the
    network only uses exact matches or a 2-D right operand.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not match") from None
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)
    m, p, n = a.shape[-2], a.shape[-1], b.shape[-1]
    _record_flops(2 * math.prod(batch) * m * p * n)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _result(out, (a, b), bw)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from None
    return _result(out, (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate in the backward pass."""
    idx = np.asarray(indices, dtype=np.intp)
    axis = axis % a.ndim
    n = a.shape[axis]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"take: index out of range for axis of length {n}")
    src = a.shape

    def bw(g):
        ga = np.zeros(src)
        moved = np.moveaxis(ga, axis, 0)
        np.add.at(moved, idx.reshape(-1), np.moveaxis(g, axis, 0).reshape((-1,) + moved.shape[1:]))
        return (ga,)

    return _result(np.take(a.data, idx, axis=axis), (a,), bw)


def crop(a: Tensor, slices: Sequence[slice]) -> Tensor:
    """Basic-slice view ``a[slices]`` with a zero-filled backward."""
    key = tuple(slices)
    src = a.shape

    def bw(g):
        ga = np.zeros(src)
        ga[key] = g
        return (ga,)

    return _result(a.data[key].copy(), (a,), bw)


def _reflect_indices(n: int, pad: int) -> np.ndarray:
    # numpy "reflect" (edge sample not repeated), folded for pads longer than n
    if n == 1:
        return np.zeros(n + pad, dtype=np.intp)
    period = 2 * (n - 1)
    i = np.arange(n + pad) % period
    return np.where(i < n, i, period - i)


def pad_reflect(a: Tensor, pad_bottom: int, pad_right: int, axes: tuple[int, int] = (0, 1)) -> Tensor:
    """Reflect-pad two spatial axes at their far ends."""
    out = a
    if pad_bottom:
        out = take(out, _reflect_indices(a.shape[axes[0]], pad_bottom), axis=axes[0])
    if pad_right:
        out = take(out, _reflect_indices(a.shape[axes[1]], pad_right), axis=axes[1])
    return out


def roll(a: Tensor, shift: int, axis: int) -> Tensor:
    """Toroidal roll matching ``np.roll`` semantics."""
    n = a.shape[axis]
    if shift % n == 0:
        return a
    return take(a, (np.arange(n) - shift) % n, axis=axis)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    src = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _result(np.asarray(out, dtype=np.float64), (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = math.prod(a.shape[ax] for ax in axes)
    return mul(tsum(a, axis, keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# neural-network primitives


def softmax_lastdim(t: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    x = t.data
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (t,), bw)


def layer_norm(t: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    x = t.data
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layer_norm: affine params {gamma.shape}/{beta.shape} vs input {t.shape}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    gd = gamma.data
    lead = tuple(range(x.ndim - 1))

    def bw(g):
        dxhat = g * gd
        dx = rstd / c * (
            c * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * gd + beta.data, (t, gamma, beta), bw)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(t: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = t.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def bw(g):
        return (g * (cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)),)

    return _result(x * cdf, (t,), bw)


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Direct 2-D cross-correlation with zero padding.

    Args:
        x: input of shape ``[C_in, H, W]``.
        w: kernel of shape ``[C_out, C_in, kh, kw]``.
        bias: optional ``[C_out]``.

    The sum runs over kernel offsets; each offset contributes one channel
    contraction over all output pixels at once.
    """
    if x.ndim != 3 or w.ndim != 4 or w.shape[1] != x.shape[0]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    c_in, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    num_h, num_w = h + 2 * pad - kh, wd + 2 * pad - kw
    if num_h < 0 or num_w < 0 or num_h % stride or num_w % stride:
        raise ShapeError(f"conv2d: non-integral output size for input {x.shape}, kernel {w.shape}, stride {stride}, pad {pad}")
    ho, wo = num_h // stride + 1, num_w // stride + 1
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    wdat = w.data
    out = np.zeros((c_out, ho, wo))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride]
            out += np.tensordot(wdat[:, :, i, j], patch, axes=(1, 0))
    if bias is not None:
        if bias.shape != (c_out,):
            raise ShapeError(f"conv2d: bias {bias.shape} does not match {c_out} output channels")
        out += bias.data[:, None, None]

    def bw(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(wdat)
        for i in range(kh):
            for j in range(kw):
                sl = (slice(None), slice(i, i + stride * ho, stride), slice(j, j + stride * wo, stride))
                gxp[sl] += np.tensordot(wdat[:, :, i, j], g, axes=(0, 0))
                gw[:, :, i, j] = np.tensordot(g, xp[sl], axes=([1, 2], [1, 2]))
        gx = gxp[:, pad : pad + h, pad : pad + wd] if pad else gxp
        gb = g.sum(axis=(1, 2)) if bias is not None else None
        return gx, gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    return _result(out, parents, bw)


# ---------------------------------------------------------------------------
# differentiation


def _topo_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tracked tensor feeding ``loss``, then drop the graph."""
    if loss.size != 1:
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    for node in order:
        node._parents = ()
        node._backward = None


def finite_diff_grad(f: Callable[[Tensor], Tensor | float], x: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``x.data`` is perturbed in place one element at a time and restored.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"finite_diff_grad: eps {eps} outside [1e-7, 1e-3]")

    def value() -> float:
        with no_grad():
            out = f(x)
        return float(out.data.reshape(-1)[0]) if isinstance(out, Tensor) else float(out)

    flat = x.data.reshape(-1)
    grad = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = value()
        flat[i] = orig - eps
        lo = value()
        flat[i] = orig
        grad[i] = (hi - lo) / (2 * eps)
    return grad.reshape(x.shape)


def max_rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Largest elementwise ``|a-b| / max(|a|, |b|, floor)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / den).max())
