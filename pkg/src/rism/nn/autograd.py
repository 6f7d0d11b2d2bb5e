"""A small reverse-mode differentiation engine over numpy arrays.

The op set is exactly what the inverse-sensor-model network and its loss
need. Spatial ops work on channel-major ``(C, B, H, W)`` arrays, which lets a
convolution run as one ``(O, C*k*k) @ (C*k*k, B*H*W)`` product with no
transposes.
"""

from __future__ import annotations

import contextlib
import threading
from collections.abc import Callable, Sequence

import numpy as np
from scipy.special import expit

from ..grids import PolarCartMap

__all__ = [
    "Tensor",
    "no_grad",
    "debug_checks",
    "as_tensor",
    "add",
    "mul",
    "exp",
    "log",
    "square",
    "softplus",
    "leaky_relu",
    "sum",
    "transpose",
    "take",
    "concat",
    "conv2d",
    "max_pool2d",
    "upsample2d",
    "polar_to_cart",
]

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def _debug() -> bool:
    return getattr(_state, "debug", False)


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording a graph."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


@contextlib.contextmanager
def debug_checks(enabled: bool = True):
    """Raise ``FloatingPointError`` as soon as an op produces a non-finite value or gradient."""
    prev = _debug()
    _state.debug = enabled
    try:
        yield
    finally:
        _state.debug = prev


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")


class Tensor:
    """An array plus the bookkeeping needed to backpropagate into it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_freed", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._freed = False
        self.name = name

    # -- inspection -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None and not self._freed

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __float__(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op})"

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(as_tensor(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / np.asarray(other))

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None):
        return sum(self, axis)

    def zero_grad(self) -> None:
        self.grad = None

    # -- backpropagation --------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate gradients into every leaf reachable from this tensor.

        The graph is released afterwards; a second call raises ``RuntimeError``.
        """
        if self._freed:
            raise RuntimeError("graph already released by a previous backward(); run forward again")
        if self._backward is None:
            raise RuntimeError("tensor has no recorded graph; run forward with gradients enabled")
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError("backward() without a gradient needs a scalar tensor")
            grad = np.ones_like(self.data)

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        debug = _debug()
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if debug:
                    _check_finite(pg, f"gradient of {p._op}")
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None
                node._freed = True


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    return Tensor(arr)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if _debug():
        _check_finite(data, f"output of {op}")
    out = Tensor(data)
    out._op = op
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), backward, "add")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), backward, "mul")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def square(a: Tensor) -> Tensor:
    return _node(a.data * a.data, (a,), lambda g: (2 * g * a.data,), "square")


def softplus(a: Tensor) -> Tensor:
    """``log(1 + exp(a))`` evaluated without overflow."""
    out = np.logaddexp(0, a.data).astype(a.dtype, copy=False)
    return _node(out, (a,), lambda g: (g * expit(a.data),), "softplus")


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    pos = a.data > 0
    out = np.where(pos, a.data, a.data * a.dtype.type(slope))

    def backward(g):
        return (np.where(pos, g, g * g.dtype.type(slope)),)

    return _node(out, (a,), backward, "leaky_relu")


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = np.asarray(a.data.sum(axis=axis))
    shape = a.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _node(out, (a,), backward, "sum")


# -- shape ------------------------------------------------------------------


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def take(a: Tensor, index) -> Tensor:
    shape = a.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return _node(a.data[index], (a,), backward, "take")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


# -- spatial ops on (C, B, H, W) ----------------------------------------------


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Stride-1 'same' convolution (cross-correlation) of ``(C, B, H, W)`` input.

    Even kernels pad ``(k-1)//2`` before and ``k//2`` after each spatial axis.
    """
    c, b, h, w = x.shape
    o, c_w, k, k2 = weight.shape
    if c_w != c or k != k2:
        raise ValueError(f"weight {weight.shape} does not fit input with {c} channels")
    dtype = x.dtype
    if k == 1:
        cols = x.data.reshape(c, -1)
    else:
        p0 = (k - 1) // 2
        xp = np.zeros((c, b, h + k - 1, w + k - 1), dtype=dtype)
        xp[:, :, p0 : p0 + h, p0 : p0 + w] = x.data
        cols = np.empty((c, k, k, b, h, w), dtype=dtype)
        for i in range(k):
            for j in range(k):
                cols[:, i, j] = xp[:, :, i : i + h, j : j + w]
        del xp
        cols = cols.reshape(c * k * k, -1)
    wmat = weight.data.reshape(o, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(o, b, h, w)

    def backward(g):
        g2 = g.reshape(o, -1)
        gw = (g2 @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=1) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = wmat.T @ g2
            if k == 1:
                gx = dcols.reshape(x.shape)
            else:
                dcols = dcols.reshape(c, k, k, b, h, w)
                p0 = (k - 1) // 2
                dxp = np.zeros((c, b, h + k - 1, w + k - 1), dtype=g.dtype)
                for i in range(k):
                    for j in range(k):
                        dxp[:, :, i : i + h, j : j + w] += dcols[:, i, j]
                gx = np.ascontiguousarray(dxp[:, :, p0 : p0 + h, p0 : p0 + w])
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _node(out, parents, backward, "conv2d")


def max_pool2d(x: Tensor) -> Tensor:
    """2x2 max pool, stride 2. Ties go to the first element in row-major order."""
    c, b, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"max_pool2d needs even spatial dims, got {h}x{w}")
    win = x.data.reshape(c, b, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(c, b, h // 2, w // 2, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gwin = np.zeros((c, b, h // 2, w // 2, 4), dtype=g.dtype)
        np.put_along_axis(gwin, arg[..., None], g[..., None], axis=-1)
        gx = gwin.reshape(c, b, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(c, b, h, w)
        return (gx,)

    return _node(out, (x,), backward, "max_pool2d")


def upsample2d(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling."""
    c, b, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g):
        return (g.reshape(c, b, h, 2, w, 2).sum(axis=(3, 5)),)

    return _node(out, (x,), backward, "upsample2d")


def polar_to_cart(x: Tensor, pmap: PolarCartMap) -> Tensor:
    """Fixed bilinear polar -> Cartesian resampling of ``(C, B, Theta, R)`` features."""
    c, b = x.shape[:2]
    if x.shape[2:] != pmap.polar_shape:
        raise ValueError(f"features {x.shape[2:]} do not match map {pmap.polar_shape}")
    m, mt = pmap.operators(x.dtype)
    flat = x.data.reshape(c * b, -1)
    out = np.asarray((m @ flat.T).T).reshape((c, b) + pmap.cart_shape)

    def backward(g):
        gf = g.reshape(c * b, -1)
        return (np.asarray((mt @ gf.T).T).reshape(x.shape),)

    return _node(np.ascontiguousarray(out), (x,), backward, "polar_to_cart")
