"""Tape-based reverse-mode differentiation over dense numpy arrays.

Only the operators the network needs are provided. Every op returns a
fresh array; inputs are never written to. Tensor-tensor binary ops require
identical shapes (no broadcasting); numpy constants of the same shape and
python scalars are accepted as the second operand.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True
_debug = False


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested op."""


class NumericError(FloatingPointError):
    """A non-finite value was produced while debug checks were on."""


def set_debug(flag: bool) -> None:
    """Enable NaN/Inf checks on every op output."""
    global _debug
    _debug = bool(flag)


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        # numpy float arrays keep their precision; anything else defaults to float32
        arr = np.asarray(data, dtype=dtype)
        keep = isinstance(data, (np.ndarray, np.generic)) and np.issubdtype(arr.dtype, np.floating)
        if dtype is None and not keep:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

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
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        Intermediate gradients are dropped as soon as they have been
        propagated, so only leaves hold ``grad`` afterwards.
        """
        if grad is None:
            if self.size != 1:
                raise ShapeError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.dtype)
        if grad.shape != self.shape:
            raise ShapeError(f"seed gradient shape {grad.shape} != tensor shape {self.shape}")

        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


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


def make(data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    """Wrap an op result, recording ``backward`` when any parent needs grad."""
    if _debug and not np.all(np.isfinite(data)):
        raise NumericError("non-finite value in op output")
    out = Tensor(data)
    parents = tuple(parents)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.array(x, dtype=dtype if dtype is not None else DEFAULT_DTYPE))


def _operand(a: Tensor, b) -> tuple[np.ndarray, Tensor | None]:
    if isinstance(b, Tensor):
        if b.shape != a.shape:
            raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
        return b.data, b
    if np.isscalar(b):
        return np.asarray(b, dtype=a.dtype), None
    arr = np.asarray(b, dtype=a.dtype)
    if arr.shape != a.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {arr.shape}")
    return arr, None


# ----------------------------------------------------------------- elementwise


def add(a: Tensor, b) -> Tensor:
    bd, bt = _operand(a, b)
    if bt is None:
        return make(a.data + bd, (a,), lambda g: (g,))
    return make(a.data + bd, (a, bt), lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    bd, bt = _operand(a, b)
    if bt is None:
        return make(a.data - bd, (a,), lambda g: (g,))
    return make(a.data - bd, (a, bt), lambda g: (g, -g))


def neg(a: Tensor) -> Tensor:
    return make(-a.data, (a,), lambda g: (-g,))


def mul(a: Tensor, b) -> Tensor:
    bd, bt = _operand(a, b)
    ad = a.data
    if bt is None:
        return make(ad * bd, (a,), lambda g: (g * bd,))
    return make(ad * bd, (a, bt), lambda g: (g * bd, g * ad))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return make(ad * ad, (a,), lambda g: (2 * g * ad,))


def sigmoid(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return make(s, (a,), lambda g: (g * s * (1 - s),))


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    return make(t, (a,), lambda g: (g * (1 - t * t),))


def elu(a: Tensor) -> Tensor:
    """ELU with alpha = 1; the derivative at 0 is taken from the right (= 1)."""
    x = a.data
    pos = x > 0
    em = np.expm1(np.minimum(x, 0))
    y = np.where(pos, x, em)
    return make(y, (a,), lambda g: (g * np.where(pos, 1, em + 1).astype(x.dtype),))


def clamp_min(a: Tensor, lo: float = 0.0) -> Tensor:
    keep = a.data > lo
    y = np.where(keep, a.data, np.asarray(lo, dtype=a.dtype))
    return make(y, (a,), lambda g: (g * keep,))


def cube_root(a: Tensor, eps: float = 1e-8) -> Tensor:
    """Sign-preserving cube root.

    The derivative ``1 / (3 |x|^(2/3))`` is singular at 0, so ``eps`` is
    added to the denominator. Relative error of the returned gradient is
    ``eps / |x|^(2/3)``.
    """
    y = np.cbrt(a.data)
    def back(g):
        return (g / (3.0 * (y * y) + 3.0 * eps),)
    return make(y, (a,), back)


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    return make(y, (a,), lambda g: (g * 0.5 / y,))


def div(a: Tensor, b: Tensor) -> Tensor:
    bd, bt = _operand(a, b)
    ad = a.data
    y = ad / bd
    if bt is None:
        return make(y, (a,), lambda g: (g / bd,))
    return make(y, (a, bt), lambda g: (g / bd, -g * y / bd))


# ----------------------------------------------------------------- reductions


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return make(np.asarray(a.data.sum(dtype=np.float64), dtype=a.dtype), (a,),
                lambda g: (np.broadcast_to(g, shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    shape, n = a.shape, a.size
    return make(np.asarray(a.data.mean(dtype=np.float64), dtype=a.dtype), (a,),
                lambda g: (np.full(shape, g / n, dtype=a.dtype),))


# ----------------------------------------------------------------- structure


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    y = a.data.reshape(shape).copy()
    return make(y, (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    y = np.ascontiguousarray(a.data.transpose(axes))
    return make(y, (a,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis``; all other extents must agree."""
    tensors = list(tensors)
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise ShapeError(f"concat extents disagree: {ref} vs {t.shape}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)
    y = np.concatenate([t.data for t in tensors], axis=ax)

    def back(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[ax] = slice(lo, hi)
            out.append(g[tuple(idx)].copy())
        return out

    return make(y, tensors, back)


def split(a: Tensor, sizes: Sequence[int], axis: int = 1) -> list[Tensor]:
    """Split ``a`` into consecutive pieces of the given extents along ``axis``."""
    ax = axis % a.ndim
    if sum(sizes) != a.shape[ax]:
        raise ShapeError(f"split sizes {list(sizes)} do not sum to extent {a.shape[ax]}")
    outs = []
    lo = 0
    for n in sizes:
        idx = [slice(None)] * a.ndim
        idx[ax] = slice(lo, lo + n)
        idx = tuple(idx)

        def back(g, idx=idx):
            full = np.zeros_like(a.data)
            full[idx] = g
            return (full,)

        outs.append(make(a.data[idx].copy(), (a,), back))
        lo += n
    return outs
