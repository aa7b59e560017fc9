"""Dense float tensors with reverse-mode automatic differentiation.

The engine is deliberately small: a ``Tensor`` wraps a numpy array plus an
optional gradient slot, and every differentiable operation records its parent
tensors and a vector-Jacobian closure. ``backward()`` on a scalar loss walks
the recorded graph once in reverse topological order.

Storage is float32 by default; building tensors with ``dtype=np.float64``
switches the whole downstream computation to a float64 shadow, which is what
the finite-difference gradient tests run on.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy.special import expit as _expit

from .errors import ContractError

DEFAULT_DTYPE = np.float32

_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (e.g. teacher forward)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


def check_finite(arr: np.ndarray, what: str = "tensor") -> None:
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{what} contains NaN/Inf values")


class Tensor:
    """N-dimensional float array with an optional gradient slot.

    ``requires_grad=True`` marks a leaf whose gradient is accumulated by
    ``backward``. Tensors produced by operations inherit grad tracking from
    their parents; call ``retain_grad()`` on an intermediate to keep its
    gradient as well (used by Grad-CAM).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_retains")

    def __init__(self, data, requires_grad: bool = False, dtype=None, check: bool = True):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        if check:
            check_finite(arr)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._vjp = None
        self._retains = bool(requires_grad)

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: tuple, vjp) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._retains = False
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._vjp = vjp
        else:
            out.requires_grad = False
            out._parents = ()
            out._vjp = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype, check=False)

    def retain_grad(self) -> "Tensor":
        self._retains = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- backward -------------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode accumulation from this scalar into ``.grad`` slots.

        Each graph node is visited exactly once. Gradients add into existing
        ``.grad`` buffers, so calling backward twice doubles leaf gradients.
        """
        if self.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {self.shape}")
        order = self._toposort()
        flowing = {id(self): np.ones_like(self.data)}
        for node in order:
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node._retains:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = flowing.get(id(parent))
                flowing[id(parent)] = pg if acc is None else acc + pg

    def _toposort(self):
        """Reverse topological order (this node first), iterative DFS."""
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        order.reverse()
        return order

    # -- operators ------------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __rtruediv__(self, other):
        return div(_wrap(other, self.dtype), self)

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __pow__(self, p):
        return pow_scalar(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype), check=False)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (the reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic ---------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor._make(out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return Tensor._make(out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def vjp(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return Tensor._make(out, (a, b), vjp)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = a.data / b.data

    def vjp(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return Tensor._make(out, (a, b), vjp)


def mul_scalar(a: Tensor, s: float) -> Tensor:
    out = a.data * a.data.dtype.type(s)

    def vjp(g):
        return (g * a.data.dtype.type(s),)

    return Tensor._make(out, (a,), vjp)


def add_scalar(a: Tensor, s: float) -> Tensor:
    out = a.data + a.data.dtype.type(s)

    def vjp(g):
        return (g,)

    return Tensor._make(out, (a,), vjp)


def pow_scalar(a: Tensor, p: float) -> Tensor:
    out = a.data ** p

    def vjp(g):
        return (g * p * a.data ** (p - 1),)

    return Tensor._make(out, (a,), vjp)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return Tensor._make(out, (a,), vjp)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return Tensor._make(out, (a,), vjp)


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def vjp(g):
        return (g * (0.5 / out),)

    return Tensor._make(out, (a,), vjp)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return Tensor._make(out, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    out = _expit(a.data)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return Tensor._make(out, (a,), vjp)


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def vjp(g):
        return (g * (a.data > 0),)

    return Tensor._make(out, (a,), vjp)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(a.data, lo, hi)

    def vjp(g):
        return (g * ((a.data >= lo) & (a.data <= hi)),)

    return Tensor._make(out, (a,), vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with max-subtraction stabilization."""
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor._make(out, (a,), vjp)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero with probability ``p``, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= p)
    scale = a.data.dtype.type(1.0 / (1.0 - p))
    out = a.data * keep * scale

    def vjp(g):
        return (g * keep * scale,)

    return Tensor._make(out, (a,), vjp)


# -- shape manipulation -------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.data.shape),)

    return Tensor._make(out, (a,), vjp)


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)

    def vjp(g):
        return (np.transpose(g, inv),)

    return Tensor._make(out, (a,), vjp)


def take(a: Tensor, idx) -> Tensor:
    """Basic (slice / integer) indexing with scatter-add backward."""
    out = a.data[idx]

    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[idx] += g
        return (ga,)

    return Tensor._make(out, (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(out, tuple(tensors), vjp)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    out = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        parts = np.split(g, len(tensors), axis=axis)
        return tuple(p.squeeze(axis) for p in parts)

    return Tensor._make(out, tuple(tensors), vjp)


# -- reductions and contractions ----------------------------------------------


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return Tensor._make(out, (a,), vjp)


def mean_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / n, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, a.data.shape).copy(),)

    return Tensor._make(out, (a,), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` where ``a`` is [..., K] and ``b`` is a [K, N] matrix."""
    if b.data.ndim != 2:
        raise ContractError(f"matmul expects a 2-D right operand, got shape {b.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ContractError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        ga = g @ b.data.T
        k = a.data.shape[-1]
        gb = a.data.reshape(-1, k).T @ g.reshape(-1, b.data.shape[1])
        return ga, gb

    return Tensor._make(out, (a, b), vjp)


# -- losses ---------------------------------------------------------------------


def bce(pred: Tensor, target: Tensor, eps: float = 1e-7) -> Tensor:
    """Mean binary cross-entropy; ``pred`` must already be probabilities."""
    p = clip(pred, eps, 1.0 - eps)
    t = target if isinstance(target, Tensor) else Tensor(target, check=False)
    loss = -(t * log(p) + (1.0 - t) * log(1.0 - p))
    return loss.mean()


def mse(pred: Tensor, target: Tensor) -> Tensor:
    t = target if isinstance(target, Tensor) else Tensor(target, check=False)
    d = pred - t
    return (d * d).mean()
