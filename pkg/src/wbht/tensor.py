"""Dense float64 tensors with define-by-run reverse-mode autodiff.

The graph is rebuilt on every forward pass: each op produces a node holding
its parent tensors and a closure that maps the incoming gradient to parent
gradients.  ``backward`` walks the graph in reverse topological order and
accumulates into the persistent ``grad`` buffers of tracked leaves.

Everything is float64; gradient-check tolerances drive the test suite and
the memory cost is irrelevant at this scale.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import ContractError, ShapeError

_grad_enabled = True
_check_finite = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf detection on every op result (slow, for tests)."""
    global _check_finite
    _check_finite = bool(enabled)


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _finite_check(data: np.ndarray) -> None:
    if _check_finite and not np.all(np.isfinite(data)):
        raise ContractError("non-finite values in tensor (debug check)")


class Tensor:
    """A dense float64 array, optionally tracked for gradients.

    Leaves created with ``requires_grad=True`` carry a same-shape ``grad``
    buffer that ``backward`` accumulates into; intermediate op results hold
    their gradient only transiently during the backward sweep.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _finite_check(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents = None
        self._bwd = None

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return mul(self, 1.0 / other)
        return mul(self, reciprocal(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def backward(self):
        backward(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def custom_op(data: np.ndarray, parents, bwd) -> Tensor:
    """Create an op node.

    ``bwd(grad_out)`` must return a sequence of gradients aligned with
    ``parents`` (``None`` entries are skipped).  When grad mode is off or no
    parent is tracked, a detached constant is returned instead.
    """
    _finite_check(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        t = Tensor.__new__(Tensor)
        t.data = data
        t.requires_grad = True
        t.grad = None
        t._parents = tuple(parents)
        t._bwd = bwd
        return t
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- arithmetic ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data + b.data

    def bwd(g):
        return (_unbroadcast(g, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g, b.data.shape) if b.requires_grad else None)

    return custom_op(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data * b.data

    def bwd(g):
        return (_unbroadcast(g * b.data, a.data.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.data.shape) if b.requires_grad else None)

    return custom_op(out, (a, b), bwd)


def reciprocal(a: Tensor) -> Tensor:
    out = 1.0 / a.data

    def bwd(g):
        return (-g * out * out,)

    return custom_op(out, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bwd(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape)
        if b.requires_grad:
            gb = _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape)
        return ga, gb

    return custom_op(out, (a, b), bwd)


# -- elementwise nonlinearities ------------------------------------------------


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def bwd(g):
        return (g * (x.data > 0.0),)

    return custom_op(out, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-x.data))

    def bwd(g):
        return (g * out * (1.0 - out),)

    return custom_op(out, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def bwd(g):
        return (g * (1.0 - out * out),)

    return custom_op(out, (x,), bwd)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)

    def bwd(g):
        return (g * out,)

    return custom_op(out, (x,), bwd)


def log(x: Tensor) -> Tensor:
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(x.data)

    def bwd(g):
        return (g / x.data,)

    return custom_op(out, (x,), bwd)


def sqrt(x: Tensor) -> Tensor:
    with np.errstate(invalid="ignore"):
        out = np.sqrt(x.data)

    def bwd(g):
        return (g * 0.5 / out,)

    return custom_op(out, (x,), bwd)


def sqrt_or_zero_grad(x: Tensor) -> Tensor:
    """sqrt with the zero subgradient at x == 0 (for sums of squares whose
    root would otherwise blow up the backward pass at a perfect fit)."""
    out = np.sqrt(x.data)

    def bwd(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            grad = g * 0.5 / out
        return (np.where(x.data > 0.0, grad, 0.0),)

    return custom_op(out, (x,), bwd)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(x.data, lo, hi)

    def bwd(g):
        return (g * ((x.data >= lo) & (x.data <= hi)),)

    return custom_op(out, (x,), bwd)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted stable softmax along ``axis``."""
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return custom_op(out, (x,), bwd)


# -- shape manipulation --------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def bwd(g):
        return (g.reshape(x.data.shape),)

    return custom_op(out, (x,), bwd)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = x.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (g.transpose(inv),)

    return custom_op(out, (x,), bwd)


def broadcast_to(x: Tensor, shape) -> Tensor:
    out = np.broadcast_to(x.data, shape)

    def bwd(g):
        return (_unbroadcast(g, x.data.shape),)

    return custom_op(np.ascontiguousarray(out), (x,), bwd)


def take(x: Tensor, idx) -> Tensor:
    out = x.data[idx]
    if np.isscalar(out) or out.ndim == 0:
        out = np.asarray(out, dtype=np.float64)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[idx] += g
        return (gx,)

    return custom_op(np.array(out, copy=True), (x,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return custom_op(out, tuple(tensors), bwd)


# -- reductions ----------------------------------------------------------------


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.data.shape).copy(),)

    return custom_op(np.asarray(out), (x,), bwd)


def tmean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.data.size
    else:
        count = x.data.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / count)


# -- backward sweep --------------------------------------------------------------


def _topo_order(out: Tensor) -> list:
    """Non-leaf nodes reachable from ``out``, parents before children."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and p._parents is not None and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(out: Tensor) -> None:
    """Reverse-mode accumulation from a scalar output into tracked leaves."""
    if out.data.size != 1:
        raise ContractError(f"backward requires a scalar output, got shape {out.shape}")
    if not out.requires_grad:
        return
    seed = np.ones_like(out.data)
    if out._parents is None:
        out.grad += seed
        return

    pending: dict[int, np.ndarray] = {id(out): seed}
    for node in reversed(_topo_order(out)):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        grads = node._bwd(g)
        for parent, pg in zip(node._parents, grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._parents is None:
                parent.grad += pg
            else:
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg
