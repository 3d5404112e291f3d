"""Minimal reverse-mode differentiation on dense float64 arrays.

The computation graph is a define-by-run tape: every op returns a new
Tensor that remembers its parents and a closure that routes the upstream
gradient to them. Calling ``backward`` on a tensor topologically sorts
the tape and accumulates exact gradients into every reachable tensor
with ``requires_grad`` set.

Shapes follow plain leading-dimension vectorization: an op written for a
vector also accepts a (batch, n) array and treats rows independently.
"""
from __future__ import annotations

import numpy as np

from .errors import DegenerateVector, NonFiniteValue, ShapeMismatch
from .geometry import EPS_PROJECT


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"non-finite value in {where}")


class Tensor:
    """A node on the tape: a value, a gradient slot, and its provenance."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, copy=True)
        _check_finite(arr, name or "tensor")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed: np.ndarray | float | None = None) -> None:
        """Accumulate d(self . seed)/d(node) into every reachable node."""
        if seed is None:
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != self.data.shape:
                raise ShapeMismatch(
                    f"seed shape {seed.shape} != output shape {self.data.shape}"
                )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        _accumulate(self, seed)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # arithmetic sugar; scalars are promoted to constant tensors
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

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not (t.requires_grad or t._parents):
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad = t.grad + g


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad or p._parents for p in parents)
    out.name = None
    out._parents = parents if out.requires_grad else ()
    out._backward = backward_fn if out.requires_grad else None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g over the axes numpy broadcasting introduced."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary_shapes_ok(a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes_ok(a.data, b.data)
    out_data = a.data + b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes_ok(a.data, b.data)
    out_data = a.data - b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes_ok(a.data, b.data)
    out_data = a.data * b.data

    def bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bw, "mul")


def scale(x, c: float) -> Tensor:
    """Multiply by a python float (no gradient w.r.t. c)."""
    x = _as_tensor(x)
    c = float(c)

    def bw(g):
        _accumulate(x, g * c)

    return _make(x.data * c, (x,), bw, "scale")


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ W^T + b for x of shape (batch, in) or (in,); W is (out, in)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if w.data.ndim != 2 or b.data.ndim != 1 or w.data.shape[0] != b.data.shape[0]:
        raise ShapeMismatch(f"affine weights {w.data.shape} / bias {b.data.shape}")
    if x.data.shape[-1] != w.data.shape[1]:
        raise ShapeMismatch(f"affine input {x.data.shape} vs weights {w.data.shape}")
    if x.data.ndim == 1:
        out_data = w.data @ x.data + b.data

        def bw(g):
            _accumulate(x, w.data.T @ g)
            _accumulate(w, np.outer(g, x.data))
            _accumulate(b, g)

    elif x.data.ndim == 2:
        out_data = x.data @ w.data.T + b.data

        def bw(g):
            _accumulate(x, g @ w.data)
            _accumulate(w, g.T @ x.data)
            _accumulate(b, g.sum(axis=0))

    else:
        raise ShapeMismatch(f"affine input must be 1-d or 2-d, got {x.data.shape}")
    return _make(out_data, (x, w, b), bw, "affine")


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out_data = np.tanh(x.data)

    def bw(g):
        _accumulate(x, g * (1.0 - out_data * out_data))

    return _make(out_data, (x,), bw, "tanh")


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0.0

    def bw(g):
        _accumulate(x, g * mask)

    return _make(np.where(mask, x.data, 0.0), (x,), bw, "relu")


def softplus(x) -> Tensor:
    """log(1 + exp(x)) in the overflow-safe form."""
    x = _as_tensor(x)
    out_data = np.maximum(x.data, 0.0) + np.log1p(np.exp(-np.abs(x.data)))

    def bw(g):
        sig = 1.0 / (1.0 + np.exp(-x.data))
        _accumulate(x, g * sig)

    return _make(out_data, (x,), bw, "softplus")


def log(x) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(x.data)

    def bw(g):
        _accumulate(x, g / x.data)

    return _make(out_data, (x,), bw, "log")


def absolute(x) -> Tensor:
    """|x| with subgradient 0 at exactly 0."""
    x = _as_tensor(x)

    def bw(g):
        _accumulate(x, g * np.sign(x.data))

    return _make(np.abs(x.data), (x,), bw, "abs")


def sqrt(x) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(invalid="ignore"):
        out_data = np.sqrt(x.data)

    def bw(g):
        _accumulate(x, g * (0.5 / out_data))

    return _make(out_data, (x,), bw, "sqrt")


def sum_all(x) -> Tensor:
    x = _as_tensor(x)

    def bw(g):
        _accumulate(x, np.full_like(x.data, float(g)))

    return _make(np.asarray(np.sum(x.data)), (x,), bw, "sum")


def mean_all(x) -> Tensor:
    x = _as_tensor(x)
    inv = 1.0 / x.data.size

    def bw(g):
        _accumulate(x, np.full_like(x.data, float(g) * inv))

    return _make(np.asarray(np.mean(x.data)), (x,), bw, "mean")


def squared_norm(x) -> Tensor:
    """Scalar sum of squares of every entry."""
    x = _as_tensor(x)

    def bw(g):
        _accumulate(x, 2.0 * float(g) * x.data)

    return _make(np.asarray(np.sum(x.data * x.data)), (x,), bw, "squared_norm")


def row_squared_norm(x) -> Tensor:
    """Sum of squares along the last axis: (B, n) -> (B,)."""
    x = _as_tensor(x)
    out_data = np.sum(x.data * x.data, axis=-1)

    def bw(g):
        _accumulate(x, 2.0 * np.expand_dims(g, -1) * x.data)

    return _make(out_data, (x,), bw, "row_squared_norm")


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    in_shape = x.data.shape

    def bw(g):
        _accumulate(x, g.reshape(in_shape))

    return _make(x.data.reshape(shape), (x,), bw, "reshape")


def sphere_project(x) -> Tensor:
    """Row-wise radial projection onto the unit sphere.

    The backward pass applies (I - u u^T)/||v|| per row, so gradients
    leaving this node are tangent to the sphere at the output point.
    """
    x = _as_tensor(x)
    norms = np.linalg.norm(x.data, axis=-1, keepdims=True)
    if np.any(norms <= EPS_PROJECT):
        raise DegenerateVector("row with norm below projection threshold")
    out_data = x.data / norms

    def bw(g):
        radial = np.sum(g * out_data, axis=-1, keepdims=True)
        _accumulate(x, (g - radial * out_data) / norms)

    return _make(out_data, (x,), bw, "sphere_project")


def zero_grads(tensors) -> None:
    """Clear gradient slots on an iterable or mapping of tensors."""
    values = tensors.values() if hasattr(tensors, "values") else tensors
    for t in values:
        t.zero_grad()
