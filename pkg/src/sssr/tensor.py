"""Dense real tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a row-major numpy array (float32 for training, float64 for
numerical verification) and, while gradients are enabled, records the graph of
primitive applications needed to replay the backward pass.  The engine is
deliberately small: only the primitives the reconstruction pipeline composes
are provided, and none of them run on accelerators.

Determinism contract: identical inputs produce bit-identical forward and
backward results; there is no hidden randomness anywhere in this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True


class no_grad:
    """Context manager that suspends graph recording (inference mode)."""

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


class ShapeError(ValueError):
    """Raised when operand dimensions are inconsistent."""


class Tensor:
    """N-dimensional array node of the computation graph.

    ``data`` is always a float32 or float64 numpy array.  ``grad`` is filled
    for every reachable node with ``requires_grad`` after ``backward()``.
    Tensors must be treated as immutable once they participate in a graph;
    parameter updates mutate ``data`` only between recorded passes.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = np.ascontiguousarray(arr, dtype=dtype)
        elif arr.dtype != np.float32 and arr.dtype != np.float64:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Reverse-mode sweep from this node.

        Visits the recorded graph once in reverse topological order and
        accumulates gradients into every ``requires_grad`` node reachable from
        here.  Leaf gradients accumulate across calls; clear them between
        optimization steps.
        """
        if grad is None:
            grad = np.ones_like(self.data)
        order = record(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._backward is not None:
                for parent, pg in node._backward(g):
                    if not parent.requires_grad:
                        continue
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg

    # -- operator sugar -----------------------------------------------------

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
        return neg(self)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}{flag})"


def record(root: Tensor) -> list[Tensor]:
    """Topologically ordered list of the graph under ``root``.

    Each node appears exactly once; replaying the list in reverse drives the
    backward pass.  Iterative so arbitrarily deep unrolled graphs cannot hit
    the recursion limit.
    """
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _pair(a, b):
    """Lift operands to Tensors; python scalars adopt the partner's dtype so
    float32 graphs are not silently promoted to float64."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor) and np.ndim(b) == 0:
        return a, Tensor(np.asarray(b, dtype=a.data.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor) and np.ndim(a) == 0:
        return Tensor(np.asarray(a, dtype=b.data.dtype)), b
    return as_tensor(a), as_tensor(b)


def _make(data, parents, backward) -> Tensor:
    """Create an op result, recording parents only while grads are enabled."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` along the axes numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(g, b.data.shape)))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return ((a, _unbroadcast(g, a.data.shape)), (b, _unbroadcast(-g, b.data.shape)))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def backward(g):
        return (
            (a, _unbroadcast(g * b.data, a.data.shape)),
            (b, _unbroadcast(g * a.data, b.data.shape)),
        )

    return _make(a.data * b.data, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: ((a, -g),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0)

    def backward(g):
        return ((a, g * (a.data > 0)),)

    return _make(out, (a,), backward)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        return ((a, g * out * (1.0 - out)),)

    return _make(out, (a,), backward)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)

    def backward(g):
        return ((a, g * out),)

    return _make(out, (a,), backward)


def absolute(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return ((a, g * np.sign(a.data)),)

    return _make(np.abs(a.data), (a,), backward)


# -- reductions -------------------------------------------------------------


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is None:
            return ((a, np.broadcast_to(g, a.data.shape).copy()),)
        axes = axis if isinstance(axis, tuple) else (axis,)
        if not keepdims:
            g = np.expand_dims(g, axes)
        return ((a, np.broadcast_to(g, a.data.shape).copy()),)

    return _make(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.data.shape[ax]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def l1_loss(a, b) -> Tensor:
    """Mean absolute error between two same-shape tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"l1_loss shapes differ: {a.data.shape} vs {b.data.shape}")
    return mean(absolute(sub(a, b)))


# -- linear algebra / shape -------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")

    def backward(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return _make(a.data @ b.data, (a, b), backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.data.shape

    def backward(g):
        return ((a, g.reshape(old)),)

    return _make(a.data.reshape(shape), (a,), backward)


def concat(parts, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.data.shape[axis] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        pieces = []
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            pieces.append((p, g[tuple(idx)]))
        return tuple(pieces)

    return _make(out, tuple(parts), backward)


def gather_rows(a, index) -> Tensor:
    """Select rows of a 2-D tensor; index -1 yields a zero row.

    The backward pass scatter-adds into the source, so repeated indices
    accumulate.  Index entries are frozen at call time (selection itself is
    not differentiated).
    """
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError("gather_rows expects a 2-D tensor")
    idx = np.asarray(index, dtype=np.int64).ravel()
    all_valid = bool((idx >= 0).all())
    if all_valid:
        out = a.data[idx]
    else:
        valid = idx >= 0
        out = np.zeros((idx.size, a.data.shape[1]), dtype=a.data.dtype)
        out[valid] = a.data[idx[valid]]

    def backward(g):
        # per-column bincount: deterministic scatter-add, much faster than ufunc.at
        if all_valid:
            ids, src = idx, g
        else:
            keep = idx >= 0
            ids, src = idx[keep], g[keep]
        rows, cols = a.data.shape
        da = np.empty_like(a.data)
        for col in range(cols):
            da[:, col] = np.bincount(ids, weights=src[:, col], minlength=rows)
        return ((a, da),)

    return _make(out, (a,), backward)


def take_cols(a, index) -> Tensor:
    """Per-row column selection: (N,K) gathered at (N,k) -> (N,k).

    Column indices must be unique within each row (the backward scatter uses
    direct assignment)."""
    a = as_tensor(a)
    idx = np.asarray(index, dtype=np.int64)
    if a.data.ndim != 2 or idx.shape[0] != a.data.shape[0]:
        raise ShapeError("take_cols expects (N,K) data with (N,k) indices")
    out = np.take_along_axis(a.data, idx, axis=1)

    def backward(g):
        da = np.zeros_like(a.data)
        np.put_along_axis(da, idx, g, axis=1)
        return ((a, da),)

    return _make(out, (a,), backward)


def rowwise_dot(q, keys) -> Tensor:
    """Per-row dot products: (N,d) x (N,K,d) -> (N,K)."""
    q, keys = as_tensor(q), as_tensor(keys)
    out = np.einsum("nd,nkd->nk", q.data, keys.data)

    def backward(g):
        return (
            (q, np.einsum("nk,nkd->nd", g, keys.data)),
            (keys, np.einsum("nk,nd->nkd", g, q.data)),
        )

    return _make(out, (q, keys), backward)


def weighted_rows(weights, values) -> Tensor:
    """Convex-combination contraction: (N,K) x (N,K,d) -> (N,d)."""
    weights, values = as_tensor(weights), as_tensor(values)
    out = np.einsum("nk,nkd->nd", weights.data, values.data)

    def backward(g):
        return (
            (weights, np.einsum("nd,nkd->nk", g, values.data)),
            (values, np.einsum("nk,nd->nkd", weights.data, g)),
        )

    return _make(out, (weights, values), backward)


# -- softmax family ----------------------------------------------------------


def softmax(a, axis: int) -> Tensor:
    """Stabilized softmax along ``axis`` (max subtraction before exp)."""
    a = as_tensor(a)
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for ndim {a.data.ndim}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((a, out * (g - inner)),)

    return _make(out, (a,), backward)


def masked_softmax(scores, mask, axis: int = -1) -> Tensor:
    """Softmax restricted to ``mask``; excluded entries get exactly zero weight.

    Every slice along ``axis`` must contain at least one selected entry.  The
    mask is treated as a constant of the graph.
    """
    scores = as_tensor(scores)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != scores.data.shape:
        raise ShapeError("mask shape must match scores")
    if not mask.any(axis=axis).all():
        raise ShapeError("masked_softmax: some slice selects nothing")
    neg = np.finfo(scores.data.dtype).min
    shifted = np.where(mask, scores.data, neg)
    shifted = shifted - shifted.max(axis=axis, keepdims=True)
    e = np.exp(shifted) * mask
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((scores, out * (g - inner)),)

    return _make(out, (scores,), backward)


# -- gradient verification ---------------------------------------------------


@dataclass
class GradCheckReport:
    """Outcome of one reverse-mode vs. finite-difference comparison."""

    name: str
    max_rel_error: float
    worst_index: tuple
    passed: bool
    tol: float
    note: str = ""

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        msg = f"{status}  {self.name}: max rel err {self.max_rel_error:.3e} (tol {self.tol:.1e})"
        if self.note:
            msg += f" [{self.note}]"
        return msg


def finite_difference(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, component by component.

    ``fn`` receives a float64 Tensor; graph recording is disabled while
    probing.  This is the independent oracle side of every gradient check.
    """
    x0 = np.array(np.asarray(x), dtype=np.float64)
    numeric = np.zeros_like(x0)
    flat = x0.ravel()
    nflat = numeric.ravel()
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = float(fn(Tensor(x0, dtype=np.float64)).data)
            flat[i] = orig - step
            lo = float(fn(Tensor(x0, dtype=np.float64)).data)
            flat[i] = orig
            nflat[i] = (hi - lo) / (2.0 * step)
    return numeric


def compare_gradients(name: str, analytic: np.ndarray, numeric: np.ndarray,
                      tol: float) -> GradCheckReport:
    """Component-wise comparison relative to the largest gradient magnitude
    (near-zero components therefore do not inflate the error).  Non-finite
    values fail with their location."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    for label, arr in (("analytic", analytic), ("numeric", numeric)):
        bad = ~np.isfinite(arr)
        if bad.any():
            where = tuple(int(v) for v in np.argwhere(bad)[0])
            return GradCheckReport(name, float("inf"), where, False, tol,
                                   f"non-finite {label} gradient at {where}")
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale <= 1e-12:
        return GradCheckReport(name, 0.0, (), True, tol, "gradient numerically zero")
    rel = np.abs(analytic - numeric) / scale
    worst = tuple(int(v) for v in np.unravel_index(int(rel.argmax()), rel.shape))
    max_rel = float(rel.max())
    return GradCheckReport(name, max_rel, worst, max_rel <= tol, tol)


def gradient_check(fn, x, step: float = 1e-5, tol: float = 1e-5, name: str = "") -> GradCheckReport:
    """Compare the reverse-mode gradient of ``fn`` against central differences.

    ``fn`` maps a Tensor to a scalar Tensor and must be deterministic.  The
    check always runs in float64.
    """
    x0 = np.array(np.asarray(x), dtype=np.float64)
    leaf = Tensor(x0, requires_grad=True, dtype=np.float64)
    out = fn(leaf)
    out.backward(np.float64(1.0))
    analytic = np.zeros_like(x0) if leaf.grad is None else np.array(leaf.grad, dtype=np.float64)
    numeric = finite_difference(fn, x0, step)
    return compare_gradients(name, analytic, numeric, tol)
