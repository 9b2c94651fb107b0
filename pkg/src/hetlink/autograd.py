"""Reverse-mode autodiff over dense 2-D arrays plus a sparse aggregation kernel.

Every value is a :class:`Tensor` holding a 2-D numpy array. Primitives record
their inputs and a closure computing the adjoint; :meth:`Tensor.backward`
walks the recorded graph once in reverse topological order.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

_DEFAULT_DTYPE = np.float32
_kink_log: list | None = None


def default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype used for new tensors."""
    global _DEFAULT_DTYPE
    old, _DEFAULT_DTYPE = _DEFAULT_DTYPE, np.dtype(dtype).type
    try:
        yield
    finally:
        _DEFAULT_DTYPE = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.array(data, dtype=dtype or _DEFAULT_DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor values must be finite")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self.op = "leaf"

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents) if out.requires_grad else ()
        out._backward = None
        out.op = op
        return out

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def backward(self, grad: np.ndarray | None = None):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar tensor")
            grad = np.ones_like(self.data)
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node._parents if id(p) not in seen)
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, neg(other))

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)


def as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out = Tensor._result(a.data @ b.data, (a, b), "matmul")
    out._backward = lambda g: (g @ b.data.T, a.data.T @ g)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; a ``(1, n)`` or ``(n, 1)`` operand broadcasts."""
    a, b = as_tensor(a, a.dtype if isinstance(a, Tensor) else None), as_tensor(b)
    out = Tensor._result(a.data + b.data, (a, b), "add")
    out._backward = lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor._result(-a.data, (a,), "neg")
    out._backward = lambda g: (-g,)
    return out


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; ``b`` may be a constant array."""
    if not isinstance(b, Tensor):
        const = np.asarray(b, dtype=a.dtype)
        out = Tensor._result(a.data * const, (a,), "mul_const")
        out._backward = lambda g: (_unbroadcast(g * const, a.shape),)
        return out
    out = Tensor._result(a.data * b.data, (a, b), "mul")
    out._backward = lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape))
    return out


def relu(a: Tensor) -> Tensor:
    positive = a.data > 0
    if _kink_log is not None:
        _kink_log.append(positive.copy())
    out = Tensor._result(np.where(positive, a.data, 0).astype(a.dtype, copy=False), (a,), "relu")
    out._backward = lambda g: (g * positive,)
    return out


def identity(a: Tensor) -> Tensor:
    return a


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    out = Tensor._result(s, (a,), "sigmoid")
    out._backward = lambda g: (g * s * (1 - s),)
    return out


def softplus(a: Tensor) -> Tensor:
    """``log(1 + exp(a))`` computed without overflow."""
    out = Tensor._result(np.logaddexp(0, a.data).astype(a.dtype, copy=False), (a,), "softplus")
    out._backward = lambda g: (g * _sigmoid(a.data),)
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1 / (1 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1 + ex)
    return out


def gather_rows(a: Tensor, index) -> Tensor:
    """``a[index]``; repeated indices accumulate in the adjoint."""
    index = np.asarray(index, dtype=np.int64)
    if len(index) and (index.min() < 0 or index.max() >= a.shape[0]):
        raise IndexError(f"row index out of range for {a.shape[0]} rows")
    out = Tensor._result(a.data[index], (a,), "gather_rows")
    out._backward = lambda g: (_segment_sum(g, index, a.shape[0]),)
    return out


def _segment_sum(values: np.ndarray, index: np.ndarray, n_rows: int) -> np.ndarray:
    """Row ``j`` of the result sums the rows ``i`` of ``values`` with ``index[i] == j``."""
    m = sp.csr_matrix((np.ones(len(index), dtype=values.dtype), (index, np.arange(len(index)))),
                      shape=(n_rows, len(index)))
    return np.asarray(m @ values)


def scatter_add_rows(a: Tensor, index, n_rows: int) -> Tensor:
    """Row ``index[i]`` of the result accumulates row ``i`` of ``a``."""
    index = np.asarray(index, dtype=np.int64)
    if len(index) != a.shape[0]:
        raise ValueError("one target row per input row required")
    if len(index) and (index.min() < 0 or index.max() >= n_rows):
        raise IndexError("scatter index out of range")
    out = Tensor._result(_segment_sum(a.data, index, n_rows), (a,), "scatter_add_rows")
    out._backward = lambda g: (g[index],)
    return out


def take_cols(a: Tensor, index) -> Tensor:
    index = np.asarray(index, dtype=np.int64)
    out = Tensor._result(a.data[:, index], (a,), "take_cols")

    unique = len(np.unique(index)) == len(index)

    def backward(g):
        ga = np.zeros_like(a.data)
        if unique:
            ga[:, index] = g
        else:
            ga += _segment_sum(g.T, index, a.shape[1]).T
        return (ga,)

    out._backward = backward
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if len({p.shape[0] for p in parts}) != 1:
        raise ValueError("concatenated tensors need equal row counts")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    out = Tensor._result(np.concatenate([p.data for p in parts], axis=1), parts, "concat_cols")
    out._backward = lambda g: tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))
    return out


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])
    out = Tensor._result(np.concatenate([p.data for p in parts], axis=0), parts, "concat_rows")
    out._backward = lambda g: tuple(g[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))
    return out


def slice_cols(a: Tensor, start: int, stop: int | None = None, step: int = 1) -> Tensor:
    """Columns ``start:stop:step`` (a basic slice, so no index array is built)."""
    cols = slice(start, stop, step)
    out = Tensor._result(np.ascontiguousarray(a.data[:, cols]), (a,), "slice_cols")

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[:, cols] = g
        return (ga,)

    out._backward = backward
    return out


def total(a: Tensor) -> Tensor:
    out = Tensor._result(a.data.sum(dtype=a.dtype).reshape(1, 1), (a,), "sum")
    out._backward = lambda g: (np.broadcast_to(g, a.shape).astype(a.dtype),)
    return out


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor._result((a.data.sum(dtype=a.dtype) / max(n, 1)).reshape(1, 1).astype(a.dtype), (a,), "mean")
    out._backward = lambda g: (np.broadcast_to(g / max(n, 1), a.shape).astype(a.dtype),)
    return out


def row_sum(a: Tensor) -> Tensor:
    out = Tensor._result(a.data.sum(axis=1, keepdims=True), (a,), "row_sum")
    out._backward = lambda g: (np.broadcast_to(g, a.shape).astype(a.dtype),)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor._result((a.data * c).astype(a.dtype, copy=False), (a,), "scale")
    out._backward = lambda g: (g * c,)
    return out


def spmm(matrix: sp.spmatrix, a: Tensor) -> Tensor:
    """Constant sparse matrix times a dense tensor."""
    if matrix.shape[1] != a.shape[0]:
        raise ValueError(f"sparse shape {matrix.shape} incompatible with {a.shape}")
    m = matrix if matrix.dtype == a.dtype else matrix.astype(a.dtype)
    out = Tensor._result(np.asarray(m @ a.data), (a,), "spmm")
    out._backward = lambda g: (np.asarray(m.T @ g),)
    return out


def mean_adjacency(src, dst, n_src: int, n_dst: int, dtype=None) -> sp.csr_matrix:
    """``n_dst x n_src`` matrix whose row ``i`` averages i's in-neighbors."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    if len(src) and (src.min() < 0 or src.max() >= n_src):
        raise IndexError(f"edge source out of range for {n_src} source nodes")
    if len(dst) and (dst.min() < 0 or dst.max() >= n_dst):
        raise IndexError(f"edge destination out of range for {n_dst} destination nodes")
    deg = np.bincount(dst, minlength=n_dst).astype(np.float64)
    weight = 1.0 / deg[dst] if len(dst) else np.zeros(0)
    mat = sp.csr_matrix((weight, (dst, src)), shape=(n_dst, n_src))
    return mat.astype(dtype or _DEFAULT_DTYPE)


def relation_mean_aggregate(features: Tensor, edges, n_dst: int) -> Tensor:
    """Row ``i`` = mean of the feature rows of i's in-neighbors; zeros if none.

    ``edges`` is a ``(src, dst)`` pair or anything with ``.src``/``.dst``.
    """
    src, dst = (edges.src, edges.dst) if hasattr(edges, "src") else edges
    return spmm(mean_adjacency(src, dst, features.shape[0], n_dst, features.dtype), features)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero each entry with probability ``p``, rescale survivors."""
    if not 0 <= p <= 1:
        raise ValueError(f"dropout probability must lie in [0, 1], got {p}")
    if not training or p == 0:
        return x
    if p == 1:
        raise ValueError("feature dropout with p=1 would zero every entry")
    keep = rng.random(x.shape) >= p
    return mul(x, keep.astype(x.dtype) / (1 - p))


@contextlib.contextmanager
def record_kinks():
    """Collect the sign pattern of every ReLU input evaluated inside the block."""
    global _kink_log
    old, _kink_log = _kink_log, []
    try:
        yield _kink_log
    finally:
        _kink_log = old


@dataclass
class GradCheckReport:
    eps: float
    tolerance: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.max_rel_error.values())

    @property
    def coverage(self) -> float:
        """Fraction of entries actually compared (the rest straddled a kink)."""
        total = sum(self.checked.values()) + sum(self.skipped.values())
        return sum(self.checked.values()) / total if total else 0.0

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def __str__(self) -> str:
        lines = [f"{'PASS' if self.passed else 'FAIL'} max rel err {self.worst:.3e} (tol {self.tolerance:g})"]
        for name, err in self.max_rel_error.items():
            lines.append(f"  {name}: {err:.3e} over {self.checked[name]} entries, "
                         f"{self.skipped[name]} skipped at kinks")
        return "\n".join(lines)


def grad_check(f: Callable[[], Tensor], params: Mapping[str, Tensor], eps: float = 1e-3,
               tolerance: float = 1e-3, floor: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    ``f`` recomputes a scalar loss from the current values of ``params``
    (which are perturbed in place and restored). The relative error of an
    entry is ``|a - n| / max(|a|, |n|, floor)``. Entries whose ±eps
    evaluations flip the sign of any ReLU input straddle a kink and are
    skipped.
    """
    for p in params.values():
        p.grad = None
    with record_kinks() as base_pattern:
        loss = f()
    if not np.all(np.isfinite(loss.data)):
        raise FloatingPointError("loss is not finite")
    loss.backward()
    report = GradCheckReport(eps, tolerance)
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        worst, skipped = 0.0, 0
        for i in range(flat.size):
            orig = flat[i]
            values = []
            kinked = False
            for delta in (eps, -eps):
                flat[i] = orig + delta
                with record_kinks() as pattern:
                    val = f().item()
                if not np.isfinite(val):
                    flat[i] = orig
                    raise FloatingPointError(f"loss not finite when perturbing {name}[{i}]")
                kinked |= len(pattern) != len(base_pattern) or any(
                    not np.array_equal(a, b) for a, b in zip(pattern, base_pattern))
                values.append(val)
            flat[i] = orig
            if kinked:
                skipped += 1
                continue
            numeric = (values[0] - values[1]) / (2 * eps)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
        report.max_rel_error[name] = worst
        report.skipped[name] = skipped
        report.checked[name] = flat.size - skipped
    return report
