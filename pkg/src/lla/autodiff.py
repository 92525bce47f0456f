"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

Every operation the model needs is defined here as a plain function taking
and returning :class:`Tensor` objects.  While gradient recording is enabled
and at least one operand requires a gradient, the output remembers its
parents and a backward rule.  ``Tensor.backward`` replays those rules in
reverse creation order, which is a valid topological order because a node
is always created after all of its inputs.

Broadcasting is deliberately absent: binary operations require equal shapes.
"""

import contextlib
import itertools
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.blas import dger
from scipy.special import expit

from .errors import DimensionError, DomainError, PreconditionError, TrainingError

#: Guard added before taking logs of model outputs and used to clamp BCE inputs.
EPS = 1e-12

_local = threading.local()
_counter = itertools.count()


def is_grad_enabled():
    return getattr(_local, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


class SparseRows:
    """Row-indexed gradient for a 2-D parameter: ``{row: vector}``."""

    __slots__ = ("rows", "shape")

    def __init__(self, shape, rows=None):
        self.shape = tuple(shape)
        self.rows = {} if rows is None else rows

    def add_row(self, index, vec):
        if index in self.rows:
            self.rows[index] = self.rows[index] + vec
        else:
            self.rows[index] = np.array(vec, copy=True)

    def merge(self, other):
        for i, vec in other.rows.items():
            self.add_row(i, vec)
        return self

    def to_dense(self, dtype=np.float64):
        out = np.zeros(self.shape, dtype=dtype)
        for i, vec in self.rows.items():
            out[i] += vec
        return out

    def nonzero_rows(self):
        return sorted(i for i, vec in self.rows.items() if np.any(vec != 0))


class Outer:
    """Rank-1 gradient ``u v^T`` kept factored until it reaches a leaf.

    Dense leaves add it in place with a BLAS rank-1 update, which avoids a
    temporary the size of the weight matrix on every recurrent step.
    """

    __slots__ = ("u", "v")

    def __init__(self, u, v):
        self.u, self.v = u, v

    def to_dense(self, dtype=np.float64):
        return np.outer(self.u, self.v).astype(dtype, copy=False)


class Tensor:
    """An n-d float array, optionally tracking gradients.

    ``sparse_grad`` leaves (embedding tables) accumulate :class:`SparseRows`
    rather than a dense array, so a step only touches looked-up rows.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "sparse_grad",
                 "_parents", "_backward", "_order")

    def __init__(self, data, requires_grad=False, name=None, sparse_grad=False, dtype=None):
        if isinstance(data, np.ndarray) and dtype is None and data.dtype.kind == "f":
            self.data = data
        else:
            self.data = np.asarray(data, dtype=dtype or np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self.sparse_grad = sparse_grad
        self._parents = ()
        self._backward = None
        self._order = -1

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # operator sugar for the common binary ops
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def _accumulate(self, g):
        if isinstance(g, Outer):
            if self.grad is None or self.sparse_grad or self.data.dtype != np.float64:
                g = g.to_dense(self.data.dtype)
            else:
                # grad.T is Fortran-ordered, so dger updates the buffer in place
                dger(1.0, g.v, g.u, a=self.grad.T, overwrite_a=1)
                return
        if self.sparse_grad:
            if not isinstance(g, SparseRows):
                g = SparseRows(self.shape, {i: g[i] for i in range(self.shape[0]) if np.any(g[i] != 0)})
            if self.grad is None:
                self.grad = SparseRows(self.shape)
            self.grad.merge(g)
            return
        if isinstance(g, SparseRows):
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
            for i, vec in g.rows.items():
                self.grad[i] += vec
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
        if not self.requires_grad:
            raise PreconditionError("backward() called on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise PreconditionError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=self.data.dtype)
            if grad.shape != self.shape:
                raise DimensionError(f"gradient shape {grad.shape} does not match tensor shape {self.shape}")

        nodes = []
        seen = set()
        stack = [self]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            if node._backward is not None:
                nodes.append(node)
                stack.extend(p for p in node._parents if p.requires_grad)
        nodes.sort(key=lambda n: n._order, reverse=True)

        pending = {id(self): grad}
        if self._backward is None:
            self._accumulate(grad)
            return
        for node in nodes:
            g = pending.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._backward is None:
                    parent._accumulate(pg)
                    continue
                if isinstance(pg, (SparseRows, Outer)):
                    pg = pg.to_dense(parent.data.dtype)
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward):
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        out._parents = parents
        out._backward = backward
        out._order = next(_counter)
        return out
    return Tensor(data)


def _same_shape(opname, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{opname}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b):
    """Matrix product of ``a`` (r x k) with ``b`` (k x c) or a vector ``b`` (k)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = Outer(g, B) if B.ndim == 1 else g @ B.T
        if b.requires_grad:
            gb = A.T @ g
        return ga, gb

    return _result(A @ B, (a, b), backward)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    A, B = a.data, b.data
    return _result(A * B, (a, b), lambda g: (g * B, g * A))


def scale(x, c):
    """Multiply by a Python scalar constant."""
    x = as_tensor(x)
    return _result(x.data * c, (x,), lambda g: (g * c,))


def add_n(tensors):
    """Sum a non-empty list of same-shaped tensors."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise PreconditionError("add_n: empty list")
    for t in tensors[1:]:
        _same_shape("add_n", tensors[0], t)
    total = tensors[0].data.copy()
    for t in tensors[1:]:
        total = total + t.data
    return _result(total, tuple(tensors), lambda g: (g,) * len(tensors))


def sum(x):  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    shape = x.shape
    return _result(np.sum(x.data), (x,), lambda g: (np.full(shape, g, dtype=x.data.dtype),))


def mean(x):
    x = as_tensor(x)
    n = x.data.size
    shape = x.shape
    return _result(np.mean(x.data), (x,), lambda g: (np.full(shape, g / n, dtype=x.data.dtype),))


# ---------------------------------------------------------------------------
# elementwise nonlinearities

def sigmoid(x):
    x = as_tensor(x)
    s = expit(x.data)
    return _result(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x):
    x = as_tensor(x)
    t = np.tanh(x.data)
    return _result(t, (x,), lambda g: (g * (1.0 - t * t),))


def relu(x):
    # subgradient at exactly 0 is 0
    x = as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0).astype(x.data.dtype), (x,), lambda g: (g * mask,))


def log(x, eps=None):
    """Natural log; with ``eps`` given computes ``log(x + eps)`` instead."""
    x = as_tensor(x)
    shifted = x.data if eps is None else x.data + eps
    if np.any(shifted <= 0):
        raise DomainError("log: non-positive input (use the eps-guarded variant for model outputs)")
    return _result(np.log(shifted), (x,), lambda g: (g / shifted,))


# ---------------------------------------------------------------------------
# structural ops

def concat(tensors):
    """Concatenate along the first axis."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise PreconditionError("concat: empty list")
    rest = tensors[0].shape[1:]
    for t in tensors:
        if t.data.ndim == 0 or t.shape[1:] != rest:
            raise DimensionError(f"concat: incompatible shapes {[u.shape for u in tensors]}")
    bounds = np.cumsum([0] + [t.shape[0] for t in tensors])

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return _result(np.concatenate([t.data for t in tensors]), tuple(tensors), backward)


def slice_(x, start, stop):
    """``x[start:stop]`` along the first axis."""
    x = as_tensor(x)
    shape, dtype = x.shape, x.data.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        full[start:stop] = g
        return (full,)

    return _result(x.data[start:stop], (x,), backward)


def split(x, n):
    """Split a vector into ``n`` equal consecutive chunks."""
    x = as_tensor(x)
    if x.shape[0] % n:
        raise DimensionError(f"split: length {x.shape[0]} not divisible by {n}")
    k = x.shape[0] // n
    return [slice_(x, i * k, (i + 1) * k) for i in range(n)]


def row(table, index):
    """Row lookup in a 2-D table (an embedding); gradients stay row-sparse."""
    table = as_tensor(table)
    if not 0 <= index < table.shape[0]:
        raise PreconditionError(f"row: index {index} out of range for {table.shape[0]} rows")
    shape = table.shape

    def backward(g):
        return (SparseRows(shape, {index: np.array(g, copy=True)}),)

    return _result(table.data[index].copy(), (table,), backward)


def maxpool_vectors(vectors):
    """Per-index maximum over a list of equal-length vectors.

    Each output index routes its gradient to exactly one source; ties go to
    the lowest list position.
    """
    vectors = [as_tensor(v) for v in vectors]
    if not vectors:
        raise PreconditionError("maxpool_vectors: needs at least one vector")
    n = vectors[0].shape
    for v in vectors:
        if v.shape != n or v.data.ndim != 1:
            raise DimensionError(f"maxpool_vectors: incompatible shapes {[u.shape for u in vectors]}")
    stacked = np.stack([v.data for v in vectors])
    winner = np.argmax(stacked, axis=0)
    out = stacked[winner, np.arange(stacked.shape[1])]

    def backward(g):
        return tuple(np.where(winner == j, g, 0.0) for j in range(len(vectors)))

    return _result(out, tuple(vectors), backward)


def grad_reverse(x, lam):
    """Identity forward; multiplies the incoming gradient by ``-lam`` on the way back."""
    if not lam > 0:
        raise PreconditionError(f"grad_reverse: lambda must be positive, got {lam}")
    x = as_tensor(x)
    return _result(x.data.copy(), (x,), lambda g: (-lam * g,))


def softmax(x):
    x = as_tensor(x)
    if x.data.ndim != 1 or x.shape[0] < 1:
        raise DimensionError(f"softmax: expected a non-empty vector, got {x.shape}")
    e = np.exp(x.data - np.max(x.data))
    s = e / np.sum(e)
    return _result(s, (x,), lambda g: (s * (g - np.dot(g, s)),))


# ---------------------------------------------------------------------------
# losses

def bce_loss(pred, target):
    """Mean binary cross entropy; ``target`` is treated as a constant.

    Predictions are clamped into ``[EPS, 1 - EPS]`` before the logs.
    """
    pred = as_tensor(pred)
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.data.dtype)
    if pred.shape != t.shape:
        raise DimensionError(f"bce_loss: shape mismatch {pred.shape} vs {t.shape}")
    p = np.clip(pred.data, EPS, 1.0 - EPS)
    n = p.size
    value = -np.mean(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))
    return _result(np.asarray(value, dtype=pred.data.dtype), (pred,),
                   lambda g: (g * (p - t) / (p * (1.0 - p)) / n,))


def nll_loss(log_probs, target_index):
    log_probs = as_tensor(log_probs)
    n = log_probs.shape[0]
    if not 0 <= target_index < n:
        raise PreconditionError(f"nll_loss: target {target_index} out of range for {n} classes")
    shape, dtype = log_probs.shape, log_probs.data.dtype

    def backward(g):
        out = np.zeros(shape, dtype=dtype)
        out[target_index] = -g
        return (out,)

    return _result(-log_probs.data[target_index], (log_probs,), backward)


# ---------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    """Moments and step count for one group of parameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise PreconditionError("Adam betas must lie in [0, 1)")


def adam_step(params, grads, state, sparse=False):
    """One Adam update, in place on ``params[i].data``.

    ``grads[i]`` may be a dense array, a :class:`SparseRows` or ``None``
    (parameter skipped entirely).  With
    ``sparse=True`` only rows of a 2-D parameter whose gradient is nonzero
    are updated; other rows keep their stale moments (lazy Adam without
    catch-up).  Returns ``state``.
    """
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    for p, g in zip(params, grads):
        if g is None:
            continue
        vals = g.rows.values() if isinstance(g, SparseRows) else (g,)
        for vec in vals:
            if not np.all(np.isfinite(vec)):
                raise TrainingError(f"non-finite gradient for parameter {p.name or '<unnamed>'}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    step_size = state.lr / bc1
    sqrt_bc2 = np.sqrt(bc2)

    for p, g, m, v in zip(params, grads, state.m, state.v):
        if sparse and p.data.ndim == 2:
            if g is None:
                continue
            if isinstance(g, SparseRows):
                idx = g.nonzero_rows()
                if not idx:
                    continue
                rows = np.stack([g.rows[i] for i in idx])
            else:
                idx = np.flatnonzero(np.any(g != 0, axis=1))
                if idx.size == 0:
                    continue
                rows = g[idx]
            idx = np.asarray(idx)
            m[idx] = b1 * m[idx] + (1 - b1) * rows
            v[idx] = b2 * v[idx] + (1 - b2) * rows * rows
            p.data[idx] -= step_size * m[idx] / (np.sqrt(v[idx]) / sqrt_bc2 + state.eps)
            continue
        if g is None:
            continue
        if isinstance(g, SparseRows):
            g = g.to_dense(p.data.dtype)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data -= step_size * m / (np.sqrt(v) / sqrt_bc2 + state.eps)
    return state


class Adam:
    """Stateful wrapper around :func:`adam_step` that reads ``p.grad``."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, sparse=False):
        self.params = list(params)
        self.sparse = sparse
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state, sparse=self.sparse)
