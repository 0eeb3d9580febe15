"""A small reverse-mode differentiation engine over 64-bit numpy arrays.

Operations are recorded only while a :class:`Tape` is active::

    with Tape() as tape:
        loss = mean(mul(w, w))
    tape.backward(loss)        # or backward(loss)

Outside a tape every op is a plain forward computation, which is how
evaluation code runs. Sparse operands (scipy matrices) are always constants.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from fedtad.errors import NonFiniteError, ShapeError

_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other))

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _lift(other))


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def as_tensor(x) -> Tensor:
    return _lift(x)


class Tape:
    """Ordered record of differentiable ops; backward replays it in reverse."""

    def __init__(self):
        self.entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> Tape:
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().remove(self)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], grad_fn: Callable) -> None:
        out._tape = self
        self.entries.append((out, inputs, grad_fn))

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1 or loss.data.ndim > 1:
            raise ShapeError("backward (loss must be a scalar)", loss.shape)
        if loss._tape is not None and loss._tape is not self:
            raise ValueError("loss was recorded on a different tape")
        if loss._tape is None:
            if loss.requires_grad:
                _accumulate(loss, np.ones_like(loss.data))
                return
            raise ValueError("loss does not depend on any tensor requiring grad")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for out, inputs, grad_fn in reversed(self.entries):
            upstream = grads.pop(id(out), None)
            if upstream is None:
                continue
            for tensor, g in zip(inputs, grad_fn(upstream)):
                if g is None or not tensor.requires_grad:
                    continue
                if tensor._tape is None:
                    _accumulate(tensor, g)
                elif id(tensor) in grads:
                    grads[id(tensor)] = grads[id(tensor)] + g
                else:
                    grads[id(tensor)] = g

    def reset(self) -> None:
        self.entries.clear()


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=np.float64).reshape(t.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf the scalar ``loss`` depends on."""
    if loss._tape is None:
        if loss.data.size != 1 or loss.data.ndim > 1:
            raise ShapeError("backward (loss must be a scalar)", loss.shape)
        if loss.requires_grad:
            _accumulate(loss, np.ones_like(loss.data))
            return
        raise ValueError("loss was not computed under an active Tape")
    loss._tape.backward(loss)


def _make(op: str, value: np.ndarray, inputs: Sequence[Tensor], grad_fn: Callable) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op}: produced non-finite values")
    out = Tensor(value)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, tuple(inputs), grad_fn)
    return out


# ---------------------------------------------------------------- linear ops

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    return _make("matmul", a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def spmm(s: sp.spmatrix, x: Tensor) -> Tensor:
    """Sparse constant times dense tensor."""
    if x.data.ndim != 2 or s.shape[1] != x.shape[0]:
        raise ShapeError("spmm", s.shape, x.shape)
    return _make("spmm", np.asarray(s @ x.data), (x,), lambda g: (np.asarray(s.T @ g),))


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a row vector broadcast over the rows of ``a``."""
    if a.shape == b.shape:
        return _make("add", a.data + b.data, (a, b), lambda g: (g, g))
    row = b.data.ndim == 1 or (b.data.ndim == 2 and b.shape[0] == 1)
    if a.data.ndim == 2 and row and b.data.shape[-1] == a.shape[1]:
        return _make("add", a.data + b.data, (a, b),
                     lambda g: (g, g.sum(axis=0).reshape(b.shape)))
    raise ShapeError("add", a.shape, b.shape)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError("mul", a.shape, b.shape)
    return _make("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    return _make("scale", a.data * c, (a,), lambda g: (g * c,))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    widths = {p.shape[1:] for p in parts}
    if len(widths) != 1:
        raise ShapeError("concat_rows", *(p.shape for p in parts))
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])
    return _make("concat_rows", np.concatenate([p.data for p in parts], axis=0), tuple(parts),
                 lambda g: tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts))))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    heights = {p.shape[0] for p in parts}
    if len(heights) != 1 or any(p.data.ndim != 2 for p in parts):
        raise ShapeError("concat_cols", *(p.shape for p in parts))
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    return _make("concat_cols", np.concatenate([p.data for p in parts], axis=1), tuple(parts),
                 lambda g: tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts))))


def index_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def grad_fn(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make("index_rows", a.data[idx], (a,), grad_fn)


def take(a: Tensor, cols) -> Tensor:
    """Pick ``a[i, cols[i]]`` for every row, giving a vector."""
    cols = np.asarray(cols, dtype=np.int64)
    if a.data.ndim != 2 or cols.shape != (a.shape[0],):
        raise ShapeError("take", a.shape, cols.shape)
    rows = np.arange(a.shape[0])

    def grad_fn(g):
        out = np.zeros_like(a.data)
        out[rows, cols] = g
        return (out,)

    return _make("take", a.data[rows, cols], (a,), grad_fn)


# ------------------------------------------------------------ pointwise ops

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make("relu", a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NonFiniteError("log: input has nonpositive entries")
    return _make("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def clamp_min(a: Tensor, lo: float) -> Tensor:
    keep = a.data >= lo
    return _make("clamp_min", np.maximum(a.data, lo), (a,), lambda g: (g * keep,))


def dropout(a: Tensor, p: float, rng: np.random.Generator | int | None = None, training: bool = True) -> Tensor:
    """Inverted dropout; identity when ``p == 0`` or not training."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    mask = (rng.random(a.shape) >= p) / (1.0 - p)
    return _make("dropout", a.data * mask, (a,), lambda g: (g * mask,))


# ---------------------------------------------------------- reductions etc.

def total(a: Tensor) -> Tensor:
    return _make("sum", np.asarray(a.data.sum()), (a,), lambda g: (np.full(a.shape, float(g)),))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return _make("mean", np.asarray(a.data.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),))


def standardize_columns(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Batch normalization without affine terms: each column to zero mean, unit variance."""
    if a.data.ndim != 2:
        raise ShapeError("standardize_columns", a.shape)
    n = a.shape[0]
    centered = a.data - a.data.mean(axis=0)
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=0) + eps)
    xhat = centered * inv_std

    def grad_fn(g):
        return (inv_std / n * (n * g - g.sum(axis=0) - xhat * (g * xhat).sum(axis=0)),)

    return _make("standardize_columns", xhat, (a,), grad_fn)


def row_softmax(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("row_softmax", a.shape)
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    return _make("row_softmax", s, (a,),
                 lambda g: (s * (g - (g * s).sum(axis=1, keepdims=True)),))


def log_softmax(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("log_softmax", a.shape)
    z = a.data - a.data.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    s = np.exp(out)
    return _make("log_softmax", out, (a,), lambda g: (g - s * g.sum(axis=1, keepdims=True),))


def row_kl(logits: Tensor, log_q: Tensor) -> Tensor:
    """Per-row KL(softmax(logits) || exp(log_q)).

    Fused so the gradient is exactly zero when both sides agree bitwise;
    chaining log_softmax leaves rounding residue that Adam would amplify.
    """
    if logits.shape != log_q.shape or logits.data.ndim != 2:
        raise ShapeError("row_kl", logits.shape, log_q.shape)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    p = np.exp(log_p)
    d = log_p - log_q.data
    pd = p * d

    def grad_fn(g):
        g = g[:, None]
        return g * (pd - p * pd.sum(axis=1, keepdims=True)), -g * p

    return _make("row_kl", pd.sum(axis=1), (logits, log_q), grad_fn)


def cosine_similarity_matrix(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Pairwise row cosine similarities; ``eps`` is added to every row norm."""
    if a.data.ndim != 2:
        raise ShapeError("cosine_similarity_matrix", a.shape)
    r = np.sqrt((a.data ** 2).sum(axis=1, keepdims=True))
    u = a.data / (r + eps)

    def grad_fn(g):
        du = (g + g.T) @ u
        safe_r = np.where(r > 0, r, 1.0)
        proj = (a.data * du).sum(axis=1, keepdims=True)
        da = du / (r + eps) - a.data * proj / (safe_r * (r + eps) ** 2) * (r > 0)
        return (da,)

    return _make("cosine_similarity_matrix", u @ u.T, (a,), grad_fn)


# --------------------------------------------------------------- optimizers

class Adam:
    """Adam with decoupled weight decay applied before the adaptive update."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-2, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        missing = [p.name or str(i) for i, p in enumerate(self.params) if p.grad is None]
        if missing:
            raise ValueError(f"parameters without gradient: {', '.join(missing)}")
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def rebind(self, params: Iterable[Tensor]) -> None:
        """Point the optimizer at new parameter tensors, keeping the moments."""
        params = list(params)
        if [p.shape for p in params] != [p.shape for p in self.params]:
            raise ShapeError("Adam.rebind", *(p.shape for p in params))
        self.params = params


class SGD:
    def __init__(self, params: Iterable[Tensor], lr: float = 1e-2, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.step_count = 0

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ValueError(f"parameter {p.name or i} has no gradient")
            p.data -= self.lr * (p.grad + self.weight_decay * p.data)
            p.grad = np.zeros_like(p.data)
        self.step_count += 1

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def rebind(self, params: Iterable[Tensor]) -> None:
        self.params = list(params)
