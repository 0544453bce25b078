"""Dense float64 tensors with tape-based reverse-mode differentiation.

A ``Tape`` records every differentiable operation in execution order while it
is active (``with Tape() as tape: ...``). Calling ``tape.backward(loss)``
replays the recorded operations in reverse and accumulates gradients into
every ``requires_grad`` tensor that the loss depends on. Outside an active
tape, operations run as plain numpy and record nothing, which is the fast
path used for evaluation and finite-difference checks.
"""

from __future__ import annotations

import math
import threading

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "DegenerateVectorError",
    "tensor",
    "matmul",
    "softmax_rows",
    "logsumexp",
    "log_softmax_nll",
    "nll_rows",
    "cosine",
    "normalize_rows",
    "layer_norm",
    "tanh",
    "gelu",
    "embed_rows",
    "concat",
    "stack",
    "transpose_last",
    "permute",
    "reshape",
    "tsum",
    "tmean",
    "backward",
]

NORM_EPS = 1e-12


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class DegenerateVectorError(ValueError):
    """A vector with (near-)zero norm was passed where a direction is needed."""


_ACTIVE = threading.local()


def _active_tape():
    return getattr(_ACTIVE, "tape", None)


class Tape:
    """Ordered record of differentiable operations.

    Each entry is a closure that propagates the output gradient of one
    operation to its inputs. Replaying entries in reverse recording order is
    a valid topological order because consumers always record after their
    producers.
    """

    def __init__(self):
        self._ops: list = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise RuntimeError("a Tape is already active on this thread")
        _ACTIVE.tape = self
        return self

    def __exit__(self, *exc):
        _ACTIVE.tape = None
        return False

    def __len__(self) -> int:
        return len(self._ops)

    def record(self, backward_fn) -> None:
        self._ops.append(backward_fn)

    def backward(self, loss: "Tensor") -> None:
        """Populate ``grad`` on every requires_grad ancestor of ``loss``.

        ``loss`` must be a scalar (a single-element tensor). Backward over an
        empty tape only seeds ``loss.grad``.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward expects a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for op in reversed(self._ops):
            op()


class Tensor:
    """A dense float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; all arithmetic goes through the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, s):
        if isinstance(s, Tensor):
            raise TypeError("tensor/tensor division is not supported; divide by a scalar")
        return mul(self, 1.0 / float(s))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, *shape)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, *parents: Tensor) -> tuple[Tensor, bool]:
    """Build an output tensor; report whether to record a backward rule."""
    req = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req)
    tape = _active_tape()
    return out, (req and tape is not None)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum-reduce a gradient back to the shape it was broadcast from."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out, rec = _make(a.data + b.data, a, b)
    if rec:
        def bwd():
            if out.grad is None:
                return
            if a.requires_grad:
                a.accumulate(_unbroadcast(out.grad, a.data.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(out.grad, b.data.shape))
        _active_tape().record(bwd)
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out, rec = _make(a.data - b.data, a, b)
    if rec:
        def bwd():
            if out.grad is None:
                return
            if a.requires_grad:
                a.accumulate(_unbroadcast(out.grad, a.data.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(-out.grad, b.data.shape))
        _active_tape().record(bwd)
    return out


def mul(a, b) -> Tensor:
    """Elementwise product; either operand may be a plain scalar or array."""
    a = _as_tensor(a)
    if not isinstance(b, Tensor) and np.isscalar(b):
        s = float(b)
        out, rec = _make(a.data * s, a)
        if rec:
            def bwd():
                if out.grad is not None and a.requires_grad:
                    a.accumulate(out.grad * s)
            _active_tape().record(bwd)
        return out
    b = _as_tensor(b)
    out, rec = _make(a.data * b.data, a, b)
    if rec:
        ad, bd = a.data, b.data
        def bwd():
            if out.grad is None:
                return
            if a.requires_grad:
                a.accumulate(_unbroadcast(out.grad * bd, ad.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(out.grad * ad, bd.shape))
        _active_tape().record(bwd)
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product on the trailing two axes, batch axes broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs 2-d or higher operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out, rec = _make(a.data @ b.data, a, b)
    if rec:
        ad, bd = a.data, b.data
        def bwd():
            if out.grad is None:
                return
            g = out.grad
            if a.requires_grad:
                a.accumulate(_unbroadcast(g @ bd.swapaxes(-1, -2), ad.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(ad.swapaxes(-1, -2) @ g, bd.shape))
        _active_tape().record(bwd)
    return out


def transpose_last(a: Tensor) -> Tensor:
    """Swap the trailing two axes."""
    a = _as_tensor(a)
    out, rec = _make(a.data.swapaxes(-1, -2), a)
    if rec:
        def bwd():
            if out.grad is not None and a.requires_grad:
                a.accumulate(out.grad.swapaxes(-1, -2))
        _active_tape().record(bwd)
    return out


def permute(a: Tensor, axes: tuple) -> Tensor:
    a = _as_tensor(a)
    out, rec = _make(a.data.transpose(axes), a)
    if rec:
        inv = tuple(np.argsort(axes))
        def bwd():
            if out.grad is not None and a.requires_grad:
                a.accumulate(out.grad.transpose(inv))
        _active_tape().record(bwd)
    return out


def reshape(a: Tensor, *shape) -> Tensor:
    a = _as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = a.data.shape
    out, rec = _make(a.data.reshape(shape), a)
    if rec:
        def bwd():
            if out.grad is not None and a.requires_grad:
                a.accumulate(out.grad.reshape(old))
        _active_tape().record(bwd)
    return out


# ---------------------------------------------------------------------------
# reductions


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out, rec = _make(a.data.sum(axis=axis, keepdims=keepdims), a)
    if rec:
        shape = a.data.shape
        def bwd():
            if out.grad is None or not a.requires_grad:
                return
            g = out.grad
            if axis is not None and not keepdims:
                axes = axis if isinstance(axis, tuple) else (axis,)
                g = np.expand_dims(g, axes)
            a.accumulate(np.broadcast_to(g, shape).copy())
        _active_tape().record(bwd)
    return out


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


# ---------------------------------------------------------------------------
# nonlinearities


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = np.tanh(a.data)
    out, rec = _make(y, a)
    if rec:
        def bwd():
            if out.grad is not None and a.requires_grad:
                a.accumulate(out.grad * (1.0 - y * y))
        _active_tape().record(bwd)
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Smooth gated activation, tanh form: 0.5*x*(1 + tanh(c*(x + 0.044715*x^3)))."""
    a = _as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x * x * x)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)
    out, rec = _make(y, a)
    if rec:
        def bwd():
            if out.grad is None or not a.requires_grad:
                return
            # d/dx = 0.5*(1+t) + 0.5*x*(1-t^2)*c*(1 + 3*0.044715*x^2)
            d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 0.134145 * x * x)
            a.accumulate(out.grad * d)
        _active_tape().record(bwd)
    return out


# ---------------------------------------------------------------------------
# softmax family


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction."""
    x = _as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out, rec = _make(y, x)
    if rec:
        def bwd():
            if out.grad is None or not x.requires_grad:
                return
            g = out.grad
            x.accumulate(y * (g - (g * y).sum(axis=-1, keepdims=True)))
        _active_tape().record(bwd)
    return out


def logsumexp(x: Tensor) -> Tensor:
    """Stable log-sum-exp of a 1-d tensor, returns a scalar tensor."""
    x = _as_tensor(x)
    if x.ndim != 1:
        raise ShapeError(f"logsumexp expects a 1-d tensor, got shape {x.shape}")
    m = x.data.max()
    e = np.exp(x.data - m)
    s = e.sum()
    out, rec = _make(np.asarray(m + np.log(s)), x)
    if rec:
        p = e / s
        def bwd():
            if out.grad is not None and x.requires_grad:
                x.accumulate(out.grad * p)
        _active_tape().record(bwd)
    return out


def log_softmax_nll(logits: Tensor, target_index: int) -> Tensor:
    """Negative log softmax probability of one entry of a logit vector.

    Equals logsumexp(logits) - logits[target_index]; always >= 0. This is the
    shared stable kernel under every contrastive objective in the package.
    """
    logits = _as_tensor(logits)
    if logits.ndim != 1:
        raise ShapeError(f"log_softmax_nll expects a 1-d logit vector, got {logits.shape}")
    n = logits.data.shape[0]
    if not 0 <= target_index < n:
        raise IndexError(f"target index {target_index} out of range for {n} logits")
    m = logits.data.max()
    e = np.exp(logits.data - m)
    s = e.sum()
    val = (m + np.log(s)) - logits.data[target_index]
    out, rec = _make(np.asarray(val), logits)
    if rec:
        p = e / s
        def bwd():
            if out.grad is None or not logits.requires_grad:
                return
            g = p * out.grad
            g[target_index] -= out.grad
            logits.accumulate(g)
        _active_tape().record(bwd)
    return out


def nll_rows(logits: Tensor, targets) -> Tensor:
    """Mean negative log softmax probability over rows of a logit matrix.

    ``targets[i]`` is the column holding row i's positive. Shares the same
    stabilized kernel as :func:`log_softmax_nll`.
    """
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"nll_rows expects a 2-d logit matrix, got {logits.shape}")
    m, n = logits.data.shape
    idx = np.asarray(targets, dtype=np.int64)
    if idx.shape != (m,):
        raise ShapeError(f"expected {m} targets, got shape {idx.shape}")
    if idx.min() < 0 or idx.max() >= n:
        raise IndexError("target index out of range")
    mx = logits.data.max(axis=-1, keepdims=True)
    e = np.exp(logits.data - mx)
    s = e.sum(axis=-1, keepdims=True)
    lse = mx[:, 0] + np.log(s[:, 0])
    val = (lse - logits.data[np.arange(m), idx]).mean()
    out, rec = _make(np.asarray(val), logits)
    if rec:
        p = e / s
        def bwd():
            if out.grad is None or not logits.requires_grad:
                return
            g = p * (out.grad / m)
            g[np.arange(m), idx] -= out.grad / m
            logits.accumulate(g)
        _active_tape().record(bwd)
    return out


# ---------------------------------------------------------------------------
# geometry


def cosine(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two 1-d vectors; rejects near-zero-norm inputs."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"cosine expects equal-length vectors, got {a.shape} and {b.shape}")
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na <= NORM_EPS or nb <= NORM_EPS:
        raise DegenerateVectorError(
            f"cosine of a near-zero vector (norms {na:.3e}, {nb:.3e})"
        )
    dot = float(a.data @ b.data)
    c = dot / (na * nb)
    out, rec = _make(np.asarray(c), a, b)
    if rec:
        ad, bd = a.data, b.data
        def bwd():
            if out.grad is None:
                return
            g = out.grad
            if a.requires_grad:
                a.accumulate(g * (bd / (na * nb) - c * ad / (na * na)))
            if b.requires_grad:
                b.accumulate(g * (ad / (na * nb) - c * bd / (nb * nb)))
        _active_tape().record(bwd)
    return out


def normalize_rows(x: Tensor) -> Tensor:
    """Scale the last axis of ``x`` to unit L2 norm; rejects degenerate rows."""
    x = _as_tensor(x)
    norms = np.linalg.norm(x.data, axis=-1, keepdims=True)
    if norms.min() <= NORM_EPS:
        raise DegenerateVectorError("cannot normalize a near-zero row")
    y = x.data / norms
    out, rec = _make(y, x)
    if rec:
        def bwd():
            if out.grad is None or not x.requires_grad:
                return
            g = out.grad
            x.accumulate((g - y * (g * y).sum(axis=-1, keepdims=True)) / norms)
        _active_tape().record(bwd)
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize the last axis, then apply a learned affine map."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out, rec = _make(xhat * gamma.data + beta.data, x, gamma, beta)
    if rec:
        n = x.data.shape[-1]
        gd = gamma.data
        def bwd():
            if out.grad is None:
                return
            g = out.grad
            if gamma.requires_grad:
                gamma.accumulate(_unbroadcast(g * xhat, gd.shape))
            if beta.requires_grad:
                beta.accumulate(_unbroadcast(g, gd.shape))
            if x.requires_grad:
                gx = g * gd
                x.accumulate(inv * (gx - gx.mean(axis=-1, keepdims=True)
                                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))
        _active_tape().record(bwd)
    return out


# ---------------------------------------------------------------------------
# structure


def embed_rows(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table`` by integer index; backward scatter-adds."""
    table = _as_tensor(table)
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"row index out of range for table with {table.shape[0]} rows")
    out, rec = _make(table.data[idx], table)
    if rec:
        def bwd():
            if out.grad is None or not table.requires_grad:
                return
            g = np.zeros_like(table.data)
            np.add.at(g, idx, out.grad)
            table.accumulate(g)
        _active_tape().record(bwd)
    return out


def concat(parts: list, axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    out, rec = _make(np.concatenate([p.data for p in parts], axis=axis), *parts)
    if rec:
        sizes = [p.data.shape[axis] for p in parts]
        offsets = np.cumsum([0] + sizes)
        def bwd():
            if out.grad is None:
                return
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    sl = [slice(None)] * out.grad.ndim
                    sl[axis] = slice(lo, hi)
                    p.accumulate(out.grad[tuple(sl)])
        _active_tape().record(bwd)
    return out


def stack(parts: list) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    parts = [_as_tensor(p) for p in parts]
    out, rec = _make(np.stack([p.data for p in parts]), *parts)
    if rec:
        def bwd():
            if out.grad is None:
                return
            for i, p in enumerate(parts):
                if p.requires_grad:
                    p.accumulate(out.grad[i])
        _active_tape().record(bwd)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Functional alias for :meth:`Tape.backward`."""
    tape.backward(loss)
