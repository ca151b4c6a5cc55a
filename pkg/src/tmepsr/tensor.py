"""Dense double-precision tensors with reverse-mode automatic differentiation.

A small numpy-backed engine: the graph is dynamic (rebuilt on every forward
pass), every op checks its output for NaN/Inf, and broadcasting is limited to
what numpy can invert by summation. Gradients accumulate additively into
``.grad`` buffers on leaves created with ``requires_grad=True``.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DataError, DimensionError, NumericError


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by {op!r}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, inverting numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense array plus an optional gradient buffer and backward rule."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        _check_finite(self.data, "leaf")
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op!r}, rg={self.requires_grad})"

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents: Sequence["Tensor"], backward, op: str) -> "Tensor":
        _check_finite(data, op)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents) if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        out._op = op
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    # -- reverse pass -------------------------------------------------------

    def backward(self) -> None:
        """Populate ``grad`` on every reachable requires_grad tensor.

        Only scalar roots are accepted; gradients accumulate additively, so
        call ``zero_grad`` on leaves between independent backward passes.
        """
        if self.data.size != 1:
            raise DimensionError("backward requires a scalar loss")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators ----------------------------------------------------------

    @staticmethod
    def _coerce(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        return add(self, Tensor._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, Tensor._coerce(other))

    def __rsub__(self, other):
        return sub(Tensor._coerce(other), self)

    def __mul__(self, other):
        return mul(self, Tensor._coerce(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, Tensor._coerce(other))

    def item(self) -> float:
        return float(self.data.reshape(()))


# -- elementwise ops --------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Tensor._from_op(data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return Tensor._from_op(data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor._from_op(data, (a, b), backward, "mul")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    data = a.data * s

    def backward(g):
        a._accumulate(g * s)

    return Tensor._from_op(data, (a,), backward, "scale")


def sigmoid(a: Tensor) -> Tensor:
    # split by sign for numerical stability at large |x|
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        a._accumulate(g * out * (1.0 - out))

    return Tensor._from_op(out, (a,), backward, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - out * out))

    return Tensor._from_op(out, (a,), backward, "tanh")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out)

    return Tensor._from_op(out, (a,), backward, "exp")


def log1p(a: Tensor) -> Tensor:
    if np.any(a.data <= -1.0):
        raise NumericError("log1p domain: need x > -1")
    out = np.log1p(a.data)

    def backward(g):
        a._accumulate(g / (1.0 + a.data))

    return Tensor._from_op(out, (a,), backward, "log1p")


# -- reductions and shaping --------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy() if np.ndim(g) else np.full(a.shape, g))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg, a.shape).copy())

    return Tensor._from_op(np.asarray(data), (a,), backward, "sum")


def mean_rows(a: Tensor) -> Tensor:
    """Column-wise mean over the second-to-last axis, keeping it as size 1."""
    n = a.shape[-2]
    if n < 1:
        raise DimensionError("mean_rows needs at least one row")
    return scale(tsum(a, axis=-2, keepdims=True), 1.0 / n)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return Tensor._from_op(data, (a,), backward, "reshape")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; `a` may carry leading batch axes, `b` must be 2-D."""
    if b.data.ndim != 2 or a.data.ndim < 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul shapes {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            if a.data.ndim == 2:
                b._accumulate(a.data.T @ g)
            else:
                flat_a = a.data.reshape(-1, a.shape[-1])
                flat_g = g.reshape(-1, g.shape[-1])
                b._accumulate(flat_a.T @ flat_g)

    return Tensor._from_op(data, (a, b), backward, "matmul")


def transpose2d(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise DimensionError("transpose2d needs a 2-D tensor")
    data = a.data.T.copy()

    def backward(g):
        a._accumulate(g.T)

    return Tensor._from_op(data, (a,), backward, "transpose2d")


def gather_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Row lookup: result shape is idx.shape + (row_width,)."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise DataError(f"gather index out of range [0, {table.shape[0]})")
    data = table.data[idx]

    def backward(g):
        buf = np.zeros_like(table.data)
        np.add.at(buf, idx, g)
        table._accumulate(buf)

    return Tensor._from_op(data, (table,), backward, "gather_rows")


def concat_last(parts: Sequence[Tensor]) -> Tensor:
    widths = [p.shape[-1] for p in parts]
    data = np.concatenate([p.data for p in parts], axis=-1)
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p._accumulate(g[..., lo:hi])

    return Tensor._from_op(data, tuple(parts), backward, "concat_last")


def split_last(a: Tensor, h: int) -> list[Tensor]:
    """Split the last axis into `h` equal slices; inverse of concat_last."""
    d = a.shape[-1]
    if d % h != 0:
        raise DimensionError(f"last dim {d} not divisible by {h}")
    m = d // h
    outs = []
    for k in range(h):
        lo = k * m

        def backward(g, lo=lo):
            buf = np.zeros_like(a.data)
            buf[..., lo:lo + m] = g
            a._accumulate(buf)

        outs.append(Tensor._from_op(a.data[..., lo:lo + m].copy(), (a,), backward, "split_last"))
    return outs


def stack_seq(steps: Sequence[Tensor]) -> Tensor:
    """Stack per-step (B, d) tensors into (B, L, d) along a new time axis."""
    data = np.stack([s.data for s in steps], axis=1)

    def backward(g):
        for t, s in enumerate(steps):
            if s.requires_grad:
                s._accumulate(g[:, t, :])

    return Tensor._from_op(data, tuple(steps), backward, "stack_seq")


# -- losses ------------------------------------------------------------------


def softmax_cross_entropy(logits: Tensor, targets, mask) -> Tensor:
    """Mean over masked rows of -log softmax(logits)[target].

    `logits` is (n, C); `targets` are class indices; `mask` marks valid rows.
    """
    targets = np.asarray(targets, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    n, c = logits.shape
    if targets.shape != (n,) or mask.shape != (n,):
        raise DimensionError("targets/mask length must match logits rows")
    if mask.any() and (targets[mask].min() < 0 or targets[mask].max() >= c):
        raise DataError(f"target index out of range [0, {c})")
    valid = int(mask.sum())
    if valid == 0:
        raise DataError("all rows masked in cross entropy")

    x = logits.data
    xmax = x.max(axis=1, keepdims=True)
    ex = np.exp(x - xmax)
    logz = xmax[:, 0] + np.log(ex.sum(axis=1))
    logp_t = x[np.arange(n), targets] - logz
    loss = -(logp_t * mask).sum() / valid

    def backward(g):
        p = ex / ex.sum(axis=1, keepdims=True)
        p[np.arange(n), targets] -= 1.0
        p *= mask[:, None] * (float(g) / valid)
        logits._accumulate(p)

    return Tensor._from_op(np.asarray(loss), (logits,), backward, "softmax_cross_entropy")


def softmax_cross_entropy_rows(logits: Tensor, targets) -> Tensor:
    """Per-row -log softmax(logits)[target], shape (n,); no masking or mean."""
    targets = np.asarray(targets, dtype=np.int64)
    n, c = logits.shape
    if targets.min() < 0 or targets.max() >= c:
        raise DataError(f"target index out of range [0, {c})")
    x = logits.data
    xmax = x.max(axis=1, keepdims=True)
    ex = np.exp(x - xmax)
    logz = xmax[:, 0] + np.log(ex.sum(axis=1))
    loss = logz - x[np.arange(n), targets]

    def backward(g):
        p = ex / ex.sum(axis=1, keepdims=True)
        p[np.arange(n), targets] -= 1.0
        logits._accumulate(p * g[:, None])

    return Tensor._from_op(loss, (logits,), backward, "softmax_cross_entropy_rows")


# -- verification -----------------------------------------------------------


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` must be a deterministic scalar-valued function of `params`.
    """
    for p in params:
        p.zero_grad()
    loss = f()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = f().item()
            flat[i] = orig - eps
            lo = f().item()
            flat[i] = orig
            num = (hi - lo) / (2.0 * eps)
            a = ana.reshape(-1)[i]
            err = abs(a - num) / (abs(a) + abs(num) + 1e-12)
            worst = max(worst, err)
    return worst
