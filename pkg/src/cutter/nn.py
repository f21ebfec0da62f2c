"""A small reverse-mode autodiff stack over dense 2-D float64 arrays.

Only the layers the agents need are provided. Each op returns a new
:class:`Tensor` that remembers its parents and a closure pushing gradients
back to them; :func:`backward` walks that tape in reverse topological order.
Sparse graph operators enter as constants through :func:`spmm`.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Iterator, Sequence, TextIO

import numpy as np
import scipy.sparse as sp

_grad_enabled = True


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording (inference, target networks, frozen encoders)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(
        self,
        value: np.ndarray,
        parents: tuple[Tensor, ...] = (),
        backward_fn: Callable[[np.ndarray], None] | None = None,
        requires_grad: bool = False,
    ) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {value.shape}")
        self.value = value
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def _accumulate(self, g: np.ndarray) -> None:
        # never in place: closures may hand the same buffer to several parents
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


class Param(Tensor):
    __slots__ = ("name",)

    def __init__(self, value: np.ndarray, name: str = "") -> None:
        super().__init__(value, requires_grad=True)
        self.name = name

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.shape})"


def const(value: np.ndarray | float) -> Tensor:
    return Tensor(np.atleast_2d(np.asarray(value, dtype=np.float64)))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, name: str = "") -> Param:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return Param(rng.uniform(-a, a, size=(fan_in, fan_out)), name)


def zeros(rows: int, cols: int, name: str = "") -> Param:
    return Param(np.zeros((rows, cols)), name)


def _node(value: np.ndarray, parents: tuple[Tensor, ...], fn: Callable[[np.ndarray], None]) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(value, parents, fn, requires_grad=True)
    return Tensor(value)


# --- ops --------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.value @ b.value

    def fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g @ b.value.T)
        if b.requires_grad:
            b._accumulate(a.value.T @ g)

    return _node(out, (a, b), fn)


def add_row(a: Tensor, row: Tensor) -> Tensor:
    """Add a 1 x C row to every row of ``a``."""
    if row.shape != (1, a.shape[1]):
        raise ShapeError(f"bias shape {row.shape} does not broadcast over {a.shape}")
    out = a.value + row.value

    def fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g)
        if row.requires_grad:
            row._accumulate(g.sum(axis=0, keepdims=True))

    return _node(out, (a, row), fn)


def linear(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: input shape {x.shape} incompatible with weight shape {w.shape}")
    y = matmul(x, w)
    return add_row(y, bias) if bias is not None else y


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")

    def fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _node(a.value + b.value, (a, b), fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")

    def fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return _node(a.value - b.value, (a, b), fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")

    def fn(g: np.ndarray) -> None:
        if a.requires_grad:
            a._accumulate(g * b.value)
        if b.requires_grad:
            b._accumulate(g * a.value)

    return _node(a.value * b.value, (a, b), fn)


def affine(a: Tensor, scale: float | np.ndarray, shift: float | np.ndarray = 0.0) -> Tensor:
    """Elementwise ``scale * a + shift`` with constant scale/shift."""
    scale_arr = np.asarray(scale, dtype=np.float64)

    def fn(g: np.ndarray) -> None:
        a._accumulate(g * scale_arr)

    return _node(a.value * scale_arr + shift, (a,), fn)


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0

    def fn(g: np.ndarray) -> None:
        a._accumulate(g * mask)

    return _node(a.value * mask, (a,), fn)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)

    def fn(g: np.ndarray) -> None:
        a._accumulate(g * (1.0 - out * out))

    return _node(out, (a,), fn)


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))

    def fn(g: np.ndarray) -> None:
        a._accumulate(g * out * (1.0 - out))

    return _node(out, (a,), fn)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise ShapeError(f"concat: row mismatch {[q.shape for q in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def fn(g: np.ndarray) -> None:
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                p._accumulate(g[:, lo:hi])

    return _node(np.hstack([p.value for p in parts]), tuple(parts), fn)


def spmm(op: sp.spmatrix | np.ndarray, x: Tensor) -> Tensor:
    """Left-multiply by a constant (sparse or dense) matrix."""
    if op.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm shape mismatch: {op.shape} @ {x.shape}")
    out = np.asarray(op @ x.value)

    def fn(g: np.ndarray) -> None:
        x._accumulate(np.asarray(op.T @ g))

    return _node(out, (x,), fn)


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def fn(g: np.ndarray) -> None:
        full = np.zeros_like(x.value)
        np.add.at(full, idx, g)
        x._accumulate(full)

    return _node(x.value[idx], (x,), fn)


def mean_pool_rows(x: Tensor, row_mask: Sequence[bool] | np.ndarray) -> Tensor:
    mask = np.asarray(row_mask, dtype=bool)
    if mask.shape != (x.shape[0],):
        raise ShapeError(f"row mask length {mask.shape} does not match {x.shape[0]} rows")
    count = int(mask.sum())
    if count == 0:
        raise ShapeError("mean_pool_rows: empty mask")
    out = x.value[mask].mean(axis=0, keepdims=True)

    def fn(g: np.ndarray) -> None:
        full = np.zeros_like(x.value)
        full[mask] = g / count
        x._accumulate(full)

    return _node(out, (x,), fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.value.mean(axis=1, keepdims=True)
    xc = x.value - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.value + bias.value

    def fn(g: np.ndarray) -> None:
        if gain.requires_grad:
            gain._accumulate((g * xhat).sum(axis=0, keepdims=True))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0, keepdims=True))
        if x.requires_grad:
            gx = g * gain.value
            gx = inv * (gx - gx.mean(axis=1, keepdims=True) - xhat * (gx * xhat).mean(axis=1, keepdims=True))
            x._accumulate(gx)

    return _node(out, (x, gain, bias), fn)


def sum_all(x: Tensor) -> Tensor:
    def fn(g: np.ndarray) -> None:
        x._accumulate(np.full_like(x.value, g[0, 0]))

    return _node(np.array([[x.value.sum()]]), (x,), fn)


def row_sums(x: Tensor) -> Tensor:
    def fn(g: np.ndarray) -> None:
        x._accumulate(np.broadcast_to(g, x.value.shape))

    return _node(x.value.sum(axis=1, keepdims=True), (x,), fn)


def mse(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error against a constant target of the same shape."""
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    diff = pred.value - target
    n = diff.size

    def fn(g: np.ndarray) -> None:
        pred._accumulate(g[0, 0] * 2.0 * diff / n)

    return _node(np.array([[np.mean(diff * diff)]]), (pred,), fn)


def backward(loss: Tensor) -> None:
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar loss, got {loss.shape}")
    if not loss.requires_grad:
        return
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones((1, 1))
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)
            # free intermediate buffers; params keep theirs for the optimizer
            node.grad = None
            node.backward_fn = None
            node.parents = ()


# --- recurrent cell ---------------------------------------------------------


class GRUParams:
    def __init__(self, rng: np.random.Generator, width: int, prefix: str = "gru.") -> None:
        d = width
        self.width = d
        self.wz = glorot(rng, 2 * d, d, prefix + "wz")
        self.bz = zeros(1, d, prefix + "bz")
        self.wr = glorot(rng, 2 * d, d, prefix + "wr")
        self.br = zeros(1, d, prefix + "br")
        self.wh = glorot(rng, 2 * d, d, prefix + "wh")
        self.bh = zeros(1, d, prefix + "bh")

    def params(self) -> list[Param]:
        return [self.wz, self.bz, self.wr, self.br, self.wh, self.bh]


def gru_cell(h_prev: Tensor, x: Tensor, p: GRUParams) -> Tensor:
    """h' = (1 - z) * h + z * tanh(W_h [x, r * h]) with gates z, r = sigmoid(W [x, h])."""
    if h_prev.shape != x.shape or x.shape[1] != p.width:
        raise ShapeError(f"gru_cell: h {h_prev.shape}, x {x.shape}, width {p.width}")
    xh = concat_cols([x, h_prev])
    z = sigmoid(linear(xh, p.wz, p.bz))
    r = sigmoid(linear(xh, p.wr, p.br))
    cand = tanh(linear(concat_cols([x, mul(r, h_prev)]), p.wh, p.bh))
    return add(h_prev, mul(z, sub(cand, h_prev)))


# --- optimisation -----------------------------------------------------------


class Adam:
    """Adam with per-parameter moments; one instance may serve several models."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self._state: dict[int, list] = {}

    def step(self, params: Iterable[Param]) -> None:
        params = list(params)
        for p in params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient in {p.name or 'param'}")
        for p in params:
            if p.grad is None:
                continue
            st = self._state.get(id(p))
            if st is None:
                st = self._state[id(p)] = [0, np.zeros_like(p.value), np.zeros_like(p.value)]
            st[0] += 1
            t, m, v = st
            g = np.asarray(p.grad, dtype=np.float64).reshape(p.shape)
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            mhat = m / (1 - self.beta1**t)
            vhat = v / (1 - self.beta2**t)
            p.value -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
            p.grad = None


# --- checkpoints ------------------------------------------------------------

CHECKPOINT_HEADER = "cutter-ckpt v1"


def save_params(params: Iterable[Param], sink: TextIO) -> None:
    sink.write(CHECKPOINT_HEADER + "\n")
    for p in params:
        rows, cols = p.shape
        sink.write(f"{p.name} {rows} {cols}\n")
        sink.write(" ".join(repr(float(x)) for x in p.value.reshape(-1)) + "\n")


def load_params(source: TextIO) -> dict[str, np.ndarray]:
    header = source.readline().strip()
    if header != CHECKPOINT_HEADER:
        raise ValueError(f"not a checkpoint (header {header!r})")
    out: dict[str, np.ndarray] = {}
    while True:
        line = source.readline()
        if not line:
            break
        if not line.strip():
            continue
        name, rows, cols = line.split()
        values = np.array(source.readline().split(), dtype=np.float64)
        out[name] = values.reshape(int(rows), int(cols))
    return out
