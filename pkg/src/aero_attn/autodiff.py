"""Reverse-mode autodiff over dense float64 matrices, sized for small-graph work.

The tape is define-by-run: every operation returns a fresh ``Tensor`` holding
its parents and a backward closure, and ``Tensor.backward()`` walks the graph
in reverse topological order.  There is no graph caching; a new tape is built
on every forward pass.

Conventions:
  * all tensors are 2-D float64 (scalars are (1, 1), edge values (nnz, 1)),
  * every op asserts its output is finite and raises ``NonFiniteError`` else,
  * broadcasting is limited to row-vector bias addition and per-row scaling.

Sparse support layouts (for spmm / edge_concat / segment ops) are passed as a
duck-typed object with ``n``, ``size``, ``row_ptr``, ``col``, ``src``,
``scatter_src`` and ``scatter_dst`` attributes; see ``aero_attn.graphs.Support``.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

EXP_CLAMP = 80.0  # exp(80) ~ 5.5e34, far below overflow but large enough for softmax


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


def _as_matrix(data) -> np.ndarray:
    a = np.asarray(data, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ValueError(f"tensors are 2-D, got shape {a.shape}")
    return a


class Tensor:
    """A 2-D float64 array participating in the current recording."""

    __slots__ = ("data", "grad", "needs_grad", "_parents", "_backward")

    def __init__(self, data, needs_grad: bool = False,
                 parents: tuple = (), backward: Callable | None = None):
        self.data = _as_matrix(data)
        if not np.isfinite(self.data).all():
            raise NonFiniteError("tensor holds NaN/Inf")
        self.grad: np.ndarray | None = None
        self.needs_grad = needs_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() needs a scalar tensor")
        return float(self.data[0, 0])

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse sweep from a scalar output; fills ``grad`` on the subgraph."""
        if self.data.shape != (1, 1):
            raise ValueError("backward() needs a scalar loss")
        order: list[Tensor] = []
        visited = {id(self)}
        stack: list[tuple[Tensor, iter]] = [(self, iter(self._parents))]
        while stack:
            node, it = stack[-1]
            nxt = None
            for p in it:
                if p.needs_grad and id(p) not in visited:
                    nxt = p
                    break
            if nxt is None:
                order.append(node)
                stack.pop()
            else:
                visited.add(id(nxt))
                stack.append((nxt, iter(nxt._parents)))
        self.grad = np.ones((1, 1))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, needs_grad={self.needs_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, scale(other, -1.0))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def constant(data) -> Tensor:
    return Tensor(data, needs_grad=False)


def _make(data, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    needs = any(p.needs_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, needs_grad=True, parents=tuple(parents), backward=backward)


def _check_output(out: np.ndarray) -> np.ndarray:
    if not np.isfinite(out).all():
        raise NonFiniteError("operation produced NaN/Inf")
    return out


def _sum_to(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise / dense ops

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch {a.shape} vs {b.shape}")
    out = a.data + b.data

    def back(g):
        a._accumulate(g)
        b._accumulate(g)

    return _make(out, (a, b), back)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-vector (or scalar) bias addition, the only broadcast we allow."""
    if b.shape[0] != 1 or (b.shape[1] not in (1, x.shape[1])):
        raise ValueError(f"bias shape {b.shape} does not broadcast over {x.shape}")
    out = x.data + b.data

    def back(g):
        x._accumulate(g)
        b._accumulate(_sum_to(g, b.shape))

    return _make(out, (x, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch {a.shape} vs {b.shape}")
    out = a.data * b.data

    def back(g):
        a._accumulate(g * b.data)
        b._accumulate(g * a.data)

    return _make(out, (a, b), back)


def div(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"div shape mismatch {a.shape} vs {b.shape}")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _check_output(a.data / b.data)

    def back(g):
        a._accumulate(g / b.data)
        b._accumulate(-g * a.data / (b.data * b.data))

    return _make(out, (a, b), back)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply by a python-float constant."""
    c = float(c)
    out = x.data * c

    def back(g):
        x._accumulate(g * c)

    return _make(out, (x,), back)


def mul_const(x: Tensor, arr: np.ndarray) -> Tensor:
    """Elementwise multiply by a constant array (dropout masks, degree factors)."""
    arr = np.asarray(arr, dtype=np.float64)
    out = _check_output(x.data * arr)

    def back(g):
        x._accumulate(_sum_to(g * arr, x.shape))

    return _make(out, (x,), back)


def row_scale(x: Tensor, s: Tensor) -> Tensor:
    """Scale row i of ``x`` by ``s[i, 0]``; ``s`` may also be a (1,1) scalar."""
    if s.shape[1] != 1 or s.shape[0] not in (1, x.shape[0]):
        raise ValueError(f"row_scale needs (n,1) or (1,1) scales, got {s.shape}")
    out = x.data * s.data

    def back(g):
        x._accumulate(g * s.data)
        s._accumulate(_sum_to(g * x.data, s.shape))

    return _make(out, (x, s), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    out = _check_output(a.data @ b.data)

    def back(g):
        a._accumulate(g @ b.data.T)
        b._accumulate(a.data.T @ g)

    return _make(out, (a, b), back)


def sparse_matmul(a_sparse, b: Tensor) -> Tensor:
    """Constant sparse (or dense) left operand times a tensor; grads flow to b only."""
    out = _check_output(np.asarray(a_sparse @ b.data))

    def back(g):
        b._accumulate(np.asarray(a_sparse.T @ g))

    return _make(out, (b,), back)


def hstack2(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"hstack2 row mismatch {a.shape} vs {b.shape}")
    out = np.hstack([a.data, b.data])
    da = a.shape[1]

    def back(g):
        a._accumulate(g[:, :da])
        b._accumulate(g[:, da:])

    return _make(out, (a, b), back)


def row_slice(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous row range as a new tensor."""
    out = x.data[start:stop, :].copy()

    def back(g):
        gx = np.zeros_like(x.data)
        gx[start:stop, :] = g
        x._accumulate(gx)

    return _make(out, (x,), back)


def take_row(x: Tensor, i: int) -> Tensor:
    """Select one row as a (1, d) tensor (used for per-layer scalar coefficients)."""
    return row_slice(x, i, i + 1)


def sum_all(x: Tensor) -> Tensor:
    out = np.array([[x.data.sum()]])

    def back(g):
        x._accumulate(np.full_like(x.data, g[0, 0]))

    return _make(out, (x,), back)


def sqrt(x: Tensor) -> Tensor:
    out = _check_output(np.sqrt(x.data))

    def back(g):
        x._accumulate(g * 0.5 / out)

    return _make(out, (x,), back)


# ---------------------------------------------------------------------------
# unary activations

def elu(x: Tensor) -> Tensor:
    a = x.data
    ex = np.exp(np.minimum(a, 0.0))
    out = np.maximum(a, 0.0) + ex - 1.0

    def back(g):
        x._accumulate(g * np.where(a > 0.0, 1.0, ex))

    return _make(out, (x,), back)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def back(g):
        x._accumulate(g * (1.0 - out * out))

    return _make(out, (x,), back)


def softplus(x: Tensor) -> Tensor:
    # log(1 + e^x) as log1p(e^{-|x|}) + max(x, 0); the lower clamp keeps the
    # output strictly positive where the true value would underflow to 0
    a = np.maximum(x.data, -EXP_CLAMP)
    out = np.log1p(np.exp(-np.abs(a))) + np.maximum(a, 0.0)

    def back(g):
        x._accumulate(g * _sigmoid_np(a))

    return _make(out, (x,), back)


def _sigmoid_np(a: np.ndarray) -> np.ndarray:
    t = np.exp(-np.abs(a))
    return np.where(a >= 0.0, 1.0 / (1.0 + t), t / (1.0 + t))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid_np(x.data)

    def back(g):
        x._accumulate(g * out * (1.0 - out))

    return _make(out, (x,), back)


def exp(x: Tensor) -> Tensor:
    clipped = x.data <= EXP_CLAMP
    out = np.exp(np.minimum(x.data, EXP_CLAMP))
    deriv = np.where(clipped, out, 0.0)  # flat beyond the guard

    def back(g):
        x._accumulate(g * deriv)

    return _make(out, (x,), back)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    pos = x.data >= 0.0
    out = np.where(pos, x.data, slope * x.data)
    deriv = np.where(pos, 1.0, slope)

    def back(g):
        x._accumulate(g * deriv)

    return _make(out, (x,), back)


_UNARY = {"elu": elu, "tanh": tanh, "softplus": softplus, "sigmoid": sigmoid, "exp": exp}


def apply_unary(kind: str, x: Tensor) -> Tensor:
    if kind not in _UNARY:
        raise ValueError(f"unknown unary op {kind!r}")
    return _UNARY[kind](x)


# ---------------------------------------------------------------------------
# sparse-support ops

def spmm(values: Tensor, h: Tensor, support) -> Tensor:
    """out[i] = sum over support entries (i, j) of values[e] * h[j].

    ``values`` is (nnz, 1), aligned with the support layout; gradients flow to
    both operands.
    """
    if values.shape != (support.size, 1):
        raise ValueError(f"values shape {values.shape} does not match support size {support.size}")
    if h.shape[0] != support.n:
        raise ValueError(f"h has {h.shape[0]} rows, support expects {support.n}")
    mat = sp.csr_array((values.data[:, 0], support.col, support.row_ptr),
                       shape=(support.n, support.n))
    out = _check_output(mat @ h.data)

    def back(g):
        values._accumulate((g[support.src] * h.data[support.col]).sum(axis=1, keepdims=True))
        h._accumulate(mat.T @ g)

    return _make(out, (values, h), back)


def edge_concat(z: Tensor, support) -> Tensor:
    """Per support entry e=(i, j): row [z_i || z_j]; shape (nnz, 2d)."""
    if z.shape[0] != support.n:
        raise ValueError(f"z has {z.shape[0]} rows, support expects {support.n}")
    out = np.hstack([z.data[support.src], z.data[support.col]])
    d = z.shape[1]

    def back(g):
        z._accumulate(support.scatter_src @ g[:, :d] + support.scatter_dst @ g[:, d:])

    return _make(out, (z,), back)


def gather(x: Tensor, index: np.ndarray) -> Tensor:
    """Row gather x[index]; backward scatter-adds."""
    out = x.data[index]

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        x._accumulate(gx)

    return _make(out, (x,), back)


def _require_full_rows(support) -> None:
    if support.has_empty_rows:
        raise ValueError("segment op on a support with empty rows")


def segment_rowsum(values: Tensor, support) -> Tensor:
    """Per-row sums of support-aligned values: (nnz, 1) -> (n, 1)."""
    _require_full_rows(support)
    if values.shape != (support.size, 1):
        raise ValueError(f"values shape {values.shape} does not match support size {support.size}")
    out = np.add.reduceat(values.data, support.row_ptr[:-1], axis=0)

    def back(g):
        values._accumulate(g[support.src])

    return _make(out, (values, ), back)


def segment_softmax(logits: Tensor, support) -> Tensor:
    """Softmax of logits within each support row, with max-subtraction."""
    _require_full_rows(support)
    if logits.shape != (support.size, 1):
        raise ValueError(f"logits shape {logits.shape} does not match support size {support.size}")
    starts = support.row_ptr[:-1]
    row_max = np.maximum.reduceat(logits.data, starts, axis=0)
    shifted = np.exp(logits.data - row_max[support.src])
    denom = np.add.reduceat(shifted, starts, axis=0)
    out = shifted / denom[support.src]

    def back(g):
        rowdot = np.add.reduceat(out * g, starts, axis=0)
        logits._accumulate(out * (g - rowdot[support.src]))

    return _make(out, (logits,), back)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when rate is 0 or in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul_const(x, mask)


def cross_entropy(logits: Tensor, labels: np.ndarray, index_set: np.ndarray) -> Tensor:
    """Mean negative log-softmax of the true class over ``index_set``."""
    idx = np.asarray(index_set, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("cross_entropy over an empty index set")
    y = np.asarray(labels, dtype=np.int64)[idx]
    sub = logits.data[idx]
    m = sub.max(axis=1, keepdims=True)
    z = sub - m
    lse = m[:, 0] + np.log(np.exp(z).sum(axis=1))
    out = np.array([[float(np.mean(lse - sub[np.arange(idx.size), y]))]])
    _check_output(out)

    def back(g):
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(idx.size), y] -= 1.0
        gl = np.zeros_like(logits.data)
        np.add.at(gl, idx, p * (g[0, 0] / idx.size))
        logits._accumulate(gl)

    return _make(out, (logits,), back)
