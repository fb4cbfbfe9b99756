"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps an ndarray plus an optional backward closure and parent links.
Calling ``backward()`` on a scalar output walks the graph in reverse
topological order and accumulates ``grad`` on every tensor that contributed.
Only the operations the gridification pipeline needs are implemented; each op
defines its exact backward rule, and the whole set is validated against
central finite differences in the test suite.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import InvariantError, ShapeError

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """Node in the differentiation graph: value, gradient slot, backward rule."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            if isinstance(g, np.ndarray) and g.shape == self.data.shape:
                self.grad = g.astype(np.float64, copy=True)
            else:
                self.grad = np.array(np.broadcast_to(g, self.data.shape), dtype=np.float64)
        else:
            self.grad += g

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into every reachable node's ``grad``."""
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar output, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                stack.append((p, False))
        self.accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, (a, b))

    def backward(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(g, b.shape))

    out._backward = backward
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, (a, b))

    def backward(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(-g, b.shape))

    out._backward = backward
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, (a, b))

    def backward(g):
        a.accumulate(_unbroadcast(g * b.data, a.shape))
        b.accumulate(_unbroadcast(g * a.data, b.shape))

    out._backward = backward
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, (a, b))

    def backward(g):
        a.accumulate(g @ b.data.T)
        b.accumulate(a.data.T @ g)

    out._backward = backward
    return out


def affine(x, w, b) -> Tensor:
    """Fused x @ w + row-broadcast bias; one node instead of matmul-then-add."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"affine shapes incompatible: {x.shape} @ {w.shape} + {b.shape}")
    out = Tensor(x.data @ w.data + b.data, (x, w, b))

    def backward(g):
        x.accumulate(g @ w.data.T)
        w.accumulate(x.data.T @ g)
        b.accumulate(g.sum(axis=0))

    out._backward = backward
    return out


def concat_last_axis(parts: list[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    lead = parts[0].shape[:-1]
    for p in parts[1:]:
        if p.shape[:-1] != lead:
            raise ShapeError(
                f"concat_last_axis leading shapes differ: {parts[0].shape} vs {p.shape}"
            )
    out = Tensor(np.concatenate([p.data for p in parts], axis=-1), parts)
    widths = [p.shape[-1] for p in parts]
    splits = np.cumsum(widths)[:-1]

    def backward(g):
        for p, piece in zip(parts, np.split(g, splits, axis=-1)):
            p.accumulate(piece)

    out._backward = backward
    return out


def transpose2d(t: Tensor) -> Tensor:
    t = as_tensor(t)
    if t.ndim != 2:
        raise ShapeError(f"transpose2d expects a 2-d tensor, got {t.shape}")
    out = Tensor(t.data.T, (t,))

    def backward(g):
        t.accumulate(g.T)

    out._backward = backward
    return out


def reshape(t: Tensor, shape) -> Tensor:
    t = as_tensor(t)
    out = Tensor(t.data.reshape(shape), (t,))

    def backward(g):
        t.accumulate(g.reshape(t.shape))

    out._backward = backward
    return out


def reduce_mean(t: Tensor, axis: int | None = None) -> Tensor:
    t = as_tensor(t)
    out = Tensor(t.data.mean(axis=axis), (t,))
    count = t.data.size if axis is None else t.shape[axis]

    def backward(g):
        if axis is None:
            t.accumulate(np.full(t.shape, g / count))
        else:
            t.accumulate(np.broadcast_to(np.expand_dims(g, axis), t.shape) / count)

    out._backward = backward
    return out


def reduce_max(t: Tensor, axis: int | None = None) -> Tensor:
    t = as_tensor(t)
    out = Tensor(t.data.max(axis=axis), (t,))

    def backward(g):
        grad = np.zeros_like(t.data)
        if axis is None:
            # route to the first maximum in flat order
            grad.ravel()[int(np.argmax(t.data))] = g
        else:
            idx = np.expand_dims(np.argmax(t.data, axis=axis), axis)
            np.put_along_axis(grad, idx, np.expand_dims(g, axis), axis)
        t.accumulate(grad)

    out._backward = backward
    return out


def _sum_rows_at(values: np.ndarray, indices: np.ndarray, n_dst: int) -> np.ndarray:
    """Row-wise indexed summation, out[indices[i]] += values[i].

    Implemented as one flattened bincount, which walks rows in ascending order
    exactly like a sequential loop would — so per-destination accumulation
    order (and hence the result bits) matches the naive formulation — but
    without the per-element dispatch cost of ``np.add.at``.
    """
    width = values.shape[1]
    flat_idx = (indices[:, None] * width + np.arange(width)).ravel()
    flat = np.bincount(flat_idx, weights=values.ravel(), minlength=n_dst * width)
    return flat.reshape(n_dst, width)


def gather_rows(t: Tensor, indices: np.ndarray) -> Tensor:
    """Select rows of a 2-d tensor; index -1 yields an all-zero row.

    The sentinel makes padded neighbor tables usable directly: missing
    neighbors contribute nothing forward and receive no gradient.
    """
    t = as_tensor(t)
    if t.ndim != 2:
        raise ShapeError(f"gather_rows expects a 2-d tensor, got {t.shape}")
    indices = np.asarray(indices, dtype=np.int64)
    safe = np.maximum(indices, 0)
    data = t.data[safe]
    if (indices < 0).any():
        data = data.copy()
        data[indices < 0] = 0.0
    out = Tensor(data, (t,))

    def backward(g):
        valid = indices >= 0
        if valid.all():
            t.accumulate(_sum_rows_at(g, indices, t.shape[0]))
        else:
            t.accumulate(_sum_rows_at(g[valid], indices[valid], t.shape[0]))

    out._backward = backward
    return out


def _check_scatter(values: Tensor, indices: np.ndarray, n_dst: int):
    if values.ndim != 2:
        raise ShapeError(f"scatter expects 2-d values, got {values.shape}")
    indices = np.asarray(indices, dtype=np.int64)
    if indices.shape != (values.shape[0],):
        raise ShapeError(
            f"scatter indices shape {indices.shape} != values rows ({values.shape[0]},)"
        )
    if indices.size and (indices.min() < 0 or indices.max() >= n_dst):
        raise InvariantError(f"scatter index out of bounds [0, {n_dst})")
    return indices


def scatter_sum(values: Tensor, indices: np.ndarray, n_dst: int) -> Tensor:
    values = as_tensor(values)
    indices = _check_scatter(values, indices, n_dst)
    out = Tensor(_sum_rows_at(values.data, indices, n_dst), (values,))

    def backward(g):
        values.accumulate(g[indices])

    out._backward = backward
    return out


def scatter_aggregate(values: Tensor, indices: np.ndarray, n_dst: int, mode: str) -> Tensor:
    """Reduce value rows onto destination rows: per-destination mean or max.

    Every destination in [0, n_dst) must receive at least one row — an empty
    neighborhood is treated as a wiring bug, not silently zero-filled.  Under
    ``max`` the gradient flows to the first contributing row on ties.
    """
    values = as_tensor(values)
    indices = _check_scatter(values, indices, n_dst)
    counts = np.bincount(indices, minlength=n_dst)
    if (counts == 0).any():
        empty = int(np.argmin(counts))
        raise InvariantError(f"destination {empty} receives no values in scatter_aggregate")

    if mode == "mean":
        data = _sum_rows_at(values.data, indices, n_dst)
        data /= counts[:, None]
        out = Tensor(data, (values,))

        def backward(g):
            values.accumulate((g / counts[:, None])[indices])

        out._backward = backward
        return out

    if mode == "max":
        data = np.full((n_dst, values.shape[1]), -np.inf)
        np.maximum.at(data, indices, values.data)
        n_rows, width = values.shape
        # first row index attaining the per-destination maximum, per column
        winner = np.full((n_dst, width), n_rows, dtype=np.int64)
        row_ids = np.broadcast_to(np.arange(n_rows)[:, None], values.shape)
        candidates = np.where(values.data == data[indices], row_ids, n_rows)
        np.minimum.at(winner, indices, candidates)
        out = Tensor(data, (values,))

        def backward(g):
            grad = np.zeros_like(values.data)
            rows = winner.ravel()
            cols = np.tile(np.arange(width), n_dst)
            np.add.at(grad, (rows[rows < n_rows], cols[rows < n_rows]), g.ravel()[rows < n_rows])
            values.accumulate(grad)

        out._backward = backward
        return out

    raise InvariantError(f"unknown scatter_aggregate mode {mode!r}")


def pairwise_apply(weights: Tensor, x: Tensor) -> Tensor:
    """Per-row vector-matrix product: (n, in, out) applied to (n, in) -> (n, out).

    Row r of the result is x[r] @ weights[r]; used where every row carries its
    own mixing matrix (per-edge kernels).
    """
    weights, x = as_tensor(weights), as_tensor(x)
    if weights.ndim != 3 or x.ndim != 2 or weights.shape[:2] != x.shape:
        raise ShapeError(f"pairwise_apply shapes incompatible: {weights.shape} vs {x.shape}")
    out = Tensor(np.einsum("nio,ni->no", weights.data, x.data), (weights, x))

    def backward(g):
        weights.accumulate(np.einsum("ni,no->nio", x.data, g))
        x.accumulate(np.einsum("nio,no->ni", weights.data, g))

    out._backward = backward
    return out


def nonlinearity(t: Tensor, tag: str) -> Tensor:
    t = as_tensor(t)
    if tag == "identity":
        return t
    if tag == "relu":
        out = Tensor(np.maximum(t.data, 0.0), (t,))

        def backward(g):
            t.accumulate(g * (t.data > 0.0))

        out._backward = backward
        return out
    if tag == "gelu":
        cdf = 0.5 * (1.0 + erf(t.data * _INV_SQRT2))
        out = Tensor(t.data * cdf, (t,))

        def backward(g):
            pdf = _INV_SQRT2PI * np.exp(-0.5 * t.data**2)
            t.accumulate(g * (cdf + t.data * pdf))

        out._backward = backward
        return out
    raise InvariantError(f"unknown nonlinearity {tag!r}")


def cos(t: Tensor) -> Tensor:
    t = as_tensor(t)
    out = Tensor(np.cos(t.data), (t,))

    def backward(g):
        t.accumulate(-g * np.sin(t.data))

    out._backward = backward
    return out


def sin(t: Tensor) -> Tensor:
    t = as_tensor(t)
    out = Tensor(np.sin(t.data), (t,))

    def backward(g):
        t.accumulate(g * np.cos(t.data))

    out._backward = backward
    return out


def channel_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization over the channel axis with learnable scale/shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(
            f"channel_norm shapes incompatible: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}"
        )
    mean = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    out = Tensor(xhat * gamma.data + beta.data, (x, gamma, beta))

    def backward(g):
        gamma.accumulate((g * xhat).sum(axis=0))
        beta.accumulate(g.sum(axis=0))
        gy = g * gamma.data
        n = x.shape[1]
        x.accumulate(
            inv_std
            * (gy - gy.mean(axis=1, keepdims=True) - xhat * (gy * xhat).mean(axis=1, keepdims=True))
        )

    out._backward = backward
    return out


def dropout(t: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; pass rate 0 (or omit at evaluation time) for identity."""
    t = as_tensor(t)
    if rate == 0.0:
        return t
    mask = (rng.uniform(size=t.shape) >= rate) / (1.0 - rate)
    out = Tensor(t.data * mask, (t,))

    def backward(g):
        t.accumulate(g * mask)

    out._backward = backward
    return out


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer labels under softmax of the logits."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"labels {labels.shape} do not match logits {logits.shape}")
    n = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    out = Tensor(-log_probs[np.arange(n), labels].mean(), (logits,))

    def backward(g):
        grad = np.exp(log_probs)
        grad[np.arange(n), labels] -= 1.0
        logits.accumulate(g * grad / n)

    out._backward = backward
    return out


def mse(a: Tensor, b) -> Tensor:
    """Mean squared difference over all elements."""
    d = sub(a, b)
    return reduce_mean(mul(d, d))
