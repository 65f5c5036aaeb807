"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array plus an optional backward closure; calling
backward() on a scalar walks the graph in reverse topological order and
accumulates exact gradients into every tensor with requires_grad set.
Intermediate nodes are single-use: running backward through the same
subgraph twice is rejected rather than silently double-accumulating.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, values, requires_grad: bool = False, parents=(), backward=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward
        self._consumed = False

    @property
    def shape(self):
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def backward(self, seed=None) -> None:
        if self.values.size != 1 and seed is None:
            raise ValueError("backward() without seed requires a scalar output")
        order: list[Tensor] = []
        seen = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.values) if seed is None else np.asarray(seed))
        for node in reversed(order):
            if node._backward is None:
                continue
            if node._consumed:
                raise RuntimeError("backward already ran through this graph")
            node._consumed = True
            node._backward(node.grad)
            node.grad = None  # intermediate grads are not retained

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    # operator sugar for the common cases
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(values) -> Tensor:
    return Tensor(values)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _shape_check(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.values.size != 1 and b.values.size != 1:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    # only scalar-vs-array broadcasting is supported
    if shape == g.shape:
        return g
    return np.sum(g).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _shape_check(a, b, "add")
    out = Tensor(a.values + b.values, parents=(a, b))

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.values.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.values.shape))

    out._backward = bw
    return out


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _shape_check(a, b, "mul")
    out = Tensor(a.values * b.values, parents=(a, b))

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.values, a.values.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.values, b.values.shape))

    out._backward = bw
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.values.ndim != 2 or b.values.ndim not in (1, 2):
        raise ValueError(f"matmul: unsupported shapes {a.shape} @ {b.shape}")
    if a.values.shape[1] != b.values.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    out = Tensor(a.values @ b.values, parents=(a, b))

    def bw(g):
        if b.values.ndim == 1:
            if a.requires_grad:
                a._accumulate(np.outer(g, b.values))
            if b.requires_grad:
                b._accumulate(a.values.T @ g)
        else:
            if a.requires_grad:
                a._accumulate(g @ b.values.T)
            if b.requires_grad:
                b._accumulate(a.values.T @ g)

    out._backward = bw
    return out


def concat(tensors) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    if any(t.values.ndim != 1 for t in tensors):
        raise ValueError("concat supports 1-D tensors")
    out = Tensor(np.concatenate([t.values for t in tensors]), parents=tuple(tensors))
    sizes = [t.values.size for t in tensors]

    def bw(g):
        off = 0
        for t, s in zip(tensors, sizes):
            if t.requires_grad:
                t._accumulate(g[off : off + s])
            off += s

    out._backward = bw
    return out


def slice_(t: Tensor, start: int, stop: int) -> Tensor:
    if t.values.ndim != 1:
        raise ValueError("slice_ supports 1-D tensors")
    out = Tensor(t.values[start:stop], parents=(t,))

    def bw(g):
        if t.requires_grad:
            full = np.zeros_like(t.values)
            full[start:stop] = g
            t._accumulate(full)

    out._backward = bw
    return out


def _unary(t: Tensor, vals: np.ndarray, dvals: np.ndarray) -> Tensor:
    out = Tensor(vals, parents=(t,))

    def bw(g):
        if t.requires_grad:
            t._accumulate(g * dvals)

    out._backward = bw
    return out


def sigmoid(t: Tensor) -> Tensor:
    x = t.values
    y = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])  # split avoids overflow for large negative inputs
    y[~pos] = ex / (1.0 + ex)
    return _unary(t, y, y * (1.0 - y))


def tanh(t: Tensor) -> Tensor:
    y = np.tanh(t.values)
    return _unary(t, y, 1.0 - y * y)


def relu(t: Tensor) -> Tensor:
    return _unary(t, np.maximum(t.values, 0.0), (t.values > 0).astype(np.float64))


def exp(t: Tensor) -> Tensor:
    y = np.exp(t.values)
    return _unary(t, y, y)


def log(t: Tensor) -> Tensor:
    if np.any(t.values <= 0):
        raise ValueError("log of non-positive value")
    return _unary(t, np.log(t.values), 1.0 / t.values)


def tsum(t: Tensor) -> Tensor:
    out = Tensor(np.sum(t.values), parents=(t,))

    def bw(g):
        if t.requires_grad:
            t._accumulate(np.full_like(t.values, float(g)))

    out._backward = bw
    return out


def masked_softmax_values(logits: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        z = logits - np.max(logits)
        e = np.exp(z)
    else:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValueError("softmax mask excludes every entry")
        z = logits - np.max(logits[mask])
        e = np.where(mask, np.exp(np.where(mask, z, 0.0)), 0.0)
    return e / np.sum(e)


def softmax(t: Tensor, mask=None) -> Tensor:
    """Softmax over a 1-D tensor; masked-out entries get exactly zero probability."""
    if t.values.ndim != 1:
        raise ValueError("softmax supports 1-D tensors")
    p = masked_softmax_values(t.values, mask)
    out = Tensor(p, parents=(t,))

    def bw(g):
        if t.requires_grad:
            t._accumulate(p * (g - np.dot(g, p)))

    out._backward = bw
    return out


def softmax_cross_entropy(logits: Tensor, target_index: int, mask=None) -> Tensor:
    """-log softmax(logits)[target]; gradient is softmax - onehot (restricted to the mask)."""
    if not 0 <= target_index < logits.values.size:
        raise IndexError(f"target index {target_index} out of range")
    if mask is not None and not np.asarray(mask, dtype=bool)[target_index]:
        raise ValueError("target index is masked out")
    p = masked_softmax_values(logits.values, mask)
    out = Tensor(-np.log(p[target_index]), parents=(logits,))

    def bw(g):
        if logits.requires_grad:
            d = p.copy()
            d[target_index] -= 1.0
            logits._accumulate(float(g) * d)

    out._backward = bw
    return out
