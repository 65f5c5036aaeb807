"""Neural building blocks over the autodiff tensors: parameter store, linear
layers, a GRU cell, the losses shared by the models, Adam, and a binary
checkpoint container.

Initialization is uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] from a seeded
generator. All values are float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

CHECKPOINT_MAGIC = b"VQCK"
CHECKPOINT_VERSION = 1


class ParamStore:
    """Named trainable tensors with a stable (insertion) iteration order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(values, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.values))
            for name, t in self._params.items()
        }

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.values for name, t in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self._params):
            missing = set(self._params) - set(arrays)
            extra = set(arrays) - set(self._params)
            raise ValueError(f"parameter name mismatch: missing={missing}, extra={extra}")
        for name, t in self._params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.values.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {t.values.shape}")
            t.values = arr.copy()
            t.grad = None

    def n_values(self) -> int:
        return sum(t.values.size for t in self._params.values())


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class LinearParams:
    W: Tensor
    b: Tensor | None

    @classmethod
    def create(cls, store: ParamStore, prefix: str, rng, in_dim: int, out_dim: int,
               bias: bool = True) -> "LinearParams":
        W = store.add(f"{prefix}.W", uniform_init(rng, (out_dim, in_dim), in_dim))
        b = store.add(f"{prefix}.b", uniform_init(rng, (out_dim,), in_dim)) if bias else None
        return cls(W, b)


def linear(x: Tensor, p: LinearParams) -> Tensor:
    y = T.matmul(p.W, x)
    return T.add(y, p.b) if p.b is not None else y


@dataclass
class GruParams:
    """The 9 weight blocks of a GRU cell: W_* act on the input, U_* on the state."""

    W_z: Tensor
    U_z: Tensor
    b_z: Tensor
    W_r: Tensor
    U_r: Tensor
    b_r: Tensor
    W_h: Tensor
    U_h: Tensor
    b_h: Tensor

    @classmethod
    def create(cls, store: ParamStore, prefix: str, rng, in_dim: int, hid_dim: int) -> "GruParams":
        blocks = {}
        for gate in ("z", "r", "h"):
            blocks[f"W_{gate}"] = store.add(
                f"{prefix}.W_{gate}", uniform_init(rng, (hid_dim, in_dim), in_dim)
            )
            blocks[f"U_{gate}"] = store.add(
                f"{prefix}.U_{gate}", uniform_init(rng, (hid_dim, hid_dim), hid_dim)
            )
            blocks[f"b_{gate}"] = store.add(
                f"{prefix}.b_{gate}", uniform_init(rng, (hid_dim,), hid_dim)
            )
        return cls(**blocks)


def gru_cell(x: Tensor, h: Tensor, p: GruParams) -> Tensor:
    """h' = (1-z) * h + z * htilde.

    z = sigmoid(W_z x + U_z h + b_z), r = sigmoid(W_r x + U_r h + b_r),
    htilde = tanh(W_h x + U_h (r*h) + b_h).

    Implemented as one fused graph node; the backward closure carries the
    hand-derived gradients (checked against finite differences in tests).
    """
    xv, hv = x.values, h.values
    z = _sigmoid_values(p.W_z.values @ xv + p.U_z.values @ hv + p.b_z.values)
    r = _sigmoid_values(p.W_r.values @ xv + p.U_r.values @ hv + p.b_r.values)
    rh = r * hv
    htilde = np.tanh(p.W_h.values @ xv + p.U_h.values @ rh + p.b_h.values)
    out = Tensor((1.0 - z) * hv + z * htilde,
                 parents=(x, h, p.W_z, p.U_z, p.b_z, p.W_r, p.U_r, p.b_r,
                          p.W_h, p.U_h, p.b_h))

    def bw(g):
        dzpre = g * (htilde - hv) * z * (1.0 - z)
        dhpre = g * z * (1.0 - htilde * htilde)
        d_rh = p.U_h.values.T @ dhpre
        drpre = d_rh * hv * r * (1.0 - r)
        for W, b, U, d in ((p.W_z, p.b_z, p.U_z, dzpre),
                           (p.W_r, p.b_r, p.U_r, drpre)):
            if W.requires_grad:
                W._accumulate(np.outer(d, xv))
            if U.requires_grad:
                U._accumulate(np.outer(d, hv))
            if b.requires_grad:
                b._accumulate(d)
        if p.W_h.requires_grad:
            p.W_h._accumulate(np.outer(dhpre, xv))
        if p.U_h.requires_grad:
            p.U_h._accumulate(np.outer(dhpre, rh))
        if p.b_h.requires_grad:
            p.b_h._accumulate(dhpre)
        if x.requires_grad:
            x._accumulate(p.W_z.values.T @ dzpre + p.W_r.values.T @ drpre
                          + p.W_h.values.T @ dhpre)
        if h.requires_grad:
            h._accumulate(g * (1.0 - z) + p.U_z.values.T @ dzpre
                          + p.U_r.values.T @ drpre + d_rh * r)

    out._backward = bw
    return out


def linear_values(x: np.ndarray, p: LinearParams) -> np.ndarray:
    """Gradient-free twin of linear() for sampling-time forward passes."""
    y = p.W.values @ x
    return y + p.b.values if p.b is not None else y


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])  # split avoids overflow for large negative inputs
    out[~pos] = ex / (1.0 + ex)
    return out


def gru_cell_values(x: np.ndarray, h: np.ndarray, p: GruParams) -> np.ndarray:
    """Gradient-free twin of gru_cell(); must stay in lockstep with it."""
    z = _sigmoid_values(p.W_z.values @ x + p.U_z.values @ h + p.b_z.values)
    r = _sigmoid_values(p.W_r.values @ x + p.U_r.values @ h + p.b_r.values)
    htilde = np.tanh(p.W_h.values @ x + p.U_h.values @ (r * h) + p.b_h.values)
    return (1.0 - z) * h + z * htilde


def kl_standard_normal(mu: Tensor, sigma: Tensor) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, I)) = 1/2 sum(mu^2 + sigma^2 - 1 - 2 log sigma)."""
    if np.any(sigma.values <= 0):
        raise ValueError("sigma must be strictly positive")
    inner = T.add(
        T.add(T.add(T.mul(mu, mu), T.mul(sigma, sigma)), -1.0),
        T.mul(T.log(sigma), -2.0),
    )
    return T.mul(T.tsum(inner), 0.5)


# re-exported here because it is the decoder/predictor training loss
softmax_cross_entropy = T.softmax_cross_entropy


# --- Adam -------------------------------------------------------------------

@dataclass
class AdamState:
    """Per-parameter moment estimates plus hyperparameters."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = None
    v: dict = None

    def __post_init__(self):
        if self.m is None:
            self.m = {}
        if self.v is None:
            self.v = {}


def adam_update(values: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
                step: int, state: AdamState) -> None:
    """One in-place Adam update with bias correction; step counts from 1."""
    m *= state.beta1
    m += (1.0 - state.beta1) * grad
    v *= state.beta2
    v += (1.0 - state.beta2) * grad * grad
    mhat = m / (1.0 - state.beta1 ** step)
    vhat = v / (1.0 - state.beta2 ** step)
    values -= state.lr * mhat / (np.sqrt(vhat) + state.eps)


def adam_step(params: ParamStore, grads: dict[str, np.ndarray], state: AdamState) -> None:
    state.step += 1
    for name, t in params.items():
        g = grads[name]
        if g.shape != t.values.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(t.values)
            state.v[name] = np.zeros_like(t.values)
        adam_update(t.values, g, state.m[name], state.v[name], state.step, state)


# --- checkpoint container ----------------------------------------------------

def save_checkpoint(path, arrays: dict[str, np.ndarray], metadata: dict | None = None) -> None:
    """Named-tensor container: version header, JSON metadata, row-major float64 blocks."""
    meta = json.dumps(metadata or {}, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64)  # not ascontiguousarray: it upranks 0-dim
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<Q", d))
            f.write(arr.astype("<f8").tobytes(order="C"))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        data = f.read()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(data):
            raise ValueError(f"truncated checkpoint {path}")
        out = data[off : off + n]
        off += n
        return out

    if take(4) != CHECKPOINT_MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    (version,) = struct.unpack("<I", take(4))
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (meta_len,) = struct.unpack("<I", take(4))
    metadata = json.loads(take(meta_len).decode())
    (count,) = struct.unpack("<I", take(4))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = tuple(struct.unpack("<Q", take(8))[0] for _ in range(ndim))
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(take(size * 8), dtype="<f8").reshape(shape).copy()
        arrays[name] = arr
    if off != len(data):
        raise ValueError(f"trailing bytes in checkpoint {path}")
    return arrays, metadata
