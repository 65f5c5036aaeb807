"""Twin-encoder regression of post-fine-tuning LHST loss.

Two independent graph encoders read the target circuit (target vocabulary)
and the compiled structure (native vocabulary); their graph states are
concatenated and passed through two linear layers with a rectifier between
them. The scalar output is trained by mean squared error against the true
loss and is unbounded; clamping to [0,1] happens only when reporting or
filtering.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuits import (
    NATIVE_GATES,
    TARGET_GATES,
    CircuitDag,
    Connectivity,
    OpVocabulary,
    build_vocabulary,
)
from .encoder import EncoderParams, graph_state
from .nn import (
    AdamState,
    LinearParams,
    ParamStore,
    adam_step,
    linear,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import Tensor, concat, relu


@dataclass(frozen=True)
class PredictorConfig:
    n_qubits: int = 3
    h_dim: int = 56
    max_len: int = 30
    connectivity: str = "full"

    @property
    def pos_dim(self) -> int:
        return self.max_len + 2

    def conn(self) -> Connectivity:
        return Connectivity.by_name(self.connectivity, self.n_qubits)


@dataclass(frozen=True)
class PredictorParams:
    target_encoder: EncoderParams
    comp_encoder: EncoderParams
    head1: LinearParams  # 2*h_dim -> h_dim
    head2: LinearParams  # h_dim -> 1

    @staticmethod
    def create(store: ParamStore, rng: np.random.Generator, cfg: PredictorConfig,
               target_dim: int, native_dim: int) -> "PredictorParams":
        return PredictorParams(
            target_encoder=EncoderParams.create(
                store, "tenc", rng, target_dim, cfg.h_dim, cfg.pos_dim
            ),
            comp_encoder=EncoderParams.create(
                store, "cenc", rng, native_dim, cfg.h_dim, cfg.pos_dim
            ),
            head1=LinearParams.create(store, "head1", rng, 2 * cfg.h_dim, cfg.h_dim),
            head2=LinearParams.create(store, "head2", rng, cfg.h_dim, 1),
        )


@dataclass
class PredictorModel:
    config: PredictorConfig
    store: ParamStore
    params: PredictorParams
    target_vocab: OpVocabulary
    native_vocab: OpVocabulary


def build_predictor(cfg: PredictorConfig, seed: int = 0) -> PredictorModel:
    rng = np.random.Generator(np.random.PCG64(seed))
    target_vocab = build_vocabulary(TARGET_GATES, cfg.n_qubits, kind="encoder")
    native_vocab = build_vocabulary(NATIVE_GATES, cfg.n_qubits, cfg.conn(), kind="encoder")
    store = ParamStore()
    params = PredictorParams.create(
        store, rng, cfg, target_vocab.onehot_dim, native_vocab.onehot_dim
    )
    return PredictorModel(cfg, store, params, target_vocab, native_vocab)


def save_predictor(path, model: PredictorModel) -> None:
    meta = {
        "kind": "predictor",
        "n_qubits": model.config.n_qubits,
        "h_dim": model.config.h_dim,
        "max_len": model.config.max_len,
        "connectivity": model.config.connectivity,
        "target_vocab": model.target_vocab.fingerprint(),
        "native_vocab": model.native_vocab.fingerprint(),
    }
    save_checkpoint(path, model.store.state_arrays(), meta)


def load_predictor(path) -> PredictorModel:
    from .generator import CheckpointMismatch

    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "predictor":
        raise CheckpointMismatch(f"not a predictor checkpoint: kind={meta.get('kind')!r}")
    cfg = PredictorConfig(
        n_qubits=meta["n_qubits"], h_dim=meta["h_dim"],
        max_len=meta["max_len"], connectivity=meta["connectivity"],
    )
    model = build_predictor(cfg, seed=0)
    for key, vocab in (("target_vocab", model.target_vocab),
                       ("native_vocab", model.native_vocab)):
        if meta.get(key) != vocab.fingerprint():
            raise CheckpointMismatch(f"{key} fingerprint mismatch in {path}")
    model.store.load_arrays(arrays)
    return model


def predict_tensor(target: CircuitDag, comp: CircuitDag, model: PredictorModel) -> Tensor:
    ht = graph_state(target, model.target_vocab, model.params.target_encoder)
    hc = graph_state(comp, model.native_vocab, model.params.comp_encoder)
    hidden = relu(linear(concat([ht, hc]), model.params.head1))
    return linear(hidden, model.params.head2)


def predict_loss(target: CircuitDag, comp: CircuitDag, model: PredictorModel) -> float:
    """Raw regression output; clamp with clamp01 only at reporting time."""
    return float(predict_tensor(target, comp, model).values[0])


def clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


@dataclass
class TrainPredConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 0
    checkpoint_path: str | None = None
    log_every: int = 1


def mse_step(batch, model: PredictorModel):
    """Summed squared error over the batch plus parameter gradients."""
    if not batch:
        raise ValueError("empty batch")
    model.store.zero_grad()
    total = None
    for target, comp, s in batch:
        diff = predict_tensor(target, comp, model) + (-float(s))
        sq = diff * diff
        total = sq if total is None else total + sq
    total.backward()
    return float(total.values[0]), model.store.gradients()


def train_predictor(model: PredictorModel, samples, cfg: TrainPredConfig,
                    log=None) -> list[float]:
    """Adam over seeded shuffled mini-batches; returns per-epoch mean MSE."""
    if not samples:
        raise ValueError("empty dataset")
    for _, _, s in samples:
        if not 0.0 <= s <= 1.0:
            raise ValueError(f"label {s} outside [0, 1]")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    state = AdamState(lr=cfg.lr)
    losses: list[float] = []
    n = len(samples)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = [samples[i] for i in order[start:start + cfg.batch_size]]
            loss, grads = mse_step(batch, model)
            adam_step(model.store, grads, state)
            epoch_loss += loss
        losses.append(epoch_loss / n)
        if log is not None and (epoch % cfg.log_every == 0 or epoch == cfg.epochs - 1):
            log(epoch, losses[-1])
    if cfg.checkpoint_path:
        save_predictor(cfg.checkpoint_path, model)
    return losses


def filter_candidates(pairs, model: PredictorModel, threshold: float = 0.1):
    """Keep pairs predicted at or below the threshold, input order preserved.

    Fail-open: if the filter would reject everything, the full list is
    returned so downstream fine-tuning always has candidates.
    """
    kept = [
        (t, c) for t, c in pairs
        if clamp01(predict_loss(t, c, model)) <= threshold
    ]
    return kept if kept else list(pairs)


def pearson(xs, ys) -> float:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1 or xs.size < 2:
        raise ValueError("pearson needs two equal-length vectors of size >= 2")
    xd = xs - xs.mean()
    yd = ys - ys.mean()
    denom = np.sqrt(np.sum(xd * xd) * np.sum(yd * yd))
    if denom == 0:
        raise ValueError("correlation undefined for zero-variance input")
    return float(np.dot(xd, yd) / denom)
