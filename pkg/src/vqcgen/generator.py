"""Conditional DAG variational autoencoder over circuit structures.

The encoder reads a target circuit into a Gaussian posterior (mu from one
linear head, sigma from a log-variance head). The decoder grows a native
circuit node by node: the distribution over the next operation comes from a
linear head on the hidden state of the most recently added node (the Start
state is produced from the latent vector by a tanh-activated linear layer,
every later state by the GRU over the new node's one-hot with a gated sum
of its wire-rule predecessors). Connectivity masking zeroes forbidden
entries exactly; sampling strategies restrict the support afterwards.

Training uses teacher forcing: ground-truth nodes are fed at every step and
the reconstruction loss is the sum of per-step cross-entropies, End step
included. decode_sample runs a gradient-free numpy twin of the training
forward pass; a trace/force hook exposes its per-step distributions so tests
can hold the two paths together.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuits import (
    END,
    NATIVE_GATES,
    TARGET_GATES,
    CircuitDag,
    CircuitError,
    Connectivity,
    DagBuilder,
    OpVocabulary,
    build_vocabulary,
    node_onehot,
)
from .encoder import (
    EncoderParams,
    aggregate,
    aggregate_values,
    graph_state,
    position_onehot,
)
from .nn import (
    GruParams,
    LinearParams,
    ParamStore,
    gru_cell,
    gru_cell_values,
    kl_standard_normal,
    linear,
    linear_values,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import (
    Tensor,
    constant,
    exp,
    masked_softmax_values,
    softmax_cross_entropy,
    tanh,
)


@dataclass(frozen=True)
class GeneratorConfig:
    n_qubits: int = 3
    h_dim: int = 56
    z_dim: int = 56
    max_len: int = 30
    connectivity: str = "full"

    @property
    def pos_dim(self) -> int:
        return self.max_len + 2  # interior positions plus both sentinels

    def conn(self) -> Connectivity:
        return Connectivity.by_name(self.connectivity, self.n_qubits)


@dataclass(frozen=True)
class SamplingStrategy:
    kind: str  # "stochastic" or "top-k"
    k: int | None = None

    def __post_init__(self):
        if self.kind not in ("stochastic", "top-k"):
            raise ValueError(f"unknown sampling strategy {self.kind!r}")
        if self.kind == "top-k" and (self.k is None or self.k < 1):
            raise ValueError("top-k needs k >= 1")

    @staticmethod
    def parse(text: str) -> "SamplingStrategy":
        if text == "stochastic":
            return SamplingStrategy("stochastic")
        if text.startswith("top-k:"):
            return SamplingStrategy("top-k", int(text.split(":", 1)[1]))
        raise ValueError(f"cannot parse sampling strategy {text!r}")

    def describe(self) -> str:
        return self.kind if self.k is None else f"{self.kind}:{self.k}"

    def restrict(self, probs: np.ndarray) -> np.ndarray:
        """Zero everything outside the supported entries, renormalize."""
        if self.kind == "stochastic":
            return probs
        if self.k > probs.size:
            raise ValueError(f"k={self.k} exceeds vocabulary size {probs.size}")
        keep = np.argsort(-probs, kind="stable")[: self.k]  # ties: lowest index wins
        out = np.zeros_like(probs)
        out[keep] = probs[keep]
        total = out.sum()
        if total <= 0:
            raise ValueError("strategy restriction removed all probability mass")
        return out / total


@dataclass(frozen=True)
class LatentVector:
    z: np.ndarray
    mu: np.ndarray | None = None
    sigma: np.ndarray | None = None
    eps: np.ndarray | None = None


@dataclass(frozen=True)
class GeneratorParams:
    encoder: EncoderParams  # reads the target circuit
    mu_head: LinearParams
    logvar_head: LinearParams
    init_head: LinearParams  # latent -> Start hidden state, tanh outside
    dec_gru: GruParams
    dec_gate: LinearParams
    dec_map: LinearParams
    out_head: LinearParams  # hidden -> next-operation logits

    @staticmethod
    def create(store: ParamStore, rng: np.random.Generator, cfg: GeneratorConfig,
               target_dim: int, native_dim: int) -> "GeneratorParams":
        return GeneratorParams(
            encoder=EncoderParams.create(store, "enc", rng, target_dim, cfg.h_dim, cfg.pos_dim),
            mu_head=LinearParams.create(store, "mu", rng, cfg.h_dim, cfg.z_dim),
            logvar_head=LinearParams.create(store, "logvar", rng, cfg.h_dim, cfg.z_dim),
            init_head=LinearParams.create(store, "init", rng, cfg.z_dim, cfg.h_dim),
            dec_gru=GruParams.create(store, "dec.gru", rng, native_dim, cfg.h_dim),
            dec_gate=LinearParams.create(store, "dec.gate", rng, cfg.h_dim + cfg.pos_dim, cfg.h_dim),
            dec_map=LinearParams.create(
                store, "dec.map", rng, cfg.h_dim + cfg.pos_dim, cfg.h_dim, bias=False
            ),
            out_head=LinearParams.create(store, "out", rng, cfg.h_dim, native_dim),
        )


@dataclass
class GeneratorModel:
    config: GeneratorConfig
    store: ParamStore
    params: GeneratorParams
    target_vocab: OpVocabulary
    native_vocab: OpVocabulary  # decoder vocabulary, mask from connectivity


def build_generator(cfg: GeneratorConfig, seed: int = 0) -> GeneratorModel:
    rng = np.random.Generator(np.random.PCG64(seed))
    target_vocab = build_vocabulary(TARGET_GATES, cfg.n_qubits, kind="encoder")
    native_vocab = build_vocabulary(NATIVE_GATES, cfg.n_qubits, cfg.conn(), kind="decoder")
    store = ParamStore()
    params = GeneratorParams.create(
        store, rng, cfg, target_vocab.onehot_dim, native_vocab.onehot_dim
    )
    return GeneratorModel(cfg, store, params, target_vocab, native_vocab)


def save_generator(path, model: GeneratorModel) -> None:
    meta = {
        "kind": "generator",
        "n_qubits": model.config.n_qubits,
        "h_dim": model.config.h_dim,
        "z_dim": model.config.z_dim,
        "max_len": model.config.max_len,
        "connectivity": model.config.connectivity,
        "target_vocab": model.target_vocab.fingerprint(),
        "native_vocab": model.native_vocab.fingerprint(),
    }
    save_checkpoint(path, model.store.state_arrays(), meta)


class CheckpointMismatch(ValueError):
    """Checkpoint metadata does not match the requested configuration."""


def load_generator(path) -> GeneratorModel:
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "generator":
        raise CheckpointMismatch(f"not a generator checkpoint: kind={meta.get('kind')!r}")
    cfg = GeneratorConfig(
        n_qubits=meta["n_qubits"], h_dim=meta["h_dim"], z_dim=meta["z_dim"],
        max_len=meta["max_len"], connectivity=meta["connectivity"],
    )
    model = build_generator(cfg, seed=0)
    for key, vocab in (("target_vocab", model.target_vocab),
                       ("native_vocab", model.native_vocab)):
        if meta.get(key) != vocab.fingerprint():
            raise CheckpointMismatch(f"{key} fingerprint mismatch in {path}")
    model.store.load_arrays(arrays)
    return model


# --- encoding -----------------------------------------------------------------

def encode(target: CircuitDag, model: GeneratorModel) -> tuple[Tensor, Tensor]:
    """Posterior (mu, sigma); the sigma head output is read as log-variance."""
    h = graph_state(target, model.target_vocab, model.params.encoder)
    mu = linear(h, model.params.mu_head)
    logvar = linear(h, model.params.logvar_head)
    return mu, exp(logvar * 0.5)


def encode_values(target: CircuitDag, model: GeneratorModel) -> tuple[np.ndarray, np.ndarray]:
    mu, sigma = encode(target, model)
    return mu.values.copy(), sigma.values.copy()


def reparameterize(mu: np.ndarray, sigma: np.ndarray, rng: np.random.Generator) -> LatentVector:
    if np.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    eps = rng.standard_normal(mu.shape)
    return LatentVector(z=mu + sigma * eps, mu=mu, sigma=sigma, eps=eps)


# --- decoding -----------------------------------------------------------------

@dataclass(frozen=True)
class DecodeStep:
    masked_probs: np.ndarray  # after connectivity mask, before strategy
    final_probs: np.ndarray  # after strategy restriction
    chosen: int


def _next_distribution(h_last: np.ndarray, model: GeneratorModel) -> np.ndarray:
    logits = linear_values(h_last, model.params.out_head)
    return masked_softmax_values(logits, model.native_vocab.mask)


def decode_sample(z, model: GeneratorModel, strategy: SamplingStrategy,
                  rng: np.random.Generator, max_len: int | None = None,
                  force: list[int] | None = None,
                  collect_trace: bool = False):
    """Grow a native circuit from a latent vector; returns the finalized DAG.

    force substitutes the given vocabulary indices for sampling (used to
    cross-check against the teacher-forced training path); collect_trace
    additionally returns the per-step distributions.
    """
    cfg = model.config
    vocab = model.native_vocab
    if isinstance(z, LatentVector):
        z = z.z
    z = np.asarray(z, dtype=np.float64)
    if max_len is None:
        max_len = cfg.max_len
    if max_len > cfg.max_len:
        raise CircuitError(f"max_len {max_len} exceeds model capacity {cfg.max_len}")
    builder = DagBuilder(cfg.n_qubits)
    hiddens = [np.tanh(linear_values(z, model.params.init_head))]
    trace: list[DecodeStep] = []
    entries = vocab.entries
    step = 0
    while True:
        probs = _next_distribution(hiddens[-1], model)
        final = strategy.restrict(probs)
        if force is not None:
            chosen = force[step]
            if final[chosen] <= 0:
                raise CircuitError(f"forced index {chosen} has zero probability at step {step}")
        else:
            chosen = int(rng.choice(final.size, p=final))
        if collect_trace:
            trace.append(DecodeStep(probs, final, chosen))
        step += 1
        if chosen == vocab.end_index:
            break
        name, qubits = entries[chosen]
        preds = builder.predecessors_of(qubits)
        op = builder.add_gate(name, qubits)
        h_in = aggregate_values(
            [hiddens[u] for u in preds],
            [position_onehot(u, cfg.pos_dim) for u in preds],
            model.params.dec_gate, model.params.dec_map, cfg.h_dim,
        )
        hiddens.append(gru_cell_values(node_onehot(op, vocab), h_in, model.params.dec_gru))
        if builder.interior_len >= max_len:
            break  # length cap: finalize with End
    dag = builder.finalize()
    return (dag, trace) if collect_trace else dag


# --- teacher-forced training path ----------------------------------------------

def teacher_forced_logits(z: Tensor, compiled: CircuitDag,
                          model: GeneratorModel) -> list[tuple[Tensor, int]]:
    """(logits, true next index) per step, ground-truth nodes fed throughout."""
    cfg = model.config
    vocab = model.native_vocab
    if len(compiled.gates) > cfg.max_len:
        raise CircuitError(
            f"compiled length {len(compiled.gates)} exceeds max_len {cfg.max_len}"
        )
    h = tanh(linear(z, model.params.init_head))
    hiddens = [h]
    steps: list[tuple[Tensor, int]] = []
    for v, op in enumerate(compiled.gates, start=1):
        steps.append((linear(hiddens[-1], model.params.out_head), vocab.index_of(op)))
        preds = sorted(compiled.predecessors(v))
        h_in = aggregate(
            [hiddens[u] for u in preds],
            [position_onehot(u, cfg.pos_dim) for u in preds],
            model.params.dec_gate, model.params.dec_map, cfg.h_dim,
        )
        hiddens.append(gru_cell(constant(node_onehot(op, vocab)), h_in, model.params.dec_gru))
    steps.append((linear(hiddens[-1], model.params.out_head), vocab.end_index))
    return steps


def teacher_forced_nll(z, compiled: CircuitDag, model: GeneratorModel) -> Tensor:
    """Sum of per-step cross-entropies under the connectivity mask, End included."""
    if not isinstance(z, Tensor):
        z = constant(np.asarray(z, dtype=np.float64))
    mask = model.native_vocab.mask
    total = None
    for logits, target in teacher_forced_logits(z, compiled, model):
        ce = softmax_cross_entropy(logits, target, mask=mask)
        total = ce if total is None else total + ce
    return total


def next_node_accuracy(pairs, model: GeneratorModel,
                       rng: np.random.Generator) -> float:
    """Teacher-forced argmax accuracy over all decode steps, End steps included.

    Latents are drawn through the posterior with the given generator, matching
    how the model is trained.
    """
    mask = model.native_vocab.mask
    hits = 0
    total = 0
    for target, compiled in pairs:
        mu, sigma = encode_values(target, model)
        lat = reparameterize(mu, sigma, rng)
        for logits, want in teacher_forced_logits(constant(lat.z), compiled, model):
            probs = masked_softmax_values(logits.values, mask)
            hits += int(int(np.argmax(probs)) == want)
            total += 1
    return hits / total


# --- training -------------------------------------------------------------------

def elbo_terms(target: CircuitDag, compiled: CircuitDag, model: GeneratorModel,
               rng: np.random.Generator) -> tuple[Tensor, Tensor]:
    """(reconstruction nll, kl) for one pair, latent sampled via reparameterization."""
    mu, sigma = encode(target, model)
    eps = rng.standard_normal(mu.values.shape)
    z = mu + sigma * constant(eps)
    return teacher_forced_nll(z, compiled, model), kl_standard_normal(mu, sigma)


def elbo_step(batch, model: GeneratorModel, rng: np.random.Generator,
              kl_weight: float = 1e-5):
    """Summed batch loss and parameter gradients.

    Returns (loss value, gradients, reconstruction sum, kl sum).
    """
    if not batch:
        raise ValueError("empty batch")
    model.store.zero_grad()
    total = None
    recon_sum = 0.0
    kl_sum = 0.0
    for target, compiled in batch:
        nll, kl = elbo_terms(target, compiled, model, rng)
        recon_sum += float(nll.values)
        kl_sum += float(kl.values)
        term = nll + kl * kl_weight
        total = term if total is None else total + term
    total.backward()
    return float(total.values), model.store.gradients(), recon_sum, kl_sum


@dataclass
class TrainGenConfig:
    epochs: int = 400
    batch_size: int = 32
    lr: float = 1e-4
    kl_weight: float = 1e-5
    seed: int = 0
    checkpoint_every: int = 0  # 0 = final only
    checkpoint_path: str | None = None
    log_every: int = 1


def train_generator(model: GeneratorModel, pairs, cfg: TrainGenConfig,
                    log=None) -> list[float]:
    """Adam over seeded shuffled mini-batches; returns per-epoch mean losses."""
    if not pairs:
        raise ValueError("empty dataset")
    from .nn import AdamState, adam_step

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    state = AdamState(lr=cfg.lr)
    losses: list[float] = []
    n = len(pairs)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = [pairs[i] for i in order[start:start + cfg.batch_size]]
            loss, grads, _, _ = elbo_step(batch, model, rng, cfg.kl_weight)
            adam_step(model.store, grads, state)
            epoch_loss += loss
        losses.append(epoch_loss / n)
        if log is not None and (epoch % cfg.log_every == 0 or epoch == cfg.epochs - 1):
            log(epoch, losses[-1])
        if (cfg.checkpoint_path and cfg.checkpoint_every
                and (epoch + 1) % cfg.checkpoint_every == 0):
            save_generator(cfg.checkpoint_path, model)
    if cfg.checkpoint_path:
        save_generator(cfg.checkpoint_path, model)
    return losses
