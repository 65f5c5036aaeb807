"""Latent-variable circuit generator: encoding, decoding, training paths."""

import numpy as np
import pytest

from vqcgen.circuits import CircuitError, build_dag, canonical_key, validate
from vqcgen.datasets import gen_random_target
from vqcgen.generator import (
    CheckpointMismatch,
    GeneratorConfig,
    SamplingStrategy,
    TrainGenConfig,
    build_generator,
    decode_sample,
    elbo_step,
    elbo_terms,
    encode,
    encode_values,
    load_generator,
    next_node_accuracy,
    reparameterize,
    save_generator,
    teacher_forced_nll,
    train_generator,
)
from vqcgen.nn import save_checkpoint
from vqcgen.tensor import constant

SMALL = GeneratorConfig(h_dim=10, z_dim=8, max_len=12)


@pytest.fixture(scope="module")
def model():
    return build_generator(SMALL, seed=0)


def rng_of(seed=0):
    return np.random.default_rng(seed)


# --- strategy -------------------------------------------------------------------

def test_strategy_parse():
    assert SamplingStrategy.parse("stochastic").kind == "stochastic"
    s = SamplingStrategy.parse("top-k:25")
    assert (s.kind, s.k) == ("top-k", 25)
    assert s.describe() == "top-k:25"


@pytest.mark.parametrize("text", ["top-k:0", "nucleus:0.9", "topk"])
def test_strategy_parse_rejects(text):
    with pytest.raises(ValueError):
        SamplingStrategy.parse(text)


def test_stochastic_restrict_is_identity():
    p = np.array([0.2, 0.5, 0.3])
    assert SamplingStrategy("stochastic").restrict(p) is p


def test_top_k_restrict_support_and_renormalization():
    p = np.array([0.1, 0.4, 0.05, 0.25, 0.2])
    out = SamplingStrategy("top-k", 2).restrict(p)
    assert np.allclose(out, [0, 0.4 / 0.65, 0, 0.25 / 0.65, 0])


def test_top_k_ties_keep_lowest_index():
    p = np.array([0.25, 0.25, 0.25, 0.25])
    out = SamplingStrategy("top-k", 2).restrict(p)
    assert np.allclose(out, [0.5, 0.5, 0, 0])


def test_top_k_exceeding_vocab_rejected():
    with pytest.raises(ValueError, match="exceeds"):
        SamplingStrategy("top-k", 10).restrict(np.ones(4) / 4)


# --- build / vocabulary ------------------------------------------------------------

def test_build_generator_vocabs(model):
    assert model.target_vocab.onehot_dim == 53  # encoder: gates + Start + End
    assert model.native_vocab.onehot_dim == 25  # decoder: gates + End
    assert model.native_vocab.mask.all()


def test_build_generator_seeded():
    a = build_generator(SMALL, seed=7)
    b = build_generator(SMALL, seed=7)
    for (na, ta), (nb, tb) in zip(a.store.items(), b.store.items()):
        assert na == nb and np.array_equal(ta.values, tb.values)


def test_chain_config_masks_decoder():
    m = build_generator(GeneratorConfig(h_dim=8, z_dim=6, connectivity="chain"), seed=0)
    assert not m.native_vocab.mask.all()


# --- encode / reparameterize ---------------------------------------------------------

def test_encode_values_lockstep(model):
    target = gen_random_target(rng_of(1), 4)
    mu_t, sigma_t = encode(target, model)
    mu_v, sigma_v = encode_values(target, model)
    assert np.allclose(mu_t.values, mu_v)
    assert np.allclose(sigma_t.values, sigma_v)
    assert np.all(sigma_v > 0)


def test_reparameterize_deterministic_given_rng():
    mu, sigma = np.zeros(4), np.ones(4)
    a = reparameterize(mu, sigma, rng_of(3))
    b = reparameterize(mu, sigma, rng_of(3))
    assert np.array_equal(a.z, b.z)
    assert np.array_equal(a.eps, b.eps)
    assert np.array_equal(a.z, mu + sigma * a.eps)


def test_reparameterize_rejects_bad_sigma():
    with pytest.raises(ValueError, match="positive"):
        reparameterize(np.zeros(2), np.array([1.0, 0.0]), rng_of(0))


# --- decoding ---------------------------------------------------------------------

def test_decode_always_valid_and_terminated(model):
    strategy = SamplingStrategy.parse("stochastic")
    rng = rng_of(5)
    for _ in range(50):
        dag = decode_sample(rng.standard_normal(SMALL.z_dim), model, strategy, rng)
        validate(dag)
        assert len(dag.gates) <= SMALL.max_len


def test_decode_deterministic_given_rng(model):
    z = rng_of(6).standard_normal(SMALL.z_dim)
    strategy = SamplingStrategy.parse("top-k:5")
    a = decode_sample(z, model, strategy, rng_of(7))
    b = decode_sample(z, model, strategy, rng_of(7))
    assert canonical_key(a) == canonical_key(b)


def test_decode_max_len_cap(model):
    strategy = SamplingStrategy.parse("stochastic")
    rng = rng_of(8)
    for _ in range(20):
        dag = decode_sample(rng.standard_normal(SMALL.z_dim), model, strategy, rng,
                            max_len=2)
        assert len(dag.gates) <= 2


def test_decode_max_len_beyond_capacity(model):
    with pytest.raises(CircuitError, match="capacity"):
        decode_sample(np.zeros(SMALL.z_dim), model, SamplingStrategy.parse("stochastic"),
                      rng_of(0), max_len=SMALL.max_len + 1)


def test_decode_respects_chain_connectivity():
    m = build_generator(GeneratorConfig(h_dim=10, z_dim=8, max_len=12,
                                        connectivity="chain"), seed=1)
    strategy = SamplingStrategy.parse("stochastic")
    rng = rng_of(9)
    for _ in range(60):
        dag = decode_sample(rng.standard_normal(8), m, strategy, rng)
        for op in dag.gates:
            if len(op.qubits) == 2:
                assert abs(op.qubits[0] - op.qubits[1]) == 1


def test_decode_top_k_support(model):
    strategy = SamplingStrategy.parse("top-k:5")
    rng = rng_of(10)
    for _ in range(30):
        dag, trace = decode_sample(rng.standard_normal(SMALL.z_dim), model, strategy,
                                   rng, collect_trace=True)
        for step in trace:
            top = set(np.argsort(-step.masked_probs, kind="stable")[:5])
            assert step.chosen in top
            assert step.final_probs[step.chosen] > 0
            assert abs(step.final_probs.sum() - 1.0) < 1e-12


def test_decode_force_replays_exactly(model):
    """A sampled trajectory re-fed through force reproduces the same circuit."""
    strategy = SamplingStrategy.parse("stochastic")
    z = rng_of(11).standard_normal(SMALL.z_dim)
    dag, trace = decode_sample(z, model, strategy, rng_of(12), collect_trace=True)
    forced = decode_sample(z, model, strategy, rng_of(99), force=[s.chosen for s in trace])
    assert canonical_key(forced) == canonical_key(dag)


def test_decode_force_zero_probability_rejected(model):
    # End has the k highest mass somewhere; force an entry outside the support
    strategy = SamplingStrategy.parse("top-k:1")
    z = np.zeros(SMALL.z_dim)
    _, trace = decode_sample(z, model, strategy, rng_of(13), collect_trace=True)
    keeper = trace[0].chosen
    outside = (keeper + 1) % model.native_vocab.onehot_dim
    with pytest.raises(CircuitError, match="zero probability"):
        decode_sample(z, model, strategy, rng_of(13), force=[outside])


# --- teacher forcing ----------------------------------------------------------------

def test_teacher_matches_decode_trace(model):
    """Teacher-forced step distributions equal the decode-time distributions."""
    from vqcgen.generator import teacher_forced_logits
    from vqcgen.tensor import masked_softmax_values

    z = rng_of(14).standard_normal(SMALL.z_dim)
    dag, trace = decode_sample(z, model, SamplingStrategy.parse("stochastic"),
                               rng_of(15), collect_trace=True)
    if len(dag.gates) == SMALL.max_len:  # cap path emits no final End step
        pytest.skip("capped sample")
    steps = teacher_forced_logits(constant(z), dag, model)
    assert len(steps) == len(trace)
    for (logits, want), step in zip(steps, trace):
        assert want == step.chosen
        probs = masked_softmax_values(logits.values, model.native_vocab.mask)
        assert np.allclose(probs, step.masked_probs, atol=1e-12)


def test_nll_uniform_logits(model):
    """Zeroed output head gives log|vocab| per step, End step included."""
    stash = (model.params.out_head.W.values.copy(),
             model.params.out_head.b.values.copy())
    model.params.out_head.W.values = np.zeros_like(stash[0])
    model.params.out_head.b.values = np.zeros_like(stash[1])
    try:
        compiled = build_dag([("RX90", (0,)), ("CZ", (0, 1))], 3)
        nll = teacher_forced_nll(np.zeros(SMALL.z_dim), compiled, model)
        want = 3 * np.log(25)  # two gate steps plus End over 25 unmasked entries
        assert abs(nll.item() - want) < 1e-12
    finally:
        model.params.out_head.W.values, model.params.out_head.b.values = stash


def test_nll_empty_circuit_is_end_term(model):
    nll = teacher_forced_nll(np.zeros(SMALL.z_dim), build_dag([], 3), model)
    assert nll.item() > 0


def test_nll_rejects_overlong(model):
    long_dag = build_dag([("RX90", (0,))] * (SMALL.max_len + 1), 3)
    with pytest.raises(CircuitError, match="exceeds max_len"):
        teacher_forced_nll(np.zeros(SMALL.z_dim), long_dag, model)


# --- ELBO / training -----------------------------------------------------------------

def test_elbo_terms_positive(model):
    target = gen_random_target(rng_of(16), 4)
    compiled = build_dag([("RX90", (0,)), ("RZ", (1,))], 3, [0.3])
    nll, kl = elbo_terms(target, compiled, model, rng_of(17))
    assert nll.item() > 0
    assert kl.item() >= 0


def test_elbo_step_sums_batch(model):
    target = gen_random_target(rng_of(18), 4)
    compiled = build_dag([("RX90", (0,))], 3)
    model.store.zero_grad()
    loss, grads, recon, kl = elbo_step([(target, compiled)], model, rng_of(19),
                                       kl_weight=1e-5)
    assert abs(loss - (recon + 1e-5 * kl)) < 1e-9
    assert any(np.any(g != 0) for g in grads.values())


def test_elbo_step_empty_batch(model):
    with pytest.raises(ValueError, match="empty"):
        elbo_step([], model, rng_of(0))


def test_train_generator_reduces_loss():
    m = build_generator(SMALL, seed=2)
    pairs = [
        (gen_random_target(rng_of(20), 4), build_dag([("RX90", (0,)), ("CZ", (0, 1))], 3)),
        (gen_random_target(rng_of(21), 4), build_dag([("RZ", (1,)), ("RX180", (2,))], 3, [0.5])),
    ]
    losses = train_generator(m, pairs, TrainGenConfig(epochs=30, lr=1e-3, seed=0))
    assert len(losses) == 30
    assert losses[-1] < losses[0]


def test_train_generator_deterministic():
    pairs = [(gen_random_target(rng_of(22), 4),
              build_dag([("RX90", (0,)), ("CZ", (0, 1))], 3))]
    runs = []
    for _ in range(2):
        m = build_generator(SMALL, seed=3)
        runs.append(train_generator(m, pairs, TrainGenConfig(epochs=5, lr=1e-3, seed=1)))
    assert runs[0] == runs[1]


def test_next_node_accuracy_range(model):
    pairs = [(gen_random_target(rng_of(23), 4),
              build_dag([("RX90", (0,))], 3))]
    acc = next_node_accuracy(pairs, model, rng_of(24))
    assert 0.0 <= acc <= 1.0


# --- persistence -----------------------------------------------------------------------

def test_save_load_round_trip(tmp_path, model):
    path = tmp_path / "gen.ckpt"
    save_generator(path, model)
    loaded = load_generator(path)
    assert loaded.config == model.config
    for (na, ta), (nb, tb) in zip(model.store.items(), loaded.store.items()):
        assert na == nb and np.array_equal(ta.values, tb.values)
    # behavior identical too
    z = rng_of(25).standard_normal(SMALL.z_dim)
    a = decode_sample(z, model, SamplingStrategy.parse("top-k:3"), rng_of(26))
    b = decode_sample(z, loaded, SamplingStrategy.parse("top-k:3"), rng_of(26))
    assert canonical_key(a) == canonical_key(b)


def test_load_rejects_wrong_kind(tmp_path, model):
    path = tmp_path / "gen.ckpt"
    save_checkpoint(path, model.store.state_arrays(), {"kind": "predictor"})
    with pytest.raises(CheckpointMismatch, match="kind"):
        load_generator(path)


def test_load_rejects_vocab_drift(tmp_path, model):
    path = tmp_path / "gen.ckpt"
    save_generator(path, model)
    from vqcgen.nn import load_checkpoint
    arrays, meta = load_checkpoint(path)
    meta["native_vocab"] = "0" * 16
    save_checkpoint(path, arrays, meta)
    with pytest.raises(CheckpointMismatch, match="fingerprint mismatch"):
        load_generator(path)


def test_load_missing_file():
    with pytest.raises(FileNotFoundError):
        load_generator("/nonexistent/gen.ckpt")
