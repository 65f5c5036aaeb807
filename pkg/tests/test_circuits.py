"""Circuit DAG construction, metrics, vocabulary, and serialization."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqcgen.circuits import (
    END,
    GATE_KINDS,
    NATIVE_GATES,
    START,
    TARGET_GATES,
    CircuitDag,
    CircuitError,
    Connectivity,
    DagBuilder,
    build_dag,
    build_vocabulary,
    canonical_key,
    circuit_metrics,
    deserialize,
    format_circuit,
    from_record,
    node_onehot,
    serialize,
    to_record,
    validate,
)


def ref_circuit() -> CircuitDag:
    """5-gate, 3-qubit example: 7 DAG nodes, depth 4."""
    return build_dag(
        [("H", (0,)), ("RX", (2,)), ("CNOT", (0, 1)), ("RZ", (1,)), ("CNOT", (1, 2))],
        3,
        param_values=[0.3, 1.1],
    )


# --- wire rule ------------------------------------------------------------

def test_wire_rule_edges():
    """Each gate receives one edge from the latest prior node on each wire."""
    dag = build_dag([("H", (0,)), ("X", (1,)), ("CNOT", (0, 1)), ("H", (2,))], 3)
    # nodes: 0=Start, 1=H q0, 2=X q1, 3=CNOT(0,1), 4=H q2, 5=End
    assert set(dag.edges) == {(0, 1), (0, 2), (0, 4), (1, 3), (2, 3), (3, 5), (4, 5)}


def test_empty_circuit_single_edge():
    dag = build_dag([], 3)
    assert set(dag.edges) == {(0, 1)}
    assert len(dag) == 0


def test_duplicate_wire_edges_merge():
    # both CNOT wires come from the same predecessor: one edge, not two
    dag = build_dag([("CNOT", (0, 1)), ("CZ", (0, 1))], 2)
    assert dag.edges == frozenset({(0, 1), (1, 2), (2, 3)})


def test_ref_circuit_has_seven_nodes():
    dag = ref_circuit()
    assert len(dag.nodes) == 7
    assert dag.nodes[0] is START and dag.nodes[-1] is END


def test_predecessors_successors():
    dag = ref_circuit()
    # CNOT(0,1) is node 3; it follows H q0 (node 1) and Start
    assert dag.predecessors(3) == [0, 1]
    assert dag.successors(0) == [1, 2, 3]


# --- builder errors ---------------------------------------------------------

def test_unknown_gate_rejected():
    with pytest.raises(CircuitError, match="unknown gate"):
        build_dag([("QFT", (0,))], 2)


def test_qubit_out_of_range():
    with pytest.raises(CircuitError, match="out of range"):
        build_dag([("H", (5,))], 3)


def test_duplicate_qubits_rejected():
    with pytest.raises(CircuitError):
        build_dag([("CNOT", (1, 1))], 3)


def test_param_count_enforced():
    b = DagBuilder(2)
    b.add_gate("RX", (0,))
    with pytest.raises(CircuitError, match="expected 1 parameter"):
        b.finalize([0.1, 0.2])


def test_zero_qubits_rejected():
    with pytest.raises(CircuitError):
        DagBuilder(0)


# --- metrics ---------------------------------------------------------------

def test_metrics_reference_circuit():
    assert circuit_metrics(ref_circuit()) == (5, 4)


def test_metrics_empty():
    assert circuit_metrics(build_dag([], 3)) == (0, 0)


def test_metrics_parallel_layer():
    assert circuit_metrics(
        build_dag([("H", (0,)), ("X", (1,)), ("CNOT", (0, 1)), ("H", (2,))], 3)
    ) == (4, 2)


def test_metrics_sequential_chain():
    dag = build_dag([("H", (0,))] * 4, 2)
    assert circuit_metrics(dag) == (4, 4)


# --- canonical key -----------------------------------------------------------

def test_canonical_key_ignores_params():
    a = build_dag([("RX", (0,)), ("RZ", (1,))], 2, [0.1, 0.2])
    b = build_dag([("RX", (0,)), ("RZ", (1,))], 2, [5.0, 6.0])
    assert canonical_key(a) == canonical_key(b)


def test_canonical_key_distinguishes_structure():
    a = build_dag([("H", (0,)), ("X", (1,))], 2)
    b = build_dag([("X", (1,)), ("H", (0,))], 2)
    assert canonical_key(a) != canonical_key(b)


@pytest.mark.parametrize(
    "kind,qubits,same",
    [
        ("CZ", (1, 0), (0, 1)),          # symmetric pair sorts
        ("SWAP", (2, 0), (0, 2)),
        ("XY", (2, 1), (1, 2)),
        ("Toffoli", (2, 0, 1), (0, 2, 1)),  # controls sort, target fixed
        ("CSWAP", (0, 2, 1), (0, 1, 2)),    # swapped pair sorts
    ],
)
def test_symmetric_qubits_canonicalized(kind, qubits, same):
    a = build_dag([(kind, qubits)], 3, [0.0] if GATE_KINDS[kind].param_count else None)
    b = build_dag([(kind, same)], 3, [0.0] if GATE_KINDS[kind].param_count else None)
    assert canonical_key(a) == canonical_key(b)


def test_cnot_direction_matters():
    a = build_dag([("CNOT", (0, 1))], 2)
    b = build_dag([("CNOT", (1, 0))], 2)
    assert canonical_key(a) != canonical_key(b)


# --- validate ----------------------------------------------------------------

def test_validate_accepts_built():
    validate(ref_circuit())


def test_validate_rejects_tampered_edges():
    dag = ref_circuit()
    bad = CircuitDag(dag.n_qubits, dag.nodes,
                     frozenset(set(dag.edges) | {(0, 5)}), dag.param_values)
    with pytest.raises(CircuitError, match="wire rule"):
        validate(bad)


def test_validate_rejects_missing_sentinels():
    dag = ref_circuit()
    bad = CircuitDag(dag.n_qubits, dag.nodes[1:], dag.edges, dag.param_values)
    with pytest.raises(CircuitError):
        validate(bad)


# --- connectivity ------------------------------------------------------------

def test_chain_allows_neighbors_only():
    conn = Connectivity.chain(3)
    assert conn.allows((0, 1)) and conn.allows((2, 1))
    assert not conn.allows((0, 2))


def test_full_allows_all_pairs():
    conn = Connectivity.full(4)
    assert all(conn.allows((i, j)) for i in range(4) for j in range(4) if i != j)


def test_connectivity_by_name():
    assert Connectivity.by_name("chain", 3).name == "chain"
    with pytest.raises(CircuitError):
        Connectivity.by_name("torus", 3)


# --- vocabulary ---------------------------------------------------------------

def test_native_decoder_vocab_size():
    # 3 x RX-fixed x 3 qubits + RZ x 3 + CRZ x 6 ordered + CZ x 3 + XY x 3 + End
    vocab = build_vocabulary(NATIVE_GATES, 3, kind="decoder")
    assert vocab.onehot_dim == 25
    assert vocab.entries[-1] == (END, ())


def test_target_encoder_vocab_size():
    vocab = build_vocabulary(TARGET_GATES, 3, kind="encoder")
    assert vocab.onehot_dim == 53
    assert (START, ()) in vocab.entries and (END, ()) in vocab.entries


def test_chain_mask_blocks_far_pairs():
    full = build_vocabulary(NATIVE_GATES, 3, kind="decoder")
    chain = build_vocabulary(NATIVE_GATES, 3, Connectivity.chain(3), kind="decoder")
    assert full.entries == chain.entries
    blocked = [e for e, m in zip(chain.entries, chain.mask) if not m]
    # CRZ(0,2), CRZ(2,0), CZ(0,2), XY(0,2) span the missing chain link
    assert len(blocked) == 4
    assert all(set(qs) == {0, 2} for _, qs in blocked)
    assert full.mask.all()


def test_end_never_masked():
    vocab = build_vocabulary(NATIVE_GATES, 3, Connectivity.chain(3), kind="decoder")
    assert vocab.mask[vocab.end_index]


def test_vocab_fingerprint_distinguishes_sets():
    a = build_vocabulary(NATIVE_GATES, 3, kind="decoder")
    b = build_vocabulary(TARGET_GATES, 3, kind="decoder")
    c = build_vocabulary(NATIVE_GATES, 4, kind="decoder")
    assert len({a.fingerprint(), b.fingerprint(), c.fingerprint()}) == 3


def test_index_of_round_trip():
    vocab = build_vocabulary(NATIVE_GATES, 3, kind="decoder")
    for i, kind, qs in vocab.gate_entries():
        op = DagBuilder(3).add_gate(kind, qs)
        assert vocab.index_of(op) == i


def test_index_of_unknown_node():
    vocab = build_vocabulary(NATIVE_GATES, 3, kind="decoder")
    op = DagBuilder(3).add_gate("H", (0,))
    with pytest.raises(CircuitError, match="not in vocabulary"):
        vocab.index_of(op)


def test_node_onehot():
    vocab = build_vocabulary(NATIVE_GATES, 3, kind="decoder")
    vec = node_onehot(END, vocab)
    assert vec.sum() == 1.0 and vec[vocab.end_index] == 1.0


# --- serialization ------------------------------------------------------------

def test_serialize_round_trip():
    dag = ref_circuit()
    again = deserialize(serialize(dag))
    assert again.nodes[1:-1] == dag.nodes[1:-1]
    assert again.edges == dag.edges
    assert again.param_values == dag.param_values


def test_serialize_is_single_line_json():
    text = serialize(ref_circuit())
    assert "\n" not in text
    rec = json.loads(text)
    assert set(rec) == {"n", "gates", "params"}


@pytest.mark.parametrize(
    "text,match",
    [
        ("not json", "malformed"),
        ("[1,2]", "JSON object"),
        ('{"n":2,"gates":[]}', "missing 'params'"),
        ('{"n":2,"gates":[{"g":"QFT","q":[0]}],"params":[]}', "unknown gate"),
        ('{"n":2,"gates":[{"g":"RX","q":[0]}],"params":[0.1]}', "missing param slot"),
    ],
)
def test_deserialize_rejects_corrupt(text, match):
    with pytest.raises(CircuitError, match=match):
        deserialize(text)


def test_from_record_validates():
    rec = to_record(ref_circuit())
    rec["params"] = [0.1]  # wrong count for the two rotation slots
    with pytest.raises(CircuitError):
        from_record(rec)


@st.composite
def random_dags(draw):
    n_qubits = draw(st.integers(2, 3))
    entries = []
    for kind in TARGET_GATES:
        if kind.arity > n_qubits:
            continue
        for qs in __import__("itertools").permutations(range(n_qubits), kind.arity):
            entries.append((kind.name, qs))
    gates = draw(st.lists(st.sampled_from(entries), max_size=8))
    n_params = sum(GATE_KINDS[name].param_count for name, _ in gates)
    params = draw(
        st.lists(st.floats(0, 2 * math.pi), min_size=n_params, max_size=n_params)
    )
    return build_dag(gates, n_qubits, params)


@given(random_dags())
@settings(max_examples=60, deadline=None)
def test_round_trip_preserves_key_and_metrics(dag):
    again = deserialize(serialize(dag))
    assert canonical_key(again) == canonical_key(dag)
    assert circuit_metrics(again) == circuit_metrics(dag)
    assert np.allclose(again.param_values, dag.param_values)


@given(random_dags())
@settings(max_examples=60, deadline=None)
def test_depth_never_exceeds_length(dag):
    length, depth = circuit_metrics(dag)
    assert 0 <= depth <= length


# --- formatting -----------------------------------------------------------------

def test_format_circuit_header_and_gates():
    text = format_circuit(ref_circuit())
    lines = text.splitlines()
    assert lines[0] == "3 qubits, 5 gates, depth 4"
    assert lines[1] == "  0: H q0"
    assert "RX(0.3)" in lines[2]
    assert len(lines) == 6
