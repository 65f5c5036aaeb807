"""Circuit representation: gate sets, DAG form, operation vocabularies, metrics.

A circuit is stored as a DAG whose interior nodes are gates in temporal order,
bracketed by Start/End sentinel nodes. Edges follow qubit wires: each gate is
connected from the most recent prior node touching any of its qubits, with
duplicate (from, to) pairs merged.

Qubit indices are 0-based everywhere. Symmetric gates (CZ, XY, SWAP, the
control pair of Toffoli, the swapped pair of CSWAP) are stored with those
indices sorted ascending, so each physical operation has exactly one canonical
form and one vocabulary slot.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

START = "Start"
END = "End"


@dataclass(frozen=True)
class GateKind:
    """A gate type: arity, continuous-parameter count, symmetry, optional baked angle."""

    name: str
    arity: int
    param_count: int = 0
    # index pairs within the qubit tuple that are interchangeable
    symmetric: tuple[tuple[int, int], ...] = ()
    fixed_angle: float | None = None


H = GateKind("H", 1)
X = GateKind("X", 1)
Y = GateKind("Y", 1)
Z = GateKind("Z", 1)
S = GateKind("S", 1)
T = GateKind("T", 1)
RX = GateKind("RX", 1, param_count=1)
RY = GateKind("RY", 1, param_count=1)
RZ = GateKind("RZ", 1, param_count=1)
CNOT = GateKind("CNOT", 2)
CZ = GateKind("CZ", 2, symmetric=((0, 1),))
CY = GateKind("CY", 2)
SWAP = GateKind("SWAP", 2, symmetric=((0, 1),))
TOFFOLI = GateKind("Toffoli", 3, symmetric=((0, 1),))       # controls interchangeable
CSWAP = GateKind("CSWAP", 3, symmetric=((1, 2),))           # swapped pair interchangeable

# Fixed-angle X rotations of the native set; the angle is baked in, param_count 0.
RX180 = GateKind("RX180", 1, fixed_angle=math.pi)
RX90 = GateKind("RX90", 1, fixed_angle=math.pi / 2)
RXM90 = GateKind("RXM90", 1, fixed_angle=-math.pi / 2)
CRZ = GateKind("CRZ", 2, param_count=1)
XY = GateKind("XY", 2, param_count=1, symmetric=((0, 1),))

TARGET_GATES = (H, X, Y, Z, S, T, RX, RY, RZ, CNOT, CZ, CY, SWAP, TOFFOLI, CSWAP)
NATIVE_GATES = (RX180, RX90, RXM90, RZ, CRZ, CZ, XY)

GATE_KINDS: dict[str, GateKind] = {g.name: g for g in TARGET_GATES + NATIVE_GATES}


class CircuitError(ValueError):
    """Invalid circuit construction or malformed circuit record."""


def _canonical_qubits(kind: GateKind, qubits: tuple[int, ...]) -> tuple[int, ...]:
    q = list(qubits)
    for i, j in kind.symmetric:
        if q[i] > q[j]:
            q[i], q[j] = q[j], q[i]
    return tuple(q)


@dataclass(frozen=True)
class GateOp:
    """One gate application: kind, ordered qubits, optional parameter slot."""

    kind: GateKind
    qubits: tuple[int, ...]
    param_slot: int | None = None

    def __post_init__(self):
        if len(self.qubits) != self.kind.arity:
            raise CircuitError(
                f"{self.kind.name} expects {self.kind.arity} qubits, got {self.qubits}"
            )
        if len(set(self.qubits)) != len(self.qubits):
            raise CircuitError(f"duplicate qubit in {self.kind.name}{self.qubits}")
        object.__setattr__(self, "qubits", _canonical_qubits(self.kind, tuple(self.qubits)))

    def key(self) -> str:
        return "-".join([self.kind.name] + [str(q) for q in self.qubits])


@dataclass(frozen=True)
class CircuitDag:
    """Finalized circuit DAG. nodes[0] is Start, nodes[-1] is End."""

    n_qubits: int
    nodes: tuple  # START, *GateOp, END
    edges: frozenset  # (from_index, to_index)
    param_values: tuple[float, ...] = ()

    @property
    def gates(self) -> tuple[GateOp, ...]:
        return self.nodes[1:-1]

    def predecessors(self, v: int) -> list[int]:
        return sorted(u for (u, w) in self.edges if w == v)

    def successors(self, v: int) -> list[int]:
        return sorted(w for (u, w) in self.edges if u == v)

    def __len__(self) -> int:
        return len(self.nodes) - 2


class DagBuilder:
    """Incremental DAG construction following the wire rule."""

    def __init__(self, n_qubits: int):
        if n_qubits < 1:
            raise CircuitError("need at least one qubit")
        self.n_qubits = n_qubits
        self.nodes: list = [START]
        self.edges: set[tuple[int, int]] = set()
        self._last_on_wire = [0] * n_qubits  # node index of last gate touching each qubit
        self._next_slot = 0

    def add_gate(self, kind, qubits: tuple[int, ...], param_slot="auto") -> GateOp:
        if isinstance(kind, str):
            if kind not in GATE_KINDS:
                raise CircuitError(f"unknown gate {kind!r}")
            kind = GATE_KINDS[kind]
        for q in qubits:
            if not 0 <= q < self.n_qubits:
                raise CircuitError(f"qubit {q} out of range for {self.n_qubits} qubits")
        slot = None
        if kind.param_count:
            slot = self._next_slot if param_slot == "auto" else int(param_slot)
            self._next_slot = max(self._next_slot, slot + kind.param_count)
        op = GateOp(kind, tuple(qubits), slot)
        v = len(self.nodes)
        self.nodes.append(op)
        for u in {self._last_on_wire[q] for q in op.qubits}:
            self.edges.add((u, v))
        for q in op.qubits:
            self._last_on_wire[q] = v
        return op

    def predecessors_of(self, qubits) -> list[int]:
        """Node indices a gate on these qubits would receive edges from."""
        return sorted({self._last_on_wire[q] for q in qubits})

    @property
    def interior_len(self) -> int:
        return len(self.nodes) - 1

    def finalize(self, param_values=None) -> CircuitDag:
        v = len(self.nodes)
        self.nodes.append(END)
        for u in set(self._last_on_wire):
            self.edges.add((u, v))
        if param_values is None:
            param_values = [0.0] * self._next_slot
        if len(param_values) != self._next_slot:
            raise CircuitError(
                f"expected {self._next_slot} parameter values, got {len(param_values)}"
            )
        return CircuitDag(
            self.n_qubits,
            tuple(self.nodes),
            frozenset(self.edges),
            tuple(float(p) for p in param_values),
        )


def build_dag(gates, n_qubits: int, param_values=None) -> CircuitDag:
    """Build a finalized DAG from a gate list; param slots assigned in gate order."""
    b = DagBuilder(n_qubits)
    for g in gates:
        if isinstance(g, GateOp):
            b.add_gate(g.kind, g.qubits)
        else:  # (kind, qubits) pair
            b.add_gate(g[0], tuple(g[1]))
    return b.finalize(param_values)


def circuit_metrics(dag: CircuitDag) -> tuple[int, int]:
    """(length, depth): gate count excluding sentinels, and greedy as-soon-as-possible layer count."""
    layer_of = [0] * dag.n_qubits
    depth = 0
    for op in dag.gates:
        layer = 1 + max(layer_of[q] for q in op.qubits)
        for q in op.qubits:
            layer_of[q] = layer
        depth = max(depth, layer)
    return len(dag.gates), depth


def canonical_key(dag: CircuitDag) -> str:
    """Deterministic key over the interior gate sequence; parameters excluded."""
    return "|".join(op.key() for op in dag.gates)


def validate(dag: CircuitDag) -> None:
    """Assert all structural DAG invariants; raises CircuitError on violation."""
    n = len(dag.nodes)
    if n < 2 or dag.nodes[0] is not START or dag.nodes[-1] is not END:
        raise CircuitError("missing Start/End sentinels")
    for u, v in dag.edges:
        if not (0 <= u < v < n):
            raise CircuitError(f"edge ({u},{v}) violates topological node order")
    incoming = {v for (_, v) in dag.edges}
    outgoing = {u for (u, _) in dag.edges}
    for v in range(1, n):
        if v not in incoming:
            raise CircuitError(f"node {v} has no incoming edge")
    for v in range(n - 1):
        if v not in outgoing:
            raise CircuitError(f"node {v} has no outgoing edge")
    # wire rule: every gate connects from the latest prior node on each of its qubits
    last = [0] * dag.n_qubits
    expected = set()
    for v in range(1, n - 1):
        op = dag.nodes[v]
        for q in op.qubits:
            if not 0 <= q < dag.n_qubits:
                raise CircuitError(f"qubit {q} out of range")
        for u in {last[q] for q in op.qubits}:
            expected.add((u, v))
        for q in op.qubits:
            last[q] = v
    for u in set(last):
        expected.add((u, n - 1))
    if not dag.gates:
        expected = {(0, n - 1)}
    if expected != set(dag.edges):
        raise CircuitError("edge set does not match the wire rule")
    slots = [op.param_slot for op in dag.gates if op.kind.param_count]
    if slots and len(dag.param_values) != max(slots) + 1:
        raise CircuitError("param_values length does not match referenced slots")


@dataclass(frozen=True)
class Connectivity:
    """Which unordered qubit pairs may interact."""

    allowed_pairs: frozenset
    name: str

    @classmethod
    def full(cls, n_qubits: int) -> Connectivity:
        pairs = frozenset((i, j) for i in range(n_qubits) for j in range(i + 1, n_qubits))
        return cls(pairs, "full")

    @classmethod
    def chain(cls, n_qubits: int) -> Connectivity:
        return cls(frozenset((i, i + 1) for i in range(n_qubits - 1)), "chain")

    @classmethod
    def by_name(cls, name: str, n_qubits: int) -> Connectivity:
        if name == "full":
            return cls.full(n_qubits)
        if name == "chain":
            return cls.chain(n_qubits)
        raise CircuitError(f"unknown connectivity {name!r}")

    def allows(self, qubits: tuple[int, ...]) -> bool:
        qs = sorted(qubits)
        return all(
            (qs[i], qs[j]) in self.allowed_pairs
            for i in range(len(qs))
            for j in range(i + 1, len(qs))
        )


def _assignments(kind: GateKind, n_qubits: int):
    """Canonical qubit assignments for one gate kind, in lexicographic order."""

    def rec(prefix):
        if len(prefix) == kind.arity:
            yield tuple(prefix)
            return
        for q in range(n_qubits):
            if q not in prefix:
                yield from rec(prefix + [q])

    for qs in rec([]):
        if _canonical_qubits(kind, qs) == qs:
            yield qs


class OpVocabulary:
    """Enumerated candidate operations with one-hot indices and a connectivity mask.

    Entry order is fixed: gate kinds in declaration order, each expanded over
    its canonical qubit assignments in lexicographic order, sentinels last.
    Decoder vocabularies carry an End token; encoder vocabularies Start and End.
    """

    def __init__(self, entries, mask: np.ndarray, n_qubits: int, name: str):
        self.entries: tuple[tuple[str, tuple[int, ...]], ...] = tuple(entries)
        self.mask = np.asarray(mask, dtype=bool)
        self.n_qubits = n_qubits
        self.name = name
        self._index = {e: i for i, e in enumerate(self.entries)}
        if len(self._index) != len(self.entries):
            raise CircuitError("duplicate vocabulary entries")

    @property
    def onehot_dim(self) -> int:
        return len(self.entries)

    def index_of(self, node) -> int:
        if node is START:
            key = (START, ())
        elif node is END:
            key = (END, ())
        else:
            key = (node.kind.name, node.qubits)
        try:
            return self._index[key]
        except KeyError:
            raise CircuitError(f"node {key} not in vocabulary {self.name}") from None

    @property
    def end_index(self) -> int:
        return self._index[(END, ())]

    def gate_entries(self) -> list[tuple[int, GateKind, tuple[int, ...]]]:
        """(index, kind, qubits) for non-sentinel entries."""
        return [
            (i, GATE_KINDS[name], qs)
            for i, (name, qs) in enumerate(self.entries)
            if name not in (START, END)
        ]

    def fingerprint(self) -> str:
        import hashlib

        blob = json.dumps(
            [[n, list(q)] for n, q in self.entries], separators=(",", ":")
        ).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def build_vocabulary(
    gate_set,
    n_qubits: int,
    conn: Connectivity | None = None,
    kind: str = "decoder",
) -> OpVocabulary:
    """Enumerate (gate, assignment) entries plus sentinel tokens, mask from connectivity."""
    if not gate_set:
        raise CircuitError("empty gate set")
    if n_qubits < 2:
        raise CircuitError("need at least two qubits")
    if conn is None:
        conn = Connectivity.full(n_qubits)
    entries: list[tuple[str, tuple[int, ...]]] = []
    mask: list[bool] = []
    for g in gate_set:
        for qs in _assignments(g, n_qubits):
            entries.append((g.name, qs))
            mask.append(g.arity == 1 or conn.allows(qs))
    if kind == "encoder":
        entries.append((START, ()))
        mask.append(True)
    elif kind != "decoder":
        raise CircuitError(f"unknown vocabulary kind {kind!r}")
    entries.append((END, ()))
    mask.append(True)
    label = "native" if tuple(gate_set) == NATIVE_GATES else (
        "target" if tuple(gate_set) == TARGET_GATES else "custom"
    )
    return OpVocabulary(entries, np.array(mask), n_qubits, f"{label}-{kind}")


def node_onehot(node, vocab: OpVocabulary) -> np.ndarray:
    vec = np.zeros(vocab.onehot_dim)
    vec[vocab.index_of(node)] = 1.0
    return vec


# --- line-oriented circuit records -----------------------------------------

def to_record(dag: CircuitDag) -> dict:
    """JSON-ready dict; field order is fixed so dumps are deterministic."""
    gates = []
    for op in dag.gates:
        rec: dict = {"g": op.kind.name, "q": list(op.qubits)}
        if op.param_slot is not None:
            rec["p"] = op.param_slot
        gates.append(rec)
    return {"n": dag.n_qubits, "gates": gates, "params": list(dag.param_values)}


def serialize(dag: CircuitDag) -> str:
    """One-line JSON record; round-trips exactly through deserialize."""
    return json.dumps(to_record(dag), separators=(",", ":"))


def format_circuit(dag: CircuitDag) -> str:
    """Human-readable listing: header line, then one interior gate per line."""
    length, depth = circuit_metrics(dag)
    lines = [f"{dag.n_qubits} qubits, {length} gates, depth {depth}"]
    for i, op in enumerate(dag.gates):
        qubits = ",".join(f"q{q}" for q in op.qubits)
        angle = ""
        if op.param_slot is not None:
            angle = f"({dag.param_values[op.param_slot]:.6g})"
        lines.append(f"  {i}: {op.kind.name}{angle} {qubits}")
    return "\n".join(lines)


def from_record(rec: dict) -> CircuitDag:
    for field_name in ("n", "gates", "params"):
        if field_name not in rec:
            raise CircuitError(f"circuit record missing {field_name!r}")
    n_qubits = rec["n"]
    b = DagBuilder(n_qubits)
    for g in rec["gates"]:
        name = g.get("g")
        if name not in GATE_KINDS:
            raise CircuitError(f"unknown gate name {name!r}")
        kind = GATE_KINDS[name]
        if kind.param_count and "p" not in g:
            raise CircuitError(f"{name} record missing param slot")
        b.add_gate(kind, tuple(g.get("q", ())), param_slot=g["p"] if kind.param_count else "auto")
    dag = b.finalize([float(p) for p in rec["params"]])
    validate(dag)
    return dag


def deserialize(text: str) -> CircuitDag:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as e:
        raise CircuitError(f"malformed circuit record: {e}") from None
    if not isinstance(rec, dict):
        raise CircuitError("circuit record must be a JSON object")
    return from_record(rec)
