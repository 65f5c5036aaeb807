"""Dense statevector simulation and the local Hilbert-Schmidt test cost.

Bit ordering convention (used everywhere): qubit 0 is the MOST significant
bit of the amplitude index, i.e. a state reshaped to [2]*n has axis q for
qubit q. |100> on 3 qubits is amplitude index 4.

Phase conventions: RZ(t) = diag(e^{-it/2}, e^{it/2}); RX(t) = cos(t/2) I
- i sin(t/2) X; CRZ applies RZ on the target conditioned on the control
(control is the first listed qubit); XY(t) acts on span{|01>,|10>} as
[[cos(t/2), i sin(t/2)], [i sin(t/2), cos(t/2)]] and as identity elsewhere.
Global phases are irrelevant to every cost computed here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .circuits import CircuitDag, GateOp

MAX_SIM_QUBITS = 8
_NORM_TOL = 1e-10

_SQ2 = 1.0 / math.sqrt(2.0)

_H = np.array([[_SQ2, _SQ2], [_SQ2, -_SQ2]], dtype=complex)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.diag([1, -1]).astype(complex)
_S = np.diag([1, 1j]).astype(complex)
_T = np.diag([1, np.exp(1j * math.pi / 4)]).astype(complex)
_SWAP = np.array(
    [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex
)
_CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)
_CY = np.block(
    [[np.eye(2), np.zeros((2, 2))], [np.zeros((2, 2)), _Y]]
).astype(complex)
_CZ = np.diag([1, 1, 1, -1]).astype(complex)
_TOFFOLI = np.eye(8, dtype=complex)
_TOFFOLI[[6, 7]] = _TOFFOLI[[7, 6]]
_CSWAP = np.eye(8, dtype=complex)
_CSWAP[[5, 6]] = _CSWAP[[6, 5]]

_FIXED = {"H": _H, "X": _X, "Y": _Y, "Z": _Z, "S": _S, "T": _T,
          "CNOT": _CNOT, "CZ": _CZ, "CY": _CY, "SWAP": _SWAP,
          "Toffoli": _TOFFOLI, "CSWAP": _CSWAP}


class SimulationError(ValueError):
    """Dimension mismatch, bad angle arity, or norm drift."""


def _rx(t: float) -> np.ndarray:
    c, s = math.cos(t / 2), math.sin(t / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


def _ry(t: float) -> np.ndarray:
    c, s = math.cos(t / 2), math.sin(t / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def _rz(t: float) -> np.ndarray:
    return np.diag([np.exp(-1j * t / 2), np.exp(1j * t / 2)])


def _xy(t: float) -> np.ndarray:
    c, s = math.cos(t / 2), math.sin(t / 2)
    m = np.eye(4, dtype=complex)
    m[1, 1] = m[2, 2] = c
    m[1, 2] = m[2, 1] = 1j * s
    return m


@dataclass(frozen=True)
class GateMatrix:
    unitary: np.ndarray
    derivative: np.ndarray | None = None  # dU/dtheta for parameterized gates


def gate_matrix(op: GateOp, angle: float | None = None) -> GateMatrix:
    """Unitary (and dU/dtheta when parameterized) for one gate application."""
    kind = op.kind
    if kind.param_count == 1 and angle is None:
        raise SimulationError(f"{kind.name} requires an angle")
    if kind.param_count == 0 and angle is not None:
        raise SimulationError(f"{kind.name} takes no angle")
    if kind.fixed_angle is not None:
        return GateMatrix(_rx(kind.fixed_angle))
    if kind.name in _FIXED:
        return GateMatrix(_FIXED[kind.name])
    t = float(angle)
    c, s = math.cos(t / 2), math.sin(t / 2)
    if kind.name == "RX":
        return GateMatrix(_rx(t), np.array([[-s, -1j * c], [-1j * c, -s]]) * 0.5)
    if kind.name == "RY":
        return GateMatrix(_ry(t), np.array([[-s, -c], [c, -s]], dtype=complex) * 0.5)
    if kind.name == "RZ":
        return GateMatrix(
            _rz(t), np.diag([-0.5j * np.exp(-1j * t / 2), 0.5j * np.exp(1j * t / 2)])
        )
    if kind.name == "CRZ":
        u = np.eye(4, dtype=complex)
        u[2, 2], u[3, 3] = np.exp(-1j * t / 2), np.exp(1j * t / 2)
        du = np.zeros((4, 4), dtype=complex)
        du[2, 2], du[3, 3] = -0.5j * np.exp(-1j * t / 2), 0.5j * np.exp(1j * t / 2)
        return GateMatrix(u, du)
    if kind.name == "XY":
        du = np.zeros((4, 4), dtype=complex)
        du[1, 1] = du[2, 2] = -s / 2
        du[1, 2] = du[2, 1] = 0.5j * c
        return GateMatrix(_xy(t), du)
    raise SimulationError(f"no matrix for gate kind {kind.name}")


def zero_state(n_qubits: int) -> np.ndarray:
    if n_qubits > MAX_SIM_QUBITS:
        raise SimulationError(f"at most {MAX_SIM_QUBITS} simulated qubits supported")
    state = np.zeros(2 ** n_qubits, dtype=complex)
    state[0] = 1.0
    return state


def apply_gate(state: np.ndarray, unitary: np.ndarray, qubits: tuple[int, ...],
               n_qubits: int) -> np.ndarray:
    """Apply a 2^a x 2^a matrix to the given qubit axes of the state."""
    a = len(qubits)
    psi = state.reshape([2] * n_qubits)
    u = unitary.reshape([2] * (2 * a))
    psi = np.tensordot(u, psi, axes=(list(range(a, 2 * a)), list(qubits)))
    psi = np.moveaxis(psi, list(range(a)), list(qubits))
    return np.ascontiguousarray(psi).reshape(-1)


def _resolve_angle(op: GateOp, params) -> float | None:
    if op.kind.param_count == 1:
        if op.param_slot is None or op.param_slot >= len(params):
            raise SimulationError(f"missing parameter for {op.kind.name}")
        return float(params[op.param_slot])
    return None


def apply_circuit(dag: CircuitDag, params, state: np.ndarray) -> np.ndarray:
    """Apply the gates in node order; preserves the norm to 1e-10."""
    if state.size != 2 ** dag.n_qubits:
        raise SimulationError(
            f"state dimension {state.size} does not match {dag.n_qubits} qubits"
        )
    for op in dag.gates:
        gm = gate_matrix(op, _resolve_angle(op, params))
        state = apply_gate(state, gm.unitary, op.qubits, dag.n_qubits)
        if abs(np.vdot(state, state).real - 1.0) > _NORM_TOL:
            raise SimulationError(f"norm drift after {op.kind.name}")
    return state


def circuit_unitary(dag: CircuitDag, params) -> np.ndarray:
    """Full 2^n x 2^n unitary, columns = circuit applied to basis states."""
    dim = 2 ** dag.n_qubits
    u = np.empty((dim, dim), dtype=complex)
    for j in range(dim):
        basis = np.zeros(dim, dtype=complex)
        basis[j] = 1.0
        u[:, j] = apply_circuit(dag, params, basis)
    return u


# --- local Hilbert-Schmidt test ----------------------------------------------
#
# Register A holds qubits 0..n-1, register B holds n..2n-1; Bell pair j spans
# (j, n+j). The target acts on A and the complex conjugate of the compiled
# circuit acts on B, so pair j returns to |Phi+> with probability 1 exactly
# when the two unitaries agree (up to global phase) on that qubit's marginal.

def _lhst_sequence(target: CircuitDag, tparams, comp: CircuitDag, cparams):
    """(unitary, derivative|None, qubits, cparam_slot|None) ops for the 2n-qubit run."""
    n = target.n_qubits
    ops = []
    for j in range(n):
        ops.append((_H, None, (j,), None))
        ops.append((_CNOT, None, (j, n + j), None))
    for op in target.gates:
        gm = gate_matrix(op, _resolve_angle(op, tparams))
        ops.append((gm.unitary, None, op.qubits, None))
    for op in comp.gates:
        gm = gate_matrix(op, _resolve_angle(op, cparams))
        qubits = tuple(n + q for q in op.qubits)
        du = np.conj(gm.derivative) if gm.derivative is not None else None
        slot = op.param_slot if op.kind.param_count else None
        ops.append((np.conj(gm.unitary), du, qubits, slot))
    return ops


def _check_lhst_inputs(target: CircuitDag, comp: CircuitDag) -> None:
    if target.n_qubits != comp.n_qubits:
        raise SimulationError(
            f"qubit-count mismatch: target {target.n_qubits}, compiled {comp.n_qubits}"
        )
    if 2 * target.n_qubits > MAX_SIM_QUBITS:
        raise SimulationError(f"LHST supports at most {MAX_SIM_QUBITS // 2} qubits")


def _pair_fidelities(state: np.ndarray, n: int) -> np.ndarray:
    psi = state.reshape([2] * (2 * n))
    fids = np.empty(n)
    for j in range(n):
        idx00 = [slice(None)] * (2 * n)
        idx11 = [slice(None)] * (2 * n)
        idx00[j] = idx00[n + j] = 0
        idx11[j] = idx11[n + j] = 1
        v = (psi[tuple(idx00)] + psi[tuple(idx11)]) * _SQ2
        fids[j] = float(np.sum(np.abs(v) ** 2))
    return fids


def _apply_mean_pair_projector(state: np.ndarray, n: int) -> np.ndarray:
    """(1/n) sum_j |Phi+><Phi+| on pair j, identity elsewhere, applied to state."""
    out = np.zeros_like(state)
    psi = state.reshape([2] * (2 * n))
    for j in range(n):
        idx00 = [slice(None)] * (2 * n)
        idx11 = [slice(None)] * (2 * n)
        idx00[j] = idx00[n + j] = 0
        idx11[j] = idx11[n + j] = 1
        v = (psi[tuple(idx00)] + psi[tuple(idx11)]) * 0.5
        proj = np.zeros_like(psi)
        proj[tuple(idx00)] = v
        proj[tuple(idx11)] = v
        out += proj.reshape(-1)
    return out / n


def lhst_cost(target: CircuitDag, tparams, comp: CircuitDag, cparams) -> float:
    """1 - mean Bell-pair return fidelity; 0 iff the unitaries match up to global phase."""
    _check_lhst_inputs(target, comp)
    n = target.n_qubits
    state = zero_state(2 * n)
    for u, _, qubits, _ in _lhst_sequence(target, tparams, comp, cparams):
        state = apply_gate(state, u, qubits, 2 * n)
    return 1.0 - float(np.mean(_pair_fidelities(state, n)))


def lhst_cost_and_grad(target: CircuitDag, tparams, comp: CircuitDag,
                       cparams) -> tuple[float, np.ndarray]:
    """Cost plus analytic d(cost)/d(cparams) via one adjoint pass."""
    _check_lhst_inputs(target, comp)
    n = target.n_qubits
    grads = np.zeros(len(cparams))
    ops = _lhst_sequence(target, tparams, comp, cparams)
    state = zero_state(2 * n)
    for u, _, qubits, _ in ops:
        state = apply_gate(state, u, qubits, 2 * n)
    cost = 1.0 - float(np.mean(_pair_fidelities(state, n)))
    if not grads.size:
        return cost, grads
    lam = _apply_mean_pair_projector(state, n)
    phi = state
    for u, du, qubits, slot in reversed(ops):
        u_dag = np.conj(u.T)
        phi = apply_gate(phi, u_dag, qubits, 2 * n)
        if slot is not None:
            dphi = apply_gate(phi, du, qubits, 2 * n)
            grads[slot] += -2.0 * float(np.real(np.vdot(lam, dphi)))
        lam = apply_gate(lam, u_dag, qubits, 2 * n)
    return cost, grads


def lhst_grad(target: CircuitDag, tparams, comp: CircuitDag, cparams) -> np.ndarray:
    """Analytic d(cost)/d(cparams) via one adjoint pass through the 2n-qubit state."""
    return lhst_cost_and_grad(target, tparams, comp, cparams)[1]
