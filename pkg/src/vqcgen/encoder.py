"""Bidirectional message-passing encoder for circuit DAGs.

Each node receives a gated sum of its neighbors' hidden states (sigmoid
gate times an ungated linear map, both fed the neighbor's state concatenated
with its one-hot creation position), then updates through a GRU cell whose
input is the node's one-hot vocabulary encoding. The forward pass walks
nodes in creation order (already topological under the wire rule); the
backward pass walks the reversed DAG with its own weights. The graph state
is a width-halving linear readout of the forward End state joined with the
backward Start state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuits import CircuitDag, CircuitError, OpVocabulary, node_onehot
from .nn import GruParams, LinearParams, ParamStore, _sigmoid_values, gru_cell, linear
from .tensor import Tensor, concat, constant, sigmoid


@dataclass(frozen=True)
class EncoderParams:
    fwd_gru: GruParams
    fwd_gate: LinearParams
    fwd_map: LinearParams
    bwd_gru: GruParams
    bwd_gate: LinearParams
    bwd_map: LinearParams
    readout: LinearParams  # 2*h_dim -> h_dim
    vocab_size: int
    h_dim: int
    pos_dim: int

    @staticmethod
    def create(store: ParamStore, prefix: str, rng: np.random.Generator,
               vocab_size: int, h_dim: int, pos_dim: int) -> "EncoderParams":
        mk_gru = lambda tag: GruParams.create(store, f"{prefix}.{tag}", rng, vocab_size, h_dim)
        mk_gate = lambda tag: LinearParams.create(store, f"{prefix}.{tag}", rng, h_dim + pos_dim, h_dim)
        mk_map = lambda tag: LinearParams.create(
            store, f"{prefix}.{tag}", rng, h_dim + pos_dim, h_dim, bias=False
        )
        return EncoderParams(
            fwd_gru=mk_gru("fwd_gru"), fwd_gate=mk_gate("fwd_gate"), fwd_map=mk_map("fwd_map"),
            bwd_gru=mk_gru("bwd_gru"), bwd_gate=mk_gate("bwd_gate"), bwd_map=mk_map("bwd_map"),
            readout=LinearParams.create(store, f"{prefix}.readout", rng, 2 * h_dim, h_dim),
            vocab_size=vocab_size, h_dim=h_dim, pos_dim=pos_dim,
        )


def position_onehot(index: int, pos_dim: int) -> np.ndarray:
    if index >= pos_dim:
        raise CircuitError(f"node position {index} exceeds encoder capacity {pos_dim}")
    v = np.zeros(pos_dim)
    v[index] = 1.0
    return v


def gated_message(h_u: Tensor, pos: np.ndarray, gate: LinearParams,
                  mapping: LinearParams) -> Tensor:
    x = concat([h_u, constant(pos)])
    return sigmoid(linear(x, gate)) * linear(x, mapping)


def aggregate(hiddens: list[Tensor], positions: list[np.ndarray],
              gate: LinearParams, mapping: LinearParams, h_dim: int) -> Tensor:
    """Gated sum of neighbor states; zeros when there are no neighbors.

    One fused graph node over all neighbors; equivalent to summing
    gated_message() per neighbor but with a vectorized forward/backward.
    """
    if not hiddens:
        return constant(np.zeros(h_dim))
    xs = np.stack([np.concatenate([h.values, pos])
                   for h, pos in zip(hiddens, positions)])
    gs = _sigmoid_values(xs @ gate.W.values.T + gate.b.values)
    ms = xs @ mapping.W.values.T
    out = Tensor((gs * ms).sum(axis=0),
                 parents=(*hiddens, gate.W, gate.b, mapping.W))

    def bw(g):
        dm = g[None, :] * gs
        dgpre = g[None, :] * ms * gs * (1.0 - gs)
        if gate.W.requires_grad:
            gate.W._accumulate(dgpre.T @ xs)
        if gate.b.requires_grad:
            gate.b._accumulate(dgpre.sum(axis=0))
        if mapping.W.requires_grad:
            mapping.W._accumulate(dm.T @ xs)
        dx = dgpre @ gate.W.values + dm @ mapping.W.values
        for i, h in enumerate(hiddens):
            if h.requires_grad:
                h._accumulate(dx[i, :h_dim])

    out._backward = bw
    return out


def aggregate_values(hiddens: list[np.ndarray], positions: list[np.ndarray],
                     gate: LinearParams, mapping: LinearParams,
                     h_dim: int) -> np.ndarray:
    """Gradient-free twin of aggregate(); must stay in lockstep with it."""
    total = np.zeros(h_dim)
    for h, pos in zip(hiddens, positions):
        x = np.concatenate([h, pos])
        g = _sigmoid_values(gate.W.values @ x + gate.b.values)
        total = total + g * (mapping.W.values @ x)
    return total


def _direction_pass(dag: CircuitDag, vocab: OpVocabulary, p: EncoderParams,
                    reverse: bool) -> list[Tensor]:
    n = len(dag.nodes)
    order = range(n - 1, -1, -1) if reverse else range(n)
    neighbors = dag.successors if reverse else dag.predecessors
    gru = p.bwd_gru if reverse else p.fwd_gru
    gate = p.bwd_gate if reverse else p.fwd_gate
    mapping = p.bwd_map if reverse else p.fwd_map
    hiddens: list[Tensor | None] = [None] * n
    for v in order:
        nbrs = sorted(neighbors(v))
        h_in = aggregate(
            [hiddens[u] for u in nbrs],
            [position_onehot(u, p.pos_dim) for u in nbrs],
            gate, mapping, p.h_dim,
        )
        x_v = constant(node_onehot(dag.nodes[v], vocab))
        hiddens[v] = gru_cell(x_v, h_in, gru)
    return hiddens


def node_hiddens(dag: CircuitDag, vocab: OpVocabulary,
                 p: EncoderParams) -> tuple[list[Tensor], list[Tensor]]:
    """(forward, backward) hidden states indexed by node creation order."""
    return _direction_pass(dag, vocab, p, False), _direction_pass(dag, vocab, p, True)


def graph_state(dag: CircuitDag, vocab: OpVocabulary, p: EncoderParams) -> Tensor:
    fwd, bwd = node_hiddens(dag, vocab, p)
    return linear(concat([fwd[-1], bwd[0]]), p.readout)
