"""Dataset construction: random targets, oracle structure search, loss
labeling, and split management.

Determinism contract: every record is a pure function of (base_seed, record
index, config). Each record owns an independent PCG64 stream spawned from
SeedSequence((base_seed, index)), so labeling may run on any number of
workers and the merged output (always in index order) is bit-identical.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .circuits import (
    GATE_KINDS,
    NATIVE_GATES,
    TARGET_GATES,
    CircuitDag,
    CircuitError,
    Connectivity,
    DagBuilder,
    build_vocabulary,
    canonical_key,
    from_record,
    to_record,
)
from .finetune import FineTuneConfig, fine_tune

GEN_LENGTHS = (4, 5, 6)


class DatasetError(ValueError):
    """Corrupt, truncated, or inconsistent dataset files."""


@dataclass(frozen=True)
class LabeledPair:
    """A target circuit, a native compiled circuit, and its fine-tuned loss."""

    target: CircuitDag
    compiled: CircuitDag  # param_values hold the fine-tuned angles
    loss: float
    seed: int  # fine-tune seed that reproduces the loss

    def to_record(self) -> dict:
        return {
            "target": to_record(self.target),
            "compiled": to_record(self.compiled),
            "loss": self.loss,
            "seed": self.seed,
        }

    @staticmethod
    def from_record(rec: dict) -> "LabeledPair":
        try:
            return LabeledPair(
                target=from_record(rec["target"]),
                compiled=from_record(rec["compiled"]),
                loss=float(rec["loss"]),
                seed=int(rec["seed"]),
            )
        except (KeyError, TypeError) as e:
            raise DatasetError(f"malformed dataset record: {e}") from None


@dataclass(frozen=True)
class OracleConfig:
    """Random structure search standing in for an architecture-search labeler."""

    n_trials: int = 50  # structures tried per candidate length
    loss_stop: float = 0.05
    cap_factor: int = 5  # longest structure tried = cap_factor * target length
    ft: FineTuneConfig = FineTuneConfig()


@lru_cache(maxsize=None)
def _gate_entries(gate_set, n_qubits: int, conn: Connectivity | None):
    vocab = build_vocabulary(gate_set, n_qubits, conn, kind="decoder")
    return tuple((kind, qs) for i, kind, qs in vocab.gate_entries() if vocab.mask[i])


def gen_random_target(rng: np.random.Generator, length: int,
                      n_qubits: int = 3) -> CircuitDag:
    """Uniform draws over the target operation entries; angles frozen from [0, 2pi)."""
    entries = _gate_entries(TARGET_GATES, n_qubits, None)
    b = DagBuilder(n_qubits)
    params: list[float] = []
    for _ in range(length):
        kind, qs = entries[int(rng.integers(len(entries)))]
        b.add_gate(kind, qs)
        params.extend(rng.uniform(0.0, 2.0 * np.pi, kind.param_count))
    return b.finalize(params)


def gen_random_native(rng: np.random.Generator, length: int, n_qubits: int,
                      conn: Connectivity | None = None) -> CircuitDag:
    """Uniform native structure respecting the connectivity; angles left at zero."""
    entries = _gate_entries(NATIVE_GATES, n_qubits, conn)
    b = DagBuilder(n_qubits)
    for _ in range(length):
        kind, qs = entries[int(rng.integers(len(entries)))]
        b.add_gate(kind, qs)
    return b.finalize()


def oracle_compile(target: CircuitDag, config: OracleConfig,
                   rng: np.random.Generator,
                   conn: Connectivity | None = None) -> tuple[CircuitDag, float, int]:
    """Best (compiled, loss, fine-tune seed) found by random structure search.

    Lengths run from the target's own length up to cap_factor times it; at
    each length n_trials random structures are fine-tuned. The search stops
    as soon as a structure beats loss_stop. The best result is returned even
    when nothing reached loss_stop; discarding such targets is the caller's
    policy, not this function's.
    """
    L = len(target.gates)
    best: tuple[CircuitDag, float, int] | None = None
    for length in range(L, config.cap_factor * L + 1):
        for _ in range(config.n_trials):
            structure = gen_random_native(rng, length, target.n_qubits, conn)
            ft_seed = int(rng.integers(2 ** 63))
            theta, loss, _ = fine_tune(structure, target, replace(config.ft, seed=ft_seed))
            if best is None or loss < best[1]:
                tuned = structure if theta.size == 0 else replace_params(structure, theta)
                best = (tuned, loss, ft_seed)
            if best[1] < config.loss_stop:
                return best
    return best


def replace_params(dag: CircuitDag, params: np.ndarray) -> CircuitDag:
    if len(params) != len(dag.param_values):
        raise CircuitError("parameter count mismatch")
    return CircuitDag(dag.n_qubits, dag.nodes, dag.edges, tuple(float(p) for p in params))


# --- generator dataset ---------------------------------------------------------

_SPLIT_STREAM = 2 ** 63  # reserved stream index, above any record index


def _record_rng(base_seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((base_seed, index))))


def _gen_task(args) -> dict:
    base_seed, index, length, oracle, conn_name, n_qubits = args
    config = OracleConfig(**oracle["knobs"], ft=FineTuneConfig(**oracle["ft"]))
    conn = Connectivity.by_name(conn_name, n_qubits)
    rng = _record_rng(base_seed, index)
    while True:  # discard-and-replace stays inside this record's stream
        target = gen_random_target(rng, length, n_qubits)
        compiled, loss, seed = oracle_compile(target, config, rng, conn)
        if loss < config.loss_stop:
            return LabeledPair(target, compiled, loss, seed).to_record()


def _run_indexed(fn, arglist, n_workers: int) -> list:
    """Map fn over arglist, any worker count, results in argument order."""
    if n_workers <= 1:
        return [fn(a) for a in arglist]
    with ProcessPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, arglist))


def _oracle_meta(config: OracleConfig) -> dict:
    return {
        "knobs": {
            "n_trials": config.n_trials,
            "loss_stop": config.loss_stop,
            "cap_factor": config.cap_factor,
        },
        "ft": {
            "max_steps": config.ft.max_steps,
            "lr": config.ft.lr,
            "restarts": config.ft.restarts,
            "tol": config.ft.tol,
            "seed": config.ft.seed,
        },
    }


def build_generator_dataset(n_per_length: int, base_seed: int,
                            config: OracleConfig | None = None,
                            connectivity: str = "full", n_qubits: int = 3,
                            n_workers: int = 1) -> list[LabeledPair]:
    """n_per_length oracle-labeled tasks for each length in 4, 5, 6."""
    config = config or OracleConfig()
    oracle = _oracle_meta(config)
    args = [
        (base_seed, i, GEN_LENGTHS[i // n_per_length], oracle, connectivity, n_qubits)
        for i in range(n_per_length * len(GEN_LENGTHS))
    ]
    records = _run_indexed(_gen_task, args, n_workers)
    return [LabeledPair.from_record(r) for r in records]


# --- predictor dataset -----------------------------------------------------------

def _pred_sample(args) -> dict:
    base_seed, index, ft_knobs, conn_name, n_qubits = args
    conn = Connectivity.by_name(conn_name, n_qubits)
    rng = _record_rng(base_seed, index)
    length = int(rng.choice(GEN_LENGTHS))
    target = gen_random_target(rng, length, n_qubits)
    comp_len = int(rng.integers(2 * length, 5 * length + 1))
    structure = gen_random_native(rng, comp_len, n_qubits, conn)
    ft_seed = int(rng.integers(2 ** 63))
    theta, loss, _ = fine_tune(structure, target, FineTuneConfig(**ft_knobs, seed=ft_seed))
    tuned = structure if theta.size == 0 else replace_params(structure, theta)
    return LabeledPair(target, tuned, loss, ft_seed).to_record()


# native kinds with an exact counterpart in the target vocabulary
_RELABEL = {"RX180": "RX", "RX90": "RX", "RXM90": "RX", "RZ": "RZ", "CZ": "CZ"}
_REPR_STREAM = 2 ** 62  # offset keeps these streams off the random-sample ones


def gen_representable_target(rng: np.random.Generator, length: int,
                             n_qubits: int = 3, conn: Connectivity | None = None,
                             extra: int = 0) -> tuple[CircuitDag, CircuitDag]:
    """(target, structure) where the structure expresses the target exactly.

    The target is drawn from the native kinds that also exist in the target
    vocabulary (fixed X rotations become RX at the baked angle, RZ keeps a
    fresh random angle, CZ maps to itself); the structure is the same gate
    sequence plus `extra` tunable tail gates an optimizer can park at zero.
    Random native structures almost never express a random target because
    their parameter-free gates cannot cancel, so representable pairs are the
    only systematic source of near-zero loss labels.
    """
    entries = [(k, qs) for k, qs in _gate_entries(NATIVE_GATES, n_qubits, conn)
               if k.name in _RELABEL]
    tb = DagBuilder(n_qubits)
    sb = DagBuilder(n_qubits)
    tparams: list[float] = []
    for _ in range(length):
        kind, qs = entries[int(rng.integers(len(entries)))]
        sb.add_gate(kind, qs)
        tb.add_gate(GATE_KINDS[_RELABEL[kind.name]], qs)
        if kind.fixed_angle is not None:
            tparams.append(kind.fixed_angle)
        elif kind.param_count:
            tparams.extend(rng.uniform(0.0, 2.0 * np.pi, kind.param_count))
    tunable = [(k, qs) for k, qs in _gate_entries(NATIVE_GATES, n_qubits, conn)
               if k.param_count]
    for _ in range(extra):
        kind, qs = tunable[int(rng.integers(len(tunable)))]
        sb.add_gate(kind, qs)
    return tb.finalize(tparams), sb.finalize()


def _repr_task(args) -> dict:
    base_seed, index, ft_knobs, conn_name, n_qubits, extra_max = args
    conn = Connectivity.by_name(conn_name, n_qubits)
    rng = _record_rng(base_seed, _REPR_STREAM + index)
    length = int(rng.choice(GEN_LENGTHS))
    extra = int(rng.integers(0, extra_max + 1))
    target, structure = gen_representable_target(rng, length, n_qubits, conn, extra)
    ft_seed = int(rng.integers(2 ** 63))
    theta, loss, _ = fine_tune(structure, target, FineTuneConfig(**ft_knobs, seed=ft_seed))
    tuned = structure if theta.size == 0 else replace_params(structure, theta)
    return LabeledPair(target, tuned, loss, ft_seed).to_record()


def build_representable_tasks(n: int, base_seed: int,
                              ft: FineTuneConfig | None = None,
                              extra_max: int = 4, connectivity: str = "full",
                              n_qubits: int = 3,
                              n_workers: int = 1) -> list[LabeledPair]:
    """Exactly-representable pairs with fine-tuned labels, for gen_tasks."""
    ft = ft or FineTuneConfig()
    ft_knobs = {"max_steps": ft.max_steps, "lr": ft.lr,
                "restarts": ft.restarts, "tol": ft.tol}
    args = [(base_seed, i, ft_knobs, connectivity, n_qubits, extra_max)
            for i in range(n)]
    records = _run_indexed(_repr_task, args, n_workers)
    return [LabeledPair.from_record(r) for r in records]


def split_by_target(pairs: list[LabeledPair], test_fraction: float,
                    rng: np.random.Generator) -> tuple[list[LabeledPair], list[LabeledPair]]:
    """Shuffled split that never puts one target's structure in both sides."""
    groups: dict[str, list[LabeledPair]] = {}
    for p in pairs:
        groups.setdefault(canonical_key(p.target), []).append(p)
    keys = sorted(groups)
    order = rng.permutation(len(keys))
    want_test = int(round(test_fraction * len(pairs)))
    test: list[LabeledPair] = []
    train: list[LabeledPair] = []
    for i in order:
        bucket = groups[keys[i]]
        (test if len(test) < want_test else train).extend(bucket)
    return train, test


def build_predictor_dataset(n_random: int, base_seed: int,
                            gen_tasks: list[LabeledPair] | None = None,
                            ft: FineTuneConfig | None = None,
                            test_fraction: float = 0.25,
                            connectivity: str = "full", n_qubits: int = 3,
                            n_workers: int = 1):
    """(train, test) of loss-labeled pairs; random structures plus gen_tasks."""
    ft = ft or FineTuneConfig()
    ft_knobs = {"max_steps": ft.max_steps, "lr": ft.lr,
                "restarts": ft.restarts, "tol": ft.tol}
    args = [(base_seed, i, ft_knobs, connectivity, n_qubits) for i in range(n_random)]
    records = _run_indexed(_pred_sample, args, n_workers)
    pairs = [LabeledPair.from_record(r) for r in records]
    pairs.extend(gen_tasks or [])
    split_rng = _record_rng(base_seed, _SPLIT_STREAM)
    return split_by_target(pairs, test_fraction, split_rng)


# --- persistence -----------------------------------------------------------------

def _content_hash(lines: list[str]) -> str:
    h = hashlib.sha256()
    for line in lines:
        h.update(line.encode())
        h.update(b"\n")
    return h.hexdigest()


def manifest_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".manifest.json")


def save_dataset(path, pairs: list[LabeledPair], split: str,
                 base_seed: int, extra: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(p.to_record(), separators=(",", ":")) for p in pairs]
    path.write_text("".join(line + "\n" for line in lines))
    native_fp = build_vocabulary(NATIVE_GATES, pairs[0].target.n_qubits if pairs else 3,
                                 kind="decoder").fingerprint()
    target_fp = build_vocabulary(TARGET_GATES, pairs[0].target.n_qubits if pairs else 3,
                                 kind="decoder").fingerprint()
    manifest = {
        "split": split,
        "count": len(pairs),
        "seed": base_seed,
        "target_gates": target_fp,
        "native_gates": native_fp,
        "content_hash": _content_hash(lines),
    }
    if extra:
        manifest.update(extra)
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset(path) -> tuple[list[LabeledPair], dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    mpath = manifest_path(path)
    if not mpath.exists():
        raise DatasetError(f"missing manifest for {path}")
    manifest = json.loads(mpath.read_text())
    lines = path.read_text().splitlines()
    if len(lines) != manifest["count"]:
        raise DatasetError(
            f"{path}: manifest says {manifest['count']} records, file has {len(lines)}"
        )
    if _content_hash(lines) != manifest["content_hash"]:
        raise DatasetError(f"{path}: content hash mismatch")
    pairs = []
    for i, line in enumerate(lines):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise DatasetError(f"{path}:{i + 1}: malformed record: {e}") from None
        pairs.append(LabeledPair.from_record(rec))
    return pairs, manifest
