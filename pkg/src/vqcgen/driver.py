"""End-to-end compilation workflow and evaluation metrics.

compile_target runs the test-phase pipeline: encode the target, draw latent
samples, decode each into a native candidate, deduplicate by canonical key,
optionally screen through the loss predictor (fail-open), fine-tune the
survivors, and select the lowest-loss candidate. Every generated candidate
(including duplicates and screened-out ones) is kept in the report so that
uniqueness and novelty are computed over the raw generator output.

Candidate fine-tuning may run on a worker pool; seeds are pre-drawn in
candidate order and results merged by index, so reports are bit-identical
regardless of worker count.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace

import numpy as np

from .circuits import (
    CircuitDag,
    CircuitError,
    Connectivity,
    canonical_key,
    circuit_metrics,
    from_record,
    to_record,
)
from .datasets import _run_indexed, gen_random_native, replace_params
from .finetune import FineTuneConfig, fine_tune
from .generator import GeneratorModel, SamplingStrategy, decode_sample, encode_values
from .predictor import PredictorModel, clamp01, predict_loss

FILTER_THRESHOLD = 0.1


@dataclass(frozen=True)
class CandidateRecord:
    index: int
    circuit: CircuitDag  # tuned parameters when status == "evaluated"
    key: str
    length: int
    depth: int
    status: str  # evaluated | duplicate | filtered
    predicted: float | None
    loss: float | None
    ft_steps: int
    ft_seed: int | None
    selected: bool


@dataclass
class CompileReport:
    target_id: str
    target: CircuitDag
    strategy: str
    connectivity: str
    n_candidates: int
    seed: int
    candidates: list[CandidateRecord]
    best_index: int
    timings: dict[str, float]  # t_s, t_p, t_f, t_total; excluded from CSV rows

    @property
    def best(self) -> CandidateRecord:
        return self.candidates[self.best_index]


@dataclass(frozen=True)
class EvalSummary:
    mean_loss: float
    mean_length: float
    mean_depth: float
    uniqueness_pct: float
    novelty_pct: float
    n_targets: int
    n_generated: int

    def __post_init__(self):
        for pct in (self.uniqueness_pct, self.novelty_pct):
            if not 0.0 <= pct <= 100.0:
                raise ValueError("percentages must lie in [0, 100]")


def _ft_knobs(ft: FineTuneConfig) -> dict:
    return {"max_steps": ft.max_steps, "lr": ft.lr,
            "restarts": ft.restarts, "tol": ft.tol}


def _ft_task(args) -> dict:
    target_rec, comp_rec, knobs, seed = args
    target = from_record(target_rec)
    comp = from_record(comp_rec)
    theta, loss, steps = fine_tune(comp, target, FineTuneConfig(**knobs, seed=seed))
    return {"theta": [float(t) for t in theta], "loss": loss, "steps": steps}


def _check_connectivity(dag: CircuitDag, conn: Connectivity) -> None:
    for op in dag.gates:
        if len(op.qubits) >= 2 and not conn.allows(op.qubits):
            raise CircuitError(
                f"candidate gate {op.kind.name} on {op.qubits} violates "
                f"connectivity {conn.name!r}"
            )


def compile_target(target: CircuitDag, model: GeneratorModel,
                   predictor: PredictorModel | None = None,
                   n_candidates: int = 100,
                   strategy: SamplingStrategy | None = None,
                   ft: FineTuneConfig | None = None,
                   seed: int = 0, n_workers: int = 1,
                   target_id: str = "target") -> CompileReport:
    """Full compile pass for one target; see module docstring for the stages."""
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    if strategy is None:
        strategy = SamplingStrategy.parse("stochastic")
    if ft is None:
        ft = FineTuneConfig()
    t_start = time.perf_counter()
    conn = model.config.conn()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))

    mu, sigma = encode_values(target, model)
    decoded: list[CircuitDag] = []
    for _ in range(n_candidates):
        eps = rng.standard_normal(mu.shape)
        dag = decode_sample(mu + sigma * eps, model, strategy, rng)
        _check_connectivity(dag, conn)
        decoded.append(dag)

    keys = [canonical_key(d) for d in decoded]
    first_of: dict[str, int] = {}
    unique: list[int] = []
    for i, k in enumerate(keys):
        if k not in first_of:
            first_of[k] = i
            unique.append(i)
    t_s = time.perf_counter() - t_start

    t0 = time.perf_counter()
    predicted: dict[int, float] = {}
    if predictor is not None:
        for i in unique:
            predicted[i] = clamp01(predict_loss(target, decoded[i], predictor))
        survivors = [i for i in unique if predicted[i] <= FILTER_THRESHOLD]
        if not survivors:  # fail-open: screening must never empty the pool
            survivors = list(unique)
    else:
        survivors = list(unique)
    t_p = time.perf_counter() - t0

    t0 = time.perf_counter()
    target_rec = to_record(target)
    knobs = _ft_knobs(ft)
    ft_seeds = [int(rng.integers(2 ** 63)) for _ in survivors]
    tasks = [(target_rec, to_record(decoded[i]), knobs, s)
             for i, s in zip(survivors, ft_seeds)]
    results = _run_indexed(_ft_task, tasks, n_workers)
    t_f = time.perf_counter() - t0

    tuned: dict[int, tuple[CircuitDag, float, int, int]] = {}
    for i, ft_seed, res in zip(survivors, ft_seeds, results):
        theta = np.asarray(res["theta"])
        dag = decoded[i] if theta.size == 0 else replace_params(decoded[i], theta)
        tuned[i] = (dag, float(res["loss"]), int(res["steps"]), ft_seed)

    best_index = min(tuned, key=lambda i: (tuned[i][1], i))
    records = []
    for i, dag in enumerate(decoded):
        length, depth = circuit_metrics(dag)
        if i in tuned:
            circuit, loss, steps, ft_seed = tuned[i]
            status = "evaluated"
        else:
            circuit, loss, steps, ft_seed = dag, None, 0, None
            status = "duplicate" if first_of[keys[i]] != i else "filtered"
        records.append(CandidateRecord(
            index=i, circuit=circuit, key=keys[i], length=length, depth=depth,
            status=status, predicted=predicted.get(i), loss=loss,
            ft_steps=steps, ft_seed=ft_seed, selected=i == best_index,
        ))

    timings = {"t_s": t_s, "t_p": t_p, "t_f": t_f,
               "t_total": time.perf_counter() - t_start}
    return CompileReport(
        target_id=target_id, target=target, strategy=strategy.describe(),
        connectivity=conn.name, n_candidates=n_candidates, seed=seed,
        candidates=records, best_index=best_index, timings=timings,
    )


def random_baseline(target: CircuitDag, lengths, ft: FineTuneConfig,
                    seed: int = 0, conn: Connectivity | None = None,
                    n_qubits: int = 3,
                    n_workers: int = 1) -> tuple[CircuitDag, float]:
    """Best fine-tuned result over uniformly random native structures.

    One structure is drawn per entry of lengths, so a generator run can be
    compared against random search at the exact same structure lengths.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    structures = [gen_random_native(rng, length, n_qubits, conn) for length in lengths]
    if not structures:
        raise ValueError("baseline needs at least one structure length")
    target_rec = to_record(target)
    knobs = _ft_knobs(ft)
    tasks = [(target_rec, to_record(s), knobs, int(rng.integers(2 ** 63)))
             for s in structures]
    results = _run_indexed(_ft_task, tasks, n_workers)
    best_i = min(range(len(results)), key=lambda i: (results[i]["loss"], i))
    theta = np.asarray(results[best_i]["theta"])
    dag = structures[best_i]
    if theta.size:
        dag = replace_params(dag, theta)
    return dag, float(results[best_i]["loss"])


def eval_metrics(reports: list[CompileReport], training_keys: set[str]) -> EvalSummary:
    """Batch summary: means over per-target bests, percentages over all candidates.

    Uniqueness is the share of distinct canonical keys among every generated
    candidate (duplicates and screened-out ones included); novelty is the
    share of generated candidates whose key is absent from training_keys.
    """
    if not reports:
        raise ValueError("eval_metrics needs at least one report")
    all_keys = [c.key for r in reports for c in r.candidates]
    bests = [(b.loss, b.length, b.depth) for b in (r.best for r in reports)]
    return _summarize(all_keys, bests, training_keys)


def eval_from_rows(rows: list[dict], training_keys: set[str]) -> EvalSummary:
    """eval_metrics over report.csv rows (dicts keyed by CSV_COLUMNS)."""
    if not rows:
        raise ValueError("no candidate rows to evaluate")
    all_keys = [r["key"] for r in rows]
    bests = [(float(r["loss"]), int(r["length"]), int(r["depth"]))
             for r in rows if r["selected"] in (True, "1", 1)]
    if not bests:
        raise ValueError("no selected rows; not a compile report")
    return _summarize(all_keys, bests, training_keys)


def _summarize(all_keys: list[str], bests: list[tuple],
               training_keys: set[str]) -> EvalSummary:
    return EvalSummary(
        mean_loss=float(np.mean([b[0] for b in bests])),
        mean_length=float(np.mean([b[1] for b in bests])),
        mean_depth=float(np.mean([b[2] for b in bests])),
        uniqueness_pct=100.0 * len(set(all_keys)) / len(all_keys),
        novelty_pct=100.0 * sum(k not in training_keys for k in all_keys) / len(all_keys),
        n_targets=len(bests),
        n_generated=len(all_keys),
    )


# --- report files ---------------------------------------------------------------

CSV_COLUMNS = ("target_id", "candidate", "key", "status", "length", "depth",
               "predicted", "loss", "ft_steps", "ft_seed", "selected")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def report_rows(report: CompileReport) -> list[list[str]]:
    rows = []
    for c in report.candidates:
        rows.append([_cell(v) for v in (
            report.target_id, c.index, c.key, c.status, c.length, c.depth,
            c.predicted, c.loss, c.ft_steps, c.ft_seed, c.selected,
        )])
    return rows


def write_reports_csv(path, reports: list[CompileReport]) -> None:
    """One row per generated candidate; stable column order and float repr."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for r in reports:
            w.writerows(report_rows(r))
