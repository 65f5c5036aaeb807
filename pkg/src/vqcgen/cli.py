"""Command-line interface for the compilation pipeline.

Batch stages (dataset construction, training) run in-process and write files
under --out-dir. Serving stages (compile, inspect) can either run locally or,
with --server URL, act as a thin client against a running service instance.

Exit codes: 0 success, 2 usage, 3 missing file, 4 checkpoint mismatch,
5 corrupt dataset, 1 any other error. Failures print one JSON line to stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .circuits import (
    CircuitError,
    canonical_key,
    format_circuit,
    from_record,
    serialize,
    to_record,
)
from .datasets import (
    DatasetError,
    OracleConfig,
    _oracle_meta,
    build_generator_dataset,
    build_predictor_dataset,
    build_representable_tasks,
    load_dataset,
    save_dataset,
)
from .driver import (
    CSV_COLUMNS,
    FILTER_THRESHOLD,
    compile_target,
    eval_from_rows,
    write_reports_csv,
)
from .finetune import FineTuneConfig
from .generator import (
    CheckpointMismatch,
    GeneratorConfig,
    SamplingStrategy,
    TrainGenConfig,
    build_generator,
    load_generator,
    train_generator,
)
from .predictor import (
    PredictorConfig,
    TrainPredConfig,
    build_predictor,
    clamp01,
    load_predictor,
    pearson,
    predict_loss,
    train_predictor,
)
from .simulator import SimulationError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_CHECKPOINT_MISMATCH = 4
EXIT_CORRUPT_DATA = 5


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # machine-readable line on top of usage text
        self.print_usage(sys.stderr)
        print(json.dumps({"error": message, "code": EXIT_USAGE,
                          "kind": "UsageError"}), file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _require_file(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(p)
    return p


def _ft_config(args, seed: int = 0) -> FineTuneConfig:
    return FineTuneConfig(max_steps=args.ft_steps, lr=args.ft_lr,
                          restarts=args.ft_restarts, tol=args.ft_tol, seed=seed)


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_losses_csv(path, losses) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(losses, start=1):
            w.writerow([i, repr(loss)])


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- subcommands ------------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    out = _out_dir(args)
    ft = _ft_config(args)
    gen_pairs = None
    if args.stage in ("generator", "both"):
        config = OracleConfig(n_trials=args.oracle_trials, loss_stop=args.loss_stop,
                              cap_factor=args.cap_factor, ft=ft)
        gen_pairs = build_generator_dataset(
            args.n_per_length, args.seed, config,
            connectivity=args.connectivity, n_workers=args.threads,
        )
        save_dataset(out / "generator.jsonl", gen_pairs, "train", args.seed,
                     extra={"oracle": _oracle_meta(config)})
        print(f"generator dataset: {len(gen_pairs)} pairs -> {out / 'generator.jsonl'}")
    if args.stage in ("predictor", "both"):
        tasks = list(gen_pairs) if args.include_gen_tasks and gen_pairs else []
        if args.n_representable:
            tasks.extend(build_representable_tasks(
                args.n_representable, args.seed, ft=ft,
                connectivity=args.connectivity, n_workers=args.threads,
            ))
        train, test = build_predictor_dataset(
            args.n_random, args.seed, gen_tasks=tasks or None, ft=ft,
            test_fraction=args.test_fraction,
            connectivity=args.connectivity, n_workers=args.threads,
        )
        save_dataset(out / "predictor-train.jsonl", train, "train", args.seed)
        save_dataset(out / "predictor-test.jsonl", test, "test", args.seed)
        print(f"predictor dataset: {len(train)} train / {len(test)} test -> {out}")
    return EXIT_OK


def _cmd_train_gen(args) -> int:
    out = _out_dir(args)
    pairs, _ = load_dataset(_require_file(args.data))
    n_qubits = pairs[0].target.n_qubits
    cfg = GeneratorConfig(n_qubits=n_qubits, h_dim=args.h_dim, z_dim=args.z_dim,
                          max_len=args.max_len, connectivity=args.connectivity)
    model = build_generator(cfg, seed=args.seed)
    ckpt = out / "generator.ckpt"
    train_cfg = TrainGenConfig(
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        kl_weight=args.kl_weight, seed=args.seed,
        checkpoint_every=args.checkpoint_every, checkpoint_path=str(ckpt),
        log_every=args.log_every,
    )
    losses = train_generator(model, [(p.target, p.compiled) for p in pairs],
                             train_cfg, log=print)
    _write_losses_csv(out / "train-gen-losses.csv", losses)
    print(f"checkpoint -> {ckpt} (final loss {losses[-1]:.6g})")
    return EXIT_OK


def _cmd_train_pred(args) -> int:
    out = _out_dir(args)
    train_pairs, _ = load_dataset(_require_file(args.train))
    n_qubits = train_pairs[0].target.n_qubits
    cfg = PredictorConfig(n_qubits=n_qubits, h_dim=args.h_dim,
                          max_len=args.max_len, connectivity=args.connectivity)
    model = build_predictor(cfg, seed=args.seed)
    ckpt = out / "predictor.ckpt"
    train_cfg = TrainPredConfig(epochs=args.epochs, batch_size=args.batch_size,
                                lr=args.lr, seed=args.seed,
                                checkpoint_path=str(ckpt), log_every=args.log_every)
    samples = [(p.target, p.compiled, p.loss) for p in train_pairs]
    losses = train_predictor(model, samples, train_cfg, log=print)
    _write_losses_csv(out / "train-pred-losses.csv", losses)
    print(f"checkpoint -> {ckpt} (final mse {losses[-1]:.6g})")
    if args.test:
        test_pairs, _ = load_dataset(_require_file(args.test))
        rows, preds, trues = [], [], []
        for i, p in enumerate(test_pairs):
            raw = predict_loss(p.target, p.compiled, model)
            preds.append(raw)
            trues.append(p.loss)
            rows.append([i, repr(raw), repr(clamp01(raw)), repr(p.loss),
                         int(clamp01(raw) <= FILTER_THRESHOLD)])
        with open(out / "pred-eval.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["sample", "predicted_raw", "predicted", "true", "retained"])
            w.writerows(rows)
        r = pearson(preds, trues)
        _write_json(out / "pred-eval-summary.json",
                    {"pearson_r": r, "n_test": len(test_pairs)})
        print(f"held-out pearson r = {r:.4f} over {len(test_pairs)} samples")
    return EXIT_OK


def _read_targets(args) -> list[tuple[str, dict]]:
    """(target_id, circuit record) list from --target or --targets."""
    if args.target:
        text = Path(_require_file(args.target)).read_text().strip()
        rec = json.loads(text)
        if "target" in rec:  # labeled-pair record: compile its target
            rec = rec["target"]
        return [(Path(args.target).stem, rec)]
    out = []
    for i, line in enumerate(Path(_require_file(args.targets)).read_text().splitlines()):
        if not line.strip():
            continue
        rec = json.loads(line)
        if "target" in rec:
            rec = rec["target"]
        out.append((f"target-{i}", rec))
    return out


def _per_target_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence((base_seed, index)).generate_state(1)[0])


def _cmd_compile(args) -> int:
    if bool(args.target) == bool(args.targets):
        raise CircuitError("exactly one of --target / --targets is required")
    if args.server:
        return _compile_via_server(args)
    out = _out_dir(args)
    gen_path = _require_file(args.gen_checkpoint)
    model = load_generator(gen_path)
    pred = None
    checkpoints = {"generator": {"path": str(gen_path), "sha256": _sha256(gen_path)}}
    if args.pred_checkpoint:
        pred_path = _require_file(args.pred_checkpoint)
        pred = load_predictor(pred_path)
        checkpoints["predictor"] = {"path": str(pred_path),
                                    "sha256": _sha256(pred_path)}
    strategy = SamplingStrategy.parse(args.strategy)
    targets = _read_targets(args)
    reports = []
    for i, (tid, rec) in enumerate(targets):
        report = compile_target(
            from_record(rec), model, predictor=pred,
            n_candidates=args.n_candidates, strategy=strategy,
            ft=_ft_config(args), seed=_per_target_seed(args.seed, i),
            n_workers=args.threads, target_id=tid,
        )
        reports.append(report)
        print(f"{tid}: best loss {report.best.loss:.6g} "
              f"(L={report.best.length}, D={report.best.depth})")

    write_reports_csv(out / "report.csv", reports)
    with open(out / "best.jsonl", "w") as f:
        for r in reports:
            f.write(json.dumps({"target_id": r.target_id,
                                "target": to_record(r.target),
                                "compiled": to_record(r.best.circuit),
                                "loss": r.best.loss},
                               separators=(",", ":")) + "\n")
    summary = {
        "command": "compile",
        "strategy": strategy.describe(),
        "connectivity": model.config.connectivity,
        "n_candidates": args.n_candidates,
        "seed": args.seed,
        "fine_tune": {"max_steps": args.ft_steps, "lr": args.ft_lr,
                      "restarts": args.ft_restarts, "tol": args.ft_tol},
        "filter_threshold": FILTER_THRESHOLD if pred is not None else None,
        "checkpoints": checkpoints,
        "targets": [{"target_id": r.target_id, "seed": r.seed,
                     "best_key": r.best.key, "best_loss": r.best.loss,
                     "best_length": r.best.length, "best_depth": r.best.depth,
                     "ft_seed": r.best.ft_seed, "ft_steps": r.best.ft_steps}
                    for r in reports],
        "mean_best_loss": float(np.mean([r.best.loss for r in reports])),
    }
    _write_json(out / "summary.json", summary)
    timing = {r.target_id: r.timings for r in reports}
    timing["total"] = sum(t["t_total"] for t in timing.values())
    _write_json(out / "timing.json", timing)
    print(f"report -> {out / 'report.csv'}")
    return EXIT_OK


def _compile_via_server(args) -> int:
    import httpx

    out = _out_dir(args)
    with httpx.Client(base_url=args.server, timeout=None) as client:
        loaded = client.post("/models/load", json={
            "generator_path": args.gen_checkpoint,
            "predictor_path": args.pred_checkpoint,
        })
        _raise_for_response(loaded)
        rows = [list(CSV_COLUMNS)]
        best_lines = []
        summaries = []
        timing = {}
        for i, (tid, rec) in enumerate(_read_targets(args)):
            resp = client.post("/compile", json={
                "target": rec, "target_id": tid,
                "n_candidates": args.n_candidates, "strategy": args.strategy,
                "seed": _per_target_seed(args.seed, i),
                "use_predictor": bool(args.pred_checkpoint),
                "fine_tune": {"max_steps": args.ft_steps, "lr": args.ft_lr,
                              "restarts": args.ft_restarts, "tol": args.ft_tol},
            })
            _raise_for_response(resp)
            body = resp.json()
            for c in body["candidates"]:
                rows.append([_csv_cell(v) for v in (
                    tid, c["index"], c["key"], c["status"], c["length"],
                    c["depth"], c["predicted"], c["loss"], c["ft_steps"],
                    c["ft_seed"], c["selected"])])
            best = body["candidates"][body["best_index"]]
            best_lines.append(json.dumps(
                {"target_id": tid, "target": rec, "compiled": best["circuit"],
                 "loss": best["loss"]}, separators=(",", ":")))
            summaries.append({"target_id": tid, "seed": body["seed"],
                              "best_key": best["key"], "best_loss": best["loss"],
                              "best_length": best["length"],
                              "best_depth": best["depth"],
                              "ft_seed": best["ft_seed"],
                              "ft_steps": best["ft_steps"]})
            timing[tid] = body["timings"]
            print(f"{tid}: best loss {best['loss']:.6g} (via {args.server})")
    with open(out / "report.csv", "w", newline="") as f:
        csv.writer(f).writerows(rows)
    (out / "best.jsonl").write_text("".join(line + "\n" for line in best_lines))
    _write_json(out / "summary.json", {
        "command": "compile", "server": args.server, "strategy": args.strategy,
        "n_candidates": args.n_candidates, "seed": args.seed,
        "fine_tune": {"max_steps": args.ft_steps, "lr": args.ft_lr,
                      "restarts": args.ft_restarts, "tol": args.ft_tol},
        "filter_threshold": FILTER_THRESHOLD if args.pred_checkpoint else None,
        "targets": summaries,
        "mean_best_loss": float(np.mean([s["best_loss"] for s in summaries])),
    })
    timing["total"] = sum(t["t_total"] for t in timing.values())
    _write_json(out / "timing.json", timing)
    print(f"report -> {out / 'report.csv'}")
    return EXIT_OK


def _csv_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _raise_for_response(resp) -> None:
    if resp.status_code >= 400:
        try:
            detail = resp.json().get("error", resp.text)
        except ValueError:
            detail = resp.text
        if resp.status_code == 404:
            raise FileNotFoundError(detail)
        if resp.status_code == 409:
            raise CheckpointMismatch(detail)
        raise RuntimeError(f"server error {resp.status_code}: {detail}")


def _cmd_eval(args) -> int:
    out = _out_dir(args)
    report_path = _require_file(args.report)
    with open(report_path, newline="") as f:
        rows = list(csv.DictReader(f))
    training_keys: set[str] = set()
    if args.train_data:
        pairs, _ = load_dataset(_require_file(args.train_data))
        training_keys = {canonical_key(p.compiled) for p in pairs}
    summary = eval_from_rows(rows, training_keys)
    label = args.label
    if label is None:
        sj = report_path.parent / "summary.json"
        label = "unknown"
        if sj.exists():
            label = json.loads(sj.read_text()).get("strategy", "unknown")
    with open(out / "eval.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["strategy", "mean_loss", "mean_length", "mean_depth",
                    "uniqueness_pct", "novelty_pct", "n_targets", "n_generated"])
        w.writerow([label] + [_csv_cell(v) for v in (
            summary.mean_loss, summary.mean_length, summary.mean_depth,
            summary.uniqueness_pct, summary.novelty_pct,
            summary.n_targets, summary.n_generated)])
    print(f"{label}: loss {summary.mean_loss:.4f}, L {summary.mean_length:.2f}, "
          f"D {summary.mean_depth:.2f}, uniqueness {summary.uniqueness_pct:.2f}%, "
          f"novelty {summary.novelty_pct:.2f}%")
    print(f"eval -> {out / 'eval.csv'}")
    return EXIT_OK


def _cmd_inspect(args) -> int:
    if args.circuit == "-":
        text = sys.stdin.read()
    else:
        text = Path(_require_file(args.circuit)).read_text()
    rec = json.loads(text)
    if "target" in rec:
        rec = rec["target"]
    if args.server:
        import httpx

        with httpx.Client(base_url=args.server, timeout=None) as client:
            resp = client.post("/circuits/inspect", json={"circuit": rec})
            _raise_for_response(resp)
            body = resp.json()
        print(body["text"])
        print(f"canonical key: {body['canonical_key']}")
        print(f"serialized: {json.dumps(body['circuit'], separators=(',', ':'))}")
        return EXIT_OK
    dag = from_record(rec)
    print(format_circuit(dag))
    print(f"canonical key: {canonical_key(dag)}")
    print(f"serialized: {serialize(dag)}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port, log_level="info")
    return EXIT_OK


# --- parser -----------------------------------------------------------------------


def build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--connectivity", choices=("full", "chain"), default="full")
    common.add_argument("--strategy", default="stochastic",
                        help="stochastic or top-k:<k>")
    common.add_argument("--max-len", type=int, default=30)
    common.add_argument("--out-dir", default="out")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--server", default=None,
                        help="base URL of a running service; compile and "
                             "inspect then run remotely")

    ft = argparse.ArgumentParser(add_help=False)
    ft.add_argument("--ft-steps", type=int, default=200)
    ft.add_argument("--ft-lr", type=float, default=0.05)
    ft.add_argument("--ft-restarts", type=int, default=3)
    ft.add_argument("--ft-tol", type=float, default=1e-7)

    p = _Parser(prog="vqcgen", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("gen-data", parents=[common, ft],
                       help="build oracle-labeled datasets")
    d.add_argument("--stage", choices=("generator", "predictor", "both"),
                   default="both")
    d.add_argument("--n-per-length", type=int, default=30)
    d.add_argument("--n-random", type=int, default=200)
    d.add_argument("--n-representable", type=int, default=0,
                   help="extra exactly-representable pairs for the predictor")
    d.add_argument("--include-gen-tasks", action="store_true",
                   help="feed generator pairs into the predictor dataset")
    d.add_argument("--oracle-trials", type=int, default=50)
    d.add_argument("--loss-stop", type=float, default=0.05)
    d.add_argument("--cap-factor", type=int, default=5)
    d.add_argument("--test-fraction", type=float, default=0.25)
    d.set_defaults(func=_cmd_gen_data)

    g = sub.add_parser("train-gen", parents=[common], help="train the generator")
    g.add_argument("--data", required=True)
    g.add_argument("--epochs", type=int, default=400)
    g.add_argument("--batch-size", type=int, default=32)
    g.add_argument("--lr", type=float, default=1e-4)
    g.add_argument("--kl-weight", type=float, default=1e-5)
    g.add_argument("--h-dim", type=int, default=56)
    g.add_argument("--z-dim", type=int, default=56)
    g.add_argument("--checkpoint-every", type=int, default=0)
    g.add_argument("--log-every", type=int, default=1)
    g.set_defaults(func=_cmd_train_gen)

    t = sub.add_parser("train-pred", parents=[common], help="train the loss predictor")
    t.add_argument("--train", required=True)
    t.add_argument("--test", default=None)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--h-dim", type=int, default=56)
    t.add_argument("--log-every", type=int, default=1)
    t.set_defaults(func=_cmd_train_pred)

    c = sub.add_parser("compile", parents=[common, ft],
                       help="compile one target or a batch")
    c.add_argument("--gen-checkpoint", required=True)
    c.add_argument("--pred-checkpoint", default=None)
    c.add_argument("--target", default=None, help="file with one circuit record")
    c.add_argument("--targets", default=None, help="JSONL batch of circuit records")
    c.add_argument("--n-candidates", type=int, default=100)
    c.set_defaults(func=_cmd_compile)

    e = sub.add_parser("eval", parents=[common],
                       help="summarize a compile report")
    e.add_argument("--report", required=True)
    e.add_argument("--train-data", default=None,
                   help="training dataset for novelty keys")
    e.add_argument("--label", default=None, help="strategy label in eval.csv")
    e.set_defaults(func=_cmd_eval)

    i = sub.add_parser("inspect", parents=[common],
                       help="print a circuit, its metrics, and serialized form")
    i.add_argument("--circuit", required=True, help="file or - for stdin")
    i.set_defaults(func=_cmd_inspect)

    s = sub.add_parser("serve", parents=[common], help="run the HTTP service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.set_defaults(func=_cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as e:
        return _fail(EXIT_MISSING_FILE, f"missing file: {e}", e)
    except CheckpointMismatch as e:
        return _fail(EXIT_CHECKPOINT_MISMATCH, str(e), e)
    except DatasetError as e:
        return _fail(EXIT_CORRUPT_DATA, str(e), e)
    except (CircuitError, SimulationError, ValueError, RuntimeError) as e:
        return _fail(EXIT_ERROR, str(e), e)


def _fail(code: int, message: str, exc: Exception) -> int:
    print(json.dumps({"error": message, "code": code,
                      "kind": type(exc).__name__}), file=sys.stderr)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
