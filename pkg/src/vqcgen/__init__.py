"""Generative compilation of quantum circuits into native gate sequences."""

from .circuits import (
    CircuitDag,
    CircuitError,
    Connectivity,
    DagBuilder,
    GateOp,
    OpVocabulary,
    build_dag,
    build_vocabulary,
    canonical_key,
    circuit_metrics,
    deserialize,
    format_circuit,
    serialize,
)
from .datasets import (
    DatasetError,
    LabeledPair,
    OracleConfig,
    build_generator_dataset,
    build_predictor_dataset,
    build_representable_tasks,
    gen_random_native,
    gen_random_target,
    load_dataset,
    oracle_compile,
    save_dataset,
)
from .driver import (
    CandidateRecord,
    CompileReport,
    EvalSummary,
    compile_target,
    eval_from_rows,
    eval_metrics,
    random_baseline,
    write_reports_csv,
)
from .finetune import FineTuneConfig, FineTuneResult, fine_tune
from .generator import (
    CheckpointMismatch,
    GeneratorConfig,
    SamplingStrategy,
    TrainGenConfig,
    build_generator,
    decode_sample,
    load_generator,
    save_generator,
    train_generator,
)
from .predictor import (
    PredictorConfig,
    TrainPredConfig,
    build_predictor,
    clamp01,
    filter_candidates,
    load_predictor,
    pearson,
    predict_loss,
    save_predictor,
    train_predictor,
)
from .simulator import (
    SimulationError,
    circuit_unitary,
    lhst_cost,
    lhst_cost_and_grad,
    lhst_grad,
)

__all__ = [
    "CandidateRecord",
    "CheckpointMismatch",
    "CircuitDag",
    "CircuitError",
    "CompileReport",
    "Connectivity",
    "DagBuilder",
    "DatasetError",
    "EvalSummary",
    "FineTuneConfig",
    "FineTuneResult",
    "GateOp",
    "GeneratorConfig",
    "LabeledPair",
    "OpVocabulary",
    "OracleConfig",
    "PredictorConfig",
    "SamplingStrategy",
    "SimulationError",
    "TrainGenConfig",
    "TrainPredConfig",
    "build_dag",
    "build_generator",
    "build_generator_dataset",
    "build_predictor",
    "build_predictor_dataset",
    "build_representable_tasks",
    "build_vocabulary",
    "canonical_key",
    "circuit_metrics",
    "circuit_unitary",
    "clamp01",
    "compile_target",
    "decode_sample",
    "deserialize",
    "eval_from_rows",
    "eval_metrics",
    "filter_candidates",
    "fine_tune",
    "format_circuit",
    "gen_random_native",
    "gen_random_target",
    "load_dataset",
    "load_generator",
    "load_predictor",
    "oracle_compile",
    "pearson",
    "predict_loss",
    "random_baseline",
    "save_dataset",
    "save_generator",
    "save_predictor",
    "serialize",
    "train_generator",
    "train_predictor",
    "write_reports_csv",
]

__version__ = "0.1.0"
