"""HTTP service exposing the serving-phase operations of the package.

Checkpoints are loaded once into process state; compile, predict, generate,
inspect, and lhst endpoints then run against the loaded models. Dataset
construction and training stay in the CLI: they are long-running batch jobs
with file outputs, not request/response work.
"""

from __future__ import annotations

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .circuits import (
    CircuitDag,
    CircuitError,
    canonical_key,
    circuit_metrics,
    format_circuit,
    from_record,
    to_record,
)
from .datasets import DatasetError
from .driver import compile_target
from .finetune import FineTuneConfig
from .generator import (
    CheckpointMismatch,
    SamplingStrategy,
    decode_sample,
    encode_values,
    load_generator,
)
from .predictor import clamp01, load_predictor, predict_loss
from .simulator import SimulationError, lhst_cost


class GateModel(BaseModel):
    g: str
    q: list[int]
    p: int | None = None


class CircuitModel(BaseModel):
    n: int
    gates: list[GateModel]
    params: list[float] = Field(default_factory=list)

    @staticmethod
    def from_dag(dag: CircuitDag) -> "CircuitModel":
        return CircuitModel(**to_record(dag))

    def to_dag(self) -> CircuitDag:
        return from_record(self.model_dump(exclude_none=True))


class HealthResponse(BaseModel):
    status: str
    generator_loaded: bool
    predictor_loaded: bool


class LoadRequest(BaseModel):
    generator_path: str | None = None
    predictor_path: str | None = None


class LoadResponse(BaseModel):
    generator_loaded: bool
    predictor_loaded: bool
    generator_config: dict | None = None
    predictor_config: dict | None = None


class InspectRequest(BaseModel):
    circuit: CircuitModel


class InspectResponse(BaseModel):
    length: int
    depth: int
    canonical_key: str
    text: str
    circuit: CircuitModel


class FineTuneModel(BaseModel):
    max_steps: int = 200
    lr: float = 0.05
    restarts: int = 3
    tol: float = 1e-7

    def to_config(self, seed: int = 0) -> FineTuneConfig:
        return FineTuneConfig(max_steps=self.max_steps, lr=self.lr,
                              restarts=self.restarts, tol=self.tol, seed=seed)


class CompileRequest(BaseModel):
    target: CircuitModel
    target_id: str = "target"
    n_candidates: int = 100
    strategy: str = "stochastic"
    seed: int = 0
    use_predictor: bool = True
    fine_tune: FineTuneModel = Field(default_factory=FineTuneModel)


class CandidateModel(BaseModel):
    index: int
    key: str
    status: str
    length: int
    depth: int
    predicted: float | None
    loss: float | None
    ft_steps: int
    ft_seed: int | None
    selected: bool
    circuit: CircuitModel


class CompileResponse(BaseModel):
    target_id: str
    strategy: str
    connectivity: str
    n_candidates: int
    seed: int
    best_index: int
    best_loss: float
    candidates: list[CandidateModel]
    timings: dict[str, float]


class PredictRequest(BaseModel):
    target: CircuitModel
    comp: CircuitModel


class PredictResponse(BaseModel):
    predicted_raw: float
    predicted: float  # clamped to [0, 1] for reporting


class GenerateRequest(BaseModel):
    n: int = 1
    strategy: str = "stochastic"
    seed: int = 0
    target: CircuitModel | None = None  # condition on a target; prior if absent


class GenerateResponse(BaseModel):
    circuits: list[CircuitModel]
    keys: list[str]


class LhstRequest(BaseModel):
    target: CircuitModel
    comp: CircuitModel


class LhstResponse(BaseModel):
    cost: float


def _error_response(status: int):
    def handler(request: Request, exc: Exception) -> JSONResponse:
        return JSONResponse(status_code=status,
                            content={"error": f"{type(exc).__name__}: {exc}"})
    return handler


def _require(loaded, name: str):
    if loaded is None:
        raise CheckpointMismatch(f"no {name} loaded; call /models/load first")
    return loaded


def create_app() -> FastAPI:
    app = FastAPI(title="vqcgen", version="0.1.0")
    app.state.generator = None
    app.state.predictor = None

    app.add_exception_handler(FileNotFoundError, _error_response(404))
    app.add_exception_handler(CheckpointMismatch, _error_response(409))
    app.add_exception_handler(CircuitError, _error_response(400))
    app.add_exception_handler(DatasetError, _error_response(400))
    app.add_exception_handler(SimulationError, _error_response(400))
    app.add_exception_handler(ValueError, _error_response(400))

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok",
                              generator_loaded=app.state.generator is not None,
                              predictor_loaded=app.state.predictor is not None)

    @app.post("/models/load", response_model=LoadResponse)
    def load(req: LoadRequest) -> LoadResponse:
        gen_cfg = pred_cfg = None
        if req.generator_path:
            app.state.generator = load_generator(req.generator_path)
        if req.predictor_path:
            app.state.predictor = load_predictor(req.predictor_path)
        if app.state.generator is not None:
            gen_cfg = vars(app.state.generator.config).copy()
        if app.state.predictor is not None:
            pred_cfg = vars(app.state.predictor.config).copy()
        return LoadResponse(generator_loaded=app.state.generator is not None,
                            predictor_loaded=app.state.predictor is not None,
                            generator_config=gen_cfg, predictor_config=pred_cfg)

    @app.post("/circuits/inspect", response_model=InspectResponse)
    def inspect(req: InspectRequest) -> InspectResponse:
        dag = req.circuit.to_dag()
        length, depth = circuit_metrics(dag)
        return InspectResponse(length=length, depth=depth,
                               canonical_key=canonical_key(dag),
                               text=format_circuit(dag),
                               circuit=CircuitModel.from_dag(dag))

    @app.post("/compile", response_model=CompileResponse)
    def compile_(req: CompileRequest) -> CompileResponse:
        model = _require(app.state.generator, "generator")
        pred = app.state.predictor if req.use_predictor else None
        report = compile_target(
            req.target.to_dag(), model, predictor=pred,
            n_candidates=req.n_candidates,
            strategy=SamplingStrategy.parse(req.strategy),
            ft=req.fine_tune.to_config(), seed=req.seed,
            target_id=req.target_id,
        )
        cands = [CandidateModel(index=c.index, key=c.key, status=c.status,
                                length=c.length, depth=c.depth,
                                predicted=c.predicted, loss=c.loss,
                                ft_steps=c.ft_steps, ft_seed=c.ft_seed,
                                selected=c.selected,
                                circuit=CircuitModel.from_dag(c.circuit))
                 for c in report.candidates]
        return CompileResponse(target_id=report.target_id, strategy=report.strategy,
                               connectivity=report.connectivity,
                               n_candidates=report.n_candidates, seed=report.seed,
                               best_index=report.best_index,
                               best_loss=report.best.loss,
                               candidates=cands, timings=report.timings)

    @app.post("/predict", response_model=PredictResponse)
    def predict(req: PredictRequest) -> PredictResponse:
        model = _require(app.state.predictor, "predictor")
        raw = predict_loss(req.target.to_dag(), req.comp.to_dag(), model)
        return PredictResponse(predicted_raw=raw, predicted=clamp01(raw))

    @app.post("/generate", response_model=GenerateResponse)
    def generate(req: GenerateRequest) -> GenerateResponse:
        model = _require(app.state.generator, "generator")
        strategy = SamplingStrategy.parse(req.strategy)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(req.seed)))
        z_dim = model.config.z_dim
        if req.target is not None:
            mu, sigma = encode_values(req.target.to_dag(), model)
        else:
            mu, sigma = np.zeros(z_dim), np.ones(z_dim)
        dags = []
        for _ in range(req.n):
            z = mu + sigma * rng.standard_normal(z_dim)
            dags.append(decode_sample(z, model, strategy, rng))
        return GenerateResponse(circuits=[CircuitModel.from_dag(d) for d in dags],
                                keys=[canonical_key(d) for d in dags])

    @app.post("/lhst", response_model=LhstResponse)
    def lhst(req: LhstRequest) -> LhstResponse:
        target = req.target.to_dag()
        comp = req.comp.to_dag()
        cost = lhst_cost(target, target.param_values, comp, comp.param_values)
        return LhstResponse(cost=cost)

    return app
