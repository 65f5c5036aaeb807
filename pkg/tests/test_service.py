"""HTTP service tests: model loading, serving endpoints, error mapping."""

import numpy as np
import pytest
from fastapi.testclient import TestClient

from vqcgen.circuits import (
    build_dag,
    canonical_key,
    circuit_metrics,
    from_record,
    to_record,
)
from vqcgen.datasets import gen_random_target
from vqcgen.generator import GeneratorConfig, build_generator, save_generator
from vqcgen.predictor import PredictorConfig, build_predictor, save_predictor
from vqcgen.service import create_app

MAX_LEN = 12


def target_record(seed=3, length=4):
    rng = np.random.default_rng(seed)
    return to_record(gen_random_target(rng, length))


@pytest.fixture(scope="module")
def checkpoints(tmp_path_factory):
    d = tmp_path_factory.mktemp("ckpts")
    gen = build_generator(GeneratorConfig(h_dim=10, z_dim=8, max_len=MAX_LEN), seed=0)
    save_generator(d / "gen.ckpt", gen)
    pred = build_predictor(PredictorConfig(h_dim=8, max_len=MAX_LEN), seed=0)
    save_predictor(d / "pred.ckpt", pred)
    return d


@pytest.fixture(scope="module")
def client(checkpoints):
    c = TestClient(create_app())
    r = c.post("/models/load", json={
        "generator_path": str(checkpoints / "gen.ckpt"),
        "predictor_path": str(checkpoints / "pred.ckpt"),
    })
    assert r.status_code == 200
    return c


@pytest.fixture()
def bare_client():
    # fresh app with nothing loaded
    return TestClient(create_app())


def test_health_reports_load_state(bare_client):
    body = bare_client.get("/health").json()
    assert body == {"status": "ok", "generator_loaded": False,
                    "predictor_loaded": False}


def test_load_reports_configs(client):
    body = client.get("/health").json()
    assert body["generator_loaded"] and body["predictor_loaded"]


@pytest.mark.parametrize("path,payload", [
    ("/compile", {"target": target_record()}),
    ("/generate", {"n": 1}),
    ("/predict", {"target": target_record(), "comp": target_record()}),
])
def test_model_endpoints_409_before_load(bare_client, path, payload):
    r = bare_client.post(path, json=payload)
    assert r.status_code == 409
    assert "load" in r.json()["error"]


def test_load_missing_file_404(bare_client, tmp_path):
    r = bare_client.post("/models/load",
                         json={"generator_path": str(tmp_path / "nope.ckpt")})
    assert r.status_code == 404


def test_inspect_matches_local_metrics(bare_client):
    rec = target_record(seed=11, length=5)
    r = bare_client.post("/circuits/inspect", json={"circuit": rec})
    assert r.status_code == 200
    body = r.json()
    dag = from_record(rec)
    length, depth = circuit_metrics(dag)
    assert (body["length"], body["depth"]) == (length, depth)
    assert body["canonical_key"] == canonical_key(dag)
    assert body["text"].strip()


def test_inspect_rejects_unknown_gate(bare_client):
    bad = {"n": 3, "gates": [{"g": "FOO", "q": [0]}], "params": []}
    r = bare_client.post("/circuits/inspect", json={"circuit": bad})
    assert r.status_code == 400
    assert "FOO" in r.json()["error"]


def test_validation_error_422(client):
    assert client.post("/predict", json={"target": target_record()}).status_code == 422


def test_generate_prior(client):
    req = {"n": 5, "seed": 7, "strategy": "top-k:5"}
    body = client.post("/generate", json=req).json()
    assert len(body["circuits"]) == len(body["keys"]) == 5
    for rec, key in zip(body["circuits"], body["keys"]):
        dag = from_record(rec)
        assert len(dag.gates) <= MAX_LEN
        assert canonical_key(dag) == key
    # same request, same circuits
    again = client.post("/generate", json=req).json()
    assert again == body


def test_generate_conditioned_on_target(client):
    req = {"n": 3, "seed": 1, "target": target_record(seed=5)}
    body = client.post("/generate", json=req).json()
    assert len(body["circuits"]) == 3


def test_generate_rejects_bad_strategy(client):
    r = client.post("/generate", json={"n": 1, "strategy": "bogus"})
    assert r.status_code == 400


def test_predict_clamps_to_unit_interval(client):
    target = target_record(seed=9)
    comp = to_record(build_dag([("RX90", (0,)), ("RZ", (1,)), ("CZ", (0, 1))],
                               3, [0.3]))
    r = client.post("/predict", json={"target": target, "comp": comp})
    assert r.status_code == 200
    body = r.json()
    assert np.isfinite(body["predicted_raw"])
    assert 0.0 <= body["predicted"] <= 1.0


def test_predict_rejects_non_native_compiled_gates(client):
    # compiled side accepts only the native decoder alphabet
    rec = target_record(seed=9)
    r = client.post("/predict", json={"target": rec, "comp": rec})
    assert r.status_code == 400


def test_lhst_self_cost_is_zero(client):
    rec = target_record(seed=21, length=6)
    body = client.post("/lhst", json={"target": rec, "comp": rec}).json()
    assert abs(body["cost"]) < 1e-12


def test_lhst_qubit_mismatch_400(client):
    two = to_record(gen_random_target(np.random.default_rng(0), 3, n_qubits=2))
    r = client.post("/lhst", json={"target": target_record(), "comp": two})
    assert r.status_code == 400
    assert "mismatch" in r.json()["error"]


def test_compile_endpoint_invariants(client):
    req = {
        "target": target_record(seed=13),
        "target_id": "t13",
        "n_candidates": 6,
        "strategy": "top-k:5",
        "seed": 2,
        "fine_tune": {"max_steps": 10, "restarts": 1},
    }
    r = client.post("/compile", json=req)
    assert r.status_code == 200
    body = r.json()
    assert body["target_id"] == "t13"
    assert body["n_candidates"] == 6
    cands = body["candidates"]
    assert len(cands) == 6
    assert all(c["status"] in ("evaluated", "duplicate", "filtered") for c in cands)
    selected = [c for c in cands if c["selected"]]
    assert len(selected) == 1
    assert selected[0]["index"] == body["best_index"]
    assert selected[0]["loss"] == body["best_loss"]
    losses = [c["loss"] for c in cands if c["loss"] is not None]
    assert min(losses) == body["best_loss"]
    assert body["timings"]["t_total"] > 0


def test_compile_without_predictor_evaluates_all_unique(client):
    req = {
        "target": target_record(seed=17),
        "n_candidates": 4,
        "strategy": "stochastic",
        "seed": 4,
        "use_predictor": False,
        "fine_tune": {"max_steps": 5, "restarts": 1},
    }
    body = client.post("/compile", json=req).json()
    assert all(c["status"] != "filtered" for c in body["candidates"])
