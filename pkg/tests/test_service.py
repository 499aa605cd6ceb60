import json

import pytest
from fastapi.testclient import TestClient

from qdforecast.service import app


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


@pytest.fixture(scope="module")
def tiny_config():
    return {"t_end_fs": 40.0, "history_fs": 30.0, "n_modes": 2,
            "n_boson_levels": 3, "warmup_steps": 5, "n_tasks": 1, "iters": 1,
            "ensemble_label": "(SA-H1)", "train": {"max_epochs": 2}}


def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200
    assert r.json()["status"] == "ok"


def test_presets(client):
    r = client.get("/presets")
    assert set(r.json()) == {"I", "II", "III", "IV"}
    assert r.json()["IV"]["delta_e_ev"] == 0.0186


def test_generate_then_forecast(client, tiny_config, tmp_path):
    r = client.post("/generate", json={"config": tiny_config,
                                       "out_dir": str(tmp_path / "g")})
    assert r.status_code == 200
    body = r.json()
    assert body["n_rows"] == 81
    traj = body["trajectory"]

    r = client.post("/hpo", json={"config": tiny_config,
                                  "out_dir": str(tmp_path / "h"),
                                  "trajectory": traj})
    assert r.status_code == 200
    assert r.json()["n_trials"] == 1

    r = client.post("/forecast", json={"config": tiny_config,
                                       "out_dir": str(tmp_path / "f"),
                                       "trajectory": traj,
                                       "campaign": r.json()["campaign"]})
    assert r.status_code == 200
    assert "max_abs_err" in r.json()["summary"]


def test_slice(client, tiny_config, tmp_path):
    r = client.post("/generate", json={"config": tiny_config,
                                       "out_dir": str(tmp_path / "g")})
    r = client.post("/slice", json={"config": tiny_config,
                                    "out_dir": str(tmp_path / "s"),
                                    "trajectory": r.json()["trajectory"],
                                    "memory_fs": 5.0})
    assert r.status_code == 200
    blob = json.loads(open(r.json()["dataset"]).read())
    assert blob["window_length"] == 10


def test_bad_config_is_422(client, tmp_path):
    r = client.post("/generate", json={"config": {"bogus": 1},
                                       "out_dir": str(tmp_path)})
    assert r.status_code == 422


def test_missing_trajectory_is_422(client, tiny_config, tmp_path):
    r = client.post("/hpo", json={"config": tiny_config,
                                  "out_dir": str(tmp_path),
                                  "trajectory": str(tmp_path / "nope.csv")})
    assert r.status_code == 422
