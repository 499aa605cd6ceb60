"""HTTP wrapper around the batch pipeline.

Runs are synchronous: each endpoint executes the corresponding pipeline
function and returns the output paths plus summary data.  Long jobs belong
on the CLI; the service exists for programmatic orchestration on small
configurations.
"""

from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .ensemble import EnsembleSpec
from .hpo import HyperPoint
from .lstm import TrainingDivergence
from .physmodel import model_preset
from .pipeline import (NumericalFailure, RunConfig, run_forecast,
                       run_generate, run_hpo, run_report, run_slice)

app = FastAPI(title="qdforecast", version=__version__)


class ConfigBody(BaseModel):
    config: dict = Field(default_factory=dict)
    out_dir: str


class SliceBody(ConfigBody):
    trajectory: str
    memory_fs: float


class HpoBody(ConfigBody):
    trajectory: str


class ForecastBody(ConfigBody):
    trajectory: str
    campaign: str
    ensemble_label: str | None = None


class GenerateResponse(BaseModel):
    trajectory: str
    n_rows: int


class SliceResponse(BaseModel):
    dataset: str


class HpoResponse(BaseModel):
    campaign: str
    best_loss: float
    n_trials: int


class ForecastResponse(BaseModel):
    forecast: str
    summary: dict


def _config(body: ConfigBody) -> RunConfig:
    try:
        return RunConfig.from_dict(body.config) if body.config else RunConfig()
    except (ValueError, TypeError, KeyError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc


def _run(fn, *args):
    try:
        return fn(*args)
    except (ValueError, FileNotFoundError, KeyError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    except (NumericalFailure, TrainingDivergence, np.linalg.LinAlgError) as exc:
        raise HTTPException(status_code=500, detail=f"numerical failure: {exc}") from exc


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.get("/presets")
def presets():
    out = {}
    for name in ("I", "II", "III", "IV"):
        m = model_preset(name)
        out[name] = {"delta_e_ev": m.delta_e_ev, "v12_ev": m.v12_ev,
                     "reorganization_cm": m.bath.reorganization_energy}
    return out


@app.post("/generate", response_model=GenerateResponse)
def generate(body: ConfigBody):
    cfg = _config(body)
    path = _run(run_generate, cfg, body.out_dir)
    n_rows = sum(1 for _ in open(path)) - 1
    return GenerateResponse(trajectory=str(path), n_rows=n_rows)


@app.post("/slice", response_model=SliceResponse)
def slice_run(body: SliceBody):
    cfg = _config(body)
    path = _run(run_slice, cfg, body.trajectory, body.out_dir, body.memory_fs)
    return SliceResponse(dataset=str(path))


@app.post("/hpo", response_model=HpoResponse)
def hpo(body: HpoBody):
    cfg = _config(body)
    campaign, log_path = _run(run_hpo, cfg, body.trajectory, body.out_dir)
    best = min(t.loss for task in campaign.tasks for t in task)
    return HpoResponse(campaign=str(log_path), best_loss=best,
                       n_trials=campaign.n_trials)


@app.post("/forecast", response_model=ForecastResponse)
def forecast(body: ForecastBody):
    cfg = _config(body)
    if body.ensemble_label:
        EnsembleSpec.parse(body.ensemble_label)  # fail fast with 422 below
        cfg.ensemble_label = body.ensemble_label
    _, summary = _run(run_forecast, cfg, body.trajectory, body.campaign, body.out_dir)
    return ForecastResponse(forecast=str(Path(body.out_dir) / "forecast.csv"),
                            summary=summary)


@app.post("/report")
def report(body: ConfigBody):
    path = _run(run_report, body.out_dir)
    return {"report": str(path)}
