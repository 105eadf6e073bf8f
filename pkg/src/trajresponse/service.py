"""HTTP service exposing what-if rollouts over a trained checkpoint.

Endpoints (all JSON, world meters on the wire):

* ``GET /info``               — model card: horizons, rate, type labels.
* ``GET /scenarios``          — bundled demo scenario summaries.
* ``GET /scenarios/{id}``     — one full scenario.
* ``POST /predict``           — rollouts for candidate machine paths over a
  scenario (by id or inline), one result per candidate.

Request models reject unknown fields so client typos fail loudly.
"""

from __future__ import annotations

import logging
import time
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, ConfigDict, Field

from .configs import ModelConfig
from .formats import (
    EXPORT_SCHEMA_VERSION,
    SCENARIO_SCHEMA_VERSION,
    load_model,
    rollout_to_export,
    scenario_to_window,
    window_to_scenario,
)
from .neural.checkpoint import checkpoint_id
from .responsernn import simulate_whatif
from .trajdata import apply_standardizer

logger = logging.getLogger(__name__)

MAX_CANDIDATES = 16
SERVICE_SCHEMA_VERSION = 1


class CandidateIn(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id: str = Field(min_length=1, max_length=64)
    path: list[list[float]]


class PredictRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    schema_version: int = SERVICE_SCHEMA_VERSION
    scenario_id: Optional[str] = None
    scenario: Optional[dict] = None
    candidates: list[CandidateIn] = Field(min_length=1,
                                          max_length=MAX_CANDIDATES)
    sample: bool = False
    seed: int = 0


def _build_demo_scenarios(config: ModelConfig, labels: list[str],
                          n_scenarios: int = 4) -> dict[str, dict]:
    """Windows cut from a fresh patrol simulation, serialized to scenarios."""
    import tempfile

    from .synthgen import make_suite
    from .trajdata import load_dataset

    scenarios: dict[str, dict] = {}
    with tempfile.TemporaryDirectory() as tmp:
        root = make_suite(Path(tmp) / "demo", "approach", n_recordings=2,
                          n_frames=max(160, 2 * (config.n_obs + config.n_pred)),
                          seed=20260814)
        ds = load_dataset(root, n_obs=config.n_obs, n_pred=config.n_pred,
                          stride=config.n_pred)
        windows = ds.train_windows + ds.val_windows + ds.test_windows
        for i, w in enumerate(windows[:n_scenarios]):
            sid = f"demo-{i:02d}"
            # Re-express in the model's standardization before serializing.
            scenarios[sid] = window_to_scenario(
                _restandardize(w, ds.stats, config), config.stats, labels,
                scenario_id=sid, name=f"patrol pass {i + 1}")
    return scenarios


def _restandardize(window, from_stats, config: ModelConfig):
    """Move a window from one standardization to the model's own."""
    from .trajdata import invert_standardizer
    import dataclasses

    to_stats = config.stats
    pos = window.positions.copy()
    ok = np.isfinite(pos[..., 0])
    pos[ok] = apply_standardizer(invert_standardizer(pos[ok], from_stats),
                                 to_stats)
    robot = apply_standardizer(
        invert_standardizer(window.robot_xy.reshape(-1, 2), from_stats),
        to_stats).reshape(window.robot_xy.shape)
    return dataclasses.replace(window, positions=pos, robot_xy=robot)


def create_app(ckpt_path: Path,
               deterministic: bool = False,
               demo_scenarios: bool = True) -> FastAPI:
    """Build the service around one response-model checkpoint."""
    ckpt_path = Path(ckpt_path)
    params, config, manifest = load_model(ckpt_path)
    if not isinstance(config, ModelConfig):
        raise ValueError("service requires a response-model checkpoint")
    labels = list(config.type_labels)
    ckpt_id = checkpoint_id(ckpt_path)
    scenarios = _build_demo_scenarios(config, labels) if demo_scenarios else {}

    app = FastAPI(title="trajresponse", version="1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
        allow_headers=["*"])

    @app.get("/info")
    def info() -> dict:
        return {
            "schema_version": SERVICE_SCHEMA_VERSION,
            "model": manifest.get("model"),
            "checkpoint_id": ckpt_id,
            "n_obs": config.n_obs,
            "n_pred": config.n_pred,
            "dt": config.dt,
            "type_labels": labels,
            "loss_mode": config.loss.mode,
            "max_candidates": MAX_CANDIDATES,
            "deterministic": deterministic,
        }

    @app.get("/scenarios")
    def list_scenarios() -> list[dict]:
        return [{"scenario_id": sid,
                 "name": s["name"],
                 "n_agents": len(s["agents"])}
                for sid, s in sorted(scenarios.items())]

    @app.get("/scenarios/{scenario_id}")
    def get_scenario(scenario_id: str) -> dict:
        if scenario_id not in scenarios:
            raise HTTPException(status_code=404,
                                detail=f"unknown scenario {scenario_id!r}")
        return scenarios[scenario_id]

    @app.post("/predict")
    def predict(req: PredictRequest) -> dict:
        if req.schema_version != SERVICE_SCHEMA_VERSION:
            raise HTTPException(
                status_code=422,
                detail=f"schema_version: unsupported version "
                       f"{req.schema_version} (this service speaks "
                       f"{SERVICE_SCHEMA_VERSION})")
        if (req.scenario is None) == (req.scenario_id is None):
            raise HTTPException(
                status_code=422,
                detail="provide exactly one of scenario_id or scenario")
        if req.scenario_id is not None:
            if req.scenario_id not in scenarios:
                raise HTTPException(
                    status_code=404,
                    detail=f"unknown scenario {req.scenario_id!r}")
            scenario = scenarios[req.scenario_id]
        else:
            scenario = req.scenario
            if scenario.get("schema_version", SCENARIO_SCHEMA_VERSION) \
                    != SCENARIO_SCHEMA_VERSION:
                raise HTTPException(status_code=422,
                                    detail="unsupported scenario schema")
        if int(scenario.get("n_obs", config.n_obs)) != config.n_obs or \
                int(scenario.get("n_pred", config.n_pred)) != config.n_pred:
            raise HTTPException(
                status_code=422,
                detail=f"horizon mismatch: scenario must use "
                       f"n_obs={config.n_obs}, n_pred={config.n_pred}")
        world_paths = []
        for c in req.candidates:
            arr = np.asarray(c.path, dtype=float)
            if arr.shape != (config.n_pred, 2):
                raise HTTPException(
                    status_code=422,
                    detail=f"horizon mismatch: candidate {c.id!r} path must "
                           f"be {config.n_pred} [x, y] points, got "
                           f"{len(c.path)}")
            if not np.all(np.isfinite(arr)):
                raise HTTPException(
                    status_code=422,
                    detail=f"candidates: candidate {c.id!r} path contains "
                           f"non-finite values")
            world_paths.append(arr)

        if not scenario.get("agents"):
            # Nothing to roll out: answer each candidate with an empty
            # prediction set rather than treating the request as an error.
            try:
                dt = float(scenario["dt"])
                observed = np.asarray(scenario["robot"]["observed"],
                                      dtype=float)
            except (KeyError, TypeError, ValueError) as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
            if observed.shape != (config.n_obs, 2):
                raise HTTPException(
                    status_code=422,
                    detail=f"robot.observed must be {config.n_obs} "
                           f"[x, y] points")
            return {
                "schema_version": EXPORT_SCHEMA_VERSION,
                "checkpoint_id": ckpt_id,
                "compute_ms": 0.0,
                "candidates": [
                    {"schema_version": EXPORT_SCHEMA_VERSION,
                     "n_obs": config.n_obs,
                     "n_pred": config.n_pred,
                     "dt": dt,
                     "robot_path": [[float(x), float(y)] for x, y in
                                    np.concatenate([observed, path])],
                     "agents": [],
                     "candidate_id": c.id}
                    for c, path in zip(req.candidates, world_paths)
                ],
            }

        try:
            window = scenario_to_window(scenario, config.stats, labels)
        except (ValueError, KeyError, TypeError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

        cands = [apply_standardizer(p, config.stats) for p in world_paths]

        start = time.perf_counter()
        rollouts = simulate_whatif(window, params, config, cands,
                                   sample=req.sample, seed=req.seed)
        compute_ms = 0.0 if deterministic \
            else 1000.0 * (time.perf_counter() - start)
        return {
            "schema_version": EXPORT_SCHEMA_VERSION,
            "checkpoint_id": ckpt_id,
            "compute_ms": compute_ms,
            "candidates": [
                rollout_to_export(r, config.stats, labels,
                                  candidate_id=req.candidates[i].id)
                for i, r in enumerate(rollouts)
            ],
        }

    return app
