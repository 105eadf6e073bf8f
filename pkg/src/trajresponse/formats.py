"""Wire formats: scenarios, rollout exports, and model checkpoints.

Everything that crosses the package boundary (files, HTTP) speaks world
meters; standardization is an internal detail carried by the checkpoint.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np

from .baselines import RedConfig
from .configs import ModelConfig
from .neural.checkpoint import load_checkpoint, save_checkpoint
from .neural.params import ParameterSet
from .responsernn import RolloutResult
from .trajdata import (
    SequenceWindow,
    StandardizationStats,
    apply_standardizer,
    invert_standardizer,
)

logger = logging.getLogger(__name__)

SCENARIO_SCHEMA_VERSION = 1
EXPORT_SCHEMA_VERSION = 1


def _xy_list(arr: np.ndarray) -> list:
    """(n, 2) array -> [[x, y] | null, ...] with NaN rows as null."""
    out = []
    for row in np.asarray(arr, dtype=float):
        if np.all(np.isfinite(row)):
            out.append([float(row[0]), float(row[1])])
        else:
            out.append(None)
    return out


def _xy_array(items: list, n: int, what: str) -> np.ndarray:
    if len(items) != n:
        raise ValueError(f"{what}: expected {n} points, got {len(items)}")
    out = np.full((n, 2), np.nan)
    for i, p in enumerate(items):
        if p is None:
            continue
        if len(p) != 2:
            raise ValueError(f"{what}[{i}]: expected [x, y], got {p!r}")
        out[i] = [float(p[0]), float(p[1])]
    return out


# ---------------------------------------------------------------------------
# Scenarios: a window in world coordinates, editable by clients
# ---------------------------------------------------------------------------


def window_to_scenario(window: SequenceWindow, stats: StandardizationStats,
                       labels: list[str], scenario_id: str,
                       name: str = "") -> dict:
    """Serialize one window to world meters."""
    def world(a):
        return invert_standardizer(a, stats)

    agents = []
    for i in range(window.n_agents):
        agents.append({
            "agent_id": int(window.agent_ids[i]),
            "type": labels[int(window.agent_types[i])],
            "observed": _xy_list(world(window.positions[i, :window.n_obs])),
            "future": _xy_list(world(window.positions[i, window.n_obs:])),
        })
    robot = {
        "agent_id": int(window.robot_ids[0]),
        "type": labels[int(window.robot_types[0])],
        "observed": _xy_list(world(window.robot_xy[0, :window.n_obs])),
        "planned": _xy_list(world(window.robot_xy[0, window.n_obs:])),
    }
    return {
        "schema_version": SCENARIO_SCHEMA_VERSION,
        "scenario_id": scenario_id,
        "name": name or scenario_id,
        "n_obs": window.n_obs,
        "n_pred": window.n_pred,
        "dt": window.dt,
        "agents": agents,
        "robot": robot,
    }


def scenario_to_window(scenario: dict, stats: StandardizationStats,
                       labels: list[str]) -> SequenceWindow:
    """Build a standardized window from a world-coordinate scenario.

    A missing or null robot plan holds the last observed robot position
    through the horizon (clients usually substitute candidate paths anyway).
    """
    n_obs = int(scenario["n_obs"])
    n_pred = int(scenario["n_pred"])
    total = n_obs + n_pred
    dt = float(scenario["dt"])
    agents = scenario.get("agents", [])
    if not agents:
        raise ValueError("scenario has no agents")
    n = len(agents)
    positions = np.full((n, total, 2), np.nan)
    ids = []
    types = []
    for i, a in enumerate(agents):
        label = a["type"]
        if label not in labels:
            raise ValueError(f"unknown agent type {label!r}")
        ids.append(int(a["agent_id"]))
        types.append(labels.index(label))
        obs = _xy_array(a["observed"], n_obs, f"agents[{i}].observed")
        positions[i, :n_obs] = apply_standardizer(obs, stats)
        fut = a.get("future")
        if fut is not None:
            fut = _xy_array(fut, n_pred, f"agents[{i}].future")
            positions[i, n_obs:] = apply_standardizer(fut, stats)
    presence = np.isfinite(positions[..., 0])
    obs_counts = presence[:, :n_obs].sum(axis=1)
    if np.any(obs_counts == 0):
        bad = [ids[i] for i in np.flatnonzero(obs_counts == 0)]
        raise ValueError(f"agents never observed: {bad}")
    loss_excluded = obs_counts < 0.5 * n_obs

    r = scenario["robot"]
    r_label = r["type"]
    if r_label not in labels:
        raise ValueError(f"unknown robot type {r_label!r}")
    r_obs = _xy_array(r["observed"], n_obs, "robot.observed")
    if not np.all(np.isfinite(r_obs)):
        raise ValueError("robot track must be fully observed")
    planned = r.get("planned")
    if planned is not None and any(p is not None for p in planned):
        r_fut = _xy_array(planned, n_pred, "robot.planned")
        if not np.all(np.isfinite(r_fut)):
            raise ValueError("robot plan must not contain gaps")
    else:
        r_fut = np.tile(r_obs[-1], (n_pred, 1))
    robot_xy = apply_standardizer(np.concatenate([r_obs, r_fut]), stats)

    return SequenceWindow(
        n_obs=n_obs, n_pred=n_pred, dt=dt,
        agent_ids=ids, agent_types=np.asarray(types, dtype=np.int64),
        positions=positions, presence=presence, loss_excluded=loss_excluded,
        robot_ids=[int(r["agent_id"])],
        robot_types=np.asarray([labels.index(r_label)], dtype=np.int64),
        robot_xy=robot_xy[None, :, :],
        recording_id=str(scenario.get("scenario_id", "scenario")),
        start_frame=0)


# ---------------------------------------------------------------------------
# Rollout exports
# ---------------------------------------------------------------------------


def rollout_to_export(rollout: RolloutResult, stats: StandardizationStats,
                      labels: list[str],
                      candidate_id: Optional[str] = None) -> dict:
    """Serialize a rollout to world meters.

    ``mean`` is the mean predicted position per horizon step.  ``sigma`` is
    the per-step scale of the output Gaussian (a displacement scale when the
    model predicts displacements), de-standardized per axis; ``rho`` is
    unchanged by axis-aligned scaling.
    """
    agents = []
    for i in range(len(rollout.agent_ids)):
        entry = {
            "agent_id": int(rollout.agent_ids[i]),
            "type": labels[int(rollout.agent_types[i])],
            "predicted": bool(rollout.predicted[i]),
        }
        if rollout.predicted[i]:
            entry["mean"] = _xy_list(
                invert_standardizer(rollout.positions[i], stats))
            entry["sigma"] = _xy_list(rollout.sigma[i] * stats.std)
            entry["rho"] = [float(v) for v in rollout.rho[i]]
        else:
            entry["mean"] = [None] * rollout.n_pred
            entry["sigma"] = [None] * rollout.n_pred
            entry["rho"] = [None] * rollout.n_pred
        agents.append(entry)
    export = {
        "schema_version": EXPORT_SCHEMA_VERSION,
        "n_obs": rollout.n_obs,
        "n_pred": rollout.n_pred,
        "dt": rollout.dt,
        "robot_path": _xy_list(
            invert_standardizer(rollout.robot_plan[0], stats)),
        "agents": agents,
    }
    if candidate_id is not None:
        export["candidate_id"] = candidate_id
    return export


def load_candidate_paths(path: Path, n_pred: int) -> list[tuple[str, np.ndarray]]:
    """Read candidate robot paths (world meters) from JSON.

    Accepts {"candidates": [{"id", "path"}, ...]} or a bare list of paths.
    """
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        items = data.get("candidates", [])
    else:
        items = [{"id": f"candidate-{i}", "path": p}
                 for i, p in enumerate(data)]
    out = []
    for i, item in enumerate(items):
        cid = str(item.get("id", f"candidate-{i}"))
        arr = _xy_array(item["path"], n_pred, f"candidates[{i}].path")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"candidate {cid}: path has gaps")
        out.append((cid, arr))
    if not out:
        raise ValueError(f"no candidate paths in {path}")
    return out


# ---------------------------------------------------------------------------
# Model checkpoints
# ---------------------------------------------------------------------------


def save_model(path: Path, params: ParameterSet,
               config: ModelConfig | RedConfig,
               extra: Optional[dict] = None) -> None:
    manifest = config.to_manifest()
    if extra:
        manifest = {**manifest, "extra": extra}
    save_checkpoint(Path(path), manifest, params)


def load_model(path: Path) -> tuple[ParameterSet, ModelConfig | RedConfig, dict]:
    """Load a checkpoint; the manifest's model field picks the config type."""
    manifest, params = load_checkpoint(Path(path))
    kind = manifest.get("model")
    if kind == "response_rnn":
        config = ModelConfig.from_manifest(manifest)
    elif kind == "red":
        config = RedConfig.from_manifest(manifest)
    else:
        raise ValueError(f"unknown model kind {kind!r} in {path}")
    return params, config, manifest
