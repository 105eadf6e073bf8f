"""Evaluation: displacement errors, what-if diagnostics, experiment runner.

All metrics are computed in world meters (predictions and ground truth are
de-standardized first) and only over agents that pass the presence rule for
loss inclusion, so numbers are comparable across models and datasets.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .responsernn import RolloutResult
from .trajdata import (
    SequenceWindow,
    StandardizationStats,
    apply_standardizer,
    invert_standardizer,
)

logger = logging.getLogger(__name__)

Predictor = Callable[[SequenceWindow], np.ndarray]


@dataclass
class ErrorAccumulator:
    """Running sums for ADE (per agent-step) and FDE (per agent)."""

    ade_sum: float = 0.0
    ade_count: int = 0
    fde_sum: float = 0.0
    fde_count: int = 0

    def update(self, pred_std: np.ndarray, window: SequenceWindow,
               stats: StandardizationStats) -> None:
        """Fold one window's predictions (standardized positions) in."""
        n_obs, n_pred = window.n_obs, window.n_pred
        if pred_std.shape != (window.n_agents, n_pred, 2):
            raise ValueError(
                f"predictions must be ({window.n_agents}, {n_pred}, 2), "
                f"got {pred_std.shape}")
        gt_std = window.positions[:, n_obs:]
        mask = (window.presence[:, n_obs:]
                & ~window.loss_excluded[:, None]
                & np.isfinite(pred_std[..., 0])
                & np.isfinite(gt_std[..., 0]))
        if not np.any(mask):
            return
        pred_w = invert_standardizer(pred_std[mask], stats)
        gt_w = invert_standardizer(gt_std[mask], stats)
        err = np.linalg.norm(pred_w - gt_w, axis=-1)
        self.ade_sum += float(err.sum())
        self.ade_count += int(err.size)
        final = mask[:, -1]
        if np.any(final):
            pf = invert_standardizer(pred_std[final, -1], stats)
            gf = invert_standardizer(gt_std[final, -1], stats)
            fe = np.linalg.norm(pf - gf, axis=-1)
            self.fde_sum += float(fe.sum())
            self.fde_count += int(fe.size)

    @property
    def ade(self) -> float:
        return self.ade_sum / self.ade_count if self.ade_count else float("nan")

    @property
    def fde(self) -> float:
        return self.fde_sum / self.fde_count if self.fde_count else float("nan")


def ade_fde(pred_std: np.ndarray, window: SequenceWindow,
            stats: StandardizationStats) -> tuple[float, float]:
    """Displacement errors for a single window, in meters."""
    acc = ErrorAccumulator()
    acc.update(pred_std, window, stats)
    return acc.ade, acc.fde


def evaluate(windows: list[SequenceWindow], predictor: Predictor,
             stats: StandardizationStats,
             deterministic: bool = False, workers: int = 1) -> dict:
    """Run a predictor over windows and aggregate errors.

    With ``workers`` > 1, windows are split into equal chunks that run on a
    thread pool; per-chunk sums merge in chunk order, so results for a given
    worker count are reproducible.  ``ms_per_seq`` is wall-clock per window;
    it is reported as 0.0 in deterministic mode so output files are
    bit-identical across runs.
    """
    start = time.perf_counter()
    if workers <= 1 or len(windows) < 2 * workers:
        acc = ErrorAccumulator()
        for w in windows:
            acc.update(predictor(w), w, stats)
    else:
        from concurrent.futures import ThreadPoolExecutor

        chunks = np.array_split(np.arange(len(windows)), workers)

        def run_chunk(idx: np.ndarray) -> ErrorAccumulator:
            a = ErrorAccumulator()
            for i in idx:
                a.update(predictor(windows[i]), windows[i], stats)
            return a

        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_chunk, chunks))
        acc = ErrorAccumulator()
        for p in parts:
            acc.ade_sum += p.ade_sum
            acc.ade_count += p.ade_count
            acc.fde_sum += p.fde_sum
            acc.fde_count += p.fde_count
    elapsed = time.perf_counter() - start
    ms = 0.0 if deterministic else 1000.0 * elapsed / max(len(windows), 1)
    return {
        "ade_m": acc.ade,
        "fde_m": acc.fde,
        "n_windows": len(windows),
        "n_ade_terms": acc.ade_count,
        "n_fde_terms": acc.fde_count,
        "ms_per_seq": ms,
    }


# ---------------------------------------------------------------------------
# Predictor adapters
# ---------------------------------------------------------------------------


def response_predictor(params, config) -> Predictor:
    from .responsernn import build_graph, build_plan, forward_window

    def predict(window: SequenceWindow) -> np.ndarray:
        graph = build_graph(window)
        plan = build_plan(window, graph)
        out = forward_window(window, graph, params, config, mode="infer",
                             plan=plan)
        return out.rollout.positions

    return predict


def ctrv_predictor(stats: StandardizationStats) -> Predictor:
    from .baselines import ctrv_predict

    def predict(window: SequenceWindow) -> np.ndarray:
        return ctrv_predict(window, stats)

    return predict


def red_predictor(params, red_config) -> Predictor:
    from .baselines import red_predict

    def predict(window: SequenceWindow) -> np.ndarray:
        return red_predict(window, params, red_config)

    return predict


# ---------------------------------------------------------------------------
# What-if diagnostics
# ---------------------------------------------------------------------------


def whatif_candidates(window: SequenceWindow, stats: StandardizationStats,
                      speed_mps: float = 1.6) -> dict[str, np.ndarray]:
    """Standard candidate set for probing response to the machine's plan.

    All candidates start from the machine's last observed position and run
    at constant speed for the horizon: ``near`` heads at the crowd centroid,
    ``stationary`` holds position, ``far_a`` retreats from the centroid and
    ``far_b`` retreats 30 degrees off ``far_a``.  Returned standardized,
    ready for rollout substitution.
    """
    n_obs, n_pred = window.n_obs, window.n_pred
    start = invert_standardizer(window.robot_xy[0, n_obs - 1], stats)
    seen = window.presence[:, n_obs - 1]
    if not np.any(seen):
        raise ValueError("no agents present at the last observed step")
    centroid = invert_standardizer(
        window.positions[seen, n_obs - 1], stats).mean(axis=0)
    to_c = centroid - start
    dist = np.linalg.norm(to_c)
    u = to_c / dist if dist > 1e-9 else np.array([1.0, 0.0])
    steps = np.arange(1, n_pred + 1)[:, None] * (speed_mps * window.dt)
    rot = np.array([[np.cos(np.pi / 6), -np.sin(np.pi / 6)],
                    [np.sin(np.pi / 6), np.cos(np.pi / 6)]])
    world = {
        "near": start + steps * u,
        "stationary": np.tile(start, (n_pred, 1)),
        "far_a": start - steps * u,
        "far_b": start - steps * (rot @ u),
    }
    return {k: apply_standardizer(v, stats) for k, v in world.items()}


def rollout_divergence(a: RolloutResult, b: RolloutResult,
                       stats: StandardizationStats) -> float:
    """Mean distance in meters between two rollouts of the same window."""
    both = a.predicted & b.predicted
    if not np.any(both):
        return float("nan")
    pa = invert_standardizer(a.positions[both].reshape(-1, 2), stats)
    pb = invert_standardizer(b.positions[both].reshape(-1, 2), stats)
    return float(np.mean(np.linalg.norm(pa - pb, axis=-1)))


def away_fraction(near: RolloutResult, far: RolloutResult,
                  stats: StandardizationStats,
                  radius_m: float = 2.0) -> tuple[int, int]:
    """How often the near-path rollout shifts agents away from the machine.

    For every agent-step where the near candidate puts the machine within
    ``radius_m`` of the agent's far-candidate position, test whether the
    displacement difference (near minus far) has positive projection on the
    direction from machine to agent.  Returns (n_away, n_close).
    """
    both = near.predicted & far.predicted
    rows = np.flatnonzero(both)
    if rows.size == 0:
        return 0, 0
    n_away = 0
    n_close = 0
    for r in rows:
        agent_far = invert_standardizer(far.positions[r], stats)
        agent_near = invert_standardizer(near.positions[r], stats)
        robot = invert_standardizer(
            near.robot_plan[0, near.n_obs:], stats)
        d = np.linalg.norm(agent_far - robot, axis=-1)
        close = d < radius_m
        if not np.any(close):
            continue
        u = (agent_far[close] - robot[close]) / d[close, None]
        shift = agent_near[close] - agent_far[close]
        proj = np.sum(shift * u, axis=-1)
        n_close += int(close.sum())
        n_away += int(np.sum(proj > 0))
    return n_away, n_close


# ---------------------------------------------------------------------------
# Experiment runner
# ---------------------------------------------------------------------------

REPORT_SCHEMA_VERSION = 1


def run_experiment(name: str, windows: list[SequenceWindow],
                   models: dict[str, Predictor],
                   stats: StandardizationStats,
                   meta: Optional[dict] = None,
                   deterministic: bool = False, workers: int = 1) -> dict:
    """Evaluate several predictors on the same windows."""
    results = {}
    for model_name in sorted(models):
        results[model_name] = evaluate(windows, models[model_name], stats,
                                       deterministic=deterministic,
                                       workers=workers)
        logger.info("%s / %s: ade=%.4f fde=%.4f", name, model_name,
                    results[model_name]["ade_m"], results[model_name]["fde_m"])
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "experiment": name,
        "meta": meta or {},
        "models": results,
    }


def render_table(report: dict) -> str:
    """Plain-text comparison table for one experiment report."""
    rows = [("model", "ADE (m)", "FDE (m)", "windows", "ms/seq")]
    for model_name in sorted(report["models"]):
        r = report["models"][model_name]
        rows.append((model_name, f"{r['ade_m']:.4f}", f"{r['fde_m']:.4f}",
                     str(r["n_windows"]), f"{r['ms_per_seq']:.2f}"))
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    lines = []
    for j, row in enumerate(rows):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def save_report(report: dict, out_dir: Path) -> Path:
    """Write report JSON (stable key order) plus a rendered table."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{report['experiment']}.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out_dir / f"{report['experiment']}.txt").write_text(
        render_table(report) + "\n")
    return path
