"""Negative log-likelihood of targets under predicted bivariate Gaussians."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .layers import GaussianParams

LOG_TWO_PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LossConfig:
    """Loss mode and the down-weighting applied to stationary agents.

    In velocity mode each term is scaled by ``alpha_stationary`` when the
    agent's ground-truth speed is at or below ``speed_threshold_mps``; this
    keeps abundant stationary agents from collapsing training onto a
    zero-velocity solution.  Position mode applies no weighting.
    """

    mode: str = "velocity"            # "position" | "velocity"
    alpha_stationary: float = 0.2
    speed_threshold_mps: float = 0.1

    def __post_init__(self) -> None:
        if self.mode not in ("position", "velocity"):
            raise ValueError(f"unknown loss mode {self.mode!r}")


def nll(params: GaussianParams, target: np.ndarray):
    """-log P(target | mu, sigma, rho), elementwise over leading dims.

    Returns (values, cache); values have the batch shape of the inputs.
    """
    target = np.asarray(target, dtype=np.float64)
    d = target - params.mu
    sx = params.sigma[..., 0]
    sy = params.sigma[..., 1]
    rho = params.rho
    one_minus_r2 = 1.0 - rho ** 2
    zx = d[..., 0] / sx
    zy = d[..., 1] / sy
    quad = (zx ** 2 + zy ** 2 - 2.0 * rho * zx * zy) / one_minus_r2
    values = LOG_TWO_PI + np.log(sx) + np.log(sy) + 0.5 * np.log(one_minus_r2) + 0.5 * quad
    cache = (d, sx, sy, rho, zx, zy, one_minus_r2)
    return values, cache


def nll_backward(d_values: np.ndarray, cache):
    """Gradients of the NLL w.r.t. (mu, sigma, rho).

    ``d_values`` is the gradient w.r.t. each NLL value (use 1.0 for a plain
    sum).  Returns (d_mu, d_sigma, d_rho).
    """
    d, sx, sy, rho, zx, zy, one_minus_r2 = cache
    d_values = np.asarray(d_values, dtype=np.float64)
    # dq/dzx etc. for quad = (zx^2 + zy^2 - 2 rho zx zy) / (1 - rho^2)
    dq_dzx = (2.0 * zx - 2.0 * rho * zy) / one_minus_r2
    dq_dzy = (2.0 * zy - 2.0 * rho * zx) / one_minus_r2
    d_mu_x = d_values * (-0.5) * dq_dzx / sx
    d_mu_y = d_values * (-0.5) * dq_dzy / sy
    d_sx = d_values * (1.0 / sx + 0.5 * dq_dzx * (-zx / sx))
    d_sy = d_values * (1.0 / sy + 0.5 * dq_dzy * (-zy / sy))
    quad_num = zx ** 2 + zy ** 2 - 2.0 * rho * zx * zy
    d_rho = d_values * (-rho / one_minus_r2
                        + 0.5 * (-2.0 * zx * zy / one_minus_r2
                                 + quad_num * 2.0 * rho / one_minus_r2 ** 2))
    d_mu = np.stack([d_mu_x, d_mu_y], axis=-1)
    d_sigma = np.stack([d_sx, d_sy], axis=-1)
    return d_mu, d_sigma, d_rho


def stationarity_alpha(gt_step_world: np.ndarray, dt: float, config: LossConfig) -> np.ndarray:
    """Per-term weight from ground-truth per-step displacement in world meters."""
    speed = np.linalg.norm(np.asarray(gt_step_world), axis=-1) / dt
    return np.where(speed > config.speed_threshold_mps, 1.0, config.alpha_stationary)


def sequence_loss(predictions: list[GaussianParams], targets: np.ndarray,
                  mask: np.ndarray, alpha: np.ndarray, config: LossConfig) -> float:
    """Sum of per-agent, per-timestep NLL terms over the prediction phase.

    ``predictions[s]`` holds the Gaussians for prediction step s, batched over
    agents; ``targets`` is (n_agents, n_pred, 2); ``mask`` (n_agents, n_pred)
    selects terms that count (present in ground truth and not loss-excluded);
    ``alpha`` has the same shape and carries the stationarity weights (all
    ones in position mode).  Raises if no term is active.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("sequence_loss: empty mask, window should have been filtered")
    total = 0.0
    for s, params in enumerate(predictions):
        sel = mask[:, s]
        if not sel.any():
            continue
        values, _ = nll(GaussianParams(params.mu[sel], params.sigma[sel], params.rho[sel]),
                        targets[sel, s])
        w = alpha[sel, s] if config.mode == "velocity" else np.ones(int(sel.sum()))
        total += float((w * values).sum())
    return total
