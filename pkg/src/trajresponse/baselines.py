"""Reference predictors: a kinematic extrapolator and a sequence model.

Both consume the same windows as the interaction model and emit positions
over the prediction horizon, so evaluation code treats all three uniformly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .configs import TrainConfig
from .neural.layers import (
    GaussianParams,
    embed,
    embed_backward,
    gaussian_head,
    gaussian_head_backward,
    lstm_step,
    lstm_step_backward,
)
from .neural.losses import LossConfig, nll, nll_backward, stationarity_alpha
from .neural.optim import AdamState, adam_step
from .neural.params import ParameterSet, init_red_params
from .trajdata import SequenceWindow, StandardizationStats, apply_standardizer, invert_standardizer

logger = logging.getLogger(__name__)

_MAX_DIFFS = 8          # how many recent finite differences inform the fit
_MIN_SPEED = 1e-9       # below this a heading is considered undefined


def _wrap_angle(a: np.ndarray | float):
    """Wrap to (-pi, pi]."""
    out = np.mod(np.asarray(a) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(out == -np.pi, np.pi, out)


def _recency_mean(values: np.ndarray) -> float:
    """Average with linearly increasing weight toward the newest sample."""
    w = np.arange(1.0, len(values) + 1.0)
    return float(np.sum(w * values) / np.sum(w))


def ctrv_predict(window: SequenceWindow,
                 stats: StandardizationStats) -> np.ndarray:
    """Constant turn rate and velocity extrapolation per agent.

    Speed, heading, and turn rate are estimated from the last few observed
    finite differences with recency weighting, then rolled forward over the
    horizon.  Geometry (headings, turning) only makes sense in world
    coordinates, so positions are de-standardized for the fit and the
    output is re-standardized.  Agents with no usable motion history hold
    their last observed position.  Returns (n_agents, n_pred, 2) in
    standardized coordinates; rows of never-observed agents are NaN.
    """
    n_obs, n_pred, dt = window.n_obs, window.n_pred, window.dt
    out = np.full((window.n_agents, n_pred, 2), np.nan)
    for i in range(window.n_agents):
        obs_steps = np.flatnonzero(window.presence[i, :n_obs])
        if obs_steps.size == 0:
            continue
        world = invert_standardizer(window.positions[i, obs_steps], stats)
        last_pos = world[-1]

        # Finite differences between consecutive observed frames only.
        consec = np.flatnonzero(np.diff(obs_steps) == 1)
        consec = consec[-_MAX_DIFFS:]
        if consec.size == 0:
            pred_world = np.tile(last_pos, (n_pred, 1))
            out[i] = apply_standardizer(pred_world, stats)
            continue
        deltas = world[consec + 1] - world[consec]
        speeds = np.linalg.norm(deltas, axis=1) / dt
        moving = speeds > _MIN_SPEED
        if not np.any(moving):
            pred_world = np.tile(last_pos, (n_pred, 1))
            out[i] = apply_standardizer(pred_world, stats)
            continue

        v_hat = _recency_mean(speeds)
        headings = np.arctan2(deltas[moving, 1], deltas[moving, 0])
        theta = float(headings[-1])
        if headings.size >= 2:
            turn = _wrap_angle(np.diff(headings)) / dt
            omega = _recency_mean(np.asarray(turn))
        else:
            omega = 0.0

        pred_world = np.empty((n_pred, 2))
        pos = last_pos.copy()
        for s in range(n_pred):
            theta = theta + omega * dt
            pos = pos + v_hat * dt * np.array([np.cos(theta), np.sin(theta)])
            pred_world[s] = pos
        out[i] = apply_standardizer(pred_world, stats)
    return out


# ---------------------------------------------------------------------------
# Recurrent encoder-decoder over displacements (interaction-free)
# ---------------------------------------------------------------------------


@dataclass
class RedConfig:
    """Settings for the encoder-decoder baseline."""

    n_obs: int = 12
    n_pred: int = 12
    dt: float = 1.0 / 15.0
    hidden: int = 64
    embed_dim: int = 64
    alpha_stationary: float = 0.2
    speed_threshold_mps: float = 0.1
    stats: StandardizationStats = field(
        default_factory=lambda: StandardizationStats(0.0, 0.0, 1.0, 1.0))

    def to_manifest(self) -> dict:
        return {
            "model": "red",
            "n_obs": self.n_obs, "n_pred": self.n_pred, "dt": self.dt,
            "hidden": self.hidden, "embed_dim": self.embed_dim,
            "alpha_stationary": self.alpha_stationary,
            "speed_threshold_mps": self.speed_threshold_mps,
            "stats": self.stats.to_dict(),
        }

    @classmethod
    def from_manifest(cls, m: dict) -> "RedConfig":
        return cls(n_obs=int(m["n_obs"]), n_pred=int(m["n_pred"]),
                   dt=float(m["dt"]), hidden=int(m["hidden"]),
                   embed_dim=int(m["embed_dim"]),
                   alpha_stationary=float(m["alpha_stationary"]),
                   speed_threshold_mps=float(m["speed_threshold_mps"]),
                   stats=StandardizationStats.from_dict(m["stats"]))


def _observed_displacements(window: SequenceWindow) -> tuple[np.ndarray, np.ndarray]:
    """Carry-forward displacement inputs over the observation span.

    Returns (disp, seen) where disp is (n_agents, n_obs, 2) with zeros at
    step 0 and wherever the agent was absent, and seen marks agents observed
    at least once.
    """
    n_obs = window.n_obs
    buf = window.positions[:, :n_obs].astype(np.float64).copy()
    for t in range(1, n_obs):
        hole = ~np.isfinite(buf[:, t, 0]) & np.isfinite(buf[:, t - 1, 0])
        buf[hole, t] = buf[hole, t - 1]
    disp = np.zeros_like(buf)
    valid = np.isfinite(buf[:, 1:, 0]) & np.isfinite(buf[:, :-1, 0])
    diff = buf[:, 1:] - buf[:, :-1]
    disp[:, 1:][valid] = diff[valid]
    seen = np.isfinite(buf[:, -1, 0])
    return disp, seen


@dataclass
class RedForward:
    """Outputs plus the caches needed to backpropagate one window."""

    rows: np.ndarray               # agent rows that were run
    mu: np.ndarray                 # (n_rows, n_pred, 2) displacement means
    sigma: np.ndarray
    rho: np.ndarray
    positions: np.ndarray          # (n_rows, n_pred, 2) integrated means
    enc_caches: list = field(default_factory=list)
    dec_caches: list = field(default_factory=list)
    emb_caches: list = field(default_factory=list)
    dec_emb_caches: list = field(default_factory=list)
    head_caches: list = field(default_factory=list)


def red_forward(window: SequenceWindow, params: ParameterSet,
                config: RedConfig, keep_caches: bool = False) -> RedForward:
    """Encode observed displacements, decode the horizon autoregressively."""
    disp, seen = _observed_displacements(window)
    rows = np.flatnonzero(seen)
    n = rows.size
    n_obs, n_pred = config.n_obs, config.n_pred
    h = np.zeros((n, config.hidden))
    c = np.zeros_like(h)
    fwd = RedForward(rows=rows,
                     mu=np.empty((n, n_pred, 2)),
                     sigma=np.empty((n, n_pred, 2)),
                     rho=np.empty((n, n_pred)),
                     positions=np.empty((n, n_pred, 2)))
    if n == 0:
        return fwd

    for t in range(n_obs):
        x, ec = embed(disp[rows, t], params["red.embed.w"],
                      params["red.embed.b"])
        h, c, lc = lstm_step(x, h, c, params["red.enc.wx"],
                             params["red.enc.wh"], params["red.enc.b"])
        if keep_caches:
            fwd.emb_caches.append(ec)
            fwd.enc_caches.append(lc)

    # Last position on the carried-forward observation grid.
    buf = window.positions[:, :n_obs].astype(np.float64).copy()
    for t in range(1, n_obs):
        hole = ~np.isfinite(buf[:, t, 0]) & np.isfinite(buf[:, t - 1, 0])
        buf[hole, t] = buf[hole, t - 1]
    pos = buf[rows, -1]
    prev_disp = disp[rows, -1]
    for s in range(n_pred):
        x, ec = embed(prev_disp, params["red.embed.w"], params["red.embed.b"])
        h, c, lc = lstm_step(x, h, c, params["red.dec.wx"],
                             params["red.dec.wh"], params["red.dec.b"])
        gp, hc = gaussian_head(h, params["red.out.w"], params["red.out.b"])
        fwd.mu[:, s] = gp.mu
        fwd.sigma[:, s] = gp.sigma
        fwd.rho[:, s] = gp.rho
        pos = pos + gp.mu
        fwd.positions[:, s] = pos
        prev_disp = gp.mu     # mean feedback, treated as constant
        if keep_caches:
            fwd.dec_emb_caches.append(ec)
            fwd.dec_caches.append(lc)
            fwd.head_caches.append(hc)
    return fwd


def red_predict(window: SequenceWindow, params: ParameterSet,
                config: RedConfig) -> np.ndarray:
    """Mean position predictions, (n_agents, n_pred, 2), NaN when unseen."""
    fwd = red_forward(window, params, config)
    out = np.full((window.n_agents, config.n_pred, 2), np.nan)
    out[fwd.rows] = fwd.positions
    return out


def red_loss_and_grads(window: SequenceWindow, params: ParameterSet,
                       config: RedConfig) -> tuple[float, int, dict]:
    """Masked weighted NLL on displacement targets plus its gradients."""
    fwd = red_forward(window, params, config, keep_caches=True)
    rows = fwd.rows
    n = rows.size
    n_obs, n_pred = config.n_obs, config.n_pred
    grads = params.zero_grads()
    if n == 0:
        raise ValueError("window has no observed agents")

    # Targets and masks per horizon step.
    gt = window.positions[rows]
    pres = window.presence[rows]
    incl = ~window.loss_excluded[rows]
    loss_total = 0.0
    n_terms = 0
    step_loss: list[tuple[np.ndarray, np.ndarray, tuple]] = []
    lc = LossConfig(mode="velocity", alpha_stationary=config.alpha_stationary,
                    speed_threshold_mps=config.speed_threshold_mps)
    for s in range(n_pred):
        t = n_obs + s
        ok = pres[:, t] & pres[:, t - 1] & incl
        lr_ = np.flatnonzero(ok)
        if lr_.size == 0:
            step_loss.append((lr_, np.empty(0), None))
            continue
        target = gt[lr_, t] - gt[lr_, t - 1]
        weights = stationarity_alpha(target * config.stats.std, config.dt, lc)
        sub = GaussianParams(mu=fwd.mu[lr_, s], sigma=fwd.sigma[lr_, s],
                             rho=fwd.rho[lr_, s])
        vals, cache = nll(sub, target)
        loss_total += float(np.sum(weights * vals))
        n_terms += lr_.size
        step_loss.append((lr_, weights, cache))
    if n_terms == 0:
        raise ValueError("window contributes no loss terms")

    # Backward: decoder steps in reverse, then encoder.  The mean emitted at
    # step s is also the decoder input of step s+1, so the input gradient of
    # each step flows back into the previous step's mu.
    d_h = np.zeros((n, config.hidden))
    d_c = np.zeros_like(d_h)
    d_mu_feedback = np.zeros((n, 2))
    for s in reversed(range(n_pred)):
        lr_, weights, cache = step_loss[s]
        d_mu = d_mu_feedback
        d_sigma = np.zeros((n, 2))
        d_rho = np.zeros(n)
        if cache is not None:
            d_mu_s, d_sigma_s, d_rho_s = nll_backward(weights, cache)
            d_mu[lr_] += d_mu_s
            d_sigma[lr_] = d_sigma_s
            d_rho[lr_] = d_rho_s
        dh_head, dw, db = gaussian_head_backward(
            d_mu, d_sigma, d_rho, fwd.head_caches[s])
        grads["red.out.w"] += dw
        grads["red.out.b"] += db
        d_h += dh_head
        d_x, d_h, d_c, d_wx, d_wh, d_b = lstm_step_backward(
            d_h, d_c, fwd.dec_caches[s])
        grads["red.dec.wx"] += d_wx
        grads["red.dec.wh"] += d_wh
        grads["red.dec.b"] += d_b
        d_inp, dw, db = embed_backward(d_x, fwd.dec_emb_caches[s])
        grads["red.embed.w"] += dw
        grads["red.embed.b"] += db
        # At s = 0 the input is the last observed displacement, a constant.
        d_mu_feedback = d_inp if s > 0 else np.zeros((n, 2))
    for t in reversed(range(n_obs)):
        d_x, d_h, d_c, d_wx, d_wh, d_b = lstm_step_backward(
            d_h, d_c, fwd.enc_caches[t])
        grads["red.enc.wx"] += d_wx
        grads["red.enc.wh"] += d_wh
        grads["red.enc.b"] += d_b
        _, dw, db = embed_backward(d_x, fwd.emb_caches[t])
        grads["red.embed.w"] += dw
        grads["red.embed.b"] += db
    return loss_total, n_terms, grads


def red_train(train_windows: list[SequenceWindow],
              val_windows: list[SequenceWindow],
              config: RedConfig,
              train_config: Optional[TrainConfig] = None,
              params: Optional[ParameterSet] = None):
    """Same optimization scheme as the interaction model."""
    tc = train_config or TrainConfig()
    if not train_windows:
        raise ValueError("no training windows")
    if params is None:
        params = init_red_params(hidden=config.hidden,
                                 embed_dim=config.embed_dim, seed=tc.seed)
    rng = np.random.default_rng(tc.seed)
    state = AdamState.for_params(params)
    best = (np.inf, params.copy(), 0)
    history = []
    usable = [w for w in train_windows]
    for epoch in range(tc.epochs):
        lr = tc.lr * (tc.lr_decay ** epoch)
        order = rng.permutation(len(usable))
        total, terms = 0.0, 0
        for start in range(0, len(order), tc.batch_size):
            batch = order[start:start + tc.batch_size]
            grads = params.zero_grads()
            for idx in batch:
                loss, nt, gw = red_loss_and_grads(usable[idx], params, config)
                if not np.isfinite(loss):
                    raise RuntimeError(
                        f"non-finite baseline loss at epoch {epoch}, "
                        f"window {idx}")
                total += loss
                terms += nt
                for k in gw:
                    grads[k] += gw[k]
            inv = 1.0 / len(batch)
            for k in grads:
                grads[k] *= inv
            adam_step(params, grads, state, lr=lr, max_norm=tc.grad_clip)
        train_loss = total / max(terms, 1)
        val_loss = None
        if val_windows:
            v, vt = 0.0, 0
            for w in val_windows:
                loss, nt, _ = red_loss_and_grads(w, params, config)
                v += loss
                vt += nt
            val_loss = v / max(vt, 1)
        monitored = val_loss if val_loss is not None else train_loss
        if monitored < best[0]:
            best = (monitored, params.copy(), epoch)
        history.append({"epoch": epoch, "lr": lr, "train_loss": train_loss,
                        "val_loss": val_loss})
    return params, best[1], best[2], history
