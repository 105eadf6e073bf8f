"""Factored recurrent model over the unrolled interaction graph.

One LSTM per ordered type pair runs every edge instance of that pair
(temporal edges reuse the same-type pair), one LSTM per agent type runs
every non-controlled node of that type, and a shared soft attention pools
each node's outgoing spatial edge states.  Parameters are tied across
instances, so model size is independent of how many agents appear.

All arithmetic is plain numpy; gradients are accumulated by walking the
recorded per-step caches in reverse.  Fed-back inputs during sampled
rollouts are treated as constants (no gradient flows through feedback).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .configs import ModelConfig, TrainConfig
from .neural.layers import (
    GaussianParams,
    attention,
    attention_backward,
    embed,
    embed_backward,
    gaussian_head,
    gaussian_head_backward,
    lstm_step,
    lstm_step_backward,
)
from .neural.losses import nll, nll_backward, stationarity_alpha
from .neural.optim import AdamState, adam_step
from .neural.params import ParameterSet, init_response_params
from .stgraph import UnrolledGraph, build_graph
from .trajdata import SequenceWindow

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Raised when a non-finite loss or gradient stops training."""

    def __init__(self, message: str, epoch: int, window_index: int):
        super().__init__(message)
        self.epoch = epoch
        self.window_index = window_index


# ---------------------------------------------------------------------------
# Rollout plan: the static schedule of batched updates for one window.
# ---------------------------------------------------------------------------


@dataclass
class _FactorStep:
    """All edge instances of one factor updated at one timestep."""

    factor: tuple[int, int]
    slots: np.ndarray        # (n,) state-slot per instance, batch order
    aa_from: np.ndarray      # rows into the position buffer
    aa_to: np.ndarray
    ar_from: np.ndarray
    ar_robot: np.ndarray     # rows into the robot plan
    tp_node: np.ndarray
    tp_prev: np.ndarray      # previous present step, -1 -> zero feature
    n_aa: int = 0
    n_ar: int = 0
    n_tp: int = 0


@dataclass
class _NodeStep:
    """All non-controlled nodes of one type updated at one timestep."""

    agent_type: int
    rows: np.ndarray                  # node index == position-buffer row
    temporal_slot: np.ndarray         # (n,)
    spatial_slots: list[np.ndarray]   # per node, outgoing spatial edge slots


@dataclass
class _StepPlan:
    factors: list[_FactorStep]
    nodes: list[_NodeStep]


@dataclass
class RolloutPlan:
    """Precomputed update schedule; reusable across epochs for one window."""

    total_steps: int
    n_obs: int
    n_slots: int
    steps: list[_StepPlan]


def build_plan(window: SequenceWindow, graph: UnrolledGraph) -> RolloutPlan:
    """Flatten the unrolled graph into per-step batched update schedules."""
    total = window.total_steps
    slot_of: dict[tuple, int] = {}

    def slot(key: tuple) -> int:
        if key not in slot_of:
            slot_of[key] = len(slot_of)
        return slot_of[key]

    last_seen = np.full(window.n_agents, -1, dtype=np.int64)
    steps: list[_StepPlan] = []
    for t in range(total - 1):
        acc: dict[tuple[int, int], dict[str, list]] = {}

        def bucket(factor: tuple[int, int]) -> dict[str, list]:
            return acc.setdefault(factor, {
                "aa_from": [], "aa_to": [], "aa_slot": [],
                "ar_from": [], "ar_robot": [], "ar_slot": [],
                "tp_node": [], "tp_prev": [], "tp_slot": [],
            })

        for e in graph.spatial_at[t]:
            g = bucket(e.factor)
            to = graph.nodes[e.to_node]
            if to.controlled:
                g["ar_from"].append(e.from_node)
                g["ar_robot"].append(e.to_node - window.n_agents)
                g["ar_slot"].append(slot(("s", e.from_node, e.to_node)))
            else:
                g["aa_from"].append(e.from_node)
                g["aa_to"].append(e.to_node)
                g["aa_slot"].append(slot(("s", e.from_node, e.to_node)))
        present = [v for v in graph.nodes_at[t]
                   if not graph.nodes[v].controlled]
        for v in present:
            k = graph.nodes[v].agent_type
            g = bucket((k, k))
            g["tp_node"].append(v)
            g["tp_prev"].append(int(last_seen[v]))
            g["tp_slot"].append(slot(("t", v)))

        factor_steps = []
        for factor in sorted(acc):
            g = acc[factor]
            slots = np.asarray(g["aa_slot"] + g["ar_slot"] + g["tp_slot"],
                               dtype=np.int64)
            factor_steps.append(_FactorStep(
                factor=factor, slots=slots,
                aa_from=np.asarray(g["aa_from"], dtype=np.int64),
                aa_to=np.asarray(g["aa_to"], dtype=np.int64),
                ar_from=np.asarray(g["ar_from"], dtype=np.int64),
                ar_robot=np.asarray(g["ar_robot"], dtype=np.int64),
                tp_node=np.asarray(g["tp_node"], dtype=np.int64),
                tp_prev=np.asarray(g["tp_prev"], dtype=np.int64),
                n_aa=len(g["aa_from"]), n_ar=len(g["ar_from"]),
                n_tp=len(g["tp_node"]),
            ))

        outgoing: dict[int, list[int]] = {}
        for e in graph.spatial_at[t]:
            outgoing.setdefault(e.from_node, []).append(
                slot_of[("s", e.from_node, e.to_node)])
        node_steps = []
        by_type: dict[int, list[int]] = {}
        for v in present:
            by_type.setdefault(graph.nodes[v].agent_type, []).append(v)
        for k in sorted(by_type):
            rows = sorted(by_type[k])
            node_steps.append(_NodeStep(
                agent_type=k,
                rows=np.asarray(rows, dtype=np.int64),
                temporal_slot=np.asarray([slot_of[("t", v)] for v in rows],
                                         dtype=np.int64),
                spatial_slots=[np.asarray(outgoing.get(v, []), dtype=np.int64)
                               for v in rows],
            ))

        steps.append(_StepPlan(factors=factor_steps, nodes=node_steps))
        last_seen[present] = t

    return RolloutPlan(total_steps=total, n_obs=window.n_obs,
                       n_slots=len(slot_of), steps=steps)


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


@dataclass
class _FactorCache:
    plan: _FactorStep
    emb_cache: tuple
    lstm_cache: tuple


@dataclass
class _NodeCache:
    plan: _NodeStep
    ex_cache: tuple
    attn_caches: list
    eh_cache: tuple
    lstm_cache: tuple
    head_cache: Optional[tuple] = None
    loss_rows: Optional[np.ndarray] = None
    loss_weights: Optional[np.ndarray] = None
    nll_cache: Optional[tuple] = None


@dataclass
class _StepCache:
    factors: list[_FactorCache]
    nodes: list[_NodeCache]


@dataclass
class RolloutResult:
    """Per-agent Gaussian outputs over the prediction horizon.

    ``mu`` holds the raw head means (positions in position mode, per-step
    displacements in velocity mode); ``positions`` is always the mean
    predicted position track.  Rows of agents with no outputs (absent when
    the graph froze) are NaN.  Everything is in standardized coordinates.
    """

    agent_ids: list[int]
    agent_types: np.ndarray
    predicted: np.ndarray          # (n_agents,) bool
    mu: np.ndarray                 # (n_agents, n_pred, 2)
    sigma: np.ndarray              # (n_agents, n_pred, 2)
    rho: np.ndarray                # (n_agents, n_pred)
    positions: np.ndarray          # (n_agents, n_pred, 2)
    robot_plan: np.ndarray         # (n_controlled, total, 2)
    n_obs: int
    n_pred: int
    dt: float


@dataclass
class ForwardOutput:
    rollout: RolloutResult
    loss: Optional[float] = None
    n_loss_terms: int = 0
    step_caches: Optional[list[_StepCache]] = None
    plan: Optional[RolloutPlan] = None


def _prepared_buffers(window: SequenceWindow, config: ModelConfig,
                      robot_path_override: Optional[np.ndarray],
                      teacher_forcing: bool) -> tuple[np.ndarray, np.ndarray]:
    buf = window.positions.astype(np.float64).copy()
    plan_xy = window.robot_xy.astype(np.float64).copy()
    if robot_path_override is not None:
        override = np.asarray(robot_path_override, dtype=np.float64)
        if override.shape != (window.n_pred, 2):
            raise ValueError(
                f"robot path override must have shape ({window.n_pred}, 2), "
                f"got {override.shape}")
        if not np.all(np.isfinite(override)):
            raise ValueError("robot path override contains non-finite values")
        plan_xy[0, window.n_obs:] = override
    if teacher_forcing:
        # Keep ground truth where it exists; carry the last known position
        # forward for agents the frozen graph keeps alive past their data.
        for t in range(1, window.total_steps):
            hole = ~np.isfinite(buf[:, t, 0]) & np.isfinite(buf[:, t - 1, 0])
            if t >= window.n_obs and np.any(hole):
                buf[hole, t] = buf[hole, t - 1]
    return buf, plan_xy


def forward_window(window: SequenceWindow,
                   graph: UnrolledGraph,
                   params: ParameterSet,
                   config: ModelConfig,
                   mode: str = "infer",
                   robot_path_override: Optional[np.ndarray] = None,
                   *,
                   teacher_forcing: bool = True,
                   sample: bool = False,
                   rng: Optional[np.random.Generator] = None,
                   plan: Optional[RolloutPlan] = None,
                   keep_caches: bool = False) -> ForwardOutput:
    """Run one window through the model.

    mode="train" computes the masked sequence loss against ground truth
    (teacher forcing by default) and can retain caches for the backward
    pass; mode="infer" rolls the model forward autoregressively, feeding
    back mean (or sampled) positions.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    training = mode == "train"
    feed_model = (not training) or (not teacher_forcing)
    if sample and rng is None:
        rng = np.random.default_rng(0)
    if plan is None:
        plan = build_plan(window, graph)

    n_obs, n_pred = window.n_obs, window.n_pred
    n_agents = window.n_agents
    buf, plan_xy = _prepared_buffers(
        window, config, robot_path_override,
        teacher_forcing=training and teacher_forcing)

    edge_h = np.zeros((plan.n_slots, config.edge_hidden))
    edge_c = np.zeros_like(edge_h)
    node_h = np.zeros((n_agents, config.node_hidden))
    node_c = np.zeros_like(node_h)

    mu_all = np.full((n_agents, n_pred, 2), np.nan)
    sigma_all = np.full((n_agents, n_pred, 2), np.nan)
    rho_all = np.full((n_agents, n_pred), np.nan)
    pos_all = np.full((n_agents, n_pred, 2), np.nan)
    predicted = np.zeros(n_agents, dtype=bool)

    velocity_mode = config.loss.mode == "velocity"
    loss_total = 0.0
    n_terms = 0
    step_caches: list[_StepCache] = [] if (training or keep_caches) else None

    for t in range(window.total_steps - 1):
        sp = plan.steps[t]
        fcaches = []
        for fs in sp.factors:
            n = len(fs.slots)
            feats = np.empty((n, 2))
            if fs.n_aa:
                feats[:fs.n_aa] = buf[fs.aa_from, t] - buf[fs.aa_to, t]
            if fs.n_ar:
                sl = slice(fs.n_aa, fs.n_aa + fs.n_ar)
                feats[sl] = buf[fs.ar_from, t] - plan_xy[fs.ar_robot, t + 1]
            if fs.n_tp:
                sl = slice(fs.n_aa + fs.n_ar, n)
                prev = np.maximum(fs.tp_prev, 0)
                disp = buf[fs.tp_node, t] - buf[fs.tp_node, prev]
                disp[fs.tp_prev < 0] = 0.0
                feats[sl] = disp
            ka, kb = fs.factor
            pre = f"edge.{ka}-{kb}"
            emb, emb_cache = embed(feats, params[f"{pre}.embed.w"],
                                   params[f"{pre}.embed.b"])
            h, c, lstm_cache = lstm_step(
                emb, edge_h[fs.slots], edge_c[fs.slots],
                params[f"{pre}.lstm.wx"], params[f"{pre}.lstm.wh"],
                params[f"{pre}.lstm.b"])
            edge_h[fs.slots] = h
            edge_c[fs.slots] = c
            fcaches.append(_FactorCache(fs, emb_cache, lstm_cache))

        ncaches = []
        for ns in sp.nodes:
            rows = ns.rows
            n = len(rows)
            pre = f"node.{ns.agent_type}"
            ex, ex_cache = embed(buf[rows, t], params[f"{pre}.pos_embed.w"],
                                 params[f"{pre}.pos_embed.b"])
            # Fancy indexing copies the rows; scalar indexing would hand the
            # attention cache live views that later steps overwrite.
            h_t_rows = edge_h[ns.temporal_slot]
            pooled = np.zeros((n, config.edge_hidden))
            attn_caches = []
            for j in range(n):
                out, ac = attention(
                    h_t_rows[j],
                    edge_h[ns.spatial_slots[j]],
                    params["attn.temporal.w"], params["attn.spatial.w"],
                    scale=config.attention_scale)
                pooled[j] = out
                attn_caches.append(ac)
            concat_in = np.concatenate([h_t_rows, pooled], axis=1)
            eh, eh_cache = embed(concat_in, params[f"{pre}.edge_embed.w"],
                                 params[f"{pre}.edge_embed.b"])
            lstm_in = np.concatenate([ex, eh], axis=1)
            h, c, lstm_cache = lstm_step(
                lstm_in, node_h[rows], node_c[rows],
                params[f"{pre}.lstm.wx"], params[f"{pre}.lstm.wh"],
                params[f"{pre}.lstm.b"])
            node_h[rows] = h
            node_c[rows] = c
            nc = _NodeCache(ns, ex_cache, attn_caches, eh_cache, lstm_cache)

            if t + 1 >= n_obs:
                gp, head_cache = gaussian_head(h, params[f"{pre}.out.w"],
                                               params[f"{pre}.out.b"])
                nc.head_cache = head_cache
                s = t + 1 - n_obs
                mu_all[rows, s] = gp.mu
                sigma_all[rows, s] = gp.sigma
                rho_all[rows, s] = gp.rho
                predicted[rows] = True
                if velocity_mode:
                    pos_all[rows, s] = buf[rows, t] + gp.mu
                else:
                    pos_all[rows, s] = gp.mu

                if training:
                    gt_next = window.positions[rows, t + 1]
                    included = (window.presence[rows, t + 1]
                                & ~window.loss_excluded[rows])
                    if velocity_mode:
                        included &= window.presence[rows, t]
                        # The target is the displacement that reaches the
                        # true next position from the step's input state.
                        # Under teacher forcing that input is the true
                        # previous position; under model feedback it is the
                        # fed-back mean, so rollout-mode training learns to
                        # pull drifted trajectories back on track instead of
                        # letting one-step errors accumulate unchecked.
                        target = gt_next - buf[rows, t]
                    else:
                        target = gt_next
                    loss_rows = np.flatnonzero(included)
                    if loss_rows.size:
                        tgt = target[loss_rows]
                        if velocity_mode:
                            weights = stationarity_alpha(
                                tgt * config.stats.std, config.dt,
                                config.loss)
                        else:
                            weights = np.ones(loss_rows.size)
                        sub = GaussianParams(mu=gp.mu[loss_rows],
                                             sigma=gp.sigma[loss_rows],
                                             rho=gp.rho[loss_rows])
                        vals, nll_cache = nll(sub, tgt)
                        loss_total += float(np.sum(weights * vals))
                        n_terms += loss_rows.size
                        nc.loss_rows = loss_rows
                        nc.loss_weights = weights
                        nc.nll_cache = nll_cache

                if feed_model:
                    if sample:
                        z = rng.standard_normal((n, 2))
                        dx = gp.mu[:, 0] + gp.sigma[:, 0] * z[:, 0]
                        dy = (gp.mu[:, 1] + gp.sigma[:, 1]
                              * (gp.rho * z[:, 0]
                                 + np.sqrt(1.0 - gp.rho ** 2) * z[:, 1]))
                        value = np.stack([dx, dy], axis=1)
                    else:
                        value = gp.mu
                    if velocity_mode:
                        buf[rows, t + 1] = buf[rows, t] + value
                    else:
                        buf[rows, t + 1] = value
            ncaches.append(nc)

        if step_caches is not None:
            step_caches.append(_StepCache(fcaches, ncaches))

    if training and n_terms == 0:
        raise ValueError("window contributes no loss terms: every agent is "
                         "either absent or excluded over the horizon")

    rollout = RolloutResult(
        agent_ids=list(window.agent_ids),
        agent_types=window.agent_types.copy(),
        predicted=predicted,
        mu=mu_all, sigma=sigma_all, rho=rho_all, positions=pos_all,
        robot_plan=plan_xy, n_obs=n_obs, n_pred=n_pred, dt=config.dt)
    return ForwardOutput(rollout=rollout,
                         loss=loss_total if training else None,
                         n_loss_terms=n_terms,
                         step_caches=step_caches, plan=plan)


def backward_window(window: SequenceWindow,
                    params: ParameterSet,
                    config: ModelConfig,
                    fwd: ForwardOutput) -> dict[str, np.ndarray]:
    """Accumulate d(loss)/d(params) by replaying the cached forward pass."""
    if fwd.step_caches is None:
        raise ValueError("forward pass was run without caches")
    plan = fwd.plan
    grads = params.zero_grads()
    d_edge_h = np.zeros((plan.n_slots, config.edge_hidden))
    d_edge_c = np.zeros_like(d_edge_h)
    d_node_h = np.zeros((window.n_agents, config.node_hidden))
    d_node_c = np.zeros_like(d_node_h)

    for t in reversed(range(window.total_steps - 1)):
        sc = fwd.step_caches[t]
        for nc in reversed(sc.nodes):
            ns = nc.plan
            rows = ns.rows
            n = len(rows)
            pre = f"node.{ns.agent_type}"
            d_h = d_node_h[rows].copy()
            d_c = d_node_c[rows].copy()

            if nc.nll_cache is not None:
                d_mu_s, d_sigma_s, d_rho_s = nll_backward(nc.loss_weights,
                                                          nc.nll_cache)
                d_mu = np.zeros((n, 2))
                d_sigma = np.zeros((n, 2))
                d_rho = np.zeros(n)
                d_mu[nc.loss_rows] = d_mu_s
                d_sigma[nc.loss_rows] = d_sigma_s
                d_rho[nc.loss_rows] = d_rho_s
                d_h_head, d_w, d_b = gaussian_head_backward(
                    d_mu, d_sigma, d_rho, nc.head_cache)
                grads[f"{pre}.out.w"] += d_w
                grads[f"{pre}.out.b"] += d_b
                d_h += d_h_head

            (d_in, d_h_prev, d_c_prev,
             d_wx, d_wh, d_b) = lstm_step_backward(d_h, d_c, nc.lstm_cache)
            grads[f"{pre}.lstm.wx"] += d_wx
            grads[f"{pre}.lstm.wh"] += d_wh
            grads[f"{pre}.lstm.b"] += d_b
            d_node_h[rows] = d_h_prev
            d_node_c[rows] = d_c_prev

            d_ex = d_in[:, :config.embed_dim]
            d_eh = d_in[:, config.embed_dim:]
            _, d_w, d_b = embed_backward(d_ex, nc.ex_cache)
            grads[f"{pre}.pos_embed.w"] += d_w
            grads[f"{pre}.pos_embed.b"] += d_b
            d_concat, d_w, d_b = embed_backward(d_eh, nc.eh_cache)
            grads[f"{pre}.edge_embed.w"] += d_w
            grads[f"{pre}.edge_embed.b"] += d_b

            d_ht = d_concat[:, :config.edge_hidden].copy()
            d_pool = d_concat[:, config.edge_hidden:]
            for j in range(n):
                ac = nc.attn_caches[j]
                if ac is None:
                    continue
                d_ht_j, d_hs_j, d_wt, d_ws = attention_backward(d_pool[j], ac)
                grads["attn.temporal.w"] += d_wt
                grads["attn.spatial.w"] += d_ws
                d_ht[j] += d_ht_j
                d_edge_h[ns.spatial_slots[j]] += d_hs_j
            d_edge_h[ns.temporal_slot] += d_ht

        for fc in reversed(sc.factors):
            fs = fc.plan
            ka, kb = fs.factor
            pre = f"edge.{ka}-{kb}"
            (d_emb, d_h_prev, d_c_prev,
             d_wx, d_wh, d_b) = lstm_step_backward(
                d_edge_h[fs.slots].copy(), d_edge_c[fs.slots].copy(),
                fc.lstm_cache)
            grads[f"{pre}.lstm.wx"] += d_wx
            grads[f"{pre}.lstm.wh"] += d_wh
            grads[f"{pre}.lstm.b"] += d_b
            d_edge_h[fs.slots] = d_h_prev
            d_edge_c[fs.slots] = d_c_prev
            _, d_w, d_b = embed_backward(d_emb, fc.emb_cache)
            grads[f"{pre}.embed.w"] += d_w
            grads[f"{pre}.embed.b"] += d_b

    return grads


def loss_and_grads(window: SequenceWindow,
                   graph: UnrolledGraph,
                   params: ParameterSet,
                   config: ModelConfig,
                   *,
                   teacher_forcing: bool = True,
                   sample: bool = False,
                   rng: Optional[np.random.Generator] = None,
                   plan: Optional[RolloutPlan] = None,
                   ) -> tuple[float, int, dict[str, np.ndarray]]:
    """Training loss (summed over terms) and parameter gradients."""
    fwd = forward_window(window, graph, params, config, mode="train",
                         teacher_forcing=teacher_forcing, sample=sample,
                         rng=rng, plan=plan)
    grads = backward_window(window, params, config, fwd)
    return fwd.loss, fwd.n_loss_terms, grads


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: ParameterSet          # final
    best_params: ParameterSet
    best_epoch: int
    history: list[dict] = field(default_factory=list)


def train(train_windows: list[SequenceWindow],
          val_windows: list[SequenceWindow],
          config: ModelConfig,
          train_config: Optional[TrainConfig] = None,
          params: Optional[ParameterSet] = None,
          on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Mini-batch Adam training with per-epoch learning-rate decay.

    Gradients are averaged within each batch, clipped by global norm, then
    applied.  The best parameters by validation loss (training loss when no
    validation windows exist) are kept alongside the final ones.
    """
    tc = train_config or TrainConfig()
    if not train_windows:
        raise ValueError("no training windows")
    if params is None:
        params = init_response_params(
            config.k_types, edge_hidden=config.edge_hidden,
            node_hidden=config.node_hidden, embed_dim=config.embed_dim,
            attn_dim=config.attn_dim, seed=tc.seed)
    rng = np.random.default_rng(tc.seed)

    prepared = []
    for w in train_windows:
        g = build_graph(w)
        prepared.append((w, g, build_plan(w, g)))
    prepared_val = []
    for w in val_windows:
        g = build_graph(w)
        prepared_val.append((w, g, build_plan(w, g)))

    state = AdamState.for_params(params)
    best_loss = np.inf
    best_params = params.copy()
    best_epoch = 0
    history: list[dict] = []

    for epoch in range(tc.epochs):
        lr = tc.lr * (tc.lr_decay ** epoch)
        order = rng.permutation(len(prepared))
        epoch_loss = 0.0
        epoch_terms = 0
        for start in range(0, len(order), tc.batch_size):
            batch = order[start:start + tc.batch_size]
            grads = params.zero_grads()
            for idx in batch:
                w, g, pl = prepared[idx]
                loss, n_terms, gw = loss_and_grads(
                    w, g, params, config,
                    teacher_forcing=tc.teacher_forcing, plan=pl)
                if not np.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss {loss} at epoch {epoch}, "
                        f"window {idx} ({w.recording_id}@{w.start_frame})",
                        epoch=epoch, window_index=int(idx))
                epoch_loss += loss
                epoch_terms += n_terms
                for k in gw:
                    grads[k] += gw[k]
            inv = 1.0 / len(batch)
            for k in grads:
                grads[k] *= inv
            adam_step(params, grads, state, lr=lr, max_norm=tc.grad_clip)

        train_per_term = epoch_loss / max(epoch_terms, 1)
        val_per_term = None
        if prepared_val:
            v_loss = 0.0
            v_terms = 0
            for w, g, pl in prepared_val:
                # Score validation under the training feedback mode (mean
                # feedback when not teacher forcing) so model selection
                # tracks rollout quality, not just one-step fit.
                fwd = forward_window(w, g, params, config, mode="train",
                                     teacher_forcing=tc.teacher_forcing,
                                     plan=pl)
                v_loss += fwd.loss
                v_terms += fwd.n_loss_terms
            val_per_term = v_loss / max(v_terms, 1)
            if not np.isfinite(val_per_term):
                raise TrainingDiverged(
                    f"non-finite validation loss at epoch {epoch}",
                    epoch=epoch, window_index=-1)
        monitored = val_per_term if val_per_term is not None else train_per_term
        if monitored < best_loss:
            best_loss = monitored
            best_params = params.copy()
            best_epoch = epoch
        entry = {"epoch": epoch, "lr": lr,
                 "train_loss": train_per_term, "val_loss": val_per_term,
                 "skipped_steps": state.skipped_steps}
        history.append(entry)
        if on_epoch is not None:
            on_epoch(entry)

    return TrainResult(params=params, best_params=best_params,
                       best_epoch=best_epoch, history=history)


# ---------------------------------------------------------------------------
# Gradient verification on a small synthetic window
# ---------------------------------------------------------------------------


def make_toy_window(n_agents: int = 2, n_obs: int = 4, n_pred: int = 2,
                    k_types: int = 2, seed: int = 0,
                    dt: float = 1.0 / 15.0) -> SequenceWindow:
    """A fully-present random window: smooth agent tracks plus one machine."""
    rng = np.random.default_rng(seed)
    total = n_obs + n_pred
    positions = np.empty((n_agents, total, 2))
    for i in range(n_agents):
        start = rng.uniform(-1.0, 1.0, size=2)
        vel = rng.uniform(-0.08, 0.08, size=2)
        wiggle = rng.normal(0.0, 0.01, size=(total, 2)).cumsum(axis=0)
        positions[i] = start + np.arange(total)[:, None] * vel + wiggle
    robot = (rng.uniform(-1.0, 1.0, size=2)
             + np.arange(total)[:, None] * rng.uniform(-0.1, 0.1, size=2))
    agent_types = np.arange(n_agents, dtype=np.int64) % max(k_types - 1, 1)
    return SequenceWindow(
        n_obs=n_obs, n_pred=n_pred, dt=dt,
        agent_ids=list(range(1, n_agents + 1)),
        agent_types=agent_types,
        positions=positions,
        presence=np.ones((n_agents, total), dtype=bool),
        loss_excluded=np.zeros(n_agents, dtype=bool),
        robot_ids=[100],
        robot_types=np.asarray([k_types - 1], dtype=np.int64),
        robot_xy=robot[None, :, :],
        recording_id="toy", start_frame=0)


def run_model_gradcheck(loss_mode: str = "velocity", seed: int = 0,
                        n_coords: int = 200, step: float = 1e-5):
    """Finite-difference check of the full training loss on a toy window."""
    from .neural.gradcheck import grad_check
    from .neural.losses import LossConfig

    window = make_toy_window(n_agents=2, n_obs=4, n_pred=2, k_types=2,
                             seed=seed)
    config = ModelConfig(type_labels=["walker", "machine"], n_obs=4, n_pred=2,
                         loss=LossConfig(mode=loss_mode))
    params = init_response_params(config.k_types, seed=seed)
    graph = build_graph(window)
    plan = build_plan(window, graph)

    def loss_fn(p: ParameterSet) -> tuple[float, dict]:
        fwd = forward_window(window, graph, p, config, mode="train",
                             plan=plan)
        grads = backward_window(window, p, config, fwd)
        return fwd.loss, grads

    return grad_check(loss_fn, params, n_coords=n_coords, step=step,
                      seed=seed)


# ---------------------------------------------------------------------------
# What-if rollouts
# ---------------------------------------------------------------------------


def simulate_whatif(window: SequenceWindow,
                    params: ParameterSet,
                    config: ModelConfig,
                    candidate_paths: list[np.ndarray],
                    *,
                    sample: bool = False,
                    seed: int = 0) -> list[RolloutResult]:
    """Roll the model forward once per candidate robot path.

    Candidates are standardized (n_pred, 2) position tracks substituted for
    the controlled agent's planned future; observed history is shared, so
    differences between results isolate the response to the robot's plan.
    """
    graph = build_graph(window)
    plan = build_plan(window, graph)
    results = []
    for i, cand in enumerate(candidate_paths):
        rng = np.random.default_rng([seed, i]) if sample else None
        out = forward_window(window, graph, params, config, mode="infer",
                             robot_path_override=cand, sample=sample,
                             rng=rng, plan=plan)
        results.append(out.rollout)
    return results
