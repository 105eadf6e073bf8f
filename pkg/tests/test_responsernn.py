"""End-to-end model: rollout plans, forward/backward, training, what-ifs."""

import numpy as np
import pytest

from conftest import make_window
from trajresponse.configs import ModelConfig, TrainConfig
from trajresponse.neural.gradcheck import grad_check
from trajresponse.neural.losses import LossConfig
from trajresponse.neural.params import init_response_params
from trajresponse.responsernn import (
    TrainingDiverged,
    backward_window,
    build_plan,
    forward_window,
    loss_and_grads,
    make_toy_window,
    run_model_gradcheck,
    simulate_whatif,
    train,
)
from trajresponse.stgraph import build_graph

LABELS = ["walker", "machine"]


def _toy_setup(loss_mode="velocity", seed=0, n_agents=2, n_obs=4, n_pred=2):
    window = make_toy_window(n_agents=n_agents, n_obs=n_obs, n_pred=n_pred,
                             k_types=2, seed=seed)
    config = ModelConfig(type_labels=LABELS, n_obs=n_obs, n_pred=n_pred,
                         loss=LossConfig(mode=loss_mode))
    params = init_response_params(config.k_types, seed=seed)
    graph = build_graph(window)
    return window, graph, params, config


# ---------------------------------------------------------------------------
# rollout plan


class TestPlan:
    def test_slot_count_is_number_of_edge_identities(self):
        window, graph, _, _ = _toy_setup()
        plan = build_plan(window, graph)
        # 2 agents + 1 machine: 2 agent-agent + 2 agent-machine spatial edge
        # identities plus 2 temporal ones.
        assert plan.n_slots == 6
        assert plan.total_steps == window.total_steps

    def test_every_present_edge_updated_exactly_once_per_step(self):
        window, graph, _, _ = _toy_setup(n_agents=3)
        plan = build_plan(window, graph)
        for t, step in enumerate(plan.steps):
            updated = np.concatenate([fs.slots for fs in step.factors]) \
                if step.factors else np.zeros(0, dtype=int)
            assert len(np.unique(updated)) == len(updated)
            want = len(graph.spatial_at[t]) + len(graph.temporal_at[t])
            assert len(updated) == want
            for fs in step.factors:
                assert fs.n_aa + fs.n_ar + fs.n_tp == len(fs.slots)

    def test_node_groups_cover_noncontrolled_nodes(self):
        window, graph, _, _ = _toy_setup(n_agents=3)
        plan = build_plan(window, graph)
        for t, step in enumerate(plan.steps):
            rows = sorted(int(r) for ns in step.nodes for r in ns.rows)
            want = sorted(i for i in graph.nodes_at[t]
                          if not graph.nodes[i].controlled)
            assert rows == want


# ---------------------------------------------------------------------------
# forward pass semantics


class TestForward:
    def test_output_shapes_and_ranges(self):
        window, graph, params, config = _toy_setup()
        out = forward_window(window, graph, params, config, mode="infer")
        r = out.rollout
        n, p = window.n_agents, window.n_pred
        assert r.mu.shape == (n, p, 2)
        assert r.sigma.shape == (n, p, 2)
        assert r.rho.shape == (n, p)
        assert r.positions.shape == (n, p, 2)
        assert r.predicted.all()
        assert (r.sigma > 0).all()
        assert (np.abs(r.rho) < 1).all()
        assert np.isfinite(r.positions).all()

    def test_position_mode_positions_equal_means(self):
        window, graph, params, config = _toy_setup(loss_mode="position")
        r = forward_window(window, graph, params, config, mode="infer").rollout
        np.testing.assert_array_equal(r.positions, r.mu)

    def test_velocity_mode_integrates_displacements(self):
        window, graph, params, config = _toy_setup(loss_mode="velocity")
        r = forward_window(window, graph, params, config, mode="infer").rollout
        start = window.positions[:, window.n_obs - 1]
        np.testing.assert_allclose(r.positions[:, 0], start + r.mu[:, 0],
                                   atol=1e-12)
        np.testing.assert_allclose(r.positions[:, 1],
                                   r.positions[:, 0] + r.mu[:, 1], atol=1e-12)

    def test_inference_is_deterministic(self):
        window, graph, params, config = _toy_setup()
        a = forward_window(window, graph, params, config, mode="infer").rollout
        b = forward_window(window, graph, params, config, mode="infer").rollout
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.sigma, b.sigma)

    def test_sampling_is_seeded(self):
        window, graph, params, config = _toy_setup()
        kw = dict(mode="infer", sample=True)
        a = forward_window(window, graph, params, config,
                           rng=np.random.default_rng(5), **kw).rollout
        b = forward_window(window, graph, params, config,
                           rng=np.random.default_rng(5), **kw).rollout
        c = forward_window(window, graph, params, config,
                           rng=np.random.default_rng(6), **kw).rollout
        np.testing.assert_array_equal(a.positions, b.positions)
        assert not np.allclose(a.positions, c.positions)

    def test_train_mode_counts_loss_terms(self):
        window, graph, params, config = _toy_setup()
        out = forward_window(window, graph, params, config, mode="train")
        assert out.n_loss_terms == window.n_agents * window.n_pred
        assert np.isfinite(out.loss)

    def test_excluded_agent_contributes_no_loss_terms(self):
        window, graph, params, config = _toy_setup()
        window.loss_excluded[1] = True
        out = forward_window(window, graph, params, config, mode="train")
        assert out.n_loss_terms == window.n_pred

    def test_agent_absent_at_freeze_is_not_predicted(self):
        n_obs, n_pred = 4, 2
        T = n_obs + n_pred
        pos = np.random.default_rng(0).normal(size=(2, T, 2)) * 0.1
        presence = np.ones((2, T), dtype=bool)
        presence[1, n_obs - 1:] = False
        pos[1, n_obs - 1:] = np.nan
        window = make_window(pos, np.zeros((T, 2)), n_obs, n_pred,
                             presence=presence)
        config = ModelConfig(type_labels=LABELS, n_obs=n_obs, n_pred=n_pred)
        params = init_response_params(2, seed=0)
        r = forward_window(window, build_graph(window), params, config,
                           mode="infer").rollout
        assert r.predicted[0] and not r.predicted[1]
        assert np.isnan(r.positions[1]).all()
        assert np.isfinite(r.positions[0]).all()

    def test_invalid_mode_rejected(self):
        window, graph, params, config = _toy_setup()
        with pytest.raises(ValueError, match="mode"):
            forward_window(window, graph, params, config, mode="test")

    def test_override_shape_validated(self):
        window, graph, params, config = _toy_setup()
        with pytest.raises(ValueError, match="shape"):
            forward_window(window, graph, params, config, mode="infer",
                           robot_path_override=np.zeros((3, 2)))
        with pytest.raises(ValueError, match="non-finite"):
            forward_window(window, graph, params, config, mode="infer",
                           robot_path_override=np.full((2, 2), np.nan))

    def test_robot_override_changes_predictions(self):
        window, graph, params, config = _toy_setup()
        base = forward_window(window, graph, params, config,
                              mode="infer").rollout
        shoved = forward_window(
            window, graph, params, config, mode="infer",
            robot_path_override=window.robot_future() + 2.0).rollout
        assert not np.allclose(base.positions, shoved.positions)


# ---------------------------------------------------------------------------
# gradients


class TestGradients:
    @pytest.mark.parametrize("mode", ["position", "velocity"])
    def test_full_model_gradcheck(self, mode):
        res = run_model_gradcheck(loss_mode=mode, seed=0)
        assert res.max_rel_err < 1e-4

    def test_sign_flipped_backward_fails_loudly(self):
        # Corrupting the backward pass must blow the check up: guards against
        # a gradcheck that would accept anything.
        window, graph, params, config = _toy_setup()
        plan = build_plan(window, graph)

        def corrupted(p):
            fwd = forward_window(window, graph, p, config, mode="train",
                                 plan=plan)
            grads = backward_window(window, p, config, fwd)
            return fwd.loss, {k: -g for k, g in grads.items()}

        res = grad_check(corrupted, params, n_coords=200, n_probes=4)
        assert res.max_rel_err > 0.1

    def test_loss_and_grads_covers_every_parameter(self):
        window, graph, params, config = _toy_setup()
        loss, n_terms, grads = loss_and_grads(window, graph, params, config)
        assert set(grads) == set(params.names())
        assert n_terms > 0
        # Factors with no live edges (machine-origin pairs) stay at zero.
        assert all(np.isfinite(g).all() for g in grads.values())


# ---------------------------------------------------------------------------
# training loop


class TestTrain:
    def _small_config(self, epochs=5, **kw):
        config = ModelConfig(type_labels=LABELS, n_obs=4, n_pred=2)
        tc = TrainConfig(epochs=epochs, batch_size=2, seed=0, **kw)
        return config, tc

    def test_loss_decreases_on_toy_data(self):
        windows = [make_toy_window(seed=s) for s in range(4)]
        config, tc = self._small_config(epochs=8)
        result = train(windows, [], config, tc)
        assert result.history[-1]["train_loss"] < result.history[0]["train_loss"]
        assert len(result.history) == 8

    def test_best_params_tracked_by_validation(self):
        windows = [make_toy_window(seed=s) for s in range(3)]
        config, tc = self._small_config(epochs=4)
        result = train(windows, [make_toy_window(seed=9)], config, tc)
        losses = [h["val_loss"] for h in result.history]
        assert result.best_epoch == int(np.argmin(losses))

    def test_training_is_bitwise_deterministic(self):
        windows = [make_toy_window(seed=s) for s in range(3)]
        config, tc = self._small_config(epochs=3)
        a = train(windows, [], config, tc)
        b = train(windows, [], config, tc)
        for k in a.params.names():
            np.testing.assert_array_equal(a.params[k], b.params[k])
        assert a.history == b.history

    def test_learning_rate_decays_per_epoch(self):
        windows = [make_toy_window(seed=0)]
        config, tc = self._small_config(epochs=3, lr=0.01, lr_decay=0.5)
        result = train(windows, [], config, tc)
        np.testing.assert_allclose([h["lr"] for h in result.history],
                                   [0.01, 0.005, 0.0025])

    def test_no_windows_rejected(self):
        config, tc = self._small_config()
        with pytest.raises(ValueError, match="no training windows"):
            train([], [], config, tc)

    def test_divergence_aborts_with_context(self):
        windows = [make_toy_window(seed=0)]
        config, tc = self._small_config(epochs=3)
        params = init_response_params(2, seed=0)
        params.arrays["node.0.out.w"] *= 1e30   # head explodes immediately
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            with pytest.raises(TrainingDiverged) as err:
                train(windows, [], config, tc, params=params)
        assert err.value.epoch == 0

    def test_sampled_feedback_training_runs(self):
        # teacher_forcing=False feeds sampled positions back through the
        # rollout; it must still produce finite losses and updates.
        windows = [make_toy_window(seed=s) for s in range(2)]
        config, tc = self._small_config(epochs=2, teacher_forcing=False)
        result = train(windows, [], config, tc)
        assert all(np.isfinite(h["train_loss"]) for h in result.history)


# ---------------------------------------------------------------------------
# what-if rollouts


class TestSimulateWhatif:
    def test_one_rollout_per_candidate(self):
        window, _, params, config = _toy_setup()
        cands = [window.robot_future(), window.robot_future() + 1.0]
        results = simulate_whatif(window, params, config, cands)
        assert len(results) == 2
        np.testing.assert_array_equal(results[0].robot_plan[0, window.n_obs:],
                                      cands[0])
        np.testing.assert_array_equal(results[1].robot_plan[0, window.n_obs:],
                                      cands[1])

    def test_identical_candidates_give_identical_rollouts(self):
        window, _, params, config = _toy_setup()
        cand = window.robot_future() + 0.5
        a, b = simulate_whatif(window, params, config, [cand, cand.copy()])
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.sigma, b.sigma)

    def test_candidates_change_the_response(self):
        window, _, params, config = _toy_setup()
        a, b = simulate_whatif(window, params, config,
                               [window.robot_future(),
                                window.robot_future()[::-1] + 3.0])
        assert not np.allclose(a.positions, b.positions)

    def test_sampled_rollouts_reproducible_by_seed(self):
        window, _, params, config = _toy_setup()
        cands = [window.robot_future(), window.robot_future() + 1.0]
        a = simulate_whatif(window, params, config, cands, sample=True, seed=3)
        b = simulate_whatif(window, params, config, cands, sample=True, seed=3)
        c = simulate_whatif(window, params, config, cands, sample=True, seed=4)
        np.testing.assert_array_equal(a[1].positions, b[1].positions)
        assert not np.allclose(a[1].positions, c[1].positions)
