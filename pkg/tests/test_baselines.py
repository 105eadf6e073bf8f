"""Baselines: kinematic extrapolation and the encoder-decoder predictor."""

import math

import numpy as np
import pytest

from conftest import make_window
from trajresponse.baselines import (
    RedConfig,
    ctrv_predict,
    red_forward,
    red_loss_and_grads,
    red_predict,
    red_train,
)
from trajresponse.configs import TrainConfig
from trajresponse.neural.gradcheck import grad_check
from trajresponse.neural.params import init_red_params
from trajresponse.trajdata import StandardizationStats


def _line_window(n_obs=8, n_pred=12, vel=(1.0, 0.0), start=(0.0, 0.0)):
    T = n_obs + n_pred
    t = np.arange(T)[:, None]
    pos = np.asarray(start) + t * np.asarray(vel)
    return make_window(pos[None], np.zeros((T, 2)), n_obs, n_pred)


def _circle_window(n_obs=8, n_pred=12, radius=2.0, step_angle=2 * np.pi / 48,
                   phase=0.3, center=(1.0, -0.5)):
    T = n_obs + n_pred
    ang = phase + step_angle * np.arange(T)
    pos = np.asarray(center) + radius * np.stack([np.cos(ang), np.sin(ang)],
                                                 axis=1)
    return make_window(pos[None], np.zeros((T, 2)), n_obs, n_pred), pos


class TestCtrv:
    def test_straight_line_is_exact(self, identity_stats):
        w = _line_window(vel=(1.0, 0.0), start=(5.0, 2.0))
        pred = ctrv_predict(w, identity_stats)
        np.testing.assert_allclose(pred[0], w.ground_truth()[0], atol=1e-9)

    def test_uniform_circular_motion_stays_on_circle(self, identity_stats):
        # Chord headings advance by a constant angle, so the extrapolation
        # continues the chord polygon of the same circle: every predicted
        # point must coincide with the closed-form circle continuation.
        w, pos = _circle_window()
        pred = ctrv_predict(w, identity_stats)
        np.testing.assert_allclose(pred[0], pos[w.n_obs:], atol=1e-6)
        radii = np.linalg.norm(pred[0] - np.array([1.0, -0.5]), axis=1)
        np.testing.assert_allclose(radii, 2.0, atol=1e-6)

    def test_stationary_history_holds_position(self, identity_stats):
        T = 20
        pos = np.tile([3.0, 4.0], (1, T, 1))
        w = make_window(pos, np.zeros((T, 2)), n_obs=8, n_pred=12)
        pred = ctrv_predict(w, identity_stats)
        np.testing.assert_allclose(pred[0], np.tile([3.0, 4.0], (12, 1)),
                                   atol=1e-12)

    def test_single_observation_holds_position(self, identity_stats):
        T = 6
        pos = np.full((1, T, 2), np.nan)
        pos[0, 2] = [1.5, -1.0]
        presence = np.zeros((1, T), dtype=bool)
        presence[0, 2] = True
        w = make_window(pos, np.zeros((T, 2)), n_obs=4, n_pred=2,
                        presence=presence)
        pred = ctrv_predict(w, identity_stats)
        np.testing.assert_allclose(pred[0], np.tile([1.5, -1.0], (2, 1)),
                                   atol=1e-12)

    def test_never_observed_agent_is_nan(self, identity_stats):
        T = 6
        pos = np.zeros((2, T, 2))
        pos[1] = np.nan
        presence = np.ones((2, T), dtype=bool)
        presence[1] = False
        w = make_window(pos, np.zeros((T, 2)), n_obs=4, n_pred=2,
                        presence=presence)
        pred = ctrv_predict(w, identity_stats)
        assert np.isnan(pred[1]).all()
        assert np.isfinite(pred[0]).all()

    def test_gaps_use_consecutive_differences_only(self, identity_stats):
        # A hole in the track must not fabricate a huge velocity from the
        # jump across it; line continuation stays exact.
        n_obs, n_pred = 8, 4
        T = n_obs + n_pred
        t = np.arange(T, dtype=float)
        pos = np.stack([0.5 * t, -0.25 * t], axis=1)[None].copy()
        presence = np.ones((1, T), dtype=bool)
        presence[0, 3:5] = False
        pos[0, 3:5] = np.nan
        w = make_window(pos, np.zeros((T, 2)), n_obs, n_pred,
                        presence=presence)
        pred = ctrv_predict(w, identity_stats)
        want = np.stack([0.5 * t[n_obs:], -0.25 * t[n_obs:]], axis=1)
        np.testing.assert_allclose(pred[0], want, atol=1e-9)

    def test_prediction_happens_in_world_coordinates(self):
        # Anisotropic standardization must not bend the predicted turn: the
        # de-standardized prediction of a standardized circle equals the
        # world-space circle continuation.
        stats = StandardizationStats(3.0, -2.0, 2.0, 0.5)
        w, world = _circle_window()
        std_pos = (world - [3.0, -2.0]) / [2.0, 0.5]
        w_std = make_window(std_pos[None], np.zeros((len(world), 2)),
                            w.n_obs, w.n_pred)
        pred_std = ctrv_predict(w_std, stats)
        pred_world = pred_std[0] * [2.0, 0.5] + [3.0, -2.0]
        np.testing.assert_allclose(pred_world, world[w.n_obs:], atol=1e-6)

    def test_rotation_equivariance(self, identity_stats):
        w, _ = _circle_window()
        a = math.radians(37.0)
        rot = np.array([[math.cos(a), -math.sin(a)],
                        [math.sin(a), math.cos(a)]])
        rotated = make_window((w.positions[0] @ rot.T)[None],
                              np.zeros((w.total_steps, 2)), w.n_obs, w.n_pred)
        pred = ctrv_predict(w, identity_stats)
        pred_rot = ctrv_predict(rotated, identity_stats)
        np.testing.assert_allclose(pred_rot[0], pred[0] @ rot.T, atol=1e-9)

    def test_translation_equivariance(self, identity_stats):
        w, _ = _circle_window()
        shift = np.array([10.0, -4.0])
        moved = make_window(w.positions[0][None] + shift,
                            np.zeros((w.total_steps, 2)), w.n_obs, w.n_pred)
        pred = ctrv_predict(w, identity_stats)
        pred_moved = ctrv_predict(moved, identity_stats)
        np.testing.assert_allclose(pred_moved[0], pred[0] + shift, atol=1e-9)

    def test_ignores_other_agents(self, identity_stats):
        w, pos = _circle_window()
        crowd = np.stack([pos, pos[::-1] + 3.0, pos * 0.5])
        w_crowd = make_window(crowd, np.zeros((len(pos), 2)), w.n_obs,
                              w.n_pred)
        np.testing.assert_allclose(ctrv_predict(w_crowd, identity_stats)[0],
                                   ctrv_predict(w, identity_stats)[0],
                                   atol=1e-12)


class TestRed:
    def _toy(self, n_agents=2, n_obs=6, n_pred=3, seed=0):
        r = np.random.default_rng(seed)
        T = n_obs + n_pred
        pos = (r.uniform(-1, 1, size=(n_agents, 1, 2))
               + np.arange(T)[None, :, None] * r.uniform(-0.05, 0.05,
                                                         size=(n_agents, 1, 2))
               + r.normal(0, 0.005, size=(n_agents, T, 2)))
        w = make_window(pos, np.zeros((T, 2)), n_obs, n_pred)
        cfg = RedConfig(n_obs=n_obs, n_pred=n_pred)
        return w, cfg

    def test_forward_shapes_and_feedback(self):
        w, cfg = self._toy()
        params = init_red_params(seed=0)
        fwd = red_forward(w, params, cfg)
        assert fwd.mu.shape == (2, 3, 2)
        assert (fwd.sigma > 0).all()
        start = w.positions[:, cfg.n_obs - 1]
        np.testing.assert_allclose(fwd.positions[:, 0], start + fwd.mu[:, 0],
                                   atol=1e-12)

    def test_unseen_agents_predict_nan(self):
        w, cfg = self._toy()
        pos = w.positions.copy()
        pos[1] = np.nan
        presence = w.presence.copy()
        presence[1] = False
        w2 = make_window(pos, np.zeros((w.total_steps, 2)), cfg.n_obs,
                         cfg.n_pred, presence=presence)
        pred = red_predict(w2, init_red_params(seed=0), cfg)
        assert np.isnan(pred[1]).all() and np.isfinite(pred[0]).all()

    def test_ignores_other_agents(self):
        w, cfg = self._toy(n_agents=3)
        params = init_red_params(seed=0)
        full = red_predict(w, params, cfg)
        solo = make_window(w.positions[:1], np.zeros((w.total_steps, 2)),
                           cfg.n_obs, cfg.n_pred)
        alone = red_predict(solo, params, cfg)
        np.testing.assert_allclose(full[0], alone[0], atol=1e-12)

    def test_gradients_match_finite_differences(self):
        w, cfg = self._toy()
        params = init_red_params(seed=0)

        def loss_fn(p):
            loss, _, grads = red_loss_and_grads(w, p, cfg)
            return loss, grads

        res = grad_check(loss_fn, params, n_coords=200, n_probes=6)
        assert res.max_rel_err < 1e-4

    def test_loss_term_count(self):
        w, cfg = self._toy()
        loss, n_terms, _ = red_loss_and_grads(w, init_red_params(seed=0), cfg)
        assert n_terms == 2 * cfg.n_pred
        assert np.isfinite(loss)

    def test_overfits_single_straight_track(self):
        n_obs, n_pred = 8, 4
        w = _line_window(n_obs=n_obs, n_pred=n_pred, vel=(0.05, -0.02))
        cfg = RedConfig(n_obs=n_obs, n_pred=n_pred)
        tc = TrainConfig(epochs=150, lr=0.01, lr_decay=0.99, batch_size=1,
                         seed=0)
        _, best, _, _ = red_train([w], [], cfg, tc)
        pred = red_predict(w, best, cfg)
        ade = float(np.linalg.norm(pred[0] - w.ground_truth()[0],
                                   axis=1).mean())
        assert ade < 0.02

    def test_training_is_deterministic(self):
        w, cfg = self._toy()
        tc = TrainConfig(epochs=3, batch_size=1, seed=0)
        final_a, _, _, hist_a = red_train([w], [], cfg, tc)
        final_b, _, _, hist_b = red_train([w], [], cfg, tc)
        for k in final_a.names():
            np.testing.assert_array_equal(final_a[k], final_b[k])
        assert hist_a == hist_b

    def test_manifest_round_trip(self):
        cfg = RedConfig(n_obs=20, n_pred=8, dt=0.1, hidden=32, embed_dim=16,
                        stats=StandardizationStats(1.0, 2.0, 3.0, 4.0))
        again = RedConfig.from_manifest(cfg.to_manifest())
        assert again == cfg
        assert cfg.to_manifest()["model"] == "red"
