"""Metrics, what-if diagnostics, and the experiment report pipeline."""

import json
import math

import numpy as np
import pytest
from conftest import make_window

from trajresponse.evalkit import (
    ErrorAccumulator,
    ade_fde,
    away_fraction,
    ctrv_predictor,
    evaluate,
    render_table,
    rollout_divergence,
    run_experiment,
    save_report,
    whatif_candidates,
)
from trajresponse.responsernn import RolloutResult
from trajresponse.trajdata import StandardizationStats, load_dataset


def _metric_window(gt_future, n_obs=2):
    """Window with one agent per row of gt_future and trivial observations."""
    gt_future = np.asarray(gt_future, dtype=float)
    n_agents, n_pred = gt_future.shape[0], gt_future.shape[1]
    obs = np.zeros((n_agents, n_obs, 2))
    positions = np.concatenate([obs, gt_future], axis=1)
    robot = np.zeros((n_obs + n_pred, 2))
    return make_window(positions, robot, n_obs, n_pred)


def _rollout(positions, robot_future, n_obs=2, predicted=None):
    positions = np.asarray(positions, dtype=float)
    n_agents, n_pred = positions.shape[0], positions.shape[1]
    if predicted is None:
        predicted = np.ones(n_agents, dtype=bool)
    robot_future = np.asarray(robot_future, dtype=float)
    plan = np.concatenate([np.zeros((n_obs, 2)), robot_future], axis=0)[None]
    return RolloutResult(
        agent_ids=list(range(1, n_agents + 1)),
        agent_types=np.zeros(n_agents, dtype=np.int64),
        predicted=np.asarray(predicted, dtype=bool),
        mu=positions.copy(), sigma=np.ones_like(positions),
        rho=np.zeros((n_agents, n_pred)), positions=positions,
        robot_plan=plan, n_obs=n_obs, n_pred=n_pred, dt=1.0 / 15.0)


class TestDisplacementErrors:
    def test_hand_computed_example(self, identity_stats):
        # pred (1,0),(2,0) vs truth (1,0),(2,1): errors 0 and 1 -> ADE 0.5,
        # final error -> FDE 1.0.
        w = _metric_window([[(1.0, 0.0), (2.0, 1.0)]])
        pred = np.array([[(1.0, 0.0), (2.0, 0.0)]])
        ade, fde = ade_fde(pred, w, identity_stats)
        assert ade == 0.5
        assert fde == 1.0

    def test_perfect_prediction_is_zero(self, identity_stats):
        gt = [[(1.0, 2.0), (3.0, -1.0), (0.5, 0.5)]]
        w = _metric_window(gt)
        ade, fde = ade_fde(np.asarray(gt), w, identity_stats)
        assert ade == 0.0 and fde == 0.0

    def test_single_step_horizon_fde_equals_ade(self, identity_stats):
        w = _metric_window([[(1.0, 1.0)], [(0.0, 3.0)]])
        pred = np.array([[(2.0, 1.0)], [(0.0, 1.0)]])
        ade, fde = ade_fde(pred, w, identity_stats)
        assert ade == fde == 1.5

    def test_matches_per_point_distance_oracle(self, identity_stats, rng):
        gt = rng.normal(size=(3, 4, 2))
        pred = gt + rng.normal(size=(3, 4, 2))
        w = _metric_window(gt)
        ade, fde = ade_fde(pred, w, identity_stats)
        dists = [math.dist(pred[i, t], gt[i, t])
                 for i in range(3) for t in range(4)]
        finals = [math.dist(pred[i, -1], gt[i, -1]) for i in range(3)]
        assert ade == pytest.approx(sum(dists) / 12, abs=1e-12)
        assert fde == pytest.approx(sum(finals) / 3, abs=1e-12)

    def test_prediction_shape_mismatch_rejected(self, identity_stats):
        w = _metric_window([[(1.0, 0.0), (2.0, 1.0)]])
        with pytest.raises(ValueError, match="predictions must be"):
            ade_fde(np.zeros((1, 3, 2)), w, identity_stats)

    def test_doubling_std_doubles_world_errors(self):
        gt = [[(1.0, 0.0), (2.0, 1.0)], [(0.0, 0.0), (1.0, 1.0)]]
        w = _metric_window(gt)
        pred = np.asarray(gt) + 0.25
        ade1, fde1 = ade_fde(pred, w, StandardizationStats(0, 0, 1, 1))
        ade2, fde2 = ade_fde(pred, w, StandardizationStats(0, 0, 2, 2))
        assert ade2 == pytest.approx(2 * ade1, abs=1e-12)
        assert fde2 == pytest.approx(2 * fde1, abs=1e-12)

    def test_absent_and_excluded_agents_ignored(self, identity_stats):
        gt = np.zeros((3, 2, 2))
        w = _metric_window(gt)
        w.presence[0, w.n_obs:] = False          # absent over the horizon
        w.positions[0, w.n_obs:] = np.nan
        w.loss_excluded[1] = True                 # tracked but not scored
        pred = np.full((3, 2, 2), 2.0)            # error 2*sqrt(2) everywhere
        pred[0] = 123.0                           # garbage must not leak
        pred[1] = -55.0
        ade, fde = ade_fde(pred, w, identity_stats)
        assert ade == pytest.approx(2 * math.sqrt(2), abs=1e-12)
        assert fde == pytest.approx(2 * math.sqrt(2), abs=1e-12)

    def test_fde_skips_agents_absent_at_final_step(self, identity_stats):
        gt = np.zeros((2, 3, 2))
        w = _metric_window(gt)
        w.presence[0, -1] = False
        w.positions[0, -1] = np.nan
        pred = np.zeros((2, 3, 2))
        pred[0] += 1.0                             # unit error on agent 0
        ade, fde = ade_fde(pred, w, identity_stats)
        # ADE: agent 0 contributes two steps of sqrt(2), agent 1 three zeros.
        assert ade == pytest.approx(2 * math.sqrt(2) / 5, abs=1e-12)
        assert fde == 0.0                          # only agent 1 ends present

    def test_nan_predictions_are_skipped_not_poisonous(self, identity_stats):
        gt = np.zeros((1, 2, 2))
        w = _metric_window(gt)
        pred = np.zeros((1, 2, 2))
        pred[0, 0] = np.nan
        pred[0, 1] = (3.0, 4.0)
        ade, fde = ade_fde(pred, w, identity_stats)
        assert ade == 5.0 and fde == 5.0

    def test_empty_accumulator_reports_nan(self):
        acc = ErrorAccumulator()
        assert math.isnan(acc.ade) and math.isnan(acc.fde)


class TestEvaluate:
    def _windows(self, n, rng):
        wins = []
        for _ in range(n):
            gt = rng.normal(size=(rng.integers(1, 4), 3, 2))
            wins.append(_metric_window(gt))
        return wins

    @staticmethod
    def _offset_predictor(w):
        return w.positions[:, w.n_obs:] + 0.5

    def test_weighting_is_per_agent_timestep(self, identity_stats):
        # One 1-agent window with unit errors and one 3-agent window with
        # 4 m errors: the mean must weight by agent-steps, (2*1 + 6*4) / 8,
        # not average the two window means.
        w1 = _metric_window(np.zeros((1, 2, 2)))
        w3 = _metric_window(np.zeros((3, 2, 2)))
        preds = {id(w1): np.zeros((1, 2, 2)) + np.array([1.0, 0.0]),
                 id(w3): np.zeros((3, 2, 2)) + np.array([4.0, 0.0])}
        r = evaluate([w1, w3], lambda w: preds[id(w)], identity_stats)
        assert r["ade_m"] == pytest.approx(26 / 8, abs=1e-12)
        assert r["n_ade_terms"] == 8 and r["n_fde_terms"] == 4
        r_rev = evaluate([w3, w1], lambda w: preds[id(w)], identity_stats)
        assert r_rev["ade_m"] == pytest.approx(r["ade_m"], abs=1e-15)

    def test_parallel_workers_match_serial(self, identity_stats, rng):
        wins = self._windows(12, rng)
        r1 = evaluate(wins, self._offset_predictor, identity_stats, workers=1)
        r4 = evaluate(wins, self._offset_predictor, identity_stats, workers=4)
        assert r4["ade_m"] == pytest.approx(r1["ade_m"], abs=1e-12)
        assert r4["fde_m"] == pytest.approx(r1["fde_m"], abs=1e-12)
        assert (r4["n_ade_terms"], r4["n_fde_terms"]) == \
               (r1["n_ade_terms"], r1["n_fde_terms"])

    def test_same_worker_count_is_reproducible(self, identity_stats, rng):
        wins = self._windows(10, rng)
        a = evaluate(wins, self._offset_predictor, identity_stats, workers=3)
        b = evaluate(wins, self._offset_predictor, identity_stats, workers=3)
        assert a["ade_m"] == b["ade_m"] and a["fde_m"] == b["fde_m"]

    def test_deterministic_mode_zeroes_timing(self, identity_stats, rng):
        wins = self._windows(3, rng)
        r = evaluate(wins, self._offset_predictor, identity_stats,
                     deterministic=True)
        assert r["ms_per_seq"] == 0.0


class TestWhatIfCandidates:
    def _window(self, agent_at, robot_at=(0.0, 0.0), n_obs=3, n_pred=4):
        total = n_obs + n_pred
        pos = np.tile(np.asarray(agent_at, float), (1, total, 1))
        robot = np.tile(np.asarray(robot_at, float), (total, 1))
        return make_window(pos, robot, n_obs, n_pred)

    def test_candidate_geometry(self, identity_stats):
        w = self._window((4.0, 0.0))
        cands = whatif_candidates(w, identity_stats, speed_mps=1.6)
        steps = np.arange(1, 5)[:, None] * (1.6 * w.dt)
        assert np.allclose(cands["near"], steps * np.array([1.0, 0.0]), atol=1e-12)
        assert np.allclose(cands["stationary"], 0.0, atol=1e-12)
        assert np.allclose(cands["far_a"], -steps * np.array([1.0, 0.0]), atol=1e-12)
        off = np.array([math.cos(math.pi / 6), math.sin(math.pi / 6)])
        assert np.allclose(cands["far_b"], -steps * off, atol=1e-12)
        assert all(v.shape == (4, 2) for v in cands.values())

    def test_candidates_are_standardized(self):
        stats = StandardizationStats(1.0, 2.0, 2.0, 3.0)
        w_world = self._window((4.0, 0.0))
        w = make_window((w_world.positions - stats.mean) / stats.std,
                        (w_world.robot_xy[0] - stats.mean) / stats.std,
                        w_world.n_obs, w_world.n_pred)
        cands = whatif_candidates(w, stats, speed_mps=1.6)
        steps = np.arange(1, 5)[:, None] * (1.6 * w.dt)
        world_near = steps * np.array([1.0, 0.0])
        assert np.allclose(cands["near"] * stats.std + stats.mean, world_near,
                           atol=1e-12)

    def test_coincident_centroid_uses_fallback_direction(self, identity_stats):
        w = self._window((0.0, 0.0))
        cands = whatif_candidates(w, identity_stats)
        d = np.diff(cands["near"], axis=0)
        assert np.allclose(d[:, 1], 0.0) and np.all(d[:, 0] > 0)

    def test_no_agents_present_rejected(self, identity_stats):
        w = self._window((4.0, 0.0))
        w.presence[:, w.n_obs - 1] = False
        with pytest.raises(ValueError, match="no agents present"):
            whatif_candidates(w, identity_stats)


class TestRolloutDiagnostics:
    def test_divergence_zero_for_identical_rollouts(self, identity_stats):
        a = _rollout(np.ones((2, 3, 2)), np.zeros((3, 2)))
        assert rollout_divergence(a, a, identity_stats) == 0.0

    def test_divergence_matches_hand_mean(self, identity_stats):
        a = _rollout([[(0.0, 0.0), (1.0, 0.0)]], np.zeros((2, 2)))
        b = _rollout([[(0.0, 1.0), (1.0, 2.0)]], np.zeros((2, 2)))
        assert rollout_divergence(a, b, identity_stats) == pytest.approx(1.5, abs=1e-12)

    def test_divergence_scales_with_std(self):
        a = _rollout([[(0.0, 0.0), (1.0, 0.0)]], np.zeros((2, 2)))
        b = _rollout([[(0.0, 1.0), (1.0, 2.0)]], np.zeros((2, 2)))
        stats = StandardizationStats(0.0, 0.0, 2.0, 2.0)
        assert rollout_divergence(a, b, stats) == pytest.approx(3.0, abs=1e-12)

    def test_divergence_without_common_agents_is_nan(self, identity_stats):
        a = _rollout(np.zeros((1, 2, 2)), np.zeros((2, 2)),
                     predicted=np.array([False]))
        assert math.isnan(rollout_divergence(a, a, identity_stats))

    def test_away_fraction_counts_outward_shifts(self, identity_stats):
        # Machine parked at the origin for the whole horizon; the agent sits
        # 1 m east in the far rollout (inside the 2 m radius) and the near
        # rollout shifts it further east -> every step counts as "away".
        far = _rollout(np.tile([1.0, 0.0], (1, 3, 1)), np.zeros((3, 2)))
        near = _rollout(np.tile([1.5, 0.0], (1, 3, 1)), np.zeros((3, 2)))
        n_away, n_close = away_fraction(near, far, identity_stats)
        assert (n_away, n_close) == (3, 3)

    def test_away_fraction_counts_inward_shifts_as_zero(self, identity_stats):
        far = _rollout(np.tile([1.0, 0.0], (1, 3, 1)), np.zeros((3, 2)))
        near = _rollout(np.tile([0.5, 0.0], (1, 3, 1)), np.zeros((3, 2)))
        n_away, n_close = away_fraction(near, far, identity_stats)
        assert (n_away, n_close) == (0, 3)

    def test_away_fraction_ignores_agents_outside_radius(self, identity_stats):
        far = _rollout(np.tile([5.0, 0.0], (1, 3, 1)), np.zeros((3, 2)))
        near = _rollout(np.tile([6.0, 0.0], (1, 3, 1)), np.zeros((3, 2)))
        assert away_fraction(near, far, identity_stats) == (0, 0)

    def test_away_fraction_ignores_unpredicted_agents(self, identity_stats):
        far = _rollout(np.tile([1.0, 0.0], (1, 3, 1)), np.zeros((3, 2)),
                       predicted=np.array([False]))
        near = _rollout(np.tile([1.5, 0.0], (1, 3, 1)), np.zeros((3, 2)),
                        predicted=np.array([False]))
        assert away_fraction(near, far, identity_stats) == (0, 0)


class TestExperimentReports:
    def test_ctrv_exact_on_constant_velocity_suite(self, straight_root):
        ds = load_dataset(straight_root, n_obs=8, n_pred=8)
        report = run_experiment("straight", ds.test_windows,
                                {"ctrv": ctrv_predictor(ds.stats)}, ds.stats)
        assert report["models"]["ctrv"]["ade_m"] < 1e-6
        assert report["models"]["ctrv"]["fde_m"] < 1e-6
        assert report["models"]["ctrv"]["n_windows"] == len(ds.test_windows)

    def test_report_schema_fields(self, identity_stats):
        w = _metric_window(np.zeros((1, 2, 2)))
        report = run_experiment("demo", [w],
                                {"zero": lambda win: win.positions[:, win.n_obs:]},
                                identity_stats, meta={"k": 1})
        assert report["schema_version"] == 1
        assert report["experiment"] == "demo"
        assert report["meta"] == {"k": 1}
        cell = report["models"]["zero"]
        assert set(cell) == {"ade_m", "fde_m", "n_windows", "n_ade_terms",
                             "n_fde_terms", "ms_per_seq"}

    def test_rendered_table_layout_golden(self):
        report = {"schema_version": 1, "experiment": "demo", "meta": {},
                  "models": {
                      "ctrv": {"ade_m": 0.5, "fde_m": 1.0, "n_windows": 3,
                               "n_ade_terms": 6, "n_fde_terms": 3,
                               "ms_per_seq": 0.25},
                      "rrnn_vel": {"ade_m": 0.275, "fde_m": 0.35, "n_windows": 3,
                                   "n_ade_terms": 6, "n_fde_terms": 3,
                                   "ms_per_seq": 10.5}}}
        expected = ("model     ADE (m)  FDE (m)  windows  ms/seq\n"
                    "--------  -------  -------  -------  ------\n"
                    "ctrv      0.5000   1.0000   3        0.25\n"
                    "rrnn_vel  0.2750   0.3500   3        10.50")
        assert render_table(report) == expected

    def test_save_report_round_trips(self, tmp_path, identity_stats):
        w = _metric_window(np.zeros((2, 2, 2)))
        report = run_experiment("demo", [w],
                                {"zero": lambda win: win.positions[:, win.n_obs:]},
                                identity_stats, deterministic=True)
        path = save_report(report, tmp_path)
        assert path == tmp_path / "demo.json"
        assert json.loads(path.read_text()) == report
        assert (tmp_path / "demo.txt").read_text() == render_table(report) + "\n"
