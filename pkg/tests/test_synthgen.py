"""Synthetic scene generator: force model, scenario specs, suite bundles."""

import json

import numpy as np
import pytest

from trajresponse.synthgen import (
    ForceParams,
    ScenarioSpec,
    SynthGenError,
    TYPE_LABELS,
    generate,
    load_scenario_spec,
    make_suite,
    robot_script,
    scenario_from_dict,
)
from trajresponse.trajdata import FoldSplit, ingest, load_dataset


def _pedestrian_tracks(csv_path):
    tracks = ingest(csv_path, TYPE_LABELS)
    return [t for t in tracks if not t.controlled]


def _robot_track(csv_path):
    return [t for t in ingest(csv_path, TYPE_LABELS) if t.controlled][0]


def _spec(**kw):
    base = dict(n_agents=1, start_box=(0.0, 0.0, 0.0, 0.0),
                goal_box=(500.0, 0.0, 500.0, 0.0),
                robot_waypoints=((50.0, 50.0),), robot_speed=0.0,
                duration_s=4.0, name="scene")
    base.update(kw)
    return ScenarioSpec(**base)


class TestForceParams:
    def test_defaults_valid(self):
        fp = ForceParams()
        assert fp.v0 > 0 and fp.robot_range > 0 and fp.dt > 0

    @pytest.mark.parametrize("field,value", [
        ("v0", -0.1), ("robot_strength", -1.0), ("noise_std", -1e-9),
        ("agent_strength", -2.0), ("personal_radius", -0.5),
    ])
    def test_negative_magnitudes_rejected(self, field, value):
        with pytest.raises(ValueError, match=field):
            ForceParams(**{field: value})

    @pytest.mark.parametrize("field", ["tau", "robot_range", "agent_range", "dt"])
    def test_zero_scales_rejected(self, field):
        with pytest.raises(ValueError, match=field):
            ForceParams(**{field: 0.0})


class TestRobotScript:
    def test_polyline_arc_length_parametrization(self):
        # Polyline (0,0)->(3,0)->(3,4) at 1 m/s, 15 Hz.  Hand positions:
        # frame 15 = 1 s -> arc 1 -> (1,0); frame 60 = 4 s -> arc 4 -> (3,1);
        # frame 105 = 7 s -> arc 7 -> end (3,4); later frames park there.
        xy = robot_script([(0, 0), (3, 0), (3, 4)], speed=1.0, n_frames=120)
        assert np.allclose(xy[0], [0, 0], atol=1e-12)
        assert np.allclose(xy[15], [1, 0], atol=1e-12)
        assert np.allclose(xy[60], [3, 1], atol=1e-12)
        assert np.allclose(xy[105], [3, 4], atol=1e-12)
        assert np.allclose(xy[119], [3, 4], atol=1e-12)

    def test_single_waypoint_parks(self):
        xy = robot_script([(2.0, -1.0)], speed=1.5, n_frames=10)
        assert np.all(xy == [2.0, -1.0])

    def test_zero_speed_parks_at_first_waypoint(self):
        xy = robot_script([(1.0, 1.0), (9.0, 9.0)], speed=0.0, n_frames=10)
        assert np.all(xy == [1.0, 1.0])

    def test_duplicate_waypoints_ignored(self):
        a = robot_script([(0, 0), (0, 0), (2, 0)], speed=1.0, n_frames=40)
        b = robot_script([(0, 0), (2, 0)], speed=1.0, n_frames=40)
        assert np.array_equal(a, b)


class TestGenerate:
    def test_force_free_agent_walks_straight_at_v0(self, tmp_path):
        # No repulsion, no noise, distant goal due east: the update rule
        # starts the agent at v0 toward the goal and never changes it, so
        # position is exactly start + t * v0 * (1, 0).
        spec = _spec(forces=ForceParams(v0=1.2, robot_strength=0.0,
                                        agent_strength=0.0, noise_std=0.0))
        csv = generate(spec, seed=0, out_dir=tmp_path)
        track = _pedestrian_tracks(csv)[0]
        t = np.arange(len(track.frames)) / 15.0
        expect = np.stack([1.2 * t, np.zeros_like(t)], axis=1)
        assert np.allclose(track.xy, expect, atol=1e-9)

    def test_noise_perturbs_but_stays_near_line(self, tmp_path):
        spec = _spec(forces=ForceParams(v0=1.2, robot_strength=0.0,
                                        agent_strength=0.0, noise_std=0.08))
        csv = generate(spec, seed=0, out_dir=tmp_path)
        track = _pedestrian_tracks(csv)[0]
        t = np.arange(len(track.frames)) / 15.0
        expect = np.stack([1.2 * t, np.zeros_like(t)], axis=1)
        dev = np.linalg.norm(track.xy - expect, axis=1)
        assert 0 < dev.max() < 0.5

    def test_machine_pass_pushes_stationary_agent_off_its_path(self, tmp_path):
        # Direct-simulation oracle: v0 = 0 leaves only damping and machine
        # repulsion, so an agent sitting near the machine's straight path
        # must move monotonically away from that path during the pass.
        spec = _spec(start_box=(0.0, 0.2, 0.0, 0.2), goal_box=(0.0, 0.2, 0.0, 0.2),
                     robot_waypoints=((-6.0, 0.0), (6.0, 0.0)), robot_speed=1.5,
                     duration_s=8.0,
                     forces=ForceParams(v0=0.0, noise_std=0.0, agent_strength=0.0))
        csv = generate(spec, seed=1, out_dir=tmp_path)
        track = _pedestrian_tracks(csv)[0]
        d_path = np.abs(track.xy[:, 1])  # distance to the y=0 machine path
        assert np.all(np.diff(d_path) >= -1e-12)
        assert d_path[-1] > max(1.0, d_path[0])

    def test_same_spec_and_seed_identical_files(self, tmp_path):
        spec = _spec(n_agents=3, start_box=(-2, -2, 2, 2), goal_box=(-4, -4, 4, 4),
                     robot_waypoints=((-4.0, 0.0), (4.0, 0.0)), robot_speed=1.2,
                     duration_s=6.0)
        a = generate(spec, seed=5, out_dir=tmp_path / "a")
        b = generate(spec, seed=5, out_dir=tmp_path / "b")
        assert a.read_bytes() == b.read_bytes()
        assert (a.parent / f"{spec.name}.meta.json").read_bytes() == \
               (b.parent / f"{spec.name}.meta.json").read_bytes()

    def test_different_seeds_differ(self, tmp_path):
        spec = _spec(n_agents=2, start_box=(-2, -2, 2, 2), goal_box=(-4, -4, 4, 4))
        a = generate(spec, seed=0, out_dir=tmp_path / "a")
        b = generate(spec, seed=1, out_dir=tmp_path / "b")
        assert a.read_bytes() != b.read_bytes()

    def test_translation_equivariance(self, tmp_path):
        off = np.array([7.0, -3.0])

        def shifted(box):
            return (box[0] + off[0], box[1] + off[1], box[2] + off[0], box[3] + off[1])

        start, goal = (-2, -2, 2, 2), (-4, -4, 4, 4)
        wp = ((-4.0, 0.0), (4.0, 0.0))
        sp_a = _spec(n_agents=3, start_box=start, goal_box=goal,
                     robot_waypoints=wp, robot_speed=1.2, duration_s=6.0)
        sp_b = _spec(n_agents=3, start_box=shifted(start), goal_box=shifted(goal),
                     robot_waypoints=tuple((x + off[0], y + off[1]) for x, y in wp),
                     robot_speed=1.2, duration_s=6.0)
        ta = ingest(generate(sp_a, 3, tmp_path / "a"), TYPE_LABELS)
        tb = ingest(generate(sp_b, 3, tmp_path / "b"), TYPE_LABELS)
        for x, y in zip(ta, tb):
            assert np.allclose(y.xy, x.xy + off, atol=1e-9)

    def test_zero_repulsion_agents_ignore_robot_script_bitwise(self, tmp_path):
        f0 = ForceParams(robot_strength=0.0)
        kw = dict(n_agents=3, start_box=(-2, -2, 2, 2), goal_box=(-4, -4, 4, 4),
                  duration_s=6.0, forces=f0)
        sp_a = _spec(robot_waypoints=((-4.0, 0.0), (4.0, 0.0)), robot_speed=1.2, **kw)
        sp_b = _spec(robot_waypoints=((0.0, 9.0),), robot_speed=0.0, **kw)
        ua = _pedestrian_tracks(generate(sp_a, 11, tmp_path / "a"))
        ub = _pedestrian_tracks(generate(sp_b, 11, tmp_path / "b"))
        assert all(np.array_equal(x.xy, y.xy) for x, y in zip(ua, ub))

    def test_overlapping_starts_are_redrawn_to_min_separation(self, tmp_path):
        # A snug box forces redraws on some seeds; the post-condition is a
        # minimum pairwise start distance regardless.
        spec = _spec(n_agents=5, start_box=(0, 0, 1, 1), goal_box=(-4, -4, 4, 4),
                     duration_s=0.5)
        for seed in range(6):
            csv = generate(spec, seed=seed, out_dir=tmp_path / str(seed))
            starts = np.array([t.xy[0] for t in _pedestrian_tracks(csv)])
            d = np.linalg.norm(starts[:, None] - starts[None], axis=-1)
            assert d[np.triu_indices(5, 1)].min() >= 0.1

    def test_unplaceable_agents_raise(self, tmp_path):
        spec = _spec(n_agents=3, start_box=(0, 0, 0.05, 0.05),
                     goal_box=(-4, -4, 4, 4), duration_s=1.0)
        with pytest.raises(SynthGenError, match="place"):
            generate(spec, seed=0, out_dir=tmp_path)

    def test_output_ingests_as_dataset(self, tmp_path):
        spec = _spec(n_agents=3, start_box=(-2, -2, 2, 2), goal_box=(-4, -4, 4, 4),
                     robot_waypoints=((-4.0, 0.0), (4.0, 0.0)), robot_speed=1.2,
                     duration_s=12.0)
        generate(spec, seed=2, out_dir=tmp_path)
        ds = load_dataset(tmp_path, n_obs=8, n_pred=8)
        assert ds.labels == TYPE_LABELS
        assert len(ds.train_windows) + len(ds.val_windows) + len(ds.test_windows) > 0


class TestScenarioSpecParsing:
    def _dict(self):
        return {
            "name": "demo", "n_agents": 2,
            "start_box": [-1, -1, 1, 1], "goal_box": [-3, -3, 3, 3],
            "robot": {"waypoints": [[-4, 0], [4, 0]], "speed": 1.2},
            "duration_s": 5.0,
            "forces": {"robot_strength": 6.0, "noise_std": 0.1},
        }

    def test_round_trip_through_file(self, tmp_path):
        path = tmp_path / "scene.json"
        path.write_text(json.dumps(self._dict()))
        spec = load_scenario_spec(path)
        assert spec.name == "demo"
        assert spec.n_agents == 2
        assert spec.robot_waypoints == ((-4.0, 0.0), (4.0, 0.0))
        assert spec.forces.robot_strength == 6.0
        assert spec.forces.noise_std == 0.1
        assert spec.forces.v0 == ForceParams().v0  # untouched default

    def test_unknown_force_field_rejected(self):
        d = self._dict()
        d["forces"]["gravity"] = 9.8
        with pytest.raises(ValueError, match="gravity"):
            scenario_from_dict(d)

    def test_missing_field_rejected(self):
        d = self._dict()
        del d["duration_s"]
        with pytest.raises(ValueError, match="duration_s"):
            scenario_from_dict(d)

    @pytest.mark.parametrize("kw", [
        dict(n_agents=-1),
        dict(start_box=(1.0, 0.0, 0.0, 0.0)),       # xmin > xmax
        dict(goal_box=(0.0, 0.0, 1.0)),              # wrong arity
        dict(robot_waypoints=()),
        dict(robot_speed=-1.0),
        dict(duration_s=0.0),
    ])
    def test_invalid_spec_fields_rejected(self, kw):
        with pytest.raises(ValueError):
            _spec(**kw)


class TestMakeSuite:
    def test_unknown_suite_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="unknown suite"):
            make_suite(tmp_path, "diagonal")

    def test_layout_and_manifests(self, straight_root):
        csvs = sorted((straight_root / "recordings").glob("*.csv"))
        metas = sorted((straight_root / "recordings").glob("*.meta.json"))
        assert len(csvs) == len(metas) == 5
        assert json.loads((straight_root / "labels.json").read_text()) == TYPE_LABELS
        folds = FoldSplit.load(straight_root / "folds.json")
        assert folds.n_folds == 5
        assert {seg["fold"] for seg in folds.segments} == set(range(5))

    def test_generation_deterministic(self, tmp_path):
        a = make_suite(tmp_path / "a", "crossing", n_recordings=2, n_frames=60, seed=9)
        b = make_suite(tmp_path / "b", "crossing", n_recordings=2, n_frames=60, seed=9)
        for ca, cb in zip(sorted((a / "recordings").glob("*.csv")),
                          sorted((b / "recordings").glob("*.csv"))):
            assert ca.read_bytes() == cb.read_bytes()

    def test_straight_suite_is_exactly_linear(self, straight_root):
        # Second differences of a sampled line vanish; also no proximity to
        # the machine anywhere (its lane is placed beyond the agents' reach).
        for csv in sorted((straight_root / "recordings").glob("*.csv")):
            robot = _robot_track(csv)
            for tr in _pedestrian_tracks(csv):
                assert np.abs(np.diff(tr.xy, n=2, axis=0)).max() < 1e-9
                dist = np.linalg.norm(tr.xy - robot.xy, axis=1)
                assert dist.min() > 3.0

    def test_crossing_suite_keeps_machine_parked(self, tmp_path):
        root = make_suite(tmp_path, "crossing", n_recordings=2, n_frames=60, seed=4)
        for csv in sorted((root / "recordings").glob("*.csv")):
            robot = _robot_track(csv)
            assert np.ptp(robot.xy, axis=0).max() == 0.0

    def test_approach_suite_has_frequent_close_passes(self, approach_dataset):
        # Counted from the generated output: at least half of the windows see
        # the machine pass within 2 m of a present agent (world meters).
        ds = approach_dataset
        wins = ds.train_windows + ds.val_windows + ds.test_windows
        n_close = 0
        for w in wins:
            pos = w.positions * ds.stats.std + ds.stats.mean
            rob = w.robot_xy[0] * ds.stats.std + ds.stats.mean
            d = np.linalg.norm(pos - rob[None], axis=-1)
            if np.where(w.presence, d, np.inf).min() < 2.0:
                n_close += 1
        assert n_close / len(wins) >= 0.5

    def test_suite_reingests_cleanly(self, approach_root):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("error")
            ds = load_dataset(approach_root, n_obs=12, n_pred=12)
        assert ds.k_types == 2
        assert len(ds.test_windows) > 0
