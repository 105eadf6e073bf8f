"""Synthetic recordings of agents reacting to a moving machine.

A small social-force-style simulator: each agent relaxes toward its
preferred velocity, is pushed away from the controlled machine and from
other agents by exponential-decay repulsion, and integrates with forward
Euler at the target frame rate.  Three scene families with different
interaction content:

* ``straight``  — force-free constant-velocity motion (closed-form lines),
  useful for checking kinematic extrapolation exactly.
* ``crossing``  — two pedestrian streams crossing with mutual repulsion,
  machine parked at the edge.
* ``approach``  — machine weaves through a milling crowd, steering toward
  agents in turn; the dominant signal is the response to it.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .trajdata import (
    N_FOLDS,
    RawTrack,
    TARGET_RATE_HZ,
    build_folds,
    write_recording,
)

logger = logging.getLogger(__name__)

TYPE_LABELS = ["pedestrian", "robot"]
PEDESTRIAN, ROBOT = 0, 1

SUITES = ("straight", "crossing", "approach")

MIN_START_SEPARATION = 0.1  # meters; closer initial placements are redrawn


class SynthGenError(Exception):
    """A scenario that cannot be realized (e.g. unplaceable agents)."""


@dataclass(frozen=True)
class ForceParams:
    """Interaction strengths for the simulator (world meters / seconds)."""

    v0: float = 0.8               # preferred walking speed
    tau: float = 0.5              # velocity relaxation time
    robot_strength: float = 12.0  # peak robot repulsion accel at contact
    robot_range: float = 0.7      # e-folding distance of robot repulsion
    personal_radius: float = 0.5
    agent_strength: float = 1.5
    agent_range: float = 0.6
    noise_std: float = 0.2        # accel noise, m/s^2
    dt: float = 1.0 / TARGET_RATE_HZ

    def __post_init__(self):
        for name in ("v0", "robot_strength", "personal_radius",
                     "agent_strength", "noise_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"ForceParams.{name} must be nonnegative")
        for name in ("tau", "robot_range", "agent_range", "dt"):
            if getattr(self, name) <= 0:
                raise ValueError(f"ForceParams.{name} must be positive")


def _repulsion(pos: np.ndarray, source: np.ndarray, strength: float,
               rng_dist: float, personal: float) -> np.ndarray:
    """Exponential repulsion pushing ``pos`` away from ``source``."""
    diff = pos - source
    d = np.linalg.norm(diff)
    if d < 1e-9:
        return np.zeros(2)
    mag = strength * np.exp((personal - d) / rng_dist)
    return (diff / d) * mag


def _init_agents(starts: np.ndarray, goals_fn, fp: ForceParams,
                 rng: np.random.Generator):
    """Initial goals and velocities (launched at v0 toward the goal)."""
    n = len(starts)
    pos = starts.astype(np.float64).copy()
    goals = np.array([goals_fn(i, pos[i], rng) for i in range(n)])
    vel = np.zeros((n, 2))
    for i in range(n):
        to_goal = goals[i] - pos[i]
        dist = np.linalg.norm(to_goal)
        if dist > 1e-9:
            vel[i] = fp.v0 * to_goal / dist
    return pos, goals, vel


def _step_agents(pos: np.ndarray, vel: np.ndarray, goals: np.ndarray,
                 goals_fn, robot_pos, fp: ForceParams,
                 rng: np.random.Generator) -> None:
    """One Euler step of the social-force dynamics, in place.

    Velocities update from forces evaluated at the current positions, then
    positions advance by the new velocities.  ``robot_pos`` is None when the
    machine exerts no force. Goals within arrival distance are redrawn first.
    """
    n = len(pos)
    for i in range(n):
        to_goal = goals[i] - pos[i]
        dist = np.linalg.norm(to_goal)
        if dist < 0.5:
            goals[i] = goals_fn(i, pos[i], rng)
            to_goal = goals[i] - pos[i]
            dist = np.linalg.norm(to_goal)
        desired = fp.v0 * to_goal / max(dist, 1e-9)
        accel = (desired - vel[i]) / fp.tau
        if robot_pos is not None:
            accel += _repulsion(pos[i], robot_pos, fp.robot_strength,
                                fp.robot_range, fp.personal_radius)
        for j in range(n):
            if j != i and fp.agent_strength > 0:
                accel += _repulsion(pos[i], pos[j], fp.agent_strength,
                                    fp.agent_range, fp.personal_radius)
        if fp.noise_std > 0:
            accel += rng.normal(0.0, fp.noise_std, size=2)
        vel[i] = vel[i] + fp.dt * accel
    pos += fp.dt * vel


def _simulate_agents(starts: np.ndarray, goals_fn, robot_xy: np.ndarray,
                     fp: ForceParams, n_frames: int,
                     rng: np.random.Generator,
                     robot_active: bool = True) -> np.ndarray:
    """Integrate agent motion under a scripted machine path.

    Returns (n_agents, n_frames, 2).
    """
    pos, goals, vel = _init_agents(starts, goals_fn, fp, rng)
    out = np.empty((len(starts), n_frames, 2))
    for t in range(n_frames):
        out[:, t] = pos
        if t == n_frames - 1:
            break
        _step_agents(pos, vel, goals, goals_fn,
                     robot_xy[t] if robot_active else None, fp, rng)
    return out


def _simulate_pursuit(starts: np.ndarray, goals_fn, fp: ForceParams,
                      n_frames: int, rng: np.random.Generator,
                      robot_start: np.ndarray, speed: float,
                      omega_max: float, hold_s: float):
    """Integrate agents together with a machine that steers at them.

    The machine moves at constant ``speed`` with turn rate bounded by
    ``omega_max`` (rad/s), heading for one agent at a time and switching
    targets round-robin every ``hold_s`` seconds.  Returns
    (agent_xy, robot_xy).
    """
    n = len(starts)
    pos, goals, vel = _init_agents(starts, goals_fn, fp, rng)
    rpos = robot_start.astype(np.float64).copy()
    theta = 0.0
    hold = max(1, int(round(hold_s / fp.dt)))
    target = int(rng.integers(n)) if n else 0
    agent_xy = np.empty((n, n_frames, 2))
    robot_xy = np.empty((n_frames, 2))
    for t in range(n_frames):
        agent_xy[:, t] = pos
        robot_xy[t] = rpos
        if t == n_frames - 1:
            break
        _step_agents(pos, vel, goals, goals_fn, rpos, fp, rng)
        if n:
            if t % hold == 0 and t > 0:
                target = (target + 1) % n
            to_t = pos[target] - rpos
            desired = math.atan2(to_t[1], to_t[0])
            dth = (desired - theta + math.pi) % (2 * math.pi) - math.pi
            theta += max(-omega_max * fp.dt, min(omega_max * fp.dt, dth))
        rpos = rpos + speed * fp.dt * np.array([math.cos(theta),
                                                math.sin(theta)])
    return agent_xy, robot_xy


def _tracks_from_arrays(agent_xy: np.ndarray, robot_xy: np.ndarray) -> list[RawTrack]:
    n_frames = agent_xy.shape[1]
    frames = np.arange(n_frames, dtype=np.int64)
    tracks = [RawTrack(agent_id=i + 1, agent_type=PEDESTRIAN, controlled=False,
                       frames=frames.copy(), xy=agent_xy[i].copy())
              for i in range(agent_xy.shape[0])]
    tracks.append(RawTrack(agent_id=100, agent_type=ROBOT, controlled=True,
                           frames=frames.copy(), xy=robot_xy.copy()))
    return tracks


def straight_scene(n_frames: int, rng: np.random.Generator,
                   n_agents: int = 3) -> list[RawTrack]:
    """Exact constant-velocity lines; no forces, no noise.

    The machine cruises on a line placed below the reachable envelope of the
    agents (start box half-width + max speed x duration + margin), so the
    suite contains no robot-proximity events by construction.
    """
    dt = 1.0 / TARGET_RATE_HZ
    t = np.arange(n_frames)[:, None] * dt
    max_speed = 1.5
    agents = []
    for i in range(n_agents):
        start = rng.uniform(-4.0, 4.0, size=2)
        heading = rng.uniform(-np.pi, np.pi)
        speed = rng.uniform(0.8, max_speed)
        v = speed * np.array([np.cos(heading), np.sin(heading)])
        agents.append(start[None, :] + t * v[None, :])
    agent_xy = np.stack(agents, axis=0)
    robot_y = -(4.0 + max_speed * n_frames * dt + 4.0)
    robot_start = np.array([-8.0, robot_y + rng.uniform(-0.5, 0.5)])
    robot_v = np.array([1.0, 0.0])
    robot_xy = robot_start[None, :] + t * robot_v[None, :]
    return _tracks_from_arrays(agent_xy, robot_xy)


def crossing_scene(n_frames: int, rng: np.random.Generator,
                   n_agents: int = 4, fp: ForceParams | None = None) -> list[RawTrack]:
    """Two pedestrian streams crossing at right angles; machine parked."""
    fp = fp or ForceParams()
    half = n_agents // 2
    starts = []
    goals = []
    for i in range(half):
        y = rng.uniform(-2.0, 2.0)
        starts.append([-6.0 + rng.uniform(-1, 1), y])
        goals.append([12.0, y + rng.uniform(-1, 1)])
    for i in range(n_agents - half):
        x = rng.uniform(-2.0, 2.0)
        starts.append([x, -6.0 + rng.uniform(-1, 1)])
        goals.append([x + rng.uniform(-1, 1), 12.0])
    goals = np.asarray(goals, dtype=np.float64)

    def goals_fn(i, p, r):
        return goals[i]

    robot_xy = np.tile(np.array([6.0, -6.0]), (n_frames, 1))
    agent_xy = _simulate_agents(np.asarray(starts), goals_fn, robot_xy, fp,
                                n_frames, rng, robot_active=False)
    return _tracks_from_arrays(agent_xy, robot_xy)


def approach_scene(n_frames: int, rng: np.random.Generator,
                   n_agents: int = 4, fp: ForceParams | None = None) -> list[RawTrack]:
    """Machine weaves through a box of milling agents, heading at them in turn.

    The machine is faster than the agents' preferred speed and steers toward
    one agent at a time, so close approaches — and the evasive responses to
    them — recur throughout the recording instead of being rare events.
    """
    fp = fp or ForceParams()
    box = 3.0
    starts = rng.uniform(-box, box, size=(n_agents, 2))

    def goals_fn(i, p, r):
        return r.uniform(-box, box, size=2)

    robot_start = np.array([-box - 1.0, rng.uniform(-1.0, 1.0)])
    agent_xy, robot_xy = _simulate_pursuit(
        starts, goals_fn, fp, n_frames, rng, robot_start,
        speed=2.2, omega_max=2.5, hold_s=2.5)
    return _tracks_from_arrays(agent_xy, robot_xy)


def make_suite(root: Path, suite: str, n_recordings: int = 20,
               n_frames: int = 320, seed: int = 0,
               fp: ForceParams | None = None,
               n_folds: int = N_FOLDS) -> Path:
    """Write a dataset directory for one scene family.

    Layout: ``recordings/*.csv`` + sidecars, ``labels.json``, ``folds.json``.
    Returns the root path.
    """
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {SUITES}")
    root = Path(root)
    rec_dir = root / "recordings"
    rec_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, SUITES.index(suite)])
    spans = {}
    for r in range(n_recordings):
        rid = f"{suite}-{r:03d}"
        if suite == "straight":
            tracks = straight_scene(n_frames, rng)
        elif suite == "crossing":
            tracks = crossing_scene(n_frames, rng, fp=fp)
        else:
            tracks = approach_scene(n_frames, rng, fp=fp)
        write_recording(rec_dir / f"{rid}.csv", tracks, TYPE_LABELS,
                        source_rate_hz=TARGET_RATE_HZ, recording_id=rid)
        spans[rid] = (0, n_frames - 1)
    (root / "labels.json").write_text(json.dumps(TYPE_LABELS) + "\n")
    folds = build_folds(spans, n_folds=n_folds)
    folds.save(root / "folds.json")
    logger.info("wrote %d %s recordings under %s", n_recordings, suite, root)
    return root


# ---------------------------------------------------------------------------
# declarative scenarios


@dataclass(frozen=True)
class ScenarioSpec:
    """Declarative scene: agents drawn inside boxes, machine on a waypoint script.

    Boxes are (xmin, ymin, xmax, ymax) in world meters.  Goals are redrawn
    from ``goal_box`` whenever an agent reaches its current goal.
    """

    n_agents: int
    start_box: tuple[float, float, float, float]
    goal_box: tuple[float, float, float, float]
    robot_waypoints: tuple[tuple[float, float], ...]
    robot_speed: float
    duration_s: float
    forces: ForceParams = ForceParams()
    name: str = "scenario"

    def __post_init__(self):
        if self.n_agents < 0:
            raise ValueError("n_agents must be nonnegative")
        for label, box in (("start_box", self.start_box), ("goal_box", self.goal_box)):
            if len(box) != 4 or box[2] < box[0] or box[3] < box[1]:
                raise ValueError(f"{label} must be (xmin, ymin, xmax, ymax)")
        if len(self.robot_waypoints) < 1:
            raise ValueError("robot_waypoints needs at least one point")
        if self.robot_speed < 0:
            raise ValueError("robot_speed must be nonnegative")
        if self.duration_s <= 0:
            raise ValueError("duration_s must be positive")


def scenario_from_dict(d: dict) -> ScenarioSpec:
    """Build a ScenarioSpec from parsed structured text (see load_scenario_spec)."""
    try:
        forces = replace(ForceParams(), **d.get("forces", {}))
    except TypeError as exc:
        raise ValueError(f"unknown force parameter: {exc}") from exc
    try:
        return ScenarioSpec(
            n_agents=int(d["n_agents"]),
            start_box=tuple(float(v) for v in d["start_box"]),
            goal_box=tuple(float(v) for v in d["goal_box"]),
            robot_waypoints=tuple((float(x), float(y)) for x, y in d["robot"]["waypoints"]),
            robot_speed=float(d["robot"]["speed"]),
            duration_s=float(d["duration_s"]),
            forces=forces,
            name=str(d.get("name", "scenario")),
        )
    except KeyError as exc:
        raise ValueError(f"scenario spec missing field {exc}") from exc


def load_scenario_spec(path: Path) -> ScenarioSpec:
    """Parse a JSON scenario file into a validated ScenarioSpec."""
    return scenario_from_dict(json.loads(Path(path).read_text()))


def robot_script(waypoints, speed: float, n_frames: int,
                 dt: float = 1.0 / TARGET_RATE_HZ) -> np.ndarray:
    """Run the machine along a waypoint polyline at constant speed.

    Returns (n_frames, 2) positions; the machine parks at the final waypoint
    once the polyline is exhausted (and immediately, if speed is zero).
    """
    wp = np.asarray(waypoints, dtype=np.float64).reshape(-1, 2)
    seg_len = np.linalg.norm(np.diff(wp, axis=0), axis=1)
    keep = seg_len > 1e-12
    wp = np.concatenate([wp[:1], wp[1:][keep]], axis=0)
    if len(wp) == 1 or speed <= 0:
        return np.tile(wp[0], (n_frames, 1))
    arc = np.concatenate([[0.0], np.cumsum(seg_len[keep])])
    s = np.minimum(np.arange(n_frames) * dt * speed, arc[-1])
    return np.stack([np.interp(s, arc, wp[:, 0]), np.interp(s, arc, wp[:, 1])], axis=1)


def _place_agents(rng: np.random.Generator, box, n: int,
                  min_sep: float = MIN_START_SEPARATION,
                  max_tries: int = 100) -> np.ndarray:
    """Draw start positions uniformly in the box, redrawing overlapping sets."""
    lo = np.array([box[0], box[1]])
    hi = np.array([box[2], box[3]])
    for _ in range(max_tries):
        pts = rng.uniform(lo, hi, size=(n, 2))
        if n < 2:
            return pts
        dist = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        if (dist[np.triu_indices(n, 1)] >= min_sep).all():
            return pts
    raise SynthGenError(
        f"could not place {n} agents at least {min_sep} m apart inside "
        f"{tuple(box)} after {max_tries} draws")


def generate(spec: ScenarioSpec, seed: int, out_dir: Path) -> Path:
    """Realize a scenario into a recording on disk (trajdata layout).

    Writes ``recordings/<name>.csv`` (+ sidecar) and ``labels.json`` under
    ``out_dir`` so the result ingests directly; returns the CSV path.
    Deterministic for a given (spec, seed).
    """
    rng = np.random.default_rng(seed)
    n_frames = max(2, int(round(spec.duration_s * TARGET_RATE_HZ)))
    robot_xy = robot_script(spec.robot_waypoints, spec.robot_speed, n_frames,
                            spec.forces.dt)
    starts = _place_agents(rng, spec.start_box, spec.n_agents)
    lo = np.array([spec.goal_box[0], spec.goal_box[1]])
    hi = np.array([spec.goal_box[2], spec.goal_box[3]])

    def goals_fn(i, p, r):
        return r.uniform(lo, hi)

    agent_xy = _simulate_agents(starts, goals_fn, robot_xy, spec.forces,
                                n_frames, rng)
    tracks = _tracks_from_arrays(agent_xy, robot_xy)
    out_dir = Path(out_dir)
    rec_dir = out_dir / "recordings"
    rec_dir.mkdir(parents=True, exist_ok=True)
    csv_path = rec_dir / f"{spec.name}.csv"
    write_recording(csv_path, tracks, TYPE_LABELS,
                    source_rate_hz=TARGET_RATE_HZ, recording_id=spec.name)
    (out_dir / "labels.json").write_text(json.dumps(TYPE_LABELS) + "\n")
    logger.info("generated scenario %s -> %s", spec.name, csv_path)
    return csv_path
