"""Shared fixtures: small windows, datasets, and trained-tiny models."""

import numpy as np
import pytest

from trajresponse.trajdata import SequenceWindow, StandardizationStats


def make_window(positions, robot_xy, n_obs, n_pred, agent_types=None,
                presence=None, loss_excluded=None, dt=1.0 / 15.0,
                robot_type=1):
    """Build a SequenceWindow from raw arrays with sane defaults."""
    positions = np.asarray(positions, dtype=float)
    robot_xy = np.asarray(robot_xy, dtype=float)
    if robot_xy.ndim == 2:
        robot_xy = robot_xy[None]
    n_agents = positions.shape[0]
    if presence is None:
        presence = np.isfinite(positions[..., 0])
    if agent_types is None:
        agent_types = np.zeros(n_agents, dtype=np.int64)
    if loss_excluded is None:
        loss_excluded = np.zeros(n_agents, dtype=bool)
    return SequenceWindow(
        n_obs=n_obs, n_pred=n_pred, dt=dt,
        agent_ids=list(range(1, n_agents + 1)),
        agent_types=np.asarray(agent_types, dtype=np.int64),
        positions=positions,
        presence=np.asarray(presence, dtype=bool),
        loss_excluded=np.asarray(loss_excluded, dtype=bool),
        robot_ids=[100 + i for i in range(robot_xy.shape[0])],
        robot_types=np.full(robot_xy.shape[0], robot_type, dtype=np.int64),
        robot_xy=robot_xy,
        recording_id="test", start_frame=0)


@pytest.fixture
def identity_stats():
    return StandardizationStats(0.0, 0.0, 1.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def toy_window():
    from trajresponse.responsernn import make_toy_window

    return make_toy_window(n_agents=2, n_obs=4, n_pred=2, k_types=2, seed=0)


@pytest.fixture(scope="session")
def straight_root(tmp_path_factory):
    from trajresponse.synthgen import make_suite

    root = tmp_path_factory.mktemp("data") / "straight"
    return make_suite(root, "straight", n_recordings=5, n_frames=120, seed=3)


@pytest.fixture(scope="session")
def approach_root(tmp_path_factory):
    from trajresponse.synthgen import make_suite

    root = tmp_path_factory.mktemp("data") / "approach"
    return make_suite(root, "approach", n_recordings=6, n_frames=160, seed=1)


@pytest.fixture(scope="session")
def approach_dataset(approach_root):
    from trajresponse.trajdata import load_dataset

    return load_dataset(approach_root, n_obs=12, n_pred=12)
