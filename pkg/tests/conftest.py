"""Shared fixtures: hand-built walks, kinematic series and simulated trials."""

import numpy as np
import pytest

from preprocess import KinematicSeries
from simulate import build_config, simulate_trial
from trajectory_io import TrialMeta, make_trial

FS = 60.0


def straight_walk(n, speed=1.3, heading_rad=0.0, start=(0.0, 0.0), fs=FS):
    t = np.arange(n) / fs
    return np.column_stack([
        start[0] + speed * t * np.cos(heading_rad),
        start[1] + speed * t * np.sin(heading_rad),
    ])


@pytest.fixture
def walk_trial():
    """Factory for trials of agents walking straight and parallel."""
    def _make(n=600, agents=("A", "B"), fs=FS, meta=None, name="walk"):
        positions = [straight_walk(n, start=(0.0, 2.0 * k), fs=fs) for k in range(len(agents))]
        return make_trial(agents, fs, positions, meta=meta or TrialMeta(), name=name)
    return _make


@pytest.fixture
def kinematic_series():
    """Factory for KinematicSeries built directly from heading angles and speeds."""
    def _make(agent, angles, speeds, fs=FS):
        angles = np.asarray(angles, dtype=float)
        heading = np.column_stack([np.cos(angles), np.sin(angles)])
        heading[~np.isfinite(angles)] = np.nan
        speeds = np.asarray(speeds, dtype=float)
        return KinematicSeries(agent=agent, heading=heading, speed=speeds,
                               sample_rate_hz=fs, valid_range=(0, len(speeds)))
    return _make


@pytest.fixture(scope="session")
def null_trial():
    """Four agents, no coupling, no script, no noise."""
    return simulate_trial(build_config(name="null", duration_s=12.0))


@pytest.fixture(scope="session")
def leader_trial():
    """P1 turns twice and is followed by everyone after 0.5 s; noiseless."""
    config = build_config(
        name="single_leader",
        agents=["P1", "P2", "P3", "P4"],
        coupling=[{"source": "P1", "target": t, "delay_s": 0.5} for t in ("P2", "P3", "P4")],
        script=[
            {"time_s": 6.0, "agent": "P1", "kind": "turn_left", "magnitude": 40.0},
            {"time_s": 12.0, "agent": "P1", "kind": "turn_right", "magnitude": 40.0},
        ],
        duration_s=20.0,
    )
    return simulate_trial(config)
