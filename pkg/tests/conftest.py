"""Shared test fixtures."""

import pytest

from safedagger.imitation import IterationPlan
from safedagger.models import CarState, WorldState
from safedagger.track import shipped_tracks


@pytest.fixture(scope="session")
def tracks_by_id():
    return {t.id: t for t in shipped_tracks()}


@pytest.fixture
def stadium(tracks_by_id):
    """Two-lane oval: 200 m straights, 50 m hairpins."""
    return tracks_by_id["stadium"]


@pytest.fixture
def ring(tracks_by_id):
    """Three-lane circle of radius 110 m."""
    return tracks_by_id["ring"]


def place(track, s=0.0, lane=0, speed=10.0, **kw) -> CarState:
    """A car centered in `lane` at arc position s."""
    return CarState(arc_position=s, lateral_offset=float(track.lane_center(lane)),
                    heading_error=0.0, speed=speed, lane_index=lane, **kw)


@pytest.fixture
def lone_world(stadium):
    """Ego alone on the stadium straight, right lane."""
    return WorldState(ego=place(stadium, s=10.0, lane=1, speed=12.0), traffic=(), track=stadium)


def tiny_plan_data(**sections) -> dict:
    data = {
        "run": {"seed": 3, "iterations": 1},
        "sim": {"traffic": 2, "episode_steps": 120, "tracks": ["stadium", "ring"]},
        "collect": {"initial": 240, "safety": 120, "budgets": [120], "validation_fraction": 0.2},
        "safety": {"hidden": [8]},
        "primary": {"hidden": [16]},
        "train": {"max_epochs": 3, "batch_size": 32, "lr": 0.01},
        "eval": {"enabled": False},
    }
    for name, body in sections.items():
        data.setdefault(name, {}).update(body)
    return data


@pytest.fixture
def tiny_plan():
    """A plan small enough to train in a few seconds."""
    return IterationPlan.model_validate(tiny_plan_data())
