"""Tests for kinematics, traffic spawning, collisions and trajectories."""

import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from safedagger.errors import SimulationError
from safedagger.models import FINISHED, OFF_ROAD, REFERENCE, RUNNING, Action, WorldState
from safedagger.reference import reference_action
from safedagger.sim import (COLLISION_RADIUS, DT, K_STEER, TRAJECTORY_COLUMNS, DriveFn, advance_car,
                            crash_free, derive_seed, drive, ego_collides, laps_driven, new_world,
                            spawn_traffic, step, write_trajectory_csv)
from safedagger.track import shipped_tracks
from tests.conftest import place


def test_derive_seed_stable():
    assert derive_seed(1, "spawn", 0) == derive_seed(1, "spawn", 0)
    assert derive_seed(1, "spawn", 0) != derive_seed(1, "spawn", 1)
    assert 0 <= derive_seed("x") < 2**32


def test_straight_step_moves_forward(stadium):
    car = place(stadium, s=10.0, lane=0, speed=10.0)
    nxt = advance_car(car, Action(0.0), stadium)
    assert nxt.arc_position == pytest.approx(10.0 + 10.0 * DT)
    assert nxt.lateral_offset == pytest.approx(car.lateral_offset)
    assert nxt.odometer == pytest.approx(10.0 * DT)


def test_speed_capped_by_limit(stadium):
    car = place(stadium, s=10.0, speed=19.99)
    nxt = advance_car(car, Action(0.0), stadium)
    assert nxt.speed == pytest.approx(20.0)


def test_brake_never_negative(stadium):
    car = place(stadium, s=10.0, speed=0.05)
    assert advance_car(car, Action(0.0, 1), stadium).speed == 0.0


def test_positive_steer_turns_left(stadium):
    car = place(stadium, s=10.0, speed=10.0)
    nxt = advance_car(car, Action(1.0), stadium)
    assert nxt.heading_error > 0


def test_arc_position_wraps(stadium):
    car = place(stadium, s=stadium.length - 0.1, speed=10.0)
    nxt = advance_car(car, Action(0.0), stadium)
    assert 0.0 <= nxt.arc_position < 1.0


def test_action_clamps_steer():
    assert Action(3.0).steer == 1.0
    assert Action(-2.0, 5).brake == 1


def test_step_off_road_halts(stadium):
    ego = replace(place(stadium, s=10.0, speed=10.0), lateral_offset=stadium.half_width + 0.99,
                  heading_error=0.3)
    state = WorldState(ego=ego, traffic=(), track=stadium)
    nxt = step(state, Action(1.0))
    assert nxt.halted == OFF_ROAD
    with pytest.raises(SimulationError):
        step(nxt, Action(0.0))


def test_collision_adds_damage(stadium):
    ego = place(stadium, s=50.0, lane=0, speed=10.0)
    other = place(stadium, s=51.0, lane=0, speed=0.0, speed_cap=1.0)
    state = WorldState(ego=ego, traffic=(other,), track=stadium)
    assert ego_collides(state)
    assert step(state, Action(0.0)).damage == 1


def test_no_collision_across_lanes(stadium):
    ego = place(stadium, s=50.0, lane=0)
    other = place(stadium, s=50.0, lane=1)
    assert not ego_collides(WorldState(ego=ego, traffic=(other,), track=stadium))


def test_spawn_traffic_deterministic(ring):
    a = spawn_traffic(ring, 6, 42, keep_clear_at=0.0)
    b = spawn_traffic(ring, 6, 42, keep_clear_at=0.0)
    assert a == b
    slots = {(round(c.arc_position, 6), c.lane_index) for c in a}
    assert len(slots) == 6
    for car in a:
        gap = min(car.arc_position, ring.length - car.arc_position)
        assert gap >= 30.0
        assert 0.55 * 20 <= car.speed_cap <= 0.85 * 20


def test_spawn_over_capacity(stadium):
    with pytest.raises(SimulationError, match="at most"):
        spawn_traffic(stadium, 10_000, 0)


def test_new_world_reproducible(ring):
    assert new_world(ring, 7, 4) == new_world(ring, 7, 4)
    assert new_world(ring, 7, 4) != new_world(ring, 8, 4)


def test_damage_non_decreasing(ring):
    state = new_world(ring, 5, 6)
    damages = []
    for _ in range(120):
        state = step(state, Action(0.0))
        damages.append(state.damage)
        if state.halted != RUNNING:
            break
    assert damages == sorted(damages)


def test_drive_finishes_and_writes_csv(stadium, tmp_path):
    state = new_world(stadium, 1)
    traj = drive(state, lambda s: (reference_action(s), REFERENCE), max_steps=90)
    assert len(traj) == 90
    assert len(traj.states) == 91
    assert traj.status == FINISHED
    assert crash_free(traj) == 1
    assert laps_driven(traj.final) > 0
    path = tmp_path / "traj.csv"
    write_trajectory_csv(traj, path)
    rows = list(csv.reader(path.open()))
    assert tuple(rows[0]) == TRAJECTORY_COLUMNS
    assert len(rows) == 91
    assert rows[1][-1] == REFERENCE


def test_drive_until(stadium):
    state = new_world(stadium, 1)
    traj = drive(state, lambda s: (reference_action(s), REFERENCE), max_steps=1000,
                 until=lambda s: s.time_step >= 10)
    assert len(traj) == 10


def test_crash_free_empty():
    from safedagger.sim import Trajectory
    with pytest.raises(ValueError):
        crash_free(Trajectory())


@pytest.mark.parametrize("track", shipped_tracks(), ids=lambda t: t.id)
def test_curvature_following_closes_a_lap(track):
    n = 3000
    v = track.length / (n * DT)
    car = place(track, s=0.0, lane=0, speed=v, speed_cap=v)
    start = track.world_point(car.arc_position, car.lateral_offset)
    for _ in range(n):
        car = advance_car(car, Action(track.curvature(car.arc_position) / K_STEER), track)
    end = track.world_point(car.arc_position, car.lateral_offset)
    assert math.hypot(end[0] - start[0], end[1] - start[1]) < 1e-4
    assert car.odometer == pytest.approx(track.length)


def test_forty_cars_spawn_apart(stadium):
    cars = spawn_traffic(stadium, 40, 11)
    assert len(cars) == 40
    x, y = stadium.world_point(np.array([c.arc_position for c in cars]),
                               np.array([c.lateral_offset for c in cars]))
    dist = np.hypot(x[:, None] - x[None, :], y[:, None] - y[None, :])
    np.fill_diagonal(dist, np.inf)
    assert dist.min() >= 2 * COLLISION_RADIUS
    assert cars == spawn_traffic(stadium, 40, 11)


def test_drive_accepts_plain_function(lone_world):
    coast: DriveFn = lambda s: (Action(0.0), "coast")
    traj = drive(lone_world, coast, max_steps=10)
    assert len(traj) == 10
    assert traj.tags == ["coast"] * 10
    assert traj.final.time_step == 10
