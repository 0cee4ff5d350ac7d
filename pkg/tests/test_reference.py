"""Tests for the rule-based reference driver."""

import math

import pytest

from safedagger.models import LABEL, METRIC, OFF_ROAD, REFERENCE, QueryLedger, Segment, TrackSpec, WorldState
from safedagger.reference import EGO, TrafficView, pd_steer, query_reference, reference_action, reference_plan
from safedagger.sim import drive, new_world
from safedagger.track import build_track, shipped_tracks
from tests.conftest import place


def test_pd_steer_corrects_toward_center():
    assert pd_steer(1.0, 0.0, 3.5) < 0
    assert pd_steer(-1.0, 0.0, 3.5) > 0
    assert pd_steer(0.0, 0.2, 3.5) < 0
    assert pd_steer(100.0, 0.0, 3.5) == -1.0


def test_free_road_no_brake(lone_world):
    action = reference_action(lone_world)
    assert action.brake == 0
    assert action.steer == pytest.approx(0.0)


def test_brakes_when_boxed_in(stadium):
    ego = place(stadium, s=10.0, lane=1, speed=12.0)
    leader = place(stadium, s=20.0, lane=1, speed=0.0, speed_cap=5.0)
    beside = place(stadium, s=12.0, lane=0, speed=12.0, speed_cap=12.0)
    state = WorldState(ego=ego, traffic=(leader, beside), track=stadium)
    action, latch = reference_plan(state, EGO)
    assert action.brake == 1
    assert latch is None


def test_overtakes_slow_leader(stadium):
    ego = place(stadium, s=10.0, lane=1, speed=15.0)
    leader = place(stadium, s=40.0, lane=1, speed=8.0, speed_cap=8.0)
    state = WorldState(ego=ego, traffic=(leader,), track=stadium)
    action, latch = reference_plan(state, EGO)
    assert latch == 0
    assert action.steer > 0
    assert action.brake == 0


@pytest.mark.parametrize("gap", [20.0, 10.0])
def test_overtake_at_cruise_speed_does_not_brake(stadium, gap):
    ego = place(stadium, s=10.0, lane=1, speed=20.0)
    leader = place(stadium, s=10.0 + gap, lane=1, speed=10.0, speed_cap=10.0)
    action, latch = reference_plan(WorldState(ego=ego, traffic=(leader,), track=stadium), EGO)
    assert latch == 0
    assert action.steer > 0
    assert action.brake == 0


def test_lane_change_brakes_when_nearly_touching(stadium):
    ego = place(stadium, s=10.0, lane=1, speed=20.0, target_lane=0)
    leader = place(stadium, s=14.0, lane=1, speed=10.0, speed_cap=10.0)
    action, latch = reference_plan(WorldState(ego=ego, traffic=(leader,), track=stadium), EGO)
    assert latch == 0
    assert action.brake == 1


def test_single_lane_brakes_behind_slow_car():
    track = build_track(TrackSpec("loop", (Segment.arc(100.0, 2 * math.pi),), lane_count=1,
                                  lane_width=3.5, speed_limit=20))
    ego = place(track, s=10.0, lane=0, speed=15.0)
    leader = place(track, s=20.0, lane=0, speed=5.0, speed_cap=5.0)
    action, latch = reference_plan(WorldState(ego=ego, traffic=(leader,), track=track), EGO)
    assert latch is None
    assert action.brake == 1


def test_ignores_fast_leader(stadium):
    ego = place(stadium, s=10.0, lane=1, speed=15.0, speed_cap=15.0)
    leader = place(stadium, s=40.0, lane=1, speed=18.0, speed_cap=18.0)
    state = WorldState(ego=ego, traffic=(leader,), track=stadium)
    assert reference_plan(state, EGO)[1] is None


def test_traffic_view(stadium):
    ego = place(stadium, s=stadium.length - 5.0, lane=0)
    other = place(stadium, s=5.0, lane=1, target_lane=0)
    view = TrafficView.of(WorldState(ego=ego, traffic=(other,), track=stadium))
    gaps = view.ahead(0)
    assert gaps[1] == pytest.approx(10.0)
    assert gaps[0] == float("inf")
    assert view.in_lane(0).tolist() == [True, True]


def test_query_reference_counts(lone_world):
    ledger = QueryLedger()
    query_reference(lone_world, ledger)
    query_reference(lone_world, ledger, METRIC)
    assert ledger.count(LABEL) == 1
    assert ledger.metric_queries == 1
    assert ledger.label_queries == 1


@pytest.mark.slow
@pytest.mark.parametrize("traffic", [0, 12])
def test_reference_completes_three_laps(traffic):
    for track in shipped_tracks():
        goal = 3 * track.length
        traj = drive(new_world(track, 11, traffic), lambda s: (reference_action(s), REFERENCE),
                     max_steps=int(goal / (0.25 * track.spec.speed_limit) * 30),
                     until=lambda s: s.ego.odometer >= goal)
        assert traj.final.halted != OFF_ROAD, track.id
        assert traj.final.damage == 0, track.id
        assert traj.final.ego.odometer >= goal, track.id
