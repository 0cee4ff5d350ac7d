"""Fixed-step driving world: kinematics, traffic, collisions, trajectories."""

import csv
import hashlib
import logging
import math
import pathlib
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from safedagger.errors import SimulationError
from safedagger.models import (FINISHED, OFF_ROAD, RUNNING, Action, CarState,
                               WorldState)
from safedagger.track import Track

log = logging.getLogger(__name__)

DT = 1.0 / 30.0
K_STEER = 0.35          # rad/m
A_ACC = 3.0             # m/s^2
A_BRAKE = 6.0           # m/s^2
COLLISION_RADIUS = 1.0
CAR_HALF_WIDTH = 1.0

SPAWN_SLOT = 20.0       # m between traffic slots in one lane
SPAWN_CLEAR = 30.0      # m kept free on each side of the ego spawn
TRAFFIC_CAP_RANGE = (0.55, 0.85)
EGO_START_SPEED = 0.6   # fraction of the speed limit


def derive_seed(*keys) -> int:
    """Stable 32-bit seed from a tuple of ints and strings."""
    digest = hashlib.sha256(repr(keys).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def advance_car(car: CarState, action: Action, track: Track) -> CarState:
    """Explicit Euler step of the curvilinear kinematic model."""
    v = car.speed
    he = car.heading_error
    kappa = track.curvature(car.arc_position)
    heading = he + (v * action.steer * K_STEER - v * kappa) * DT
    lateral = car.lateral_offset + v * math.sin(he) * DT
    ds = v * math.cos(he) * DT
    arc = (car.arc_position + ds) % track.length
    if action.brake:
        speed = max(v - A_BRAKE * DT, 0.0)
    else:
        cap = min(track.spec.speed_limit, car.speed_cap)
        speed = min(v + A_ACC * DT, cap) if v < cap else v
    return replace(
        car,
        arc_position=arc,
        lateral_offset=lateral,
        heading_error=heading,
        speed=speed,
        lane_index=track.lane_of(lateral),
        odometer=car.odometer + ds,
    )


def on_road_bound(track: Track) -> float:
    return track.half_width + CAR_HALF_WIDTH


def ego_collides(state: WorldState) -> bool:
    if not state.traffic:
        return False
    track = state.track
    s = np.array([c.arc_position for c in state.cars])
    d = np.array([c.lateral_offset for c in state.cars])
    x, y = track.world_point(s, d)
    dist = np.hypot(x[1:] - x[0], y[1:] - y[0])
    return bool((dist < 2 * COLLISION_RADIUS).any())


def step(state: WorldState, ego_action: Action) -> WorldState:
    """Advance the world by one timestep of DT seconds."""
    from safedagger.reference import EGO, TrafficView, reference_plan

    if state.halted != RUNNING:
        raise SimulationError(f"cannot step a halted world (status: {state.halted})")
    track = state.track
    view = TrafficView.of(state)

    _, ego_latch = reference_plan(state, EGO, view)
    ego = advance_car(replace(state.ego, target_lane=ego_latch), ego_action, track)

    traffic = []
    for i, car in enumerate(state.traffic):
        action, latch = reference_plan(state, i, view)
        traffic.append(advance_car(replace(car, target_lane=latch), action, track))

    nxt = replace(state, ego=ego, traffic=tuple(traffic), time_step=state.time_step + 1)
    damage = state.damage + (1 if ego_collides(nxt) else 0)
    halted = OFF_ROAD if abs(ego.lateral_offset) > on_road_bound(track) else RUNNING
    return replace(nxt, damage=damage, halted=halted)


def finish(state: WorldState) -> WorldState:
    if state.halted != RUNNING:
        return state
    return replace(state, halted=FINISHED)


def spawn_traffic(track: Track, n_cars: int, rng_seed, keep_clear_at: float | None = None) -> list[CarState]:
    """Place traffic cars on distinct lane slots, deterministically from the seed.

    Slots are SPAWN_SLOT metres apart in every lane; slots within
    SPAWN_CLEAR of keep_clear_at are left empty. Speed caps are drawn
    below the track speed limit.
    """
    if n_cars < 0:
        raise ValueError("n_cars must be >= 0")
    slots = []
    per_lane = int(track.length // SPAWN_SLOT)
    for lane in range(track.spec.lane_count):
        for k in range(per_lane):
            s = k * SPAWN_SLOT
            if keep_clear_at is not None:
                gap = (s - keep_clear_at) % track.length
                if min(gap, track.length - gap) < SPAWN_CLEAR:
                    continue
            slots.append((s, lane))
    capacity = len(slots)
    if n_cars > capacity:
        raise SimulationError(f"track '{track.id}' holds at most {capacity} traffic cars, "
                              f"requested {n_cars}")
    if n_cars == 0:
        return []
    rng = np.random.default_rng(rng_seed)
    chosen = np.sort(rng.choice(capacity, size=n_cars, replace=False))
    lo, hi = TRAFFIC_CAP_RANGE
    caps = track.spec.speed_limit * rng.uniform(lo, hi, size=n_cars)
    cars = []
    for idx, cap in zip(chosen, caps):
        s, lane = slots[idx]
        cars.append(CarState(
            arc_position=s,
            lateral_offset=float(track.lane_center(lane)),
            heading_error=0.0,
            speed=float(cap),
            lane_index=lane,
            speed_cap=float(cap),
        ))
    return cars


def new_world(track: Track, seed, n_traffic: int = 0) -> WorldState:
    """Seeded spawn: ego on a random lane center, traffic clear of it."""
    rng = np.random.default_rng(seed)
    s0 = float(rng.uniform(0.0, track.length))
    lane = int(rng.integers(track.spec.lane_count))
    traffic_seed = int(rng.integers(2**32))
    ego = CarState(
        arc_position=s0,
        lateral_offset=float(track.lane_center(lane)),
        heading_error=0.0,
        speed=EGO_START_SPEED * track.spec.speed_limit,
        lane_index=lane,
    )
    traffic = spawn_traffic(track, n_traffic, traffic_seed, keep_clear_at=s0)
    return WorldState(ego=ego, traffic=tuple(traffic), track=track)


def laps_driven(state: WorldState) -> float:
    return state.ego.odometer / state.track.length


# A driver maps a world state to the ego action and a controller tag.
DriveFn = Callable[[WorldState], tuple[Action, str]]


@dataclass
class Trajectory:
    """States s_0..s_n with the n actions that connect them."""
    states: list[WorldState] = field(default_factory=list)
    actions: list[Action] = field(default_factory=list)
    tags: list[str] = field(default_factory=list)

    @property
    def final(self) -> WorldState:
        return self.states[-1]

    @property
    def status(self) -> str:
        return self.final.halted

    def __len__(self):
        return len(self.actions)


def drive(state: WorldState, driver: DriveFn, max_steps: int,
          until: Callable[[WorldState], bool] | None = None) -> Trajectory:
    """Roll the world forward under `driver` until halt, `until` or max_steps."""
    traj = Trajectory(states=[state])
    for _ in range(max_steps):
        if state.halted != RUNNING:
            break
        if until is not None and until(state):
            break
        action, tag = driver(state)
        state = step(state, action)
        traj.states.append(state)
        traj.actions.append(action)
        traj.tags.append(tag)
    if state.halted == RUNNING:
        traj.states[-1] = finish(state)
    return traj


def crash_free(traj: Trajectory) -> int:
    """1 iff the trajectory ends without damage and never left the road."""
    if not traj.states:
        raise ValueError("empty trajectory")
    final = traj.final
    return int(final.damage == 0 and final.halted != OFF_ROAD)


TRAJECTORY_COLUMNS = ("t", "arc_position", "lateral_offset", "heading_error", "speed",
                      "steer", "brake", "damage", "controller_tag")


def write_trajectory_csv(traj: Trajectory, path: pathlib.Path | str) -> None:
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRAJECTORY_COLUMNS)
        for st, action, tag in zip(traj.states, traj.actions, traj.tags):
            e = st.ego
            w.writerow([
                f"{st.time_step * DT:.6f}", f"{e.arc_position:.6f}", f"{e.lateral_offset:.6f}",
                f"{e.heading_error:.6f}", f"{e.speed:.6f}", f"{action.steer:.6f}",
                action.brake, st.damage, tag,
            ])
    log.debug("wrote %d trajectory rows to %s", len(traj), path)
