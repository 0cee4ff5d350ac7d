"""Rule-based reference driver with privileged access to the world state.

The same rules drive every traffic car and label every training example:
follow the current lane accelerating to the speed limit, change lanes when
a slower car is ahead and a neighbouring lane is free, otherwise brake.
"""

import math
from dataclasses import dataclass

import numpy as np

from safedagger.models import LABEL, Action, CarState, QueryLedger, WorldState
from safedagger.sim import A_BRAKE

EGO = -1

LATERAL_GAIN = 0.8
HEADING_GAIN = 1.2
D_BRAKE = 15.0          # m
D_TRIGGER = 35.0        # m, lane-change trigger distance
D_FREE = 25.0           # m, longitudinal clearance for a free lane
LOOK_AHEAD = 60.0       # m, leader search horizon
SLOWER_MARGIN = 0.5     # m/s below own desired speed counts as slower
SETTLE_OFFSET = 0.5     # m, lane change complete
SETTLE_HEADING = 0.05   # rad
LOST_LANES = 1.5        # lane widths from target before a latch is dropped
D_EMERGENCY = 6.0       # m, current-lane gap that still brakes during a lane change


@dataclass(frozen=True)
class TrafficView:
    """Column arrays over all cars (ego at index 0) for one world state."""
    s: np.ndarray
    lane: np.ndarray
    target: np.ndarray
    speed: np.ndarray
    length: float

    @classmethod
    def of(cls, state: WorldState) -> "TrafficView":
        cars = state.cars
        return cls(
            s=np.array([c.arc_position for c in cars]),
            lane=np.array([c.lane_index for c in cars]),
            target=np.array([-1 if c.target_lane is None else c.target_lane for c in cars]),
            speed=np.array([c.speed for c in cars]),
            length=state.track.length,
        )

    def ahead(self, k: int) -> np.ndarray:
        """Wrapped distance from car k to every car, in (0, length); self masked."""
        gap = np.mod(self.s - self.s[k], self.length)
        gap[k] = np.inf
        return gap

    def in_lane(self, lane: int) -> np.ndarray:
        return (self.lane == lane) | (self.target == lane)


def _row(car_index: int) -> int:
    return 0 if car_index == EGO else car_index + 1


def _leader(view: TrafficView, k: int, lane: int) -> tuple[float, float]:
    gap = view.ahead(k)
    mask = view.in_lane(lane) & (gap > 0) & (gap < LOOK_AHEAD)
    if not mask.any():
        return math.inf, math.inf
    j = np.flatnonzero(mask)[np.argmin(gap[mask])]
    return float(gap[j]), float(view.speed[j])


def _lane_free(view: TrafficView, k: int, lane: int, far_lane: int, lane_count: int) -> bool:
    gap = view.ahead(k)
    near = np.minimum(gap, view.length - gap) < D_FREE
    near[k] = False
    if (near & view.in_lane(lane)).any():
        return False
    if 0 <= far_lane < lane_count and (near & (view.lane == far_lane)).any():
        return False
    return True


def _must_brake(speed: float, gap: float, lead_speed: float) -> bool:
    if math.isinf(gap):
        return False
    closing = max(0.0, speed - lead_speed)
    return gap < D_BRAKE + closing * closing / (2 * A_BRAKE)


def _settled(car: CarState, center: float) -> bool:
    return (abs(car.lateral_offset - center) < SETTLE_OFFSET
            and abs(car.heading_error) < SETTLE_HEADING)


def pd_steer(lateral_error: float, heading_error: float, lane_width: float) -> float:
    steer = -LATERAL_GAIN * lateral_error / lane_width - HEADING_GAIN * heading_error
    return min(1.0, max(-1.0, steer))


def reference_plan(state: WorldState, car_index: int,
                   view: TrafficView | None = None) -> tuple[Action, int | None]:
    """Reference action for one car plus its updated lane-change latch."""
    if view is None:
        view = TrafficView.of(state)
    track = state.track
    spec = track.spec
    k = _row(car_index)
    car = state.ego if car_index == EGO else state.traffic[car_index]
    lane = car.lane_index

    latch = car.target_lane
    if latch is not None:
        err = car.lateral_offset - track.lane_center(latch)
        if _settled(car, track.lane_center(latch)) or abs(err) > LOST_LANES * spec.lane_width:
            latch = None

    follow = lane if latch is None else latch
    gap, lead_speed = _leader(view, k, follow)
    desired = min(spec.speed_limit, car.speed_cap)
    if (latch is None and gap < D_TRIGGER and lead_speed < desired - SLOWER_MARGIN
            and _settled(car, track.lane_center(lane))):
        for cand in (lane - 1, lane + 1):
            if 0 <= cand < spec.lane_count and _lane_free(view, k, cand, 2 * cand - lane, spec.lane_count):
                latch = follow = cand
                gap, lead_speed = _leader(view, k, cand)
                break

    # mid lane change only the target lane governs braking
    brake = _must_brake(car.speed, gap, lead_speed)
    if follow != lane:
        brake = brake or _leader(view, k, lane)[0] < D_EMERGENCY
    steer = pd_steer(car.lateral_offset - track.lane_center(follow), car.heading_error, spec.lane_width)
    return Action(steer, int(brake)), latch


def reference_action(state: WorldState, car_index: int = EGO) -> Action:
    return reference_plan(state, car_index)[0]


def query_reference(state: WorldState, ledger: QueryLedger, tag: str = LABEL) -> Action:
    """Reference action for the ego, counted on the ledger under `tag`."""
    ledger.record(tag)
    return reference_action(state, EGO)
