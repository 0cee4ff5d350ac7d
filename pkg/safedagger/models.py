"""Data models: tracks, car and world states, actions, labels, query ledger."""

import math
from collections import Counter
from dataclasses import dataclass, field, fields
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from safedagger.track import Track

# World halt status
RUNNING = "running"
OFF_ROAD = "off_road"
FINISHED = "finished"

# Who produced the action at a timestep
PRIMARY = "primary"
REFERENCE = "reference"
CONTROLLER_CODES = {REFERENCE: 0, PRIMARY: 1}
CONTROLLER_NAMES = {v: k for k, v in CONTROLLER_CODES.items()}

# Query ledger tags
LABEL = "label"
SAFETY_LABEL = "safety-label"
TAKEOVER = "takeover"
METRIC = "metric"

STRAIGHT = "straight"
ARC = "arc"


@dataclass(frozen=True)
class Segment:
    """One piece of a track centerline.

    Arcs carry a signed sweep in radians: positive turns left.
    """
    kind: str
    length: float = 0.0
    radius: float = 0.0
    sweep: float = 0.0

    @classmethod
    def straight(cls, length: float) -> "Segment":
        return cls(kind=STRAIGHT, length=float(length))

    @classmethod
    def arc(cls, radius: float, sweep: float) -> "Segment":
        return cls(kind=ARC, length=abs(radius * sweep), radius=float(radius), sweep=float(sweep))

    @property
    def curvature(self) -> float:
        if self.kind == STRAIGHT:
            return 0.0
        return math.copysign(1.0 / self.radius, self.sweep)


@dataclass(frozen=True)
class TrackSpec:
    id: str
    segments: tuple[Segment, ...]
    lane_count: int
    lane_width: float
    speed_limit: float
    split: str = "train"
    description: str = ""


@dataclass(frozen=True)
class Action:
    steer: float
    brake: int = 0

    def __post_init__(self):
        steer = float(self.steer)
        object.__setattr__(self, "steer", min(1.0, max(-1.0, steer)))
        object.__setattr__(self, "brake", 1 if self.brake else 0)


@dataclass(frozen=True)
class CarState:
    """Curvilinear state of one car.

    lateral_offset is positive to the left of the road center; lane 0 is
    the leftmost lane. target_lane latches a lane change in progress.
    """
    arc_position: float
    lateral_offset: float
    heading_error: float
    speed: float
    lane_index: int
    speed_cap: float = math.inf
    target_lane: int | None = None
    odometer: float = 0.0


@dataclass(frozen=True)
class WorldState:
    ego: CarState
    traffic: tuple[CarState, ...]
    track: "Track"
    time_step: int = 0
    damage: int = 0
    halted: str = RUNNING

    @property
    def cars(self) -> tuple[CarState, ...]:
        """Ego first, then traffic in spawn order."""
        return (self.ego, *self.traffic)


@dataclass(frozen=True)
class LabelVector:
    I_ll: float = 0.0
    I_lr: float = 0.0
    I_cl: float = 0.0
    I_cm: float = 0.0
    I_cr: float = 0.0
    D_cl: float = 1.0
    D_cm: float = 1.0
    D_cr: float = 1.0
    P_c: float = 0.0
    A_c: float = 0.0
    S_c: float = 0.0
    I_b: float = 0.0

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.names()], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "LabelVector":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (len(cls.names()),):
            raise ValueError(f"expected {len(cls.names())} label values, got shape {values.shape}")
        return cls(**{n: float(v) for n, v in zip(cls.names(), values)})


LABEL_NAMES = LabelVector.names()
INDICATOR_NAMES = ("I_ll", "I_lr", "I_cl", "I_cm", "I_cr")
REGRESSION_NAMES = ("D_cl", "D_cm", "D_cr", "P_c", "A_c")


@dataclass
class QueryLedger:
    """Counts reference-policy invocations per tag.

    Each collection episode or evaluation run can own its ledger;
    ledgers merge by addition.
    """
    counts: Counter = field(default_factory=Counter)
    per_iteration: dict[int, Counter] = field(default_factory=dict)
    iteration: int = 0

    def record(self, tag: str, n: int = 1) -> None:
        if n < 0:
            raise ValueError("query count cannot decrease")
        self.counts[tag] += n
        self.per_iteration.setdefault(self.iteration, Counter())[tag] += n

    def merge(self, other: "QueryLedger") -> "QueryLedger":
        self.counts.update(other.counts)
        for it, c in other.per_iteration.items():
            self.per_iteration.setdefault(it, Counter()).update(c)
        return self

    def count(self, tag: str, iteration: int | None = None) -> int:
        if iteration is None:
            return self.counts[tag]
        return self.per_iteration.get(iteration, Counter())[tag]

    @property
    def label_queries(self) -> int:
        return self.counts[LABEL] + self.counts[SAFETY_LABEL]

    @property
    def takeover_queries(self) -> int:
        return self.counts[TAKEOVER]

    @property
    def metric_queries(self) -> int:
        return self.counts[METRIC]

    @property
    def total(self) -> int:
        return sum(self.counts.values())
