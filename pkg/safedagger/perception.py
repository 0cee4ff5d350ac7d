"""Forward-view raster observation and the twelve-variable label vector."""

import math

import numpy as np

from safedagger.models import Action, LabelVector, WorldState

CHANNELS = 3
ROWS = 12
COLS = 24
OBS_SIZE = CHANNELS * ROWS * COLS

VIEW_AHEAD = 60.0           # m covered by the rows, row 0 nearest
VIEW_WIDTH = 24.0           # m covered by the columns, column 0 leftmost
SUBROWS = 5                 # road samples per row
MARKING_HALF_WIDTH = 0.15   # m
CAR_LENGTH = 4.0
CAR_WIDTH = 2.0
PROJECTION_ITERS = 3

LABEL_HORIZON = 60.0        # m, distance normalisation
HEADING_SCALE = math.pi / 4

ROW_DEPTH = VIEW_AHEAD / ROWS
COL_WIDTH = VIEW_WIDTH / COLS
_SAMPLE_X = (np.arange(ROWS * SUBROWS) + 0.5) * (ROW_DEPTH / SUBROWS)
_COL_HI = VIEW_WIDTH / 2 - np.arange(COLS) * COL_WIDTH      # left edge of each column
_COL_LO = _COL_HI - COL_WIDTH
_ROW_LO = np.arange(ROWS) * ROW_DEPTH
_ROW_HI = _ROW_LO + ROW_DEPTH


def _overlap(lo, hi, edge_lo, edge_hi):
    """Length of [lo, hi] inside each [edge_lo, edge_hi]; broadcasts."""
    return np.clip(np.minimum(hi, edge_hi) - np.maximum(lo, edge_lo), 0.0, None)


def ego_frame(state: WorldState):
    """Ego world position, forward unit vector and left unit vector."""
    track = state.track
    e = state.ego
    cx, cy, th = track.pose(e.arc_position)
    px = cx - e.lateral_offset * math.sin(th)
    py = cy + e.lateral_offset * math.cos(th)
    heading = th + e.heading_error
    fwd = np.array([math.cos(heading), math.sin(heading)])
    left = np.array([-math.sin(heading), math.cos(heading)])
    return np.array([px, py]), fwd, left, heading


def _project(state: WorldState, points: np.ndarray, s_guess: np.ndarray):
    """Arc position, lateral offset and tangent heading of world points."""
    track = state.track
    s = s_guess
    for _ in range(PROJECTION_ITERS):
        cx, cy, th = track.pose(s)
        s = s + (points[:, 0] - cx) * np.cos(th) + (points[:, 1] - cy) * np.sin(th)
    cx, cy, th = track.pose(s)
    d = -(points[:, 0] - cx) * np.sin(th) + (points[:, 1] - cy) * np.cos(th)
    return s, d, th


def _lateral_coverage(d_lo, d_hi, d0, scale):
    """Column coverage of the track band [d_lo, d_hi] for each sample row.

    Along a sample row, track lateral offset is d0 + y * scale in ego
    lateral coordinate y.
    """
    a = (d_lo - d0) / scale
    b = (d_hi - d0) / scale
    lo = np.minimum(a, b)[:, None]
    hi = np.maximum(a, b)[:, None]
    return _overlap(lo, hi, _COL_LO[None, :], _COL_HI[None, :]) / COL_WIDTH


def observe(state: WorldState) -> np.ndarray:
    """Rasterize the forward view into a (3, 12, 24) grid in [0, 1].

    Channel 0 is drivable road, channel 1 lane markings, channel 2 cars
    ahead of the ego. Cells hold the covered area fraction.
    """
    track = state.track
    ego = state.ego
    origin, fwd, left, heading = ego_frame(state)
    points = origin[None, :] + _SAMPLE_X[:, None] * fwd[None, :]
    s, d0, th = _project(state, points, ego.arc_position + _SAMPLE_X * math.cos(ego.heading_error))
    rel = np.arctan2(np.sin(heading - th), np.cos(heading - th))
    scale = np.cos(rel)
    scale = np.where(np.abs(scale) < 0.05, np.copysign(0.05, scale), scale)

    hw = track.half_width
    road = _lateral_coverage(-hw, hw, d0, scale)
    marks = np.zeros_like(road)
    for k in range(track.spec.lane_count + 1):
        b = hw - k * track.spec.lane_width
        marks += _lateral_coverage(b - MARKING_HALF_WIDTH, b + MARKING_HALF_WIDTH, d0, scale)

    grid = np.zeros((CHANNELS, ROWS, COLS))
    grid[0] = road.reshape(ROWS, SUBROWS, COLS).mean(axis=1)
    grid[1] = np.minimum(marks, 1.0).reshape(ROWS, SUBROWS, COLS).mean(axis=1)
    grid[2] = _car_layer(state, origin, fwd, left)
    return np.clip(grid, 0.0, 1.0)


def _car_layer(state: WorldState, origin, fwd, left) -> np.ndarray:
    layer = np.zeros((ROWS, COLS))
    if not state.traffic:
        return layer
    track = state.track
    s = np.array([c.arc_position for c in state.traffic])
    d = np.array([c.lateral_offset for c in state.traffic])
    ahead = np.mod(s - state.ego.arc_position, track.length)
    keep = (ahead > 0) & (ahead < VIEW_AHEAD + CAR_LENGTH)
    if not keep.any():
        return layer
    x, y = track.world_point(s[keep], d[keep])
    rel = np.stack([x - origin[0], y - origin[1]], axis=1)
    fx = rel @ fwd
    ly = rel @ left
    for cx, cy in zip(fx, ly):
        rows = _overlap(cx - CAR_LENGTH / 2, cx + CAR_LENGTH / 2, _ROW_LO, _ROW_HI) / ROW_DEPTH
        cols = _overlap(cy - CAR_WIDTH / 2, cy + CAR_WIDTH / 2, _COL_LO, _COL_HI) / COL_WIDTH
        layer += np.outer(rows, cols)
    return np.minimum(layer, 1.0)


def flatten(obs: np.ndarray) -> np.ndarray:
    return np.asarray(obs, dtype=np.float64).reshape(-1)


def extract_labels(state: WorldState, action: Action | None = None) -> LabelVector:
    """Privileged affordances of the ego; S_c and I_b come from `action`."""
    track = state.track
    spec = track.spec
    ego = state.ego
    lane = track.lane_of(ego.lateral_offset)
    front = {lane - 1: LABEL_HORIZON, lane: LABEL_HORIZON, lane + 1: LABEL_HORIZON}
    for car in state.traffic:
        gap = (car.arc_position - ego.arc_position) % track.length
        if 0 < gap < LABEL_HORIZON and car.lane_index in front:
            front[car.lane_index] = min(front[car.lane_index], gap)

    def indicator(l):
        return 1.0 if front[l] < LABEL_HORIZON else 0.0

    half_lane = spec.lane_width / 2
    return LabelVector(
        I_ll=1.0 if lane > 0 else 0.0,
        I_lr=1.0 if lane < spec.lane_count - 1 else 0.0,
        I_cl=indicator(lane - 1),
        I_cm=indicator(lane),
        I_cr=indicator(lane + 1),
        D_cl=front[lane - 1] / LABEL_HORIZON,
        D_cm=front[lane] / LABEL_HORIZON,
        D_cr=front[lane + 1] / LABEL_HORIZON,
        P_c=float(np.clip((ego.lateral_offset - track.lane_center(lane)) / half_lane, -1.0, 1.0)),
        A_c=float(np.clip(ego.heading_error / HEADING_SCALE, -1.0, 1.0)),
        S_c=action.steer if action is not None else 0.0,
        I_b=float(action.brake) if action is not None else 0.0,
    )
