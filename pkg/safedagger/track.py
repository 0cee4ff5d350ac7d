"""Track geometry: TrackSpec files, loop closure, arc-length queries."""

import math
import pathlib
from importlib.resources import files

import numpy as np

from safedagger.config import parse_settings
from safedagger.errors import ConfigError, TrackError
from safedagger.models import ARC, STRAIGHT, Segment, TrackSpec

CLOSURE_POSITION_TOL = 1e-6
CLOSURE_HEADING_TOL = 1e-6
SPLITS = ("train", "test")


def parse_track_spec(text: str, source: str = "<track>") -> TrackSpec:
    """Parse the plain-text track format.

    Example:
        id = "stadium"
        split = "train"
        lane_count = 2
        lane_width = 3.5
        speed_limit = 20
        segment = straight 200
        segment = arc 50 180      # radius m, sweep degrees (negative turns right)
    """
    try:
        data = parse_settings(text)
    except ConfigError as e:
        raise TrackError(f"{source}: {e}") from e
    for key in ("id", "lane_count", "lane_width", "speed_limit", "segment"):
        if key not in data:
            raise TrackError(f"{source}: missing '{key}'")
    raw_segments = data["segment"]
    if not isinstance(raw_segments, list):
        raw_segments = [raw_segments]
    segments = []
    for raw in raw_segments:
        parts = str(raw).split()
        try:
            if parts[0] == STRAIGHT and len(parts) == 2:
                segments.append(Segment.straight(float(parts[1])))
            elif parts[0] == ARC and len(parts) == 3:
                segments.append(Segment.arc(float(parts[1]), math.radians(float(parts[2]))))
            else:
                raise ValueError
        except (ValueError, IndexError):
            raise TrackError(f"{source}: bad segment '{raw}' "
                             f"(expected 'straight LENGTH' or 'arc RADIUS SWEEP_DEG')") from None
    split = data.get("split", "train")
    if split not in SPLITS:
        raise TrackError(f"{source}: split must be one of {SPLITS}, got '{split}'")
    try:
        return TrackSpec(
            id=str(data["id"]),
            segments=tuple(segments),
            lane_count=int(data["lane_count"]),
            lane_width=float(data["lane_width"]),
            speed_limit=float(data["speed_limit"]),
            split=split,
            description=str(data.get("description", "")),
        )
    except (TypeError, ValueError) as e:
        raise TrackError(f"{source}: {e}") from e


def format_track_spec(spec: TrackSpec) -> str:
    lines = [f'id = "{spec.id}"', f'split = "{spec.split}"']
    if spec.description:
        lines.append(f'description = "{spec.description}"')
    lines += [
        f"lane_count = {spec.lane_count}",
        f"lane_width = {spec.lane_width!r}",
        f"speed_limit = {spec.speed_limit!r}",
    ]
    for seg in spec.segments:
        if seg.kind == STRAIGHT:
            lines.append(f"segment = straight {seg.length!r}")
        else:
            lines.append(f"segment = arc {seg.radius!r} {math.degrees(seg.sweep)!r}")
    return "\n".join(lines) + "\n"


def _check_spec(spec: TrackSpec) -> None:
    if not spec.segments:
        raise TrackError(f"track '{spec.id}': no segments")
    if spec.lane_count < 1:
        raise TrackError(f"track '{spec.id}': lane_count must be >= 1")
    if spec.lane_width <= 0:
        raise TrackError(f"track '{spec.id}': lane_width must be > 0")
    if spec.speed_limit <= 0:
        raise TrackError(f"track '{spec.id}': speed_limit must be > 0")
    road_width = spec.lane_count * spec.lane_width
    for i, seg in enumerate(spec.segments):
        if seg.kind == STRAIGHT and seg.length <= 0:
            raise TrackError(f"track '{spec.id}': segment {i} has non-positive length")
        if seg.kind == ARC:
            if seg.radius <= road_width:
                raise TrackError(f"track '{spec.id}': segment {i} radius {seg.radius} "
                                 f"must exceed road width {road_width}")
            if seg.sweep == 0:
                raise TrackError(f"track '{spec.id}': segment {i} has zero sweep")


def _advance(x: float, y: float, theta: float, seg: Segment) -> tuple[float, float, float]:
    if seg.kind == STRAIGHT:
        return x + seg.length * math.cos(theta), y + seg.length * math.sin(theta), theta
    k = seg.curvature
    t1 = theta + seg.sweep
    return (x + (math.sin(t1) - math.sin(theta)) / k,
            y + (math.cos(theta) - math.cos(t1)) / k,
            t1)


def closure_residual(spec: TrackSpec) -> tuple[float, float]:
    """Distance and wrapped heading between the loop's end and start poses."""
    x = y = theta = 0.0
    for seg in spec.segments:
        x, y, theta = _advance(x, y, theta, seg)
    heading = math.atan2(math.sin(theta), math.cos(theta))
    return math.hypot(x, y), abs(heading)


class Track:
    """Closed-loop road geometry with arc-length parameterization.

    Lane 0 is the leftmost lane; lateral offsets are positive to the left
    of the road center.
    """

    def __init__(self, spec: TrackSpec):
        self.spec = spec
        n = len(spec.segments)
        self._starts = np.zeros(n)
        self._x0 = np.zeros(n)
        self._y0 = np.zeros(n)
        self._theta0 = np.zeros(n)
        self._kappa = np.array([seg.curvature for seg in spec.segments])
        x = y = theta = s = 0.0
        for i, seg in enumerate(spec.segments):
            self._starts[i], self._x0[i], self._y0[i], self._theta0[i] = s, x, y, theta
            x, y, theta = _advance(x, y, theta, seg)
            s += seg.length
        self.length = s
        self.half_width = spec.lane_count * spec.lane_width / 2

    @property
    def id(self) -> str:
        return self.spec.id

    def __repr__(self):
        return f"Track({self.spec.id!r}, length={self.length:.2f})"

    def _locate(self, s):
        s = np.mod(np.asarray(s, dtype=np.float64), self.length)
        j = np.clip(np.searchsorted(self._starts, s, side="right") - 1, 0, len(self._starts) - 1)
        return s - self._starts[j], j

    def pose(self, s):
        """Centerline (x, y, heading) at arc position(s) s."""
        u, j = self._locate(s)
        k = self._kappa[j]
        th0 = self._theta0[j]
        curved = k != 0
        k_safe = np.where(curved, k, 1.0)
        th = th0 + k * u
        x = np.where(curved, self._x0[j] + (np.sin(th) - np.sin(th0)) / k_safe,
                     self._x0[j] + u * np.cos(th0))
        y = np.where(curved, self._y0[j] + (np.cos(th0) - np.cos(th)) / k_safe,
                     self._y0[j] + u * np.sin(th0))
        if np.ndim(s) == 0:
            return float(x), float(y), float(th)
        return x, y, th

    def curvature(self, s):
        _, j = self._locate(s)
        k = self._kappa[j]
        return float(k) if np.ndim(s) == 0 else k

    def world_point(self, s, d):
        """World position at arc position s and lateral offset d."""
        x, y, th = self.pose(s)
        return x - np.multiply(d, np.sin(th)), y + np.multiply(d, np.cos(th))

    def lane_center(self, lane):
        """Lateral offset of a lane's center line."""
        return self.half_width - (lane + 0.5) * self.spec.lane_width

    def lane_of(self, d) -> int:
        """Index of the lane nearest to lateral offset d."""
        idx = math.floor((self.half_width - d) / self.spec.lane_width)
        return min(self.spec.lane_count - 1, max(0, idx))

    def on_road(self, d: float, margin: float = 0.0) -> bool:
        return abs(d) <= self.half_width + margin

    def render_ascii(self, width: int = 60) -> str:
        """Coarse top-down map of the centerline; S marks the start."""
        s = np.linspace(0.0, self.length, max(400, int(self.length)), endpoint=False)
        xs, ys, _ = self.pose(s)
        xmin, xmax, ymin, ymax = xs.min(), xs.max(), ys.min(), ys.max()
        span = max(xmax - xmin, ymax - ymin, 1.0)
        height = max(4, int(width * (ymax - ymin) / span / 2) + 1)
        cols = np.clip(((xs - xmin) / span * (width - 1)).round().astype(int), 0, width - 1)
        rows = np.clip(((ymax - ys) / span * (width - 1) / 2).round().astype(int), 0, height - 1)
        grid = [[" "] * width for _ in range(height)]
        for r, c in zip(rows, cols):
            grid[r][c] = "#"
        grid[rows[0]][cols[0]] = "S"
        return "\n".join("".join(row).rstrip() for row in grid)


def build_track(spec: TrackSpec) -> Track:
    """Validate a TrackSpec and build its geometry."""
    _check_spec(spec)
    pos_err, heading_err = closure_residual(spec)
    if pos_err > CLOSURE_POSITION_TOL or heading_err > CLOSURE_HEADING_TOL:
        raise TrackError(
            f"track '{spec.id}' does not close: position residual {pos_err:.6g} m, "
            f"heading residual {heading_err:.6g} rad",
            residual=(pos_err, heading_err),
        )
    return Track(spec)


def load_track(path: pathlib.Path | str) -> Track:
    path = pathlib.Path(path)
    return build_track(parse_track_spec(path.read_text(), source=str(path)))


def shipped_track_specs() -> list[TrackSpec]:
    """TrackSpecs bundled with the package, sorted by split then id."""
    specs = []
    for entry in files("safedagger.tracks").iterdir():
        if entry.name.endswith(".track"):
            specs.append(parse_track_spec(entry.read_text(), source=entry.name))
    return sorted(specs, key=lambda s: (SPLITS.index(s.split), s.id))


def shipped_tracks(split: str | None = None) -> list[Track]:
    return [build_track(s) for s in shipped_track_specs() if split is None or s.split == split]


def resolve_tracks(ids: list[str] | None, split: str) -> list[Track]:
    """Shipped tracks by id, or the whole split when ids is empty."""
    tracks = shipped_tracks()
    if not ids:
        return [t for t in tracks if t.spec.split == split]
    by_id = {t.id: t for t in tracks}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise ConfigError([f"unknown track id(s): {', '.join(missing)}"])
    return [by_id[i] for i in ids]
