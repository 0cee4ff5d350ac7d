"""Driving evaluation on test tracks and safety-ranked observation dumps."""

import logging
import math
import pathlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from safedagger.dataset import Dataset, save_ranked, write_observation_csv
from safedagger.errors import ConfigError
from safedagger.models import METRIC, PRIMARY, QueryLedger, WorldState
from safedagger.perception import observe
from safedagger.policies import (PolicyBundle, PrimaryPolicy, ReferencePolicy, SafetyPolicy,
                                 safe_strategy_act)
from safedagger.reference import query_reference
from safedagger.sim import DT, Trajectory, derive_seed, drive, new_world, write_trajectory_csv
from safedagger.track import Track

log = logging.getLogger(__name__)

NAIVE = "naive"
SAFE = "safe"
STRATEGIES = (NAIVE, SAFE)
MIN_AVERAGE_SPEED = 0.25    # fraction of the speed limit before a run is cut off


@dataclass(frozen=True)
class EvalConfig:
    tracks: tuple[Track, ...]
    laps_target: int = 3
    traffic: int = 0
    strategy: str = NAIVE
    seed: int = 0

    def __post_init__(self):
        if self.laps_target < 1:
            raise ValueError("laps_target must be >= 1")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy '{self.strategy}'")
        if self.traffic < 0:
            raise ValueError("traffic must be >= 0")

    def max_steps(self, track: Track) -> int:
        distance = self.laps_target * track.length
        return math.ceil(distance / (MIN_AVERAGE_SPEED * track.spec.speed_limit) / DT)


@dataclass
class TrackResult:
    track_id: str
    laps: float = 0.0
    damage: int = 0
    steps: int = 0
    primary_steps: int = 0
    reference_steps: int = 0
    steer_sq_error: float = 0.0
    status: str = ""

    @property
    def damage_per_lap(self) -> float:
        return self.damage / self.laps if self.laps > 0 else float(self.damage)


@dataclass
class EvalReport:
    strategy: str
    traffic: int
    laps_target: int
    per_track: list[TrackResult] = field(default_factory=list)
    trajectory_paths: list[pathlib.Path] = field(default_factory=list)
    metric_queries: int = 0

    @property
    def avg_laps(self) -> float:
        return float(np.mean([r.laps for r in self.per_track])) if self.per_track else 0.0

    @property
    def damage_per_lap(self) -> float:
        laps = sum(r.laps for r in self.per_track)
        damage = sum(r.damage for r in self.per_track)
        return damage / laps if laps > 0 else float(damage)

    @property
    def steering_mse(self) -> float | None:
        """Mean squared steering error over primary-driven steps; None if there were none."""
        n = sum(r.primary_steps for r in self.per_track)
        if n == 0:
            return None
        return sum(r.steer_sq_error for r in self.per_track) / n

    @property
    def takeover_fraction(self) -> float:
        steps = sum(r.steps for r in self.per_track)
        return sum(r.reference_steps for r in self.per_track) / steps if steps else 0.0


def _run_track(bundle: PolicyBundle, cfg: EvalConfig, track: Track, seed: int,
               ledger: QueryLedger) -> tuple[TrackResult, Trajectory]:
    primary = bundle.primary if bundle.primary is not None else ReferencePolicy()
    needs_obs = not isinstance(primary, ReferencePolicy) or cfg.strategy == SAFE
    result = TrackResult(track.id)

    def driver(state: WorldState):
        obs = observe(state) if needs_obs else None
        if cfg.strategy == SAFE:
            action, tag = safe_strategy_act(primary, bundle.safety, obs, state, ledger)
        else:
            action, tag = primary.decide(obs, state)[0], PRIMARY
        if tag == PRIMARY:
            ref = query_reference(state, ledger, METRIC)
            result.primary_steps += 1
            result.steer_sq_error += (action.steer - ref.steer) ** 2
        else:
            result.reference_steps += 1
        return action, tag

    goal = cfg.laps_target * track.length
    traj = drive(new_world(track, seed, cfg.traffic), driver, cfg.max_steps(track),
                 until=lambda s: s.ego.odometer >= goal)
    final = traj.final
    result.laps = float(min(max(final.ego.odometer / track.length, 0.0), cfg.laps_target))
    result.damage = final.damage
    result.steps = len(traj)
    result.status = final.halted
    return result, traj


def evaluate(bundle: PolicyBundle, cfg: EvalConfig, ledger: QueryLedger | None = None,
             trajectory_dir: pathlib.Path | str | None = None, workers: int = 1) -> EvalReport:
    """Drive the bundle on every track in cfg and collect the metric suite.

    A bundle without a primary puts the reference in the driver's seat.
    Steering comparisons are counted on the ledger as metric queries.
    """
    if cfg.strategy == SAFE and bundle.safety is None:
        raise ConfigError(["eval.strategies: the safe strategy needs a safety policy"])
    ledger = ledger if ledger is not None else QueryLedger()
    seeds = [derive_seed(cfg.seed, "eval", i) for i in range(len(cfg.tracks))]
    ledgers = [QueryLedger(iteration=ledger.iteration) for _ in cfg.tracks]

    def run(i):
        return _run_track(bundle, cfg, cfg.tracks[i], seeds[i], ledgers[i])

    if workers > 1 and len(cfg.tracks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, range(len(cfg.tracks))))
    else:
        outcomes = [run(i) for i in range(len(cfg.tracks))]

    report = EvalReport(cfg.strategy, cfg.traffic, cfg.laps_target)
    for (result, traj), track_ledger in zip(outcomes, ledgers):
        ledger.merge(track_ledger)
        report.metric_queries += track_ledger.metric_queries
        report.per_track.append(result)
        if trajectory_dir is not None:
            path = pathlib.Path(trajectory_dir) / f"{result.track_id}-{cfg.strategy}-traffic{cfg.traffic}.csv"
            write_trajectory_csv(traj, path)
            report.trajectory_paths.append(path)
        log.info("eval %s/%s traffic=%d: laps %.2f damage %d takeover %d/%d",
                 result.track_id, cfg.strategy, cfg.traffic, result.laps, result.damage,
                 result.reference_steps, result.steps)
    return report


class Ranking(NamedTuple):
    order: np.ndarray
    p_safe: np.ndarray


def rank_observations(dataset: Dataset, primary: PrimaryPolicy, safety: SafetyPolicy) -> Ranking:
    """All examples ordered by ascending p(safe); ties keep dataset order."""
    if len(dataset) == 0:
        return Ranking(np.zeros(0, dtype=np.int64), np.zeros(0))
    p = safety.p_safe(primary.features(dataset.obs))
    order = np.argsort(p, kind="stable")
    return Ranking(order, p[order])


def export_ranked(dataset: Dataset, ranking: Ranking, top: int,
                  path: pathlib.Path | str, csv_path: pathlib.Path | str | None = None) -> int:
    """Write the `top` least-safe and `top` most-safe examples; returns rows written."""
    n = len(ranking.order)
    if 2 * top >= n:
        pick = np.arange(n)
    else:
        pick = np.concatenate([np.arange(top), np.arange(n - top, n)])
    subset = dataset.take(ranking.order[pick])
    probs = ranking.p_safe[pick]
    save_ranked(subset, probs, path)
    if csv_path is not None:
        write_observation_csv(subset, csv_path, p_safe=probs)
    return len(pick)
