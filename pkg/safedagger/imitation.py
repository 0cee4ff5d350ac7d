"""Training regimes: supervised cloning, DAgger and SafeDAgger.

All three share one bootstrap: D_0 collected with the reference driving,
labeled, and used to fit pi_0. Primaries are refit from scratch on the
aggregated set each iteration; D_safe only ever trains safety policies.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Annotated, Literal, NamedTuple

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, model_validator

from safedagger.dataset import Dataset, tag_code
from safedagger.errors import TrainingError
from safedagger.evaluation import NAIVE, SAFE, EvalConfig, EvalReport, evaluate
from safedagger.models import (INDICATOR_NAMES, LABEL, LABEL_NAMES, PRIMARY, REFERENCE,
                               REGRESSION_NAMES, RUNNING, SAFETY_LABEL, TAKEOVER, QueryLedger,
                               WorldState)
from safedagger.nn import Examples, LossTerm, TrainConfig, TrainingHistory, fit, loss
from safedagger.perception import extract_labels, observe
from safedagger.policies import (BRAKE_HEAD, SAFETY_HEAD, SAFETY_LOSS, STEER_HEAD, UNSAFE,
                                 ConstantSafety, PolicyBundle, PrimaryPolicy, SafetyPolicy,
                                 calibrate_tau, mixture_act, primary_net_spec, safe_strategy_act,
                                 safety_labels, safety_net_spec)
from safedagger.reference import query_reference, reference_action
from safedagger.report import IterationRecord, RunReport
from safedagger.sim import derive_seed, new_world, step
from safedagger.track import Track, resolve_tracks

log = logging.getLogger(__name__)

REFERENCE_ONLY = "reference"
NAIVE_PRIMARY = "naive"
MIXTURE = "mixture"
SAFE_STRATEGY = "safe"
COLLECT_STRATEGIES = (REFERENCE_ONLY, NAIVE_PRIMARY, MIXTURE, SAFE_STRATEGY)

EPISODE_STRIDE = 1_000_000  # episode ids of collection c start at c * EPISODE_STRIDE
INITIAL_COLLECTION = 0
SAFETY_COLLECTION = 1


def _as_list(v):
    if v is None or v == "":
        return []
    if isinstance(v, (list, tuple)):
        return list(v)
    return [v]


def _listed(t):
    return Annotated[list[t], BeforeValidator(_as_list)]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class RunSection(_Section):
    seed: int = 0
    iterations: int = Field(3, ge=0)


class SimSection(_Section):
    traffic: int = Field(8, ge=0)
    episode_steps: int = Field(900, gt=0)
    tracks: _listed(str) = []


class CollectSection(_Section):
    initial: int = Field(3000, gt=0)
    safety: int = Field(1000, gt=0)
    budgets: _listed(Annotated[int, Field(gt=0)]) = [3000, 3000, 1000]
    raw_factor: float = Field(1.0, ge=1.0)
    validation_fraction: float = Field(0.1, gt=0, lt=1)
    beta: _listed(Annotated[float, Field(ge=0, le=1)]) = [1.0]
    supervised_growth: bool = False


class SafetySection(_Section):
    tau: float | None = Field(None, gt=0)
    target_safe_fraction: float = Field(0.777, gt=0, lt=1)
    lookahead_steps: int = Field(0, ge=0)
    mode: Literal["learned", "select_all"] = "learned"
    hidden: _listed(Annotated[int, Field(gt=0)]) = [32, 32]
    min_accuracy: float = Field(0.70, ge=0, le=1)


class PrimarySection(_Section):
    hidden: _listed(Annotated[int, Field(gt=0)]) = [128, 64]
    aux_weight: float = Field(0.5, ge=0)


class EvalSection(_Section):
    enabled: bool = True
    laps: int = Field(3, ge=1)
    strategies: _listed(Literal["naive", "safe"]) = ["naive", "safe"]
    traffic: _listed(Annotated[int, Field(ge=0)]) = [0, 8]
    tracks: _listed(str) = []
    workers: int = Field(1, ge=1)


class IterationPlan(_Section):
    """Validated run configuration; every section has desk-scale defaults."""
    run: RunSection = RunSection()
    sim: SimSection = SimSection()
    collect: CollectSection = CollectSection()
    safety: SafetySection = SafetySection()
    primary: PrimarySection = PrimarySection()
    train: TrainConfig = TrainConfig()
    eval: EvalSection = EvalSection()

    @model_validator(mode="after")
    def _check(self):
        if self.run.iterations > 0 and not self.collect.budgets:
            raise ValueError("collect.budgets needs at least one entry when run.iterations > 0")
        return self

    def budget(self, i: int) -> int:
        """Kept-example budget of iteration i >= 1."""
        b = self.collect.budgets
        return b[min(i - 1, len(b) - 1)]

    def beta(self, i: int) -> float:
        """DAgger mixture weight; defaults to 1 at iteration 0 and 0 afterwards."""
        if i < len(self.collect.beta):
            return self.collect.beta[i]
        return 1.0 if i == 0 else 0.0


@dataclass
class Visit:
    """One collected timestep: privileged snapshot plus what the learner saw."""
    state: WorldState
    obs: np.ndarray
    tag: str
    episode: int
    step: int


def collect(strategy: str, bundle: PolicyBundle, tracks: list[Track], n_examples: int,
            traffic: int, seed: int, ledger: QueryLedger, *, beta: float = 0.0,
            collection: int = 0, episode_steps: int = 900) -> list[Visit]:
    """Drive episodes round-robin over `tracks` until n_examples states are gathered.

    An episode ends at episode_steps, on the first collision or when the
    ego leaves the road; the next one starts from a fresh seeded spawn.
    Reference takeovers under the mixture and safe strategies are counted
    on the ledger.
    """
    if n_examples <= 0:
        raise ValueError("n_examples must be > 0")
    if strategy not in COLLECT_STRATEGIES:
        raise ValueError(f"unknown collection strategy '{strategy}'")
    if strategy != REFERENCE_ONLY and bundle.primary is None:
        raise ValueError(f"strategy '{strategy}' needs a primary policy")
    if strategy == SAFE_STRATEGY and bundle.safety is None:
        raise ValueError("the safe strategy needs a safety policy")
    primary = bundle.primary
    mix_rng = np.random.default_rng(derive_seed(seed, "mixture", collection))
    visits: list[Visit] = []
    episode = 0
    while len(visits) < n_examples:
        track = tracks[episode % len(tracks)]
        episode_id = collection * EPISODE_STRIDE + episode
        state = new_world(track, derive_seed(seed, "spawn", collection, episode), traffic)
        for t in range(episode_steps):
            if len(visits) >= n_examples:
                break
            obs = observe(state).reshape(-1)
            if strategy == REFERENCE_ONLY:
                action, tag = reference_action(state), REFERENCE
            elif strategy == NAIVE_PRIMARY:
                action, tag = primary.decide(obs, state)[0], PRIMARY
            elif strategy == MIXTURE:
                action, tag = mixture_act(primary, beta, obs, state, mix_rng, ledger)
            else:
                action, tag = safe_strategy_act(primary, bundle.safety, obs, state, ledger)
            visits.append(Visit(state, obs, tag, episode_id, t))
            state = step(state, action)
            if state.halted != RUNNING or state.damage > 0:
                break
        episode += 1
    log.debug("collected %d states over %d episodes (%s)", len(visits), episode, strategy)
    return visits


class Selection(NamedTuple):
    visits: list[Visit]
    fraction: float


def subset_select(visits: list[Visit], primary: PrimaryPolicy, safety) -> Selection:
    """Keep only the states the safety policy classifies as unsafe."""
    if not visits:
        return Selection([], 0.0)
    features = primary.features(np.stack([v.obs for v in visits]))
    unsafe = safety.classify(features) == UNSAFE
    kept = [v for v, u in zip(visits, unsafe) if u]
    return Selection(kept, len(kept) / len(visits))


def label_with_reference(visits: list[Visit], ledger: QueryLedger, iteration: int = 0,
                         tag: str = LABEL) -> Dataset:
    """One reference query per state; fills the action and the label vector."""
    if not visits:
        return Dataset.empty()
    n = len(visits)
    steer = np.zeros(n)
    brake = np.zeros(n, dtype=np.uint8)
    labels = np.zeros((n, len(LABEL_NAMES)))
    for i, v in enumerate(visits):
        action = query_reference(v.state, ledger, tag)
        steer[i] = action.steer
        brake[i] = action.brake
        labels[i] = extract_labels(v.state, action).to_array()
    obs = np.stack([v.obs for v in visits])
    return Dataset(
        obs=obs,
        steer=steer,
        brake=brake,
        labels=labels,
        source_iteration=np.full(n, iteration, dtype=np.int32),
        tag=np.array([tag_code(v.tag) for v in visits], dtype=np.uint8),
        episode=np.array([v.episode for v in visits], dtype=np.int64),
        step=np.array([v.step for v in visits], dtype=np.int32),
    )


class SafetyLabels(NamedTuple):
    index: np.ndarray       # rows of the dataset that received a label
    labels: np.ndarray
    deviations: np.ndarray  # deviation each label was derived from


def make_safety_labels(dataset: Dataset, primary: PrimaryPolicy, tau: float,
                       lookahead_steps: int = 0) -> SafetyLabels:
    """Label each example safe (1) or unsafe (0) from the primary's deviation.

    With lookahead_steps = k > 0 an example takes the label of the state k
    steps later in the same episode; examples without one are dropped.
    """
    if len(dataset) == 0:
        return SafetyLabels(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=int), np.zeros(0))
    eps = (primary.steer(dataset.obs) - dataset.steer) ** 2
    labels = safety_labels(eps, tau)
    if lookahead_steps == 0:
        return SafetyLabels(np.arange(len(dataset)), labels, eps)
    position = {(int(e), int(s)): i for i, (e, s) in enumerate(zip(dataset.episode, dataset.step))}
    index, future = [], []
    for i, (e, s) in enumerate(zip(dataset.episode, dataset.step)):
        j = position.get((int(e), int(s) + lookahead_steps))
        if j is not None:
            index.append(i)
            future.append(j)
    index = np.array(index, dtype=np.int64)
    future = np.array(future, dtype=np.int64)
    return SafetyLabels(index, labels[future], eps[future])


def primary_loss_terms(aux_weight: float = 0.5) -> list[LossTerm]:
    terms = [LossTerm(STEER_HEAD, "mse"), LossTerm(BRAKE_HEAD, "bce")]
    terms += [LossTerm(name, "bce", aux_weight) for name in INDICATOR_NAMES]
    terms += [LossTerm(name, "mse", aux_weight) for name in REGRESSION_NAMES]
    return terms


def primary_examples(dataset: Dataset) -> Examples:
    targets = {
        STEER_HEAD: dataset.steer.reshape(-1, 1),
        BRAKE_HEAD: dataset.brake.astype(np.float64).reshape(-1, 1),
    }
    for name in INDICATOR_NAMES + REGRESSION_NAMES:
        targets[name] = dataset.labels[:, LABEL_NAMES.index(name)].reshape(-1, 1)
    return Examples(dataset.obs, targets)


class SupervisedLoss(NamedTuple):
    total: float
    control: float           # squared control error (steer and brake probability)
    terms: dict[str, float]  # unweighted mean of each head's loss


def supervised_loss(primary: PrimaryPolicy, batch: Dataset, aux_weight: float = 0.5) -> SupervisedLoss:
    if len(batch) == 0:
        raise ValueError("supervised_loss needs a non-empty batch")
    ex = primary_examples(batch)
    total, terms = loss(primary.params, ex.inputs, ex.targets, primary_loss_terms(aux_weight))
    fwd = primary.predict(batch.obs)
    control = float(np.mean((fwd.outputs[STEER_HEAD][:, 0] - batch.steer) ** 2
                            + (fwd.outputs[BRAKE_HEAD][:, 0] - batch.brake) ** 2))
    return SupervisedLoss(total, control, terms)


def validation_mask(dataset: Dataset, fraction: float, seed: int) -> np.ndarray:
    """Stratified by source_iteration; a group's split never changes as data is added."""
    mask = np.zeros(len(dataset), dtype=bool)
    for it in np.unique(dataset.source_iteration):
        idx = np.flatnonzero(dataset.source_iteration == it)
        m = len(idx)
        if m < 2:
            continue
        k = min(max(round(fraction * m), 1), m - 1)
        rng = np.random.default_rng(derive_seed(seed, "valid", int(it)))
        mask[idx[rng.permutation(m)[:k]]] = True
    return mask


@dataclass
class PrimaryFit:
    policy: PrimaryPolicy
    history: TrainingHistory
    train_size: int
    valid_size: int
    valid_steer_mse: float


def train_primary(dataset: Dataset, plan: IterationPlan) -> PrimaryFit:
    """Fit a fresh primary on the dataset's training split."""
    mask = validation_mask(dataset, plan.collect.validation_fraction, plan.run.seed)
    if mask.all() or not mask.any():
        raise TrainingError("dataset too small for a training/validation split")
    ex = primary_examples(dataset)
    spec = primary_net_spec(plan.run.seed, tuple(plan.primary.hidden))
    cfg = plan.train.model_copy(update={"seed": derive_seed(plan.run.seed, "shuffle")})
    params, hist = fit(ex.take(~mask), ex.take(mask), spec, cfg, primary_loss_terms(plan.primary.aux_weight))
    policy = PrimaryPolicy(params)
    valid_mse = float(np.mean((policy.steer(dataset.obs[mask]) - dataset.steer[mask]) ** 2))
    return PrimaryFit(policy, hist, int((~mask).sum()), int(mask.sum()), valid_mse)


@dataclass
class SafetyFit:
    policy: SafetyPolicy
    history: TrainingHistory
    examples: int
    safe_fraction: float
    accuracy: float


def train_safety(dataset: Dataset, primary: PrimaryPolicy, tau: float, plan: IterationPlan,
                 iteration: int) -> SafetyFit:
    """Fit a safety policy on labels refreshed against `primary`."""
    sl = make_safety_labels(dataset, primary, tau, plan.safety.lookahead_steps)
    n = len(sl.index)
    if n < 2:
        raise TrainingError(f"only {n} safety examples at iteration {iteration}")
    features = primary.features(dataset.obs[sl.index])
    rng = np.random.default_rng(derive_seed(plan.run.seed, "safety-valid", iteration))
    k = min(max(round(plan.collect.validation_fraction * n), 1), n - 1)
    valid = np.zeros(n, dtype=bool)
    valid[rng.permutation(n)[:k]] = True
    spec = safety_net_spec(primary.spec.feature_size, tuple(plan.safety.hidden), plan.run.seed)
    cfg = plan.train.model_copy(update={"seed": derive_seed(plan.run.seed, "safety-shuffle")})
    ex = Examples(features, {SAFETY_HEAD: sl.labels})
    params, hist = fit(ex.take(~valid), ex.take(valid), spec, cfg, SAFETY_LOSS)
    policy = SafetyPolicy(params, tau)
    accuracy = float(np.mean(policy.classify(features[valid]) == sl.labels[valid]))
    return SafetyFit(policy, hist, n, float(sl.labels.mean()), accuracy)


@dataclass
class RunResult:
    regime: str
    plan: IterationPlan
    primaries: list[PrimaryPolicy] = field(default_factory=list)
    safeties: list[SafetyPolicy] = field(default_factory=list)
    dataset: Dataset | None = None
    safety_set: Dataset | None = None
    report: RunReport | None = None
    ledger: QueryLedger = field(default_factory=QueryLedger)
    eval_ledger: QueryLedger = field(default_factory=QueryLedger)

    @property
    def primary(self) -> PrimaryPolicy:
        return self.primaries[-1]

    @property
    def safety(self) -> SafetyPolicy | None:
        return self.safeties[-1] if self.safeties else None


class _Run:
    """Shared plumbing of one training run."""

    def __init__(self, plan: IterationPlan, regime: str, needs_safety: bool):
        self.plan = plan
        self.seed = plan.run.seed
        self.needs_safety = needs_safety
        self.train_tracks = resolve_tracks(plan.sim.tracks, "train")
        self.test_tracks = resolve_tracks(plan.eval.tracks, "test")
        self.result = RunResult(regime, plan)
        self.result.report = RunReport(regime, self.seed, metadata={
            "collection_sampling": "per-step",
            "dagger_downselect": "before labeling",
            "safety_mode": plan.safety.mode,
            "lookahead_steps": str(plan.safety.lookahead_steps),
        })
        self.tau: float | None = plan.safety.tau

    @property
    def ledger(self) -> QueryLedger:
        return self.result.ledger

    def collect(self, strategy: str, bundle: PolicyBundle, n: int, collection: int,
                beta: float = 0.0) -> list[Visit]:
        return collect(strategy, bundle, self.train_tracks, n, self.plan.sim.traffic, self.seed,
                       self.ledger, beta=beta, collection=collection,
                       episode_steps=self.plan.sim.episode_steps)

    def bootstrap(self) -> tuple[Dataset, IterationRecord]:
        """D_0 (and D_safe when needed), pi_0 and safety_0."""
        self.ledger.iteration = 0
        visits = self.collect(REFERENCE_ONLY, PolicyBundle(), self.plan.collect.initial, INITIAL_COLLECTION)
        d0 = label_with_reference(visits, self.ledger, 0, LABEL)
        rec = IterationRecord(iteration=0, collected=len(visits), selected=len(d0),
                              collection_takeover_fraction=1.0)
        fitted = self.fit_primary(d0, rec)
        if self.needs_safety:
            safe_visits = self.collect(REFERENCE_ONLY, PolicyBundle(), self.plan.collect.safety,
                                       SAFETY_COLLECTION)
            self.result.safety_set = label_with_reference(safe_visits, self.ledger, 0, SAFETY_LABEL)
            if self.tau is None:
                train_part = d0.take(np.flatnonzero(~validation_mask(
                    d0, self.plan.collect.validation_fraction, self.seed)))
                eps = (fitted.policy.steer(train_part.obs) - train_part.steer) ** 2
                cal = calibrate_tau(eps, self.plan.safety.target_safe_fraction)
                self.tau = cal.tau
                log.info("calibrated tau=%.6g (safe fraction %.4f)", cal.tau, cal.safe_fraction)
            self.fit_safety(d0, fitted.policy, rec)
        return d0, rec

    def fit_primary(self, dataset: Dataset, rec: IterationRecord) -> PrimaryFit:
        fitted = train_primary(dataset, self.plan)
        self.result.primaries.append(fitted.policy)
        rec.dataset_size = len(dataset)
        rec.train_size = fitted.train_size
        rec.valid_size = fitted.valid_size
        rec.primary_epochs = fitted.history.epochs
        rec.primary_best_epoch = fitted.history.best_epoch
        rec.lr_drops = len(fitted.history.lr_drops)
        rec.primary_valid_loss = fitted.history.best_valid_loss
        rec.valid_steer_mse = fitted.valid_steer_mse
        log.info("iteration %d: primary fit on %d examples, %d epochs, valid steer mse %.5f",
                 rec.iteration, fitted.train_size, fitted.history.epochs, fitted.valid_steer_mse)
        return fitted

    def fit_safety(self, dataset: Dataset, primary: PrimaryPolicy, rec: IterationRecord) -> SafetyFit:
        fitted = train_safety(self.result.safety_set.union(dataset), primary, self.tau, self.plan,
                              rec.iteration)
        self.result.safeties.append(fitted.policy)
        rec.tau = self.tau
        rec.safe_fraction = fitted.safe_fraction
        rec.safety_examples = fitted.examples
        rec.safety_accuracy = fitted.accuracy
        if fitted.accuracy < self.plan.safety.min_accuracy:
            log.warning("iteration %d: safety accuracy %.3f below %.2f",
                        rec.iteration, fitted.accuracy, self.plan.safety.min_accuracy)
        else:
            log.info("iteration %d: safety accuracy %.3f on %d examples (%.1f%% safe)",
                     rec.iteration, fitted.accuracy, fitted.examples, 100 * fitted.safe_fraction)
        return fitted

    def finish_iteration(self, rec: IterationRecord) -> None:
        i = rec.iteration
        rec.iteration_label_queries = self.ledger.count(LABEL, i) + self.ledger.count(SAFETY_LABEL, i)
        rec.iteration_takeover_queries = self.ledger.count(TAKEOVER, i)
        rec.label_queries = self.ledger.label_queries
        rec.takeover_queries = self.ledger.takeover_queries
        if self.plan.eval.enabled:
            rec.evals = self.evaluate(i)
        self.result.report.records.append(rec)

    def evaluate(self, iteration: int) -> dict[tuple[str, int], EvalReport]:
        plan = self.plan
        primary = self.result.primaries[-1]
        safety = self.result.safeties[-1] if self.result.safeties else None
        ev_ledger = self.result.eval_ledger
        ev_ledger.iteration = iteration
        out = {}
        for strategy in plan.eval.strategies:
            if strategy == SAFE and safety is None:
                log.warning("skipping safe-strategy evaluation: no safety policy in this run")
                continue
            for traffic in plan.eval.traffic:
                cfg = EvalConfig(tuple(self.test_tracks), plan.eval.laps, traffic, strategy, self.seed)
                out[(strategy, traffic)] = evaluate(PolicyBundle(primary, safety), cfg, ev_ledger,
                                                    workers=plan.eval.workers)
        report = self.result.report
        report.eval_takeover_queries = ev_ledger.takeover_queries
        report.eval_metric_queries = ev_ledger.metric_queries
        return out


def _wants_safe_eval(plan: IterationPlan) -> bool:
    return plan.eval.enabled and SAFE in plan.eval.strategies


def run_supervised(plan: IterationPlan) -> RunResult:
    """Behavior cloning on reference-driven data.

    With collect.supervised_growth the run keeps adding reference-driven
    examples with the same per-iteration budgets as the interactive regimes.
    """
    run = _Run(plan, "supervised", needs_safety=_wants_safe_eval(plan))
    data, rec = run.bootstrap()
    run.finish_iteration(rec)
    if plan.collect.supervised_growth:
        for i in range(1, plan.run.iterations + 1):
            run.ledger.iteration = i
            visits = run.collect(REFERENCE_ONLY, PolicyBundle(), plan.budget(i), i + 1)
            data = data.union(label_with_reference(visits, run.ledger, i))
            rec = IterationRecord(iteration=i, collected=len(visits), selected=len(visits),
                                  collection_takeover_fraction=1.0)
            fitted = run.fit_primary(data, rec)
            if run.needs_safety:
                run.fit_safety(data, fitted.policy, rec)
            run.finish_iteration(rec)
    run.result.dataset = data
    return run.result


def run_dagger(plan: IterationPlan) -> RunResult:
    """DAgger: collect under the beta mixture, label every kept state, refit."""
    run = _Run(plan, "dagger", needs_safety=_wants_safe_eval(plan))
    data, rec = run.bootstrap()
    run.finish_iteration(rec)
    for i in range(1, plan.run.iterations + 1):
        run.ledger.iteration = i
        budget = plan.budget(i)
        raw_n = math.ceil(plan.collect.raw_factor * budget)
        visits = run.collect(MIXTURE, PolicyBundle(run.result.primaries[-1]), raw_n, i + 1, beta=plan.beta(i))
        takeover = sum(v.tag == REFERENCE for v in visits) / len(visits)
        if raw_n > budget:
            rng = np.random.default_rng(derive_seed(plan.run.seed, "downselect", i))
            keep = np.sort(rng.choice(raw_n, size=budget, replace=False))
            visits = [visits[j] for j in keep]
        data = data.union(label_with_reference(visits, run.ledger, i))
        rec = IterationRecord(iteration=i, collected=raw_n, selected=len(visits),
                              selection_fraction=len(visits) / raw_n,
                              collection_takeover_fraction=takeover)
        fitted = run.fit_primary(data, rec)
        if run.needs_safety:
            run.fit_safety(data, fitted.policy, rec)
        run.finish_iteration(rec)
    run.result.dataset = data
    return run.result


def run_safedagger(plan: IterationPlan) -> RunResult:
    """SafeDAgger: collect under the safe strategy and label only the unsafe subset.

    In select_all mode the gate lets the primary drive every step and every
    collected state is labeled.
    """
    select_all = plan.safety.mode == "select_all"
    run = _Run(plan, "safedagger", needs_safety=not select_all)
    data, rec = run.bootstrap()
    run.finish_iteration(rec)
    gate_all = ConstantSafety(1.0)
    for i in range(1, plan.run.iterations + 1):
        run.ledger.iteration = i
        primary = run.result.primaries[-1]
        safety = gate_all if select_all else run.result.safeties[-1]
        visits = run.collect(SAFE_STRATEGY, PolicyBundle(primary, safety), plan.budget(i), i + 1)
        takeover = sum(v.tag == REFERENCE for v in visits) / len(visits)
        if select_all:
            selection = Selection(visits, 1.0)
        else:
            selection = subset_select(visits, primary, safety)
        data = data.union(label_with_reference(selection.visits, run.ledger, i))
        rec = IterationRecord(iteration=i, collected=len(visits), selected=len(selection.visits),
                              selection_fraction=selection.fraction,
                              collection_takeover_fraction=takeover)
        log.info("iteration %d: %d/%d states selected, takeover %.1f%%",
                 i, len(selection.visits), len(visits), 100 * takeover)
        fitted = run.fit_primary(data, rec)
        if not select_all:
            run.fit_safety(data, fitted.policy, rec)
        run.finish_iteration(rec)
    run.result.dataset = data
    return run.result


REGIMES = {
    "supervised": run_supervised,
    "dagger": run_dagger,
    "safedagger": run_safedagger,
}
