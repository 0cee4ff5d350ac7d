"""Primary and safety policies, deviation, tau calibration, driving strategies."""

import math
from dataclasses import dataclass
from typing import NamedTuple, Protocol

import numpy as np

from safedagger.models import (INDICATOR_NAMES, PRIMARY, REFERENCE, REGRESSION_NAMES, TAKEOVER,
                               Action, LabelVector, QueryLedger, WorldState)
from safedagger.nn import Forward, Head, LossTerm, NetSpec, Params, forward, per_example_loss
from safedagger.perception import OBS_SIZE
from safedagger.reference import EGO, query_reference, reference_action

STEER_HEAD = "steer"
BRAKE_HEAD = "brake"
SAFETY_HEAD = "safe"
SAFE = 1
UNSAFE = 0
TAU_FLOOR = 1e-12


def primary_net_spec(seed: int = 0, hidden: tuple[int, ...] = (128, 64)) -> NetSpec:
    heads = [Head(STEER_HEAD, 1, "tanh"), Head(BRAKE_HEAD, 1, "sigmoid")]
    heads += [Head(name, 1, "sigmoid") for name in INDICATOR_NAMES]
    heads += [Head(name, 1, "linear") for name in REGRESSION_NAMES]
    return NetSpec(OBS_SIZE, tuple(hidden), tuple(heads), seed)


def safety_net_spec(feature_size: int = 64, hidden: tuple[int, ...] = (32, 32), seed: int = 0) -> NetSpec:
    return NetSpec(feature_size, tuple(hidden), (Head(SAFETY_HEAD, 2, "softmax"),), seed)


class Driver(Protocol):
    def decide(self, obs: np.ndarray, state: WorldState | None = None) -> tuple[Action, np.ndarray]: ...


@dataclass(frozen=True)
class PrimaryPolicy:
    params: Params

    @property
    def spec(self) -> NetSpec:
        return self.params.spec

    def predict(self, obs) -> Forward:
        obs = np.asarray(obs, dtype=np.float64)
        return forward(self.params, obs.reshape(-1, self.spec.input_size))

    def act(self, obs) -> tuple[Action, LabelVector, np.ndarray]:
        """Decoded action, auxiliary label estimates and trunk features."""
        fwd = self.predict(obs)
        steer = float(fwd.outputs[STEER_HEAD][0, 0])
        brake_p = float(fwd.outputs[BRAKE_HEAD][0, 0])
        action = Action(steer, int(brake_p >= 0.5))
        aux = {name: float(fwd.outputs[name][0, 0]) for name in INDICATOR_NAMES + REGRESSION_NAMES}
        labels = LabelVector(**aux, S_c=action.steer, I_b=brake_p)
        return action, labels, fwd.features[0]

    def decide(self, obs, state: WorldState | None = None) -> tuple[Action, np.ndarray]:
        action, _, features = self.act(obs)
        return action, features

    def steer(self, obs) -> np.ndarray:
        return self.predict(obs).outputs[STEER_HEAD][:, 0]

    def features(self, obs) -> np.ndarray:
        return self.predict(obs).features


def primary_act(policy: PrimaryPolicy, obs) -> tuple[Action, LabelVector, np.ndarray]:
    return policy.act(obs)


class ReferencePolicy:
    """The reference driver in the primary's seat; it reads the world state directly."""

    def decide(self, obs, state: WorldState | None = None) -> tuple[Action, np.ndarray]:
        if state is None:
            raise ValueError("the reference driver needs the world state")
        return reference_action(state, EGO), np.zeros(0)


@dataclass(frozen=True)
class SafetyPolicy:
    """Classifier on primary trunk features: p(safe) >= 0.5 lets the primary drive."""
    params: Params
    tau: float

    def p_safe(self, features) -> np.ndarray:
        f = np.asarray(features, dtype=np.float64).reshape(-1, self.params.spec.input_size)
        return forward(self.params, f).outputs[SAFETY_HEAD][:, SAFE]

    def classify(self, features) -> np.ndarray:
        return (self.p_safe(features) >= 0.5).astype(int)

    def is_safe(self, features) -> bool:
        return bool(self.p_safe(features)[0] >= 0.5)


@dataclass(frozen=True)
class ConstantSafety:
    """Safety stand-in with a fixed p(safe)."""
    p: float
    tau: float = math.inf

    def p_safe(self, features) -> np.ndarray:
        n = 1 if np.ndim(features) <= 1 else np.shape(features)[0]
        return np.full(n, float(self.p))

    def classify(self, features) -> np.ndarray:
        return (self.p_safe(features) >= 0.5).astype(int)

    def is_safe(self, features) -> bool:
        return self.p >= 0.5


@dataclass(frozen=True)
class PolicyBundle:
    primary: Driver | None = None
    safety: SafetyPolicy | ConstantSafety | None = None


def deviation(primary_action: Action, reference_action: Action) -> float:
    """Squared steering difference; the brake is ignored."""
    return (primary_action.steer - reference_action.steer) ** 2


def optimal_safety_label(eps: float, tau: float) -> int:
    if eps < 0:
        raise ValueError("deviation must be >= 0")
    if tau <= 0:
        raise ValueError("tau must be > 0")
    return UNSAFE if eps > tau else SAFE


def safety_labels(deviations, tau: float) -> np.ndarray:
    """Vectorized optimal_safety_label."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    return (np.asarray(deviations) <= tau).astype(int)


SAFETY_LOSS = [LossTerm(SAFETY_HEAD, "nll")]


def safety_loss(safety: SafetyPolicy, features, labels) -> float:
    """Mean negative log-likelihood of the labels, probabilities floored at 1e-12."""
    labels = np.asarray(labels)
    if not np.isin(labels, (UNSAFE, SAFE)).all():
        raise ValueError("safety labels must be 0 or 1")
    f = np.asarray(features, dtype=np.float64).reshape(-1, safety.params.spec.input_size)
    fwd = forward(safety.params, f)
    return float(per_example_loss(fwd, {SAFETY_HEAD: labels}, SAFETY_LOSS[0], safety.params.spec).mean())


class TauCalibration(NamedTuple):
    tau: float
    safe_fraction: float


def calibrate_tau(deviations, target_safe_fraction: float) -> TauCalibration:
    """Smallest observed deviation v with fraction(eps <= v) >= target."""
    d = np.sort(np.asarray(deviations, dtype=np.float64))
    if d.size == 0:
        raise ValueError("calibrate_tau needs at least one deviation")
    if not 0 < target_safe_fraction < 1:
        raise ValueError("target_safe_fraction must lie in (0, 1)")
    k = max(1, math.ceil(target_safe_fraction * d.size - 1e-9))
    tau = float(d[k - 1])
    achieved = float(np.count_nonzero(d <= tau)) / d.size
    return TauCalibration(max(tau, TAU_FLOOR), achieved)


def safe_strategy_act(primary: Driver, safety, obs, state: WorldState,
                      ledger: QueryLedger) -> tuple[Action, str]:
    """Primary drives while the safety policy says safe, otherwise the reference takes over."""
    action, features = primary.decide(obs, state)
    if safety.is_safe(features):
        return action, PRIMARY
    return query_reference(state, ledger, TAKEOVER), REFERENCE


def mixture_act(primary: Driver, beta: float, obs, state: WorldState,
                rng: np.random.Generator, ledger: QueryLedger) -> tuple[Action, str]:
    """Per-step Bernoulli(beta) choice between reference and primary."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    if rng.random() < beta:
        return query_reference(state, ledger, TAKEOVER), REFERENCE
    return primary.decide(obs, state)[0], PRIMARY
