"""Tests for policies, safety labels, tau calibration and driving strategies."""

import numpy as np
import pytest

from safedagger.models import PRIMARY, REFERENCE, TAKEOVER, Action, QueryLedger
from safedagger.nn import Params, init_params
from safedagger.perception import OBS_SIZE, observe
from safedagger.policies import (SAFE, UNSAFE, ConstantSafety, PrimaryPolicy, ReferencePolicy,
                                 SafetyPolicy, calibrate_tau, deviation, mixture_act,
                                 optimal_safety_label, primary_net_spec, safe_strategy_act,
                                 safety_labels, safety_loss, safety_net_spec)
from safedagger.reference import reference_action


@pytest.fixture
def primary():
    return PrimaryPolicy(init_params(primary_net_spec(0, (16, 8))))


def test_deviation_ignores_brake():
    assert deviation(Action(0.5, 1), Action(0.1, 0)) == pytest.approx(0.16)
    assert deviation(Action(0.2, 0), Action(0.2, 1)) == 0.0


def test_optimal_label_matches_threshold_sweep():
    rng = np.random.default_rng(0)
    eps = rng.exponential(0.01, size=10_000)
    taus = rng.choice([0.0025, 0.001, 0.01, 0.05], size=10_000)
    taus[:10] = eps[:10]   # ties count as safe
    for e, t in zip(eps, taus):
        brute = SAFE if not e > t else UNSAFE
        assert optimal_safety_label(float(e), float(t)) == brute
    assert np.array_equal(safety_labels(eps, 0.0025), (eps <= 0.0025).astype(int))


def test_optimal_label_rejects_bad_input():
    with pytest.raises(ValueError):
        optimal_safety_label(-1.0, 0.1)
    with pytest.raises(ValueError):
        optimal_safety_label(0.1, 0.0)
    with pytest.raises(ValueError):
        safety_labels([0.1], -1.0)


def test_calibrate_tau_hits_target():
    eps = np.random.default_rng(3).exponential(0.004, size=5000)
    cal = calibrate_tau(eps, 0.777)
    assert abs(cal.safe_fraction - 0.777) <= 0.01
    assert np.mean(eps <= cal.tau) == pytest.approx(cal.safe_fraction)
    assert cal.tau in eps


def test_calibrate_tau_small_and_degenerate():
    assert calibrate_tau([0.3, 0.1, 0.2, 0.4], 0.5).tau == pytest.approx(0.2)
    cal = calibrate_tau(np.zeros(10), 0.777)
    assert cal.tau > 0
    assert cal.safe_fraction == 1.0
    with pytest.raises(ValueError):
        calibrate_tau([], 0.5)
    with pytest.raises(ValueError):
        calibrate_tau([0.1], 1.0)


def test_primary_act(primary, lone_world):
    obs = observe(lone_world)
    action, labels, features = primary.act(obs)
    assert -1.0 <= action.steer <= 1.0
    assert action.brake in (0, 1)
    assert labels.S_c == action.steer
    assert features.shape == (8,)
    assert primary.steer(np.zeros((4, OBS_SIZE))).shape == (4,)


def test_safety_policy_classify(primary):
    safety = SafetyPolicy(init_params(safety_net_spec(8, (4,))), tau=0.01)
    features = primary.features(np.random.default_rng(0).uniform(size=(5, OBS_SIZE)))
    p = safety.p_safe(features)
    assert p.shape == (5,)
    assert np.all((p >= 0) & (p <= 1))
    assert np.array_equal(safety.classify(features), (p >= 0.5).astype(int))
    assert safety.is_safe(features[0]) == bool(p[0] >= 0.5)


def test_safety_loss_validates_labels(primary):
    safety = SafetyPolicy(init_params(safety_net_spec(8, (4,))), tau=0.01)
    features = np.ones((2, 8))
    assert safety_loss(safety, features, [0, 1]) > 0
    with pytest.raises(ValueError):
        safety_loss(safety, features, [0, 2])


def test_safe_strategy_gates(primary, lone_world):
    obs = observe(lone_world)
    ledger = QueryLedger()
    action, tag = safe_strategy_act(primary, ConstantSafety(1.0), obs, lone_world, ledger)
    assert tag == PRIMARY
    assert ledger.total == 0
    action, tag = safe_strategy_act(primary, ConstantSafety(0.0), obs, lone_world, ledger)
    assert tag == REFERENCE
    assert action == reference_action(lone_world)
    assert ledger.count(TAKEOVER) == 1


def test_mixture_extremes(primary, lone_world):
    obs = observe(lone_world)
    rng = np.random.default_rng(0)
    ledger = QueryLedger()
    assert mixture_act(primary, 1.0, obs, lone_world, rng, ledger)[1] == REFERENCE
    assert mixture_act(primary, 0.0, obs, lone_world, rng, ledger)[1] == PRIMARY
    assert ledger.takeover_queries == 1
    with pytest.raises(ValueError):
        mixture_act(primary, 1.5, obs, lone_world, rng, ledger)


def test_reference_policy_needs_state(lone_world):
    action, features = ReferencePolicy().decide(None, lone_world)
    assert action == reference_action(lone_world)
    assert features.size == 0
    with pytest.raises(ValueError):
        ReferencePolicy().decide(None)


def test_calibrate_tau_sort_and_scan():
    cal = calibrate_tau([0.001] * 8 + [0.01] * 2, 0.8)
    assert cal.tau == pytest.approx(0.001)
    assert cal.safe_fraction == pytest.approx(0.8)


def test_calibrate_tau_monotone_in_target():
    eps = np.random.default_rng(4).exponential(0.01, size=2000)
    taus = [calibrate_tau(eps, f).tau for f in (0.1, 0.3, 0.5, 0.777, 0.9, 0.99)]
    assert taus == sorted(taus)


def _one_layer_safety(bias):
    params = init_params(safety_net_spec(2, ()))
    values = np.zeros(params.spec.n_params)
    (b_slice,) = [sl for layer, kind, sl in params.index_map() if kind == "b"]
    values[b_slice] = bias
    return SafetyPolicy(Params(params.spec, values), tau=0.01)


def test_safety_loss_closed_forms():
    uniform = _one_layer_safety([0.0, 0.0])
    features = np.random.default_rng(0).normal(size=(7, 2))
    assert safety_loss(uniform, features, [0, 1, 1, 0, 1, 0, 0]) == pytest.approx(np.log(2))
    confident = _one_layer_safety([0.0, np.log(9.0)])
    assert confident.p_safe(np.zeros(2))[0] == pytest.approx(0.9)
    assert safety_loss(confident, np.zeros((1, 2)), [SAFE]) == pytest.approx(-np.log(0.9))


class _Straight:
    def decide(self, obs, state=None):
        return Action(0.0), np.zeros(0)


def test_mixture_fraction_tracks_beta(lone_world):
    rng = np.random.default_rng(0)
    ledger = QueryLedger()
    tags = [mixture_act(_Straight(), 0.5, None, lone_world, rng, ledger)[1] for _ in range(10_000)]
    fraction = tags.count(REFERENCE) / len(tags)
    assert 0.48 <= fraction <= 0.52
    assert ledger.takeover_queries == tags.count(REFERENCE)
