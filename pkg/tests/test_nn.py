"""Tests for the network, its exact gradients, SGD training and model files."""

from dataclasses import replace

import numpy as np
import pytest

from safedagger.errors import ModelFormatError, TrainingError
from safedagger.imitation import primary_loss_terms
from safedagger.nn import (Examples, Head, LossTerm, NetSpec, Params, TrainConfig, backward, fit,
                           forward, init_params, load_params, loss, save_params, sgd_step,
                           zero_params)
from safedagger.policies import SAFETY_HEAD, SAFETY_LOSS, primary_net_spec, safety_net_spec


def _random_primary_batch(rng, n=5, d=10):
    spec = replace(primary_net_spec(0, (8, 6)), input_size=d)
    params = Params(spec, rng.normal(0.0, 0.5, spec.n_params))
    x = rng.normal(size=(n, d))
    targets = {h.name: rng.uniform(0.0, 1.0, size=(n, 1)) for h in spec.heads}
    targets["steer"] = rng.uniform(-1.0, 1.0, size=(n, 1))
    return params, x, targets


def _numeric_grad(params, x, targets, terms, idx, h=1e-6):
    out = np.zeros(len(idx))
    for k, i in enumerate(idx):
        plus = params.values.copy()
        plus[i] += h
        minus = params.values.copy()
        minus[i] -= h
        out[k] = (loss(Params(params.spec, plus), x, targets, terms)[0]
                  - loss(Params(params.spec, minus), x, targets, terms)[0]) / (2 * h)
    return out


def _relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def test_supervised_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    terms = primary_loss_terms(0.5)
    for _ in range(100):
        params, x, targets = _random_primary_batch(rng)
        value, grad = backward(params, x, targets, terms)
        assert value == pytest.approx(loss(params, x, targets, terms)[0])
        idx = rng.choice(params.spec.n_params, size=25, replace=False)
        assert _relative_error(grad[idx], _numeric_grad(params, x, targets, terms, idx)) < 1e-4


def test_safety_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(100):
        spec = safety_net_spec(6, (5, 4))
        params = Params(spec, rng.normal(0.0, 0.5, spec.n_params))
        x = np.abs(rng.normal(size=(6, 6)))
        targets = {SAFETY_HEAD: rng.integers(0, 2, size=6)}
        _, grad = backward(params, x, targets, SAFETY_LOSS)
        idx = np.arange(spec.n_params)
        assert _relative_error(grad, _numeric_grad(params, x, targets, SAFETY_LOSS, idx)) < 1e-4


def test_bce_zero_at_exact_match():
    spec = NetSpec(3, (), (Head("p", 1, "sigmoid"),))
    params = zero_params(spec)
    x = np.ones((4, 3))
    value, _ = loss(params, x, {"p": np.full((4, 1), 0.5)}, [LossTerm("p", "bce")])
    assert value == pytest.approx(0.0, abs=1e-12)


def test_forward_shapes_and_ranges():
    spec = primary_net_spec(0, (16,))
    fwd = forward(init_params(spec), np.random.default_rng(0).uniform(size=(3, spec.input_size)))
    assert fwd.outputs["steer"].shape == (3, 1)
    assert np.all(np.abs(fwd.outputs["steer"]) <= 1)
    assert np.all((fwd.outputs["brake"] > 0) & (fwd.outputs["brake"] < 1))
    assert fwd.features.shape == (3, 16)


def test_softmax_rows_sum_to_one():
    spec = safety_net_spec(4, (3,))
    out = forward(init_params(spec), np.ones((2, 4))).outputs[SAFETY_HEAD]
    assert np.allclose(out.sum(axis=1), 1.0)


def test_forward_width_mismatch():
    spec = safety_net_spec(4, (3,))
    with pytest.raises(ValueError, match="input width"):
        forward(init_params(spec), np.ones((2, 5)))


def test_netspec_validation():
    with pytest.raises(ValueError):
        NetSpec(3, (4,), (Head("a", 1, "softmax"),))
    with pytest.raises(ValueError):
        NetSpec(3, (4,), (Head("a", 1, "linear"), Head("a", 1, "linear")))
    with pytest.raises(ValueError):
        NetSpec(3, (0,), (Head("a", 1, "linear"),))


def test_netspec_text_round_trip():
    spec = NetSpec(7, (5,), (Head("a", 1, "tanh"), Head("b", 2, "softmax")), seed=9)
    assert NetSpec.from_text(spec.to_text()) == spec
    assert spec.n_params == 7 * 5 + 5 + 5 * 3 + 3


def test_init_deterministic():
    spec = safety_net_spec(4, (3,), seed=5)
    assert np.array_equal(init_params(spec).values, init_params(spec).values)


def test_non_finite_loss_raises():
    spec = NetSpec(2, (), (Head("y", 1, "linear"),))
    params = Params(spec, np.array([1.0, 1.0, 0.0]))
    x = np.array([[1.0, 1.0], [np.inf, 0.0]])
    with pytest.raises(TrainingError) as exc:
        backward(params, x, {"y": np.zeros((2, 1))}, [LossTerm("y", "mse")])
    assert exc.value.example_index == 1


def test_sgd_step_momentum_and_decay():
    spec = NetSpec(1, (), (Head("y", 1, "linear"),))
    params = Params(spec, np.array([1.0, 0.0]))
    cfg = TrainConfig(lr=0.1, momentum=0.5, weight_decay=0.0)
    p1, v1 = sgd_step(params, np.array([1.0, 0.0]), np.zeros(2), cfg)
    assert p1.values == pytest.approx([0.9, 0.0])
    p2, _ = sgd_step(p1, np.array([1.0, 0.0]), v1, cfg)
    assert p2.values == pytest.approx([0.9 - 0.15, 0.0])


def test_sgd_step_weight_decay_only():
    spec = NetSpec(1, (), (Head("y", 1, "linear"),))
    cfg = TrainConfig(lr=0.001, momentum=0.9, weight_decay=0.001)
    p, v = sgd_step(Params(spec, np.array([1.0, 0.0])), np.zeros(2), np.zeros(2), cfg)
    assert p.values[0] == pytest.approx(0.999999, abs=1e-12)
    assert v[0] == pytest.approx(-1e-6)


def test_tiny_sgd_step_never_increases_loss():
    rng = np.random.default_rng(5)
    terms = primary_loss_terms(0.5)
    cfg = TrainConfig(lr=1e-6, momentum=0.0, weight_decay=0.0)
    for _ in range(20):
        params, x, targets = _random_primary_batch(rng)
        before, grad = backward(params, x, targets, terms)
        after_params, _ = sgd_step(params, grad, np.zeros(params.spec.n_params), cfg)
        assert loss(after_params, x, targets, terms)[0] <= before


def test_train_config_rejects_bad_values():
    with pytest.raises(ValueError):
        TrainConfig(momentum=1.0)
    with pytest.raises(ValueError):
        TrainConfig(lr_drop_factor=1.0)
    with pytest.raises(ValueError):
        TrainConfig(unknown=1)


def test_fit_learns_linear_map():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(400, 3))
    y = (x @ np.array([0.5, -0.2, 0.1]))[:, None]
    data = Examples(x, {"y": y})
    spec = NetSpec(3, (8,), (Head("y", 1, "linear"),), seed=1)
    cfg = TrainConfig(lr=0.01, max_epochs=30, batch_size=16, weight_decay=0.0, early_stop_tolerance=1.0)
    params, hist = fit(data.take(np.arange(300)), data.take(np.arange(300, 400)), spec, cfg,
                       [LossTerm("y", "mse")])
    assert hist.epochs >= 1
    assert hist.best_valid_loss < 0.1
    value = loss(params, x[300:], {"y": y[300:]}, [LossTerm("y", "mse")])[0]
    assert value == pytest.approx(hist.best_valid_loss)


def test_fit_is_deterministic():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(64, 2))
    data = Examples(x, {"y": x[:, :1] * 0.3})
    spec = NetSpec(2, (4,), (Head("y", 1, "linear"),), seed=3)
    cfg = TrainConfig(max_epochs=3, batch_size=8)
    a, _ = fit(data.take(np.arange(48)), data.take(np.arange(48, 64)), spec, cfg, [LossTerm("y", "mse")])
    b, _ = fit(data.take(np.arange(48)), data.take(np.arange(48, 64)), spec, cfg, [LossTerm("y", "mse")])
    assert np.array_equal(a.values, b.values)


def test_fit_needs_data():
    spec = NetSpec(2, (), (Head("y", 1, "linear"),))
    empty = Examples(np.zeros((0, 2)), {"y": np.zeros((0, 1))})
    with pytest.raises(ValueError):
        fit(empty, empty, spec, TrainConfig(), [LossTerm("y", "mse")])


def test_model_file_round_trip(tmp_path):
    spec = safety_net_spec(6, (5, 4), seed=2)
    params = init_params(spec)
    path = tmp_path / "s.model"
    save_params(params, path)
    loaded = load_params(path, expected=spec)
    assert loaded.spec == spec
    assert loaded.values.tobytes() == params.values.tobytes()


def test_model_file_errors(tmp_path):
    spec = safety_net_spec(6, (5,))
    path = tmp_path / "s.model"
    save_params(init_params(spec), path)
    with pytest.raises(ModelFormatError, match="does not match"):
        load_params(path, expected=safety_net_spec(6, (4,)))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ModelFormatError):
        load_params(path)
    bad = tmp_path / "bad.model"
    bad.write_bytes(b"NOTAMODEL")
    with pytest.raises(ModelFormatError, match="not a safedagger model"):
        load_params(bad)


def test_fit_drops_lr_on_plateau():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(240, 3))
    data = Examples(x, {"y": rng.normal(size=(240, 1))})
    spec = NetSpec(3, (), (Head("y", 1, "linear"),), seed=0)
    cfg = TrainConfig(lr=0.01, batch_size=16, weight_decay=0.0, early_stop_tolerance=1.0,
                      max_epochs=40)
    _, hist = fit(data.take(np.arange(200)), data.take(np.arange(200, 240)), spec, cfg,
                  [LossTerm("y", "mse")])
    assert hist.lr_drops
    first = hist.lr_drops[0]
    assert hist.lr[:first + 1] == [cfg.lr] * (first + 1)
    if first + 1 < hist.epochs:
        assert hist.lr[first + 1] == pytest.approx(cfg.lr / cfg.lr_drop_factor)


def test_fit_separates_toy_classes():
    rng = np.random.default_rng(7)
    x = rng.uniform(-1.0, 1.0, size=(600, 2))
    x = x[np.abs(x[:, 0] + x[:, 1]) > 0.4]
    y = (x[:, 0] + x[:, 1] > 0).astype(float)[:, None]
    data = Examples(x, {"p": y})
    n_train = int(0.8 * len(x))
    spec = NetSpec(2, (), (Head("p", 1, "sigmoid"),), seed=1)
    cfg = TrainConfig(lr=0.05, batch_size=16, weight_decay=0.0, early_stop_tolerance=10.0,
                      max_epochs=40)
    params, hist = fit(data.take(np.arange(n_train)), data.take(np.arange(n_train, len(x))), spec,
                       cfg, [LossTerm("p", "bce")])
    assert hist.epochs <= 40
    p = forward(params, x[n_train:]).outputs["p"][:, 0]
    assert np.mean((p >= 0.5) == (y[n_train:, 0] == 1.0)) == 1.0


def test_index_map_tiles_the_parameter_vector():
    params = init_params(NetSpec(4, (3,), (Head("y", 2, "linear"),)))
    slices = params.index_map()
    assert [(layer, kind) for layer, kind, _ in slices] == [(0, "W"), (0, "b"), (1, "W"), (1, "b")]
    assert [sl.start for _, _, sl in slices[1:]] == [sl.stop for _, _, sl in slices[:-1]]
    assert slices[-1][2].stop == params.spec.n_params
    W1, b1 = params.layers()[1]
    assert W1.shape == (3, 2)
    assert np.shares_memory(b1, params.values)
