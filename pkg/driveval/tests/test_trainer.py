import json
import pprint

import numpy as np
import pytest

from driveval.errors import ArtifactIoError, EmptyDatasetError, FormatVersionMismatchError
from driveval.trainer import (
    FeatureDepth,
    Loss,
    RegressorPolicy,
    TrainConfig,
    balanced_counts,
    balanced_minibatches,
    fit_linear,
    fit_regressor,
    regularization_settings,
    steering_bins,
)
from driveval.world import Command

from .common import make_dataset


def _linear_dataset(n=400, seed=0):
    """
    Noise-free data following a separate linear law (standard features) for every command.
    """
    rng = np.random.default_rng(seed)
    features = rng.uniform(-1.0, 1.0, (n, 7))
    commands = np.arange(n) % 4
    weights = rng.uniform(-0.1, 0.1, (4, 5))
    biases = rng.uniform(-0.1, 0.1, 4)
    steering = np.sum(features[:, :5] * weights[commands], axis=1) + biases[commands]
    return make_dataset(steering, features=features, commands=commands), weights, biases


# ======================================================================================
#                               Linear fits


def test_fit_linear_01():
    weights, bias, diagnostics = fit_linear([[1.0], [2.0]], [1.0, 2.0])
    assert weights.tolist() == pytest.approx([1.0], abs=1e-6)
    assert bias == pytest.approx(0.0, abs=1e-6)
    assert diagnostics.samples == 2
    assert diagnostics.effective_samples == 2.0
    assert diagnostics.iterations == 0


def test_fit_linear_02():
    """
    A noise-free linear law is recovered.
    """
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 5))
    w0 = np.array([0.3, -0.2, 0.1, 0.05, -0.4])
    weights, bias, _ = fit_linear(X, X @ w0 + 0.3)
    np.testing.assert_allclose(weights, w0, atol=1e-6)
    assert bias == pytest.approx(0.3, abs=1e-6)


def test_fit_linear_03():
    """
    The ridge solution satisfies the normal equations with the configured coefficient.
    The design matrix includes the bias column, which is penalized like the weights.
    """
    rng = np.random.default_rng(2)
    X = rng.normal(size=(100, 3))
    y = rng.normal(size=100)
    A = np.hstack([X, np.ones((100, 1))])

    for ridge in (1e-3, 0.1, 10.0):
        weights, bias, _ = fit_linear(X, y, ridge=ridge)
        v = np.append(weights, bias)
        residual = (A.T @ A + ridge * np.eye(4)) @ v - A.T @ y
        assert np.linalg.norm(residual) < 1e-8, ridge

    # Counts weight the rows of the design matrix
    counts = rng.integers(1, 5, size=100).astype(float)
    weights, bias, _ = fit_linear(X, y, ridge=0.1, counts=counts)
    v = np.append(weights, bias)
    residual = (A.T @ (counts[:, None] * A) + 0.1 * np.eye(4)) @ v - A.T @ (counts * y)
    assert np.linalg.norm(residual) < 1e-8

    # Stronger regularization shrinks the weights
    weights_low, _, _ = fit_linear(X, y, ridge=0.01)
    weights_high, _, _ = fit_linear(X, y, ridge=100.0)
    assert np.linalg.norm(weights_high) < np.linalg.norm(weights_low)


def test_fit_linear_04():
    """
    Sample counts are equivalent to repeated samples.
    """
    rng = np.random.default_rng(3)
    X = rng.normal(size=(30, 2))
    y = rng.normal(size=30)
    counts = rng.integers(0, 4, size=30)
    w1, b1, d1 = fit_linear(X, y, counts=counts, ridge=0.1)
    w2, b2, d2 = fit_linear(np.repeat(X, counts, axis=0), np.repeat(y, counts), ridge=0.1)
    np.testing.assert_allclose(w1, w2, atol=1e-9)
    assert b1 == pytest.approx(b2, abs=1e-9)
    assert d1.effective_samples == d2.effective_samples == float(np.sum(counts))


def test_fit_linear_05():
    """
    The L1 fit is robust to an outlier and its objective never increases.
    """
    x = np.linspace(-1.0, 1.0, 101)
    y = 0.5 * x + 0.1
    y_out = y.copy()
    y_out[0] += 10.0

    w2, b2, _ = fit_linear(x, y_out, loss=Loss.L2)
    w1, b1, diagnostics = fit_linear(x, y_out, loss=Loss.L1)

    inliers = slice(1, None)
    err_l2 = np.mean(np.abs(w2[0] * x[inliers] + b2 - y[inliers]))
    err_l1 = np.mean(np.abs(w1[0] * x[inliers] + b1 - y[inliers]))
    assert err_l1 < err_l2
    assert w1[0] == pytest.approx(0.5, abs=1e-2)
    assert b1 == pytest.approx(0.1, abs=1e-2)

    history = diagnostics.objective_history
    assert diagnostics.iterations >= 1
    assert len(history) == diagnostics.iterations + 1
    for a, b in zip(history[:-1], history[1:]):
        assert b <= a + 1e-10, pprint.pformat(history)


def test_fit_linear_06_fail():
    with pytest.raises(EmptyDatasetError):
        fit_linear(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(ValueError, match="'L3'"):
        fit_linear([[1.0], [2.0]], [1.0, 2.0], loss="L3")


# ======================================================================================
#                               Balancing


def test_steering_bins_01():
    bins = steering_bins([-1.0, -0.76, -0.74, 0.0, 0.01, 0.99, 1.0])
    assert bins.tolist() == [0, 0, 1, 4, 4, 7, 7]


def test_balanced_minibatches_01():
    """
    Batches hold the same number of samples from every steering bin.
    """
    steering = np.linspace(-0.99, 0.99, 800)
    bins = steering_bins(steering)
    batches = list(balanced_minibatches(steering, seed=3))
    assert len(batches) == 7
    for batch in batches:
        assert len(batch) == 120
        assert np.bincount(bins[batch], minlength=8).tolist() == [15] * 8

    # The same seed produces the same batches
    again = list(balanced_minibatches(steering, seed=3))
    assert all(np.array_equal(a, b) for a, b in zip(batches, again))

    assert len(list(balanced_minibatches(steering, n_batches=3))) == 3


# fmt: off
@pytest.mark.parametrize("values, quotas", [
    ([0.01], {4: 120}),
    ([-0.9, 0.01, 0.9], {0: 40, 4: 40, 7: 40}),
    ([-0.9, -0.6, -0.3, 0.01, 0.3, 0.6, 0.9], {0: 18, 1: 17, 2: 17, 4: 17, 5: 17, 6: 17, 7: 17}),
])
# fmt: on
def test_balanced_minibatches_02(values, quotas):
    """
    Quotas of empty bins are redistributed over the nonempty bins.
    """
    steering = np.repeat(values, 50)
    bins = steering_bins(steering)
    for batch in balanced_minibatches(steering, seed=0):
        assert len(batch) == 120
        counts = np.bincount(bins[batch], minlength=8)
        assert {b: int(c) for b, c in enumerate(counts) if c} == quotas


def test_balanced_minibatches_03_fail():
    with pytest.raises(ValueError, match="not divisible"):
        next(balanced_minibatches(np.zeros(10), batch=100))
    with pytest.raises(EmptyDatasetError):
        next(balanced_minibatches(np.zeros(0)))


def test_balanced_counts_01():
    steering = np.repeat([-0.9, 0.01, 0.9], 100)
    counts = balanced_counts(steering, seed=1)
    n_batches = 50 * 3
    assert np.sum(counts) == n_batches * 120
    bins = steering_bins(steering)
    for b in (0, 4, 7):
        assert np.sum(counts[bins == b]) == 40 * n_batches
    assert np.array_equal(counts, balanced_counts(steering, seed=1))


# ======================================================================================
#                               Configuration


def test_regularization_settings_01():
    assert regularization_settings("none") == {"ridge": 0.0, "augment": False}
    assert regularization_settings("mild") == {"ridge": 1e-3, "augment": False}
    assert regularization_settings("high") == {"ridge": 1e-1, "augment": False}
    assert regularization_settings("high+aug") == {"ridge": 1e-1, "augment": True}
    with pytest.raises(ValueError, match="Unknown regularization tier"):
        regularization_settings("extreme")


def test_TrainConfig_01():
    config = TrainConfig(loss="L1", feature_depth="deep", balancing=True, data_hours=0.2)
    assert config.loss == Loss.L1
    assert config.feature_depth == FeatureDepth.DEEP
    config_dict = config.to_dict()
    assert config_dict["loss"] == "L1"
    assert config_dict["feature_depth"] == "deep"
    assert json.loads(json.dumps(config_dict)) == config_dict
    assert TrainConfig.from_dict(config_dict) == config


# fmt: off
@pytest.mark.parametrize("kwargs, exception, msg", [
    ({"ridge": -1.0}, ValueError, "must be non-negative"),
    ({"ridge": "a"}, TypeError, "must be a number"),
    ({"data_hours": 0.0}, ValueError, "must be positive"),
    ({"data_distribution": "2cam"}, ValueError, "Unknown data distribution"),
    ({"loss": "L3"}, ValueError, "'L3'"),
    ({"feature_depth": "huge"}, ValueError, "'huge'"),
])
# fmt: on
def test_TrainConfig_02_fail(kwargs, exception, msg):
    with pytest.raises(exception, match=msg):
        TrainConfig(**kwargs)


def test_FeatureDepth_01():
    assert FeatureDepth.SHALLOW.feature_index == (0, 1, 3)
    assert FeatureDepth.STANDARD.feature_index == (0, 1, 2, 3, 4)
    assert FeatureDepth.DEEP.feature_index == (0, 1, 2, 3, 4, 5, 6)


# ======================================================================================
#                               Regressor policies


# fmt: off
@pytest.mark.parametrize("balancing, loss", [
    (False, "L2"),
    (True, "L2"),
    (False, "L1"),
])
# fmt: on
def test_fit_regressor_01(balancing, loss):
    """
    Every command head recovers its linear law from noise-free data.
    """
    ds, weights, biases = _linear_dataset()
    policy = fit_regressor(ds, TrainConfig(balancing=balancing, loss=loss))
    assert policy.feature_index == (0, 1, 2, 3, 4)
    for command in Command:
        w, b = policy.heads[command]
        np.testing.assert_allclose(w, weights[command.index], atol=1e-5)
        assert b == pytest.approx(biases[command.index], abs=1e-5)

    assert policy.diagnostics["fallbacks"] == {}
    assert set(policy.diagnostics["heads"]) == {c.value for c in Command}

    predictions = policy.steer_stream(ds.features, ds.command, ds.steering, ds.speed)
    np.testing.assert_allclose(predictions, ds.steering, atol=1e-5)
    per_sample = [policy.steer(s.observation) for s in ds.samples()]
    np.testing.assert_allclose(per_sample, predictions, atol=1e-12)


def test_fit_regressor_02():
    """
    Heads of commands without training samples fall back to another head.
    """
    ds, _, _ = _linear_dataset()
    only_continue = ds.subset(ds.command == Command.CONTINUE.index)
    policy = fit_regressor(only_continue, TrainConfig())
    assert policy.diagnostics["fallbacks"] == {"Straight": "Continue", "Left": "Continue", "Right": "Continue"}
    for command in Command:
        np.testing.assert_array_equal(policy.heads[command][0], policy.heads[Command.CONTINUE][0])

    only_left = ds.subset(ds.command == Command.LEFT.index)
    policy = fit_regressor(only_left, TrainConfig())
    assert policy.diagnostics["fallbacks"] == {"Continue": "Left", "Straight": "Left", "Right": "Left"}


def test_fit_regressor_03():
    """
    Only the requested amount of data is used for training.
    """
    n = 720
    ds = make_dataset(np.linspace(-0.5, 0.5, n), features=np.random.default_rng(0).normal(size=(n, 7)))
    assert ds.hours == pytest.approx(0.02)
    policy = fit_regressor(ds, TrainConfig(data_hours=0.01))
    assert policy.diagnostics["samples"] == 360
    policy = fit_regressor(ds, TrainConfig(data_hours=1.0))
    assert policy.diagnostics["samples"] == 720


def test_fit_regressor_04():
    """
    Feature depth selects the inputs of the heads. Augmentation is deterministic given the seed.
    """
    ds, _, _ = _linear_dataset()
    shallow = fit_regressor(ds, TrainConfig(feature_depth="shallow"))
    assert shallow.feature_index == (0, 1, 3)
    assert shallow.describe()["features"] == ["lateral_offset", "heading_error", "curvature_10"]
    assert shallow.heads[Command.LEFT][0].shape == (3,)

    plain = fit_regressor(ds, TrainConfig(ridge=0.1))
    augmented = fit_regressor(ds, TrainConfig(ridge=0.1, augment=True, seed=5))
    augmented_again = fit_regressor(ds, TrainConfig(ridge=0.1, augment=True, seed=5))
    w_plain = plain.heads[Command.LEFT][0]
    w_aug = augmented.heads[Command.LEFT][0]
    assert not np.array_equal(w_plain, w_aug)
    np.testing.assert_array_equal(w_aug, augmented_again.heads[Command.LEFT][0])


def test_fit_regressor_05_fail():
    with pytest.raises(EmptyDatasetError):
        fit_regressor(make_dataset([]), TrainConfig())


def test_RegressorPolicy_01(tmp_path):
    """
    Saving and loading a trained model.
    """
    ds, _, _ = _linear_dataset()
    policy = fit_regressor(ds, TrainConfig(loss="L1", ridge=1e-3))
    path = tmp_path / "model.json"
    policy.save(path)

    loaded = RegressorPolicy.load(path)
    assert loaded.to_dict() == policy.to_dict()
    assert loaded.config == policy.config
    np.testing.assert_array_equal(
        loaded.steer_stream(ds.features, ds.command, ds.steering, ds.speed),
        policy.steer_stream(ds.features, ds.command, ds.steering, ds.speed),
    )

    model_dict = policy.to_dict()
    model_dict["format"] = "driveval-model/0"
    with pytest.raises(FormatVersionMismatchError):
        RegressorPolicy.from_dict(model_dict)

    with pytest.raises(ArtifactIoError):
        RegressorPolicy.load(tmp_path / "missing.json")

    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ArtifactIoError):
        RegressorPolicy.load(bad)


def test_RegressorPolicy_02_fail():
    heads = {c: ([0.0, 0.0, 0.0], 0.0) for c in Command}
    with pytest.raises(ValueError, match="weights of shape"):
        RegressorPolicy(heads, feature_index=(0, 1))
    heads = {c: ([0.0, 0.0], 0.0) for c in Command}
    heads[Command.LEFT] = ([0.0, np.nan], 0.0)
    with pytest.raises(ValueError, match="non-finite"):
        RegressorPolicy(heads, feature_index=(0, 1))


def test_RegressorPolicy_03():
    """
    Steering of the regressor is clamped to the valid range.
    """
    heads = {c: ([10.0], 0.0) for c in Command}
    policy = RegressorPolicy(heads, feature_index=(0,))
    features = np.zeros((3, 7))
    features[:, 0] = [-1.0, 0.01, 1.0]
    out = policy.steer_stream(features, np.zeros(3, dtype=int), np.zeros(3), np.ones(3))
    assert out.tolist() == pytest.approx([-1.0, 0.1, 1.0])
