import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._defaults import (
    default_balance_epochs,
    default_batch_size,
    default_feature_noise_std,
    default_irls_epsilon,
    default_irls_max_iterations,
    default_irls_tolerance,
    default_ridge_floor,
    default_steering_bins,
)
from .errors import ArtifactIoError, EmptyDatasetError, FormatVersionMismatchError, SingularSystemError
from .policy import Policy, feature_names
from .world import Command

logger = logging.getLogger(__name__)

model_format_version = "driveval-model/1"

_commands = tuple(Command)


class Loss(enum.Enum):
    L2 = "L2"
    L1 = "L1"


class FeatureDepth(enum.Enum):
    SHALLOW = "shallow"
    STANDARD = "standard"
    DEEP = "deep"

    @property
    def feature_index(self):
        return _feature_index[self]


_feature_index = {
    FeatureDepth.SHALLOW: (0, 1, 3),
    FeatureDepth.STANDARD: (0, 1, 2, 3, 4),
    FeatureDepth.DEEP: tuple(range(len(feature_names))),
}

regularization_tiers = {
    "none": {"ridge": 0.0, "augment": False},
    "mild": {"ridge": 1e-3, "augment": False},
    "high": {"ridge": 1e-1, "augment": False},
    "high+aug": {"ridge": 1e-1, "augment": True},
}

data_distributions = ("1cam", "1cam+noise", "3cam", "3cam+noise")


def regularization_settings(tier):
    """
    Ridge coefficient and augmentation flag of a named regularization tier
    (``none``, ``mild``, ``high`` or ``high+aug``).
    """
    try:
        return dict(regularization_tiers[tier])
    except KeyError:
        tiers = list(regularization_tiers)
        raise ValueError(f"Unknown regularization tier {tier!r}. Supported: {tiers}") from None


@dataclass(frozen=True)
class TrainConfig:
    loss: Loss = Loss.L2
    ridge: float = 0.0
    balancing: bool = False
    feature_depth: FeatureDepth = FeatureDepth.STANDARD
    data_hours: float = 1.0
    data_distribution: str = "1cam"
    seed: int = 0
    augment: bool = False

    def __post_init__(self):
        object.__setattr__(self, "loss", Loss(self.loss))
        object.__setattr__(self, "feature_depth", FeatureDepth(self.feature_depth))
        if not isinstance(self.ridge, (int, float)) or isinstance(self.ridge, bool):
            raise TypeError(f"Ridge coefficient must be a number: {self.ridge!r}")
        if not self.ridge >= 0:
            raise ValueError(f"Ridge coefficient must be non-negative: {self.ridge!r}")
        if not self.data_hours > 0:
            raise ValueError(f"Amount of training data must be positive: {self.data_hours!r} h")
        if self.data_distribution not in data_distributions:
            raise ValueError(
                f"Unknown data distribution {self.data_distribution!r}. Supported: {list(data_distributions)}"
            )

    def to_dict(self):
        config = asdict(self)
        config["loss"] = self.loss.value
        config["feature_depth"] = self.feature_depth.value
        return config

    @classmethod
    def from_dict(cls, config_dict):
        return cls(**config_dict)


# ======================================================================================
#                               Balancing


def steering_bins(steering, bins=default_steering_bins):
    """
    Bin index of each steering value: ``bins`` uniform bins over [-1, 1].
    """
    steering = np.asarray(steering, dtype=float)
    return np.clip(np.floor((steering + 1.0) / 2.0 * bins), 0, bins - 1).astype(np.int64)


def _bin_quotas(bin_index, batch, bins):
    if batch % bins:
        raise ValueError(f"Batch size {batch} is not divisible by the number of bins {bins}")
    if len(bin_index) == 0:
        raise EmptyDatasetError("Can not draw balanced batches from an empty dataset")
    members = [np.flatnonzero(bin_index == b) for b in range(bins)]
    nonempty = [b for b in range(bins) if len(members[b])]
    quotas = np.zeros(bins, dtype=np.int64)
    quotas[nonempty] = batch // bins
    for k in range((bins - len(nonempty)) * (batch // bins)):
        quotas[nonempty[k % len(nonempty)]] += 1
    return members, quotas


def _steering_of(dataset_or_steering):
    steering = getattr(dataset_or_steering, "steering", dataset_or_steering)
    return np.asarray(steering, dtype=float)


def balanced_minibatches(
    dataset, batch=default_batch_size, bins=default_steering_bins, seed=0, *, n_batches=None
):
    """
    Generate minibatches of sample indices balanced over steering bins.

    Each batch draws ``batch / bins`` indices uniformly with replacement from every
    nonempty bin. The quota of empty bins is redistributed round-robin over the nonempty
    bins, so every batch holds exactly ``batch`` indices.

    Parameters
    ----------
    dataset: Dataset or array-like
        Dataset or its steering labels.
    batch: int
        Batch size, divisible by ``bins``.
    bins: int
        Number of uniform steering bins over [-1, 1].
    seed: int
        Seed of the sampling; the same seed produces the same batch sequence.
    n_batches: int or None
        Number of batches. The default is one epoch, ``ceil(n / batch)`` batches.

    Yields
    ------
    numpy.ndarray
        Indices of the samples in the batch.
    """
    steering = _steering_of(dataset)
    members, quotas = _bin_quotas(steering_bins(steering, bins), batch, bins)
    if n_batches is None:
        n_batches = math.ceil(len(steering) / batch)
    rng = np.random.default_rng(seed)
    for _ in range(n_batches):
        parts = [rng.choice(members[b], size=quotas[b], replace=True) for b in range(bins) if quotas[b]]
        yield np.concatenate(parts)


def balanced_counts(
    dataset, batch=default_batch_size, bins=default_steering_bins, seed=0, *, epochs=default_balance_epochs
):
    """
    Number of times each sample is drawn by ``epochs`` epochs of balanced minibatches.
    The per-bin totals are drawn at once, which has the same distribution as accumulating
    the individual batches.
    """
    steering = _steering_of(dataset)
    members, quotas = _bin_quotas(steering_bins(steering, bins), batch, bins)
    n_batches = epochs * math.ceil(len(steering) / batch)
    rng = np.random.default_rng(seed)
    counts = np.zeros(len(steering), dtype=np.int64)
    for b in range(bins):
        if quotas[b]:
            draws = rng.multinomial(quotas[b] * n_batches, np.full(len(members[b]), 1.0 / len(members[b])))
            counts[members[b]] = draws
    return counts


# ======================================================================================
#                               Fitting


@dataclass
class FitDiagnostics:
    samples: int = 0
    effective_samples: float = 0.0
    iterations: int = 0
    objective_history: list = field(default_factory=list)


def _solve(X, y, weights, ridge):
    a = X.T @ (weights[:, None] * X) + ridge * np.eye(X.shape[1])
    b = X.T @ (weights * y)
    try:
        solution = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as ex:
        raise SingularSystemError(f"Failed to solve the normal equations: {ex}") from ex
    if not np.all(np.isfinite(solution)):
        raise SingularSystemError("The solution of the normal equations is not finite")
    return solution


def fit_linear(
    X,
    y,
    *,
    loss=Loss.L2,
    ridge=0.0,
    counts=None,
    epsilon=default_irls_epsilon,
    tolerance=default_irls_tolerance,
    max_iterations=default_irls_max_iterations,
):
    """
    Fit ``y ~ X w + bias`` with per-sample multiplicities ``counts``.

    The L2 fit solves ``(A^T C A + ridge * I) v = A^T C y`` where ``A`` is ``X`` with an
    appended bias column and ``C`` holds the counts. The penalty applies to the bias as
    well. The ridge coefficient is floored at 1e-10. The L1 fit minimizes the smoothed absolute
    error ``sqrt(e^2 + epsilon^2)`` by iteratively reweighted least squares started from
    the L2 solution.

    Returns
    -------
    weights: numpy.ndarray
    bias: float
    diagnostics: FitDiagnostics
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if len(X) == 0:
        raise EmptyDatasetError("Can not fit a model on an empty set of samples")
    counts = np.ones(len(X)) if counts is None else np.asarray(counts, dtype=float)
    loss = Loss(loss)

    A = np.hstack([X, np.ones((len(X), 1))])
    n_eff = float(np.sum(counts))
    lam = max(ridge, default_ridge_floor)
    v = _solve(A, y, counts, lam)
    diagnostics = FitDiagnostics(samples=int(np.count_nonzero(counts)), effective_samples=n_eff)

    if loss == Loss.L1:

        def objective(v):
            e = A @ v - y
            return float((np.sum(counts * np.sqrt(e**2 + epsilon**2)) + 0.5 * lam * (v @ v)) / n_eff)

        diagnostics.objective_history.append(objective(v))
        for n in range(max_iterations):
            e = A @ v - y
            v_new = _solve(A, y, counts / np.sqrt(e**2 + epsilon**2), lam)
            diagnostics.iterations = n + 1
            diagnostics.objective_history.append(objective(v_new))
            converged = np.max(np.abs(v_new - v)) < tolerance
            v = v_new
            if converged:
                break

    return v[:-1].copy(), float(v[-1]), diagnostics


class RegressorPolicy(Policy):
    """
    Branched linear steering policy: one linear head per command over a subset of the
    observation features.
    """

    name = "regressor"

    def __init__(self, heads, *, feature_index, config=None, diagnostics=None):
        self.feature_index = tuple(int(n) for n in feature_index)
        self.heads = {}
        for command in _commands:
            weights, bias = heads[command]
            weights = np.asarray(weights, dtype=float)
            if weights.shape != (len(self.feature_index),):
                raise ValueError(f"Head {command.value!r} has weights of shape {weights.shape!r}")
            if not (np.all(np.isfinite(weights)) and math.isfinite(bias)):
                raise ValueError(f"Head {command.value!r} has non-finite parameters")
            self.heads[command] = (weights, float(bias))
        self.config = config
        self.diagnostics = diagnostics or {}
        self._weights = np.array([self.heads[c][0] for c in _commands])
        self._biases = np.array([self.heads[c][1] for c in _commands])

    def steer(self, obs):
        weights, bias = self.heads[obs.command]
        value = float(obs.features[list(self.feature_index)] @ weights + bias)
        return min(1.0, max(-1.0, value))

    def steer_stream(self, features, commands, expert_steering, speeds):
        x = np.asarray(features, dtype=float)[:, list(self.feature_index)]
        commands = np.asarray(commands, dtype=np.int64)
        out = np.sum(x * self._weights[commands], axis=1) + self._biases[commands]
        return np.clip(out, -1.0, 1.0)

    def describe(self):
        desc = {"policy": self.name, "features": [feature_names[n] for n in self.feature_index]}
        if self.config is not None:
            desc["config"] = self.config.to_dict()
        return desc

    def to_dict(self):
        return {
            "format": model_format_version,
            "features": [feature_names[n] for n in self.feature_index],
            "heads": {c.value: {"weights": w.tolist(), "bias": b} for c, (w, b) in self.heads.items()},
            "config": self.config.to_dict() if self.config is not None else None,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, model_dict):
        if model_dict.get("format") != model_format_version:
            raise FormatVersionMismatchError(model_dict.get("format"), model_format_version)
        try:
            feature_index = [feature_names.index(name) for name in model_dict["features"]]
            heads = {c: (v["weights"], v["bias"]) for c in _commands for v in [model_dict["heads"][c.value]]}
        except (KeyError, ValueError, TypeError) as ex:
            raise ValueError(f"Invalid model description: {ex}") from ex
        config = model_dict.get("config")
        config = TrainConfig.from_dict(config) if config is not None else None
        return cls(heads, feature_index=feature_index, config=config, diagnostics=model_dict.get("diagnostics"))

    def save(self, path):
        try:
            with open(path, "w") as f:
                json.dump(self.to_dict(), f, indent=1)
                f.write("\n")
        except OSError as ex:
            raise ArtifactIoError(f"Failed to write model {str(path)!r}: {ex}") from ex

    @classmethod
    def load(cls, path):
        try:
            with open(path) as f:
                model_dict = json.load(f)
        except (OSError, ValueError) as ex:
            raise ArtifactIoError(f"Failed to read model {str(path)!r}: {ex}") from ex
        return cls.from_dict(model_dict)


def fit_regressor(dataset, config):
    """
    Train a ``RegressorPolicy`` on the first ``config.data_hours`` of ``dataset``.

    Parameters
    ----------
    dataset: Dataset
        Training data. All viewpoints present in the dataset are used.
    config: TrainConfig
        Training settings.

    Returns
    -------
    RegressorPolicy
        Trained policy. Heads of commands missing from the data fall back to the
        ``Continue`` head (or the first trained head); the fallbacks are listed in the
        policy diagnostics.

    Raises
    ------
    EmptyDatasetError
        The dataset contains no samples.
    SingularSystemError
        The normal equations can not be solved.
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("Can not train a model on an empty dataset")
    if dataset.hours > config.data_hours:
        dataset = dataset.head(config.data_hours)

    rng = np.random.default_rng([config.seed, 1])
    feature_index = config.feature_depth.feature_index
    X = dataset.features[:, list(feature_index)]
    if config.augment:
        X = X + rng.normal(0.0, default_feature_noise_std, X.shape)
    y = dataset.steering
    if config.balancing:
        counts = balanced_counts(y, seed=[config.seed, 2]).astype(float)
    else:
        counts = np.ones(len(y))

    heads, head_diagnostics, fallbacks = {}, {}, {}
    for command in _commands:
        mask = (dataset.command == command.index) & (counts > 0)
        if not np.any(mask):
            continue
        weights, bias, diag = fit_linear(
            X[mask], y[mask], loss=config.loss, ridge=config.ridge, counts=counts[mask]
        )
        heads[command] = (weights, bias)
        head_diagnostics[command.value] = asdict(diag)

    if not heads:
        raise EmptyDatasetError("No samples were selected for training")
    for command in _commands:
        if command not in heads:
            source = Command.CONTINUE if Command.CONTINUE in heads else next(c for c in _commands if c in heads)
            heads[command] = heads[source]
            fallbacks[command.value] = source.value
            logger.warning("No training samples for command %r: using the %r head", command.value, source.value)

    logger.debug("Trained regressor on %d samples: %s", len(dataset), config)
    diagnostics = {"samples": len(dataset), "heads": head_diagnostics, "fallbacks": fallbacks}
    return RegressorPolicy(heads, feature_index=feature_index, config=config, diagnostics=diagnostics)
