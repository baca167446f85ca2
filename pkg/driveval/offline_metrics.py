import enum
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ._defaults import default_cumulative_window, default_quantization_sigma, default_relative_error_alpha
from .errors import EmptySetError, LengthMismatchError, NegativeSpeedError, NoValidWindowError, UnknownClassError

logger = logging.getLogger(__name__)

offline_metric_names = ("mse", "mae", "swae", "cumulative_swae", "qce", "tre")


@dataclass(frozen=True)
class OfflineParams:
    T: int = default_cumulative_window
    sigma: float = default_quantization_sigma
    alpha: float = default_relative_error_alpha

    def __post_init__(self):
        if isinstance(self.T, bool) or not isinstance(self.T, (int, np.integer)) or self.T < 0:
            raise ValueError(f"Cumulative window must be a non-negative integer: {self.T!r}")
        if not self.sigma > 0:
            raise ValueError(f"Quantization threshold must be positive: {self.sigma!r}")
        if not self.alpha >= 0:
            raise ValueError(f"Relative error threshold must be non-negative: {self.alpha!r}")


def _as_pair(a, a_hat):
    a = np.asarray(a, dtype=float).ravel()
    a_hat = np.asarray(a_hat, dtype=float).ravel()
    if len(a) != len(a_hat):
        raise LengthMismatchError(f"Ground truth and predictions have different lengths: {len(a)} != {len(a_hat)}")
    if len(a) == 0:
        raise EmptySetError("Metrics are undefined on an empty set of samples")
    return a, a_hat


def _as_speeds(v, n):
    v = np.asarray(v, dtype=float).ravel()
    if len(v) != n:
        raise LengthMismatchError(f"Speeds have length {len(v)}, expected {n}")
    if np.any(v < 0):
        raise NegativeSpeedError(f"Speeds must be non-negative (min {float(np.min(v))!r})")
    return v


def mse(a, a_hat):
    a, a_hat = _as_pair(a, a_hat)
    return float(np.mean((a - a_hat) ** 2))


def mae(a, a_hat):
    a, a_hat = _as_pair(a, a_hat)
    return float(np.mean(np.abs(a - a_hat)))


def speed_weighted_mae(a, a_hat, v):
    a, a_hat = _as_pair(a, a_hat)
    v = _as_speeds(v, len(a))
    return float(np.mean(np.abs(a - a_hat) * v))


def cumulative_swae(a, a_hat, v, T=default_cumulative_window, *, streams=None):
    """
    Cumulative speed-weighted absolute error: the mean over all windows of ``T + 1``
    consecutive steps of the absolute sum of the speed-weighted errors. Windows never
    cross the boundaries of the temporally ordered ``streams`` (index arrays); by default
    the samples form a single stream.

    Raises
    ------
    NoValidWindowError
        No stream is at least ``T + 1`` steps long.
    """
    a, a_hat = _as_pair(a, a_hat)
    v = _as_speeds(v, len(a))
    d = (a - a_hat) * v
    if streams is None:
        streams = [np.arange(len(d))]

    window_sums = []
    for index in streams:
        ds = d[index]
        if len(ds) < T + 1:
            continue
        if T == 0:
            window_sums.append(np.abs(ds))
        else:
            window_sums.append(np.abs(np.lib.stride_tricks.sliding_window_view(ds, T + 1).sum(axis=1)))
    if not window_sums:
        raise NoValidWindowError(f"No sequence holds a full window of {T + 1} steps")
    return float(np.mean(np.concatenate(window_sums)))


def quantize_steering(x, sigma):
    """
    Three-way quantization: -1 below ``-sigma``, 1 at or above ``sigma`` and 0 in between.
    """
    x = np.asarray(x, dtype=float)
    return np.where(x < -sigma, -1, np.where(x >= sigma, 1, 0))


def quantized_classification_error(a, a_hat, sigma=default_quantization_sigma):
    if not sigma > 0:
        raise ValueError(f"Quantization threshold must be positive: {sigma!r}")
    a, a_hat = _as_pair(a, a_hat)
    return float(np.mean(quantize_steering(a, sigma) != quantize_steering(a_hat, sigma)))


def thresholded_relative_error(a, a_hat, alpha=default_relative_error_alpha):
    """
    Fraction of samples whose absolute error strictly exceeds ``alpha`` times the
    magnitude of the ground truth.
    """
    if not alpha >= 0:
        raise ValueError(f"Relative error threshold must be non-negative: {alpha!r}")
    a, a_hat = _as_pair(a, a_hat)
    return float(np.mean(np.abs(a_hat - a) > alpha * np.abs(a)))


# ======================================================================================
#                               Discrete accuracy


class ActionClass(enum.Enum):
    LEFT = "Left"
    RIGHT = "Right"
    STRAIGHT = "Straight"
    STOP = "Stop"


_classes = tuple(ActionClass)
_class_code = {c: n for n, c in enumerate(_classes)}
_code_left, _code_right, _code_straight, _code_stop = (_class_code[c] for c in _classes)


def action_class(steering, brake=0.0, sigma=default_quantization_sigma):
    """
    Discrete class of an action: ``Stop`` while braking, otherwise the steering quantized
    by ``sigma`` (positive steering turns left).
    """
    if brake > 0:
        return ActionClass.STOP
    q = int(quantize_steering(steering, sigma))
    return {1: ActionClass.LEFT, -1: ActionClass.RIGHT, 0: ActionClass.STRAIGHT}[q]


def _class_codes(steering, brake, sigma):
    q = quantize_steering(steering, sigma)
    codes = np.where(q > 0, _code_left, np.where(q < 0, _code_right, _code_straight))
    return np.where(np.asarray(brake) > 0, _code_stop, codes)


def _to_codes(values):
    codes = []
    for value in values:
        try:
            codes.append(_class_code[ActionClass(value)])
        except ValueError:
            raise UnknownClassError(f"Unknown action class {value!r}") from None
    return np.array(codes, dtype=np.int64)


@dataclass(frozen=True)
class BreakdownReport:
    """
    Accuracy of discrete action classes overall and per ground-truth class. Values of
    subsets without samples (or with zero total speed) are ``None``.
    """

    all: float
    straight: float = None
    stop: float = None
    turns: float = None
    weighted_all: float = None
    weighted_turns: float = None

    def to_dict(self):
        return asdict(self)


def _mean_or_none(values, weights=None):
    if len(values) == 0:
        return None
    if weights is None:
        return float(np.mean(values))
    total = float(np.sum(weights))
    return float(np.sum(weights * values) / total) if total > 0 else None


def _breakdown(labels, preds, speeds):
    correct = (labels == preds).astype(float)
    turns = (labels == _code_left) | (labels == _code_right)
    return BreakdownReport(
        all=float(np.mean(correct)),
        straight=_mean_or_none(correct[labels == _code_straight]),
        stop=_mean_or_none(correct[labels == _code_stop]),
        turns=_mean_or_none(correct[turns]),
        weighted_all=_mean_or_none(correct, speeds),
        weighted_turns=_mean_or_none(correct[turns], speeds[turns]),
    )


def discrete_accuracy(labels, preds, speeds):
    """
    Accuracy of predicted action classes against the ground truth, overall, per
    ground-truth subset (Straight, Stop and the merged turns) and weighted with speed.

    Parameters
    ----------
    labels, preds: sequence of ActionClass or str
        Ground-truth and predicted classes.
    speeds: array-like
        Non-negative speeds used for the weighted accuracies.

    Returns
    -------
    BreakdownReport
    """
    labels, preds = list(labels), list(preds)
    if len(labels) != len(preds):
        raise LengthMismatchError(f"Labels and predictions have different lengths: {len(labels)} != {len(preds)}")
    if not labels:
        raise EmptySetError("Accuracy is undefined on an empty set of samples")
    speeds = _as_speeds(speeds, len(labels))
    return _breakdown(_to_codes(labels), _to_codes(preds), speeds)


# ======================================================================================
#                               Evaluation


@dataclass
class OfflineReport:
    mse: float
    mae: float
    swae: float
    cumulative_swae: float
    qce: float
    tre: float
    params: OfflineParams
    n: int
    breakdown: BreakdownReport
    manifest: dict = field(default_factory=dict)

    def metric(self, name):
        if name not in offline_metric_names:
            raise ValueError(f"Unknown offline metric {name!r}. Supported: {list(offline_metric_names)}")
        return getattr(self, name)

    def to_dict(self):
        return {
            "metrics": {name: getattr(self, name) for name in offline_metric_names},
            "params": asdict(self.params),
            "n": self.n,
            "breakdown": self.breakdown.to_dict(),
            "manifest": self.manifest,
        }


def predict_dataset(policy, dataset):
    """
    Steering predicted by ``policy`` for every sample of ``dataset``. Each temporally
    ordered stream is predicted by a fresh copy of the policy reset with the stream index.

    Perturbed policies draw their perturbation from that index, which is the position of
    the stream in order of first appearance. Their predictions (and every metric computed
    from them) therefore depend on the order of the streams in the dataset, not on the
    sequence ids.
    """
    if len(dataset) == 0:
        raise EmptySetError("Can not evaluate a policy on an empty dataset")
    predictions = np.empty(len(dataset))
    for n, index in enumerate(dataset.streams()):
        p = policy.clone()
        p.reset(n)
        predictions[index] = p.steer_stream(
            dataset.features[index], dataset.command[index], dataset.steering[index], dataset.speed[index]
        )
    return predictions


def evaluate_offline(policy, dataset, params=None):
    """
    Evaluate ``policy`` on a validation dataset with all six offline metrics and the
    discrete accuracy breakdown.

    Results of perturbed policies depend on the order of the streams, see
    ``predict_dataset``.

    Parameters
    ----------
    policy: Policy
    dataset: Dataset
        Validation set. Must not be empty.
    params: OfflineParams or None
        Metric parameters, defaults are used if ``None``.

    Returns
    -------
    OfflineReport
    """
    params = params or OfflineParams()
    a_hat = predict_dataset(policy, dataset)
    a, v = dataset.steering, dataset.speed
    brake = dataset.labels[:, 2]

    labels = _class_codes(a, brake, params.sigma)
    preds = _class_codes(a_hat, brake, params.sigma)
    report = OfflineReport(
        mse=mse(a, a_hat),
        mae=mae(a, a_hat),
        swae=speed_weighted_mae(a, a_hat, v),
        cumulative_swae=cumulative_swae(a, a_hat, v, params.T, streams=dataset.streams()),
        qce=quantized_classification_error(a, a_hat, params.sigma),
        tre=thresholded_relative_error(a, a_hat, params.alpha),
        params=params,
        n=len(dataset),
        breakdown=_breakdown(labels, preds, v),
        manifest=dict(dataset.manifest),
    )
    logger.debug("Offline evaluation of %r: mse=%.6g, n=%d", policy.describe(), report.mse, report.n)
    return report
