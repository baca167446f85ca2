import csv
import itertools
import json
import logging
import math
from collections import namedtuple
from dataclasses import asdict, dataclass, field
from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.figure import Figure
from scipy import stats

from ._defaults import default_keep_fraction
from .errors import (
    ArtifactIoError,
    DrivevalError,
    EmptyGroupError,
    EmptySetError,
    LengthMismatchError,
    MissingMetricError,
    TooFewPointsError,
    ZeroVarianceError,
)
from .offline_metrics import offline_metric_names
from .online_eval import online_metric_names

logger = logging.getLogger(__name__)

parameter_axes = ("data_hours", "data_distribution", "balancing", "loss", "regularization", "feature_depth")

online_pairs = (
    ("success_rate", "avg_completion"),
    ("km_per_infraction", "success_rate"),
    ("km_per_infraction", "avg_completion"),
)

# Fixed ids and text kept as text in the SVG output
_svg_rc = {"svg.hashsalt": "driveval", "svg.fonttype": "none"}

OfflineKey = namedtuple("OfflineKey", ["town", "variant", "metric"])
OnlineKey = namedtuple("OnlineKey", ["town", "metric"])


@dataclass
class StudyRecord:
    """
    Evaluation results of one model: offline metric values per town and validation
    variant (``offline[town][variant][metric]``) and online metric values per town
    (``online[town][metric]``).
    """

    model_id: str
    config: dict
    offline: dict = field(default_factory=dict)
    online: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.offline or not self.online:
            raise ValueError(f"Study record {self.model_id!r} must have offline and online results")

    def value(self, key):
        try:
            if isinstance(key, OfflineKey):
                return float(self.offline[key.town][key.variant][key.metric])
            return float(self.online[key.town][key.metric])
        except KeyError:
            raise MissingMetricError(f"Record {self.model_id!r} has no value for {tuple(key)!r}") from None

    def has(self, key):
        try:
            self.value(key)
        except MissingMetricError:
            return False
        return True

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, record_dict):
        return cls(**record_dict)


def write_records(records, path):
    try:
        with open(path, "w") as f:
            for r in records:
                f.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    except OSError as ex:
        raise ArtifactIoError(f"Failed to write study records {str(path)!r}: {ex}") from ex


def read_records(path):
    try:
        with open(path) as f:
            return [StudyRecord.from_dict(json.loads(line)) for line in f if line.strip()]
    except (OSError, ValueError, TypeError) as ex:
        raise ArtifactIoError(f"Failed to read study records {str(path)!r}: {ex}") from ex


# ======================================================================================
#                               Correlation


def pearson(x, y):
    """
    Sample Pearson correlation coefficient of two equally long sequences, clamped to
    [-1, 1].

    Raises
    ------
    TooFewPointsError
        Fewer than two points.
    ZeroVarianceError
        One of the sequences is constant. The exception reports the axis (``x`` or ``y``).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise LengthMismatchError(f"Sequences have different lengths: {len(x)} != {len(y)}")
    if len(x) < 2:
        raise TooFewPointsError(f"Correlation requires at least 2 points, got {len(x)}")
    dx, dy = x - np.mean(x), y - np.mean(y)
    for axis, values, d in (("x", x, dx), ("y", y, dy)):
        if np.all(values == values[0]) or not np.any(d):
            raise ZeroVarianceError(axis)
    r = float(stats.pearsonr(x, y)[0])
    return min(1.0, max(-1.0, r))


def filter_best(records, key, keep_fraction=default_keep_fraction):
    """
    Keep the ``ceil(keep_fraction * n)`` records with the lowest value of the offline
    metric ``key``. Ties are broken by model id.
    """
    records = list(records)
    if not records:
        raise EmptySetError("No study records to filter")
    if not 0 < keep_fraction <= 1:
        raise ValueError(f"Keep fraction must be in the range (0, 1]: {keep_fraction!r}")
    ranked = sorted(records, key=lambda r: (r.value(key), r.model_id))
    n_keep = math.ceil(keep_fraction * len(records) - 1e-12)
    kept = {id(r) for r in ranked[:n_keep]}
    return [r for r in records if id(r) in kept]


@dataclass(frozen=True)
class CorrelationEntry:
    x_metric: str
    variant: str
    y_metric: str
    town: str
    r: float
    n: int


@dataclass
class CorrelationReport:
    entries: list
    warnings: list = field(default_factory=list)
    keep_fraction: float = None
    filter_metric: str = None

    def get(self, x_metric, variant, y_metric, town):
        for e in self.entries:
            if (e.x_metric, e.variant, e.y_metric, e.town) == (x_metric, variant, y_metric, town):
                return e
        return None

    def to_dict(self):
        return {
            "keep_fraction": self.keep_fraction,
            "filter_metric": self.filter_metric,
            "entries": [asdict(e) for e in self.entries],
            "warnings": self.warnings,
        }


def _study_towns(records):
    return sorted({town for r in records for town in r.online})


def _study_variants(records, town):
    return sorted({v for r in records for v in r.offline.get(town, {})})


def correlate_study(
    records, *, keep_fraction=None, filter_metric=None, offline_metrics=offline_metric_names, towns=None
):
    """
    Pearson correlation of every offline metric (per validation variant) with every
    online metric in the same town, and of the online metrics with each other.

    With ``keep_fraction`` set, the records are filtered per offline metric with
    ``filter_best`` before that metric is correlated, or by ``filter_metric`` of the same
    town and variant when it is given. Degenerate pairs (fewer than two
    points or a constant axis) are omitted from the entries and listed as warnings.

    Returns
    -------
    CorrelationReport
        Entries sorted by town, variant, offline metric and online metric.
    """
    records = list(records)
    if len(records) < 2:
        raise TooFewPointsError(f"Correlation requires at least 2 study records, got {len(records)}")
    towns = towns or _study_towns(records)
    entries, warnings = [], []

    def add(x_key, y_key, variant, subset):
        subset = [r for r in subset if r.has(x_key) and r.has(y_key)]
        pair = {"x_metric": x_key.metric, "variant": variant, "y_metric": y_key.metric, "town": y_key.town}
        try:
            r = pearson([s.value(x_key) for s in subset], [s.value(y_key) for s in subset])
        except (TooFewPointsError, ZeroVarianceError) as ex:
            warnings.append(dict(pair, error=str(ex)))
            logger.warning("Skipping correlation %s: %s", pair, ex)
            return
        entries.append(CorrelationEntry(r=r, n=len(subset), **pair))

    for town in towns:
        for variant in _study_variants(records, town):
            for metric in offline_metrics:
                x_key = OfflineKey(town, variant, metric)
                subset = [r for r in records if r.has(x_key)]
                if keep_fraction is not None and subset:
                    filter_key = x_key if filter_metric is None else OfflineKey(town, variant, filter_metric)
                    scored = [r for r in subset if r.has(filter_key)]
                    subset = filter_best(scored, filter_key, keep_fraction) if scored else []
                for online_metric in online_metric_names:
                    add(x_key, OnlineKey(town, online_metric), variant, subset)
        for x_metric, y_metric in online_pairs:
            add(OnlineKey(town, x_metric), OnlineKey(town, y_metric), "online", records)

    entries.sort(key=lambda e: (e.town, e.variant, e.x_metric, e.y_metric))
    return CorrelationReport(
        entries=entries, warnings=warnings, keep_fraction=keep_fraction, filter_metric=filter_metric
    )


# ======================================================================================
#                               Model selection


@dataclass(frozen=True)
class ParameterGroup:
    axis: str
    members: tuple  # model ids
    fixed: tuple  # (axis, value) pairs shared by all members


def _axis_values(record, axes):
    config = record.config
    if not all(a in config for a in axes):
        return None
    return tuple(json.dumps(config[a], sort_keys=True) for a in axes)


def parameter_groups(records, base=None, *, axes=parameter_axes):
    """
    Groups of models that share all parameters except one.

    With ``base`` (a model id) there is one group per axis: the base model and all models
    that differ from it in that axis only. Without ``base`` all such groups of at least
    two models are returned.
    """
    records = [r for r in records if _axis_values(r, axes) is not None]
    values = {r.model_id: _axis_values(r, axes) for r in records}
    groups = []
    for n, axis in enumerate(axes):
        buckets = {}
        for r in sorted(records, key=lambda r: r.model_id):
            fixed = values[r.model_id][:n] + values[r.model_id][n + 1 :]
            buckets.setdefault(fixed, []).append(r.model_id)
        if base is not None:
            if base not in values:
                raise ValueError(f"Base model {base!r} is not in the study")
            fixed = values[base][:n] + values[base][n + 1 :]
            buckets = {fixed: buckets.get(fixed, [base])}
        for fixed, members in sorted(buckets.items()):
            if len(members) >= 2:
                other_axes = axes[:n] + axes[n + 1 :]
                groups.append(ParameterGroup(axis, tuple(members), tuple(zip(other_axes, fixed))))
    return groups


@dataclass(frozen=True)
class SelectionResult:
    matches: int
    groups: int
    details: tuple = ()

    def to_dict(self):
        return {"matches": self.matches, "groups": self.groups, "details": [dict(d) for d in self.details]}


def _unique_best(values, best):
    target = best(values.values())
    winners = [k for k, v in values.items() if v == target]
    return winners[0] if len(winners) == 1 else None


def selection_consistency(records, groups, offline_key, *, online_metric="success_rate"):
    """
    Count the groups in which the model with the lowest offline error is also the model
    with the highest online score. Ties on either side count as non-matches.

    Raises
    ------
    EmptyGroupError
        A group holds fewer than two models.
    """
    by_id = {r.model_id: r for r in records}
    online_key = OnlineKey(offline_key.town, online_metric)
    matches, details = 0, []
    for group in groups:
        if len(group.members) < 2:
            raise EmptyGroupError(f"Group along {group.axis!r} holds fewer than 2 models: {group.members!r}")
        try:
            members = [by_id[m] for m in group.members]
        except KeyError as ex:
            raise MissingMetricError(f"Group member {ex.args[0]!r} is not in the study") from None
        offline_best = _unique_best({m.model_id: m.value(offline_key) for m in members}, min)
        online_best = _unique_best({m.model_id: m.value(online_key) for m in members}, max)
        match = offline_best is not None and offline_best == online_best
        matches += int(match)
        details.append(
            (("axis", group.axis), ("offline_best", offline_best), ("online_best", online_best), ("match", match))
        )
    return SelectionResult(matches=matches, groups=len(groups), details=tuple(details))


def selection_table(records, groups, *, towns=None, variant="1cam", metrics=offline_metric_names):
    """
    Selection consistency of every offline metric in every town. Returns a list of rows
    with the per-axis outcomes and the total number of matches.
    """
    towns = towns or _study_towns(records)
    rows = []
    for town in towns:
        for metric in metrics:
            key = OfflineKey(town, variant, metric)
            result = selection_consistency(records, groups, key)
            row = {"town": town, "variant": variant, "metric": metric, "matches": result.matches}
            row["groups"] = result.groups
            row["axes"] = [dict(d)["axis"] for d in result.details if dict(d)["match"]]
            rows.append(row)
    return rows


# ======================================================================================
#                               Scatter plots


def _key_label(key):
    if isinstance(key, OfflineKey):
        return f"{key.metric} ({key.variant}, town {key.town})"
    return f"{key.metric} (town {key.town})"


def _size_ranks(records):
    hours = sorted({r.config["data_hours"] for r in records if "data_hours" in r.config})
    rank = {h: n + 1 for n, h in enumerate(hours)}
    return [rank.get(r.config.get("data_hours"), 0) for r in records]


def _fmt(value):
    return f"{value:.9g}"


def scatter_figure(records, x_key, y_key, *, width=480, height=360):
    """
    Scatter plot of ``y_key`` against ``x_key`` for the records that have both values, one
    marker per model in model id order. The marker size grows with the rank of the training
    data amount. With a defined Pearson coefficient the least-squares line is drawn and the
    coefficient is shown in the upper right corner.

    Returns
    -------
    figure: matplotlib.figure.Figure
    records: list(StudyRecord)
        The plotted records.
    """
    records = sorted((r for r in records if r.has(x_key) and r.has(y_key)), key=lambda r: r.model_id)
    xs = np.array([r.value(x_key) for r in records], dtype=float)
    ys = np.array([r.value(y_key) for r in records], dtype=float)
    try:
        r = pearson(xs, ys)
    except DrivevalError:
        r = None

    fig = Figure(figsize=(width / 100, height / 100), dpi=100)
    ax = fig.subplots()
    diameters = 6.0 + 4.0 * np.array(_size_ranks(records), dtype=float)
    ax.scatter(xs, ys, s=diameters**2, c="steelblue", alpha=0.6, edgecolors="none", gid="models")
    if r is None:
        ax.text(0.97, 0.95, "r undefined", transform=ax.transAxes, ha="right", va="top")
    else:
        slope, intercept = np.polyfit(xs, ys, 1)
        line_x = np.array([xs.min(), xs.max()])
        ax.plot(line_x, slope * line_x + intercept, color="gray", linewidth=1.0)
        ax.text(0.97, 0.95, f"r = {r:.3f}", transform=ax.transAxes, ha="right", va="top")
    ax.set_xlabel(_key_label(x_key))
    ax.set_ylabel(_key_label(y_key))
    fig.tight_layout()
    return fig, records


def emit_scatter(records, x_key, y_key, path, *, width=480, height=360):
    """
    Write the scatter plot of ``y_key`` against ``x_key`` as ``<path>.csv`` (model id,
    x, y and marker size) and as ``<path>.svg`` (see ``scatter_figure``). The marker size
    is the rank of the training data amount. The SVG output of identical inputs is
    byte-identical.
    """
    fig, records = scatter_figure(records, x_key, y_key, width=width, height=height)
    sizes = _size_ranks(records)

    path = Path(path)
    csv_path, svg_path = path.with_suffix(".csv"), path.with_suffix(".svg")
    try:
        with open(csv_path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(["model_id", "x", "y", "size"])
            for rec, s in zip(records, sizes):
                writer.writerow([rec.model_id, _fmt(rec.value(x_key)), _fmt(rec.value(y_key)), s])
        with matplotlib.rc_context(_svg_rc):
            fig.savefig(svg_path, format="svg", metadata={"Date": None})
    except OSError as ex:
        raise ArtifactIoError(f"Failed to write scatter plot {str(path)!r}: {ex}") from ex
    return csv_path, svg_path



def write_report(records, out_dir, *, keep_fraction=default_keep_fraction, training_town=None, base=None):
    """
    Write the analysis of a study to ``out_dir``: offline-vs-success scatter plots for every
    metric and validation variant in every town (for the training town also after keeping
    the best models), online-vs-online scatter plots, the correlation reports and the
    model selection table.
    """
    out_dir = Path(out_dir)
    scatter_dir = out_dir / "scatter"
    try:
        scatter_dir.mkdir(parents=True, exist_ok=True)
    except OSError as ex:
        raise ArtifactIoError(f"Failed to create report directory {str(out_dir)!r}: {ex}") from ex

    towns = _study_towns(records)
    for town in towns:
        y_key = OnlineKey(town, "success_rate")
        for variant, metric in itertools.product(_study_variants(records, town), offline_metric_names):
            x_key = OfflineKey(town, variant, metric)
            subset = [r for r in records if r.has(x_key)]
            emit_scatter(subset, x_key, y_key, scatter_dir / f"{town}_{variant}_{metric}_all")
            if town == training_town and subset:
                best = filter_best(subset, x_key, keep_fraction)
                emit_scatter(best, x_key, y_key, scatter_dir / f"{town}_{variant}_{metric}_best")
        for x_metric, y_metric in online_pairs:
            emit_scatter(
                records,
                OnlineKey(town, x_metric),
                OnlineKey(town, y_metric),
                scatter_dir / f"{town}_{x_metric}_{y_metric}",
            )

    reports = {
        "all": correlate_study(records).to_dict(),
        "best": correlate_study(records, keep_fraction=keep_fraction).to_dict(),
    }
    groups = parameter_groups(records, base=base)
    table = selection_table(records, groups, towns=towns) if groups else []
    try:
        with open(out_dir / "correlation.json", "w") as f:
            json.dump(reports, f, indent=1, sort_keys=True)
            f.write("\n")
        with open(out_dir / "selection.json", "w") as f:
            json.dump({"groups": [asdict(g) for g in groups], "table": table}, f, indent=1, sort_keys=True)
            f.write("\n")
    except OSError as ex:
        raise ArtifactIoError(f"Failed to write report {str(out_dir)!r}: {ex}") from ex
    logger.info("Report for %d models written to %s", len(records), out_dir)
    return reports
