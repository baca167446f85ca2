import csv
import enum
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._defaults import (
    default_budget_speed,
    default_control_period,
    default_float_digits,
    default_frame_rate,
    default_goal_radius,
    default_lateral_camera_yaw,
    default_noisy_episode_fraction,
    default_suite_route_range,
    default_validation_hours,
)
from .errors import ArtifactIoError, CorruptRowError, FormatVersionMismatchError, OffRouteError
from .expert import expert_action, impulse_offset, impulse_schedule, is_noisy_episode
from .policy import Observation, feature_names, frame_features
from .vehicle import Action, VehicleState, advance
from .world import Command, command_at, lane_frame, random_route

logger = logging.getLogger(__name__)

dataset_format_version = "driveval-dataset/1"

csv_columns = (
    ("sequence_id", "step_index", "viewpoint", "perturbed", "command", "speed")
    + tuple(f"f{n + 1}" for n in range(len(feature_names)))
    + ("steer_label", "throttle_label", "brake_label")
)


class Viewpoint(enum.Enum):
    CENTER = "Center"
    LEFT30 = "Left30"
    RIGHT30 = "Right30"


_viewpoints = tuple(Viewpoint)
_viewpoint_code = {v: n for n, v in enumerate(_viewpoints)}
_commands = tuple(Command)


class Cameras(enum.Enum):
    ONE = "1cam"
    THREE = "3cam"


# ======================================================================================
#                               Conditions


@dataclass(frozen=True)
class Condition:
    """
    Observation-time perturbation profile: additive Gaussian noise per feature and a bias
    added to the three curvature features. The all-zero profile is the identity.
    """

    name: str
    feature_noise: tuple = (0.0,) * len(feature_names)
    curvature_bias: float = 0.0  # 1/m

    def __post_init__(self):
        noise = tuple(float(v) for v in self.feature_noise)
        if len(noise) != len(feature_names):
            raise ValueError(f"Condition {self.name!r} must have {len(feature_names)} noise values: {noise!r}")
        if any(v < 0 for v in noise):
            raise ValueError(f"Condition {self.name!r} has negative noise values: {noise!r}")
        object.__setattr__(self, "feature_noise", noise)

    @property
    def is_identity(self):
        return not any(self.feature_noise) and self.curvature_bias == 0

    def apply(self, features, rng):
        if self.is_identity:
            return features
        out = np.array(features, dtype=float)
        if any(self.feature_noise):
            out = out + rng.normal(0.0, np.asarray(self.feature_noise))
        out[2:5] += self.curvature_bias
        return out

    def to_dict(self):
        return {
            "name": self.name,
            "feature_noise": list(self.feature_noise),
            "curvature_bias": self.curvature_bias,
        }


clear = Condition("clear")
soft_rain_sunset = Condition(
    "soft_rain_sunset", feature_noise=(0.10, 0.02, 0.002, 0.002, 0.002, 1.0, 0.2), curvature_bias=0.004
)
conditions = {c.name: c for c in (clear, soft_rain_sunset)}


def get_condition(name):
    if isinstance(name, Condition):
        return name
    try:
        return conditions[name]
    except KeyError:
        raise ValueError(f"Unknown condition {name!r}. Supported conditions: {sorted(conditions)}") from None


# ======================================================================================
#                               Samples and datasets


@dataclass(frozen=True, eq=False)
class Sample:
    observation: Observation
    command: Command
    action: Action
    speed: float
    sequence_id: int
    step_index: int
    viewpoint: Viewpoint
    perturbed: bool


def _round_significant(values, digits=default_float_digits):
    values = np.asarray(values, dtype=float)
    flat = [float(f"{v:.{digits}g}") for v in values.ravel().tolist()]
    return np.array(flat, dtype=float).reshape(values.shape)


class Dataset:
    """
    Columnar collection of samples in temporally ordered sequences with the manifest of
    its collection settings.
    """

    def __init__(
        self, *, sequence_id, step_index, viewpoint, perturbed, command, speed, features, labels, manifest
    ):
        self.sequence_id = np.asarray(sequence_id, dtype=np.int64)
        self.step_index = np.asarray(step_index, dtype=np.int64)
        self.viewpoint = np.asarray(viewpoint, dtype=np.int64)
        self.perturbed = np.asarray(perturbed, dtype=bool)
        self.command = np.asarray(command, dtype=np.int64)
        self.speed = np.asarray(speed, dtype=float)
        self.features = np.asarray(features, dtype=float).reshape(-1, len(feature_names))
        self.labels = np.asarray(labels, dtype=float).reshape(-1, 3)
        self.manifest = dict(manifest)
        n = len(self.sequence_id)
        for name in ("step_index", "viewpoint", "perturbed", "command", "speed", "features", "labels"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"Dataset column {name!r} has {len(getattr(self, name))} rows, expected {n}")

    def __len__(self):
        return len(self.sequence_id)

    def __getitem__(self, n):
        command = _commands[self.command[n]]
        label = Action(*(float(v) for v in self.labels[n]))
        return Sample(
            observation=Observation(
                features=self.features[n], command=command, speed=float(self.speed[n]), expert=label
            ),
            command=command,
            action=label,
            speed=float(self.speed[n]),
            sequence_id=int(self.sequence_id[n]),
            step_index=int(self.step_index[n]),
            viewpoint=_viewpoints[self.viewpoint[n]],
            perturbed=bool(self.perturbed[n]),
        )

    def samples(self):
        for n in range(len(self)):
            yield self[n]

    @property
    def steering(self):
        return self.labels[:, 0]

    @property
    def hours(self):
        return int(np.sum(self.viewpoint == _viewpoint_code[Viewpoint.CENTER])) / (3600.0 * default_frame_rate)

    @classmethod
    def from_samples(cls, samples, manifest):
        samples = list(samples)
        return cls(
            sequence_id=[s.sequence_id for s in samples],
            step_index=[s.step_index for s in samples],
            viewpoint=[_viewpoint_code[s.viewpoint] for s in samples],
            perturbed=[s.perturbed for s in samples],
            command=[s.command.index for s in samples],
            speed=[s.speed for s in samples],
            features=np.array([s.observation.features for s in samples]).reshape(-1, len(feature_names)),
            labels=[[s.action.steering, s.action.throttle, s.action.brake] for s in samples],
            manifest=manifest,
        )

    def subset(self, index, **manifest_updates):
        manifest = dict(self.manifest, **manifest_updates)
        manifest["samples"] = int(len(self.sequence_id[index]))
        return Dataset(
            sequence_id=self.sequence_id[index],
            step_index=self.step_index[index],
            viewpoint=self.viewpoint[index],
            perturbed=self.perturbed[index],
            command=self.command[index],
            speed=self.speed[index],
            features=self.features[index],
            labels=self.labels[index],
            manifest=manifest,
        )

    def central(self):
        """
        The central-viewpoint samples only (the single-camera view of a 3-camera dataset).
        """
        return self.subset(self.viewpoint == _viewpoint_code[Viewpoint.CENTER], cameras=Cameras.ONE.value)

    def head(self, hours):
        """
        The first ``hours`` of driving, counted in central steps, with all viewpoints of
        the kept steps.
        """
        n_steps = int(round(hours * 3600 * default_frame_rate))
        center = np.flatnonzero(self.viewpoint == _viewpoint_code[Viewpoint.CENTER])
        if n_steps >= len(center):
            return self.subset(slice(None), hours=self.hours)
        if n_steps <= 0:
            raise ValueError(f"Requested amount of data is too small: {hours!r} h")
        last = center[n_steps - 1]
        seq, step = self.sequence_id[last], self.step_index[last]
        keep = (self.sequence_id < seq) | ((self.sequence_id == seq) & (self.step_index <= step))
        return self.subset(keep, hours=float(hours))

    def streams(self):
        """
        Index arrays of the temporally ordered streams, one per (sequence, viewpoint),
        in order of first appearance.
        """
        if len(self) == 0:
            return []
        keys = self.sequence_id * len(_viewpoints) + self.viewpoint
        order = np.lexsort((self.step_index, keys))
        bounds = np.flatnonzero(np.diff(keys[order])) + 1
        groups = np.split(order, bounds)
        groups.sort(key=lambda g: int(g.min()))
        return groups

    def equals(self, other):
        columns = ("sequence_id", "step_index", "viewpoint", "perturbed", "command", "speed", "features", "labels")
        return self.manifest == other.manifest and all(
            np.array_equal(getattr(self, c), getattr(other, c)) for c in columns
        )


# ======================================================================================
#                               Collection


def _viewpoint_for(yaw_offset):
    if yaw_offset > 0:
        return Viewpoint.LEFT30
    if yaw_offset < 0:
        return Viewpoint.RIGHT30
    return Viewpoint.CENTER


def synthesize_lateral_sample(
    town,
    route,
    state,
    yaw_offset,
    *,
    condition=clear,
    rng=None,
    sequence_id=0,
    step_index=0,
    perturbed=False,
):
    """
    Sample seen from a virtual camera turned by ``yaw_offset`` at the vehicle position.
    The label is the expert's action at the virtual pose.

    Raises
    ------
    OffRouteError
        The vehicle is too far from the route for the expert.
    """
    if abs(yaw_offset) > math.pi / 4 + 1e-12:
        raise ValueError(f"Camera yaw offset must not exceed pi/4: {yaw_offset!r}")
    virtual = VehicleState(pose=state.pose.rotated(yaw_offset) if yaw_offset else state.pose, speed=state.speed)
    label = expert_action(town, route, virtual)
    frame = lane_frame(town, route, virtual.pose)
    command = command_at(town, route, virtual.pose)
    features = frame_features(frame, state.speed)
    if rng is not None:
        features = condition.apply(features, rng)
    return Sample(
        observation=Observation(features=features, command=command, speed=state.speed, expert=label),
        command=command,
        action=label,
        speed=state.speed,
        sequence_id=sequence_id,
        step_index=step_index,
        viewpoint=_viewpoint_for(yaw_offset),
        perturbed=perturbed,
    )


def collect(
    town,
    hours,
    cameras,
    noise,
    condition=clear,
    seed=0,
    *,
    noisy_fraction=default_noisy_episode_fraction,
    camera_yaw=default_lateral_camera_yaw,
    route_range=default_suite_route_range,
):
    """
    Record expert driving on random routes at 10 Hz.

    Every step contributes the central sample, and with ``cameras="3cam"`` also the two
    virtual side-camera samples. With ``noise=True`` about 10% of the episodes are noisy:
    triangular steering impulses are added to the executed steering while the recorded
    label remains the expert's corrective action. The last episode is truncated so that
    the dataset holds exactly ``round(hours * 36000)`` steps.

    Parameters
    ----------
    town: TownMap
    hours: float
        Amount of driving in hours, must be positive.
    cameras: str or Cameras
        ``"1cam"`` or ``"3cam"``.
    noise: bool
        Inject steering noise in a fraction of the episodes.
    condition: Condition or str
        Observation profile applied to the recorded features.
    seed: int
        Seed of all random streams of the collection.

    Returns
    -------
    Dataset
    """
    if not hours > 0:
        raise ValueError(f"Amount of data must be positive: {hours!r} h")
    cameras = Cameras(cameras)
    condition = get_condition(condition)
    yaw_offsets = (0.0, camera_yaw, -camera_yaw) if cameras == Cameras.THREE else (0.0,)

    n_total = int(round(hours * 3600 * default_frame_rate))
    phase = np.random.default_rng([seed, 0]).random()
    samples, steps_done, episode, noisy_episodes = [], 0, 0, 0

    while steps_done < n_total:
        rng = np.random.default_rng([seed, 1, episode])
        obs_rng = np.random.default_rng([seed, 2, episode])
        route = random_route(town, rng, min_length=route_range[0], max_length=route_range[1])
        budget = route.length / default_budget_speed
        noisy = bool(noise) and is_noisy_episode(episode, phase, noisy_fraction)
        noisy_episodes += int(noisy)
        impulses = impulse_schedule(rng, budget) if noisy else []
        state = VehicleState(pose=route.start_pose(), speed=0.0)
        goal = route.path.goal_point

        for step in range(int(math.ceil(budget / default_control_period))):
            if steps_done >= n_total:
                break
            if math.hypot(state.pose.x - goal[0], state.pose.y - goal[1]) <= default_goal_radius:
                break
            offset = impulse_offset(step * default_control_period, impulses)
            try:
                step_samples = [
                    synthesize_lateral_sample(
                        town,
                        route,
                        state,
                        yaw,
                        condition=condition,
                        rng=obs_rng,
                        sequence_id=episode,
                        step_index=step,
                        perturbed=offset != 0.0,
                    )
                    for yaw in yaw_offsets
                ]
            except OffRouteError:
                logger.warning("Collection episode %d left the route at step %d", episode, step)
                break
            samples.extend(step_samples)
            label = step_samples[0].action
            executed = label.with_steering(min(1.0, max(-1.0, label.steering + offset)))
            state = advance(state, executed)
            steps_done += 1
        episode += 1

    logger.debug(
        "Collected %d steps in %d episodes (%d noisy) in town %s",
        steps_done,
        episode,
        noisy_episodes,
        town.town_id,
    )
    manifest = {
        "format": dataset_format_version,
        "town": town.town_id,
        "condition": condition.name,
        "cameras": cameras.value,
        "noise": bool(noise),
        "hours": float(hours),
        "seed": int(seed),
        "samples": len(samples),
        "sequences": episode,
    }
    dataset = Dataset.from_samples(samples, manifest)
    dataset.speed = _round_significant(dataset.speed)
    dataset.features = _round_significant(dataset.features)
    dataset.labels = _round_significant(dataset.labels)
    return dataset


validation_variants = ("1cam", "1cam+noise", "3cam", "3cam+noise")


def validation_suite(town, condition=clear, hours=default_validation_hours, seed=0):
    """
    The four validation-set variants of a town and condition: single and three camera
    data, with and without action noise. Single-camera sets are the central view of the
    three-camera collections.
    """
    clean = collect(town, hours, Cameras.THREE, False, condition, seed)
    noisy = collect(town, hours, Cameras.THREE, True, condition, seed + 1)
    return {"1cam": clean.central(), "1cam+noise": noisy.central(), "3cam": clean, "3cam+noise": noisy}


# ======================================================================================
#                               Persistence


def manifest_path(path):
    return Path(path).with_suffix(".manifest.json")


def _format_float(value):
    return f"{value:.{default_float_digits}g}"


def write_dataset(dataset, path):
    """
    Write the dataset as CSV with a version line and a fixed header, and the manifest as
    a JSON sidecar file next to it.
    """
    path = Path(path)
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            f.write(f"# {dataset_format_version}\n")
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(csv_columns)
            for n in range(len(dataset)):
                writer.writerow(
                    [
                        int(dataset.sequence_id[n]),
                        int(dataset.step_index[n]),
                        _viewpoints[dataset.viewpoint[n]].value,
                        int(dataset.perturbed[n]),
                        _commands[dataset.command[n]].value,
                        _format_float(dataset.speed[n]),
                    ]
                    + [_format_float(v) for v in dataset.features[n]]
                    + [_format_float(v) for v in dataset.labels[n]]
                )
        with open(manifest_path(path), "w", encoding="utf-8") as f:
            json.dump(dataset.manifest, f, indent=1, sort_keys=True)
            f.write("\n")
    except OSError as ex:
        raise ArtifactIoError(f"Failed to write dataset {str(path)!r}: {ex}") from ex


_viewpoint_by_name = {v.value: n for n, v in enumerate(_viewpoints)}
_command_by_name = {c.value: n for n, c in enumerate(_commands)}


def _parse_row(row):
    if len(row) != len(csv_columns):
        raise ValueError(f"expected {len(csv_columns)} columns, found {len(row)}")
    if row[2] not in _viewpoint_by_name:
        raise ValueError(f"unknown viewpoint {row[2]!r}")
    if row[4] not in _command_by_name:
        raise ValueError(f"unknown command {row[4]!r}")
    if row[3] not in ("0", "1"):
        raise ValueError(f"invalid perturbed flag {row[3]!r}")
    values = [float(v) for v in row[5:]]
    if not all(math.isfinite(v) for v in values):
        raise ValueError("non-finite value")
    return int(row[0]), int(row[1]), _viewpoint_by_name[row[2]], row[3] == "1", _command_by_name[row[4]], values


def _decoded_lines(f):
    # Line 0 holds the version and line 1 the header
    for n, line in enumerate(f):
        try:
            yield line.decode("utf-8")
        except UnicodeDecodeError as ex:
            raise CorruptRowError(n - 2, f"invalid UTF-8: {ex.reason}") from ex


def read_dataset(path):
    """
    Read a dataset written by ``write_dataset``.

    Raises
    ------
    ArtifactIoError
        The data file or the manifest can not be read.
    FormatVersionMismatchError
        The file was written in an unsupported format version.
    CorruptRowError
        A data row can not be parsed. The row index (0-based, header excluded) is reported.
        Invalid UTF-8 in the version line or the header is reported as row -2 or -1.
    """
    path = Path(path)
    try:
        with open(manifest_path(path), encoding="utf-8") as f:
            manifest = json.load(f)
        with open(path, "rb") as f:
            lines = _decoded_lines(f)
            version_line = next(lines, "").strip()
            version = version_line[1:].strip() if version_line.startswith("#") else None
            if version != dataset_format_version:
                raise FormatVersionMismatchError(version, dataset_format_version)
            if manifest.get("format") != dataset_format_version:
                raise FormatVersionMismatchError(manifest.get("format"), dataset_format_version)
            reader = csv.reader(lines)
            header = next(reader, None)
            if tuple(header or ()) != csv_columns:
                raise CorruptRowError(-1, f"unexpected header {header!r}")
            rows = []
            for n, row in enumerate(reader):
                try:
                    rows.append(_parse_row(row))
                except ValueError as ex:
                    raise CorruptRowError(n, str(ex)) from ex
    except OSError as ex:
        raise ArtifactIoError(f"Failed to read dataset {str(path)!r}: {ex}") from ex
    except (json.JSONDecodeError, UnicodeDecodeError) as ex:
        raise ArtifactIoError(f"Failed to parse dataset manifest for {str(path)!r}: {ex}") from ex

    n_features = len(feature_names)
    values = np.array([r[5] for r in rows], dtype=float).reshape(-1, 1 + n_features + 3)
    return Dataset(
        sequence_id=[r[0] for r in rows],
        step_index=[r[1] for r in rows],
        viewpoint=[r[2] for r in rows],
        perturbed=[r[3] for r in rows],
        command=[r[4] for r in rows],
        speed=values[:, 0],
        features=values[:, 1 : 1 + n_features],
        labels=values[:, 1 + n_features :],
        manifest=manifest,
    )
