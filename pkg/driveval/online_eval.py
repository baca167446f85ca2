import enum
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ._defaults import (
    default_budget_speed,
    default_control_period,
    default_goal_radius,
    default_infraction_min_duration,
    default_infraction_rearm_time,
    default_sidewalk_width,
    default_stuck_speed,
    default_stuck_time,
    default_suite_route_range,
    default_suite_trials,
)
from .dataset import clear, get_condition
from .errors import ArtifactIoError, EmptyResultsError, FormatVersionMismatchError, OffRouteError
from .expert import expert_action
from .policy import Observation, control_action, frame_features
from .vehicle import VehicleState, advance
from .world import Command, command_at, lane_frame, plan_route, random_route

logger = logging.getLogger(__name__)

suite_format_version = "driveval-suite/1"


class InfractionKind(enum.Enum):
    OFF_ROAD = "OffRoad"
    OPPOSITE_LANE = "OppositeLane"
    COLLISION = "Collision"


class Termination(enum.Enum):
    GOAL = "Goal"
    TIMEOUT = "Timeout"
    STUCK = "Stuck"


@dataclass(frozen=True, eq=False)
class EpisodeSpec:
    route: object
    time_budget: float  # s
    goal_radius: float = default_goal_radius  # m
    condition: object = clear
    seed: int = 0
    index: int = 0

    def __post_init__(self):
        if not self.time_budget > 0:
            raise ValueError(f"Time budget must be positive: {self.time_budget!r} s")
        if not self.goal_radius > 0:
            raise ValueError(f"Goal radius must be positive: {self.goal_radius!r} m")
        object.__setattr__(self, "condition", get_condition(self.condition))

    @classmethod
    def for_route(cls, route, **kwargs):
        """
        Episode on ``route`` with the time budget of driving it at 10 km/h.
        """
        return cls(route=route, time_budget=route.length / default_budget_speed, **kwargs)


@dataclass(frozen=True)
class InfractionEvent:
    kind: InfractionKind
    time: float  # s
    position: tuple  # m

    def to_dict(self):
        return {"kind": self.kind.value, "time": self.time, "position": list(self.position)}

    @classmethod
    def from_dict(cls, event_dict):
        return cls(InfractionKind(event_dict["kind"]), float(event_dict["time"]), tuple(event_dict["position"]))


@dataclass(frozen=True)
class TrajectoryPoint:
    t: float
    x: float
    y: float
    yaw: float
    speed: float
    lateral_offset: float
    on_opposing_lane: bool = False


@dataclass
class EpisodeResult:
    success: bool
    completion: float
    distance_driven: float  # km
    infractions: list
    termination: Termination
    duration: float = 0.0  # s
    max_abs_offset: float = 0.0  # m
    index: int = 0
    seed: int = 0
    trajectory: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "index": self.index,
            "seed": self.seed,
            "success": self.success,
            "completion": self.completion,
            "distance_driven": self.distance_driven,
            "infractions": [e.to_dict() for e in self.infractions],
            "termination": self.termination.value,
            "duration": self.duration,
            "max_abs_offset": self.max_abs_offset,
        }

    @classmethod
    def from_dict(cls, result_dict):
        return cls(
            success=bool(result_dict["success"]),
            completion=float(result_dict["completion"]),
            distance_driven=float(result_dict["distance_driven"]),
            infractions=[InfractionEvent.from_dict(e) for e in result_dict["infractions"]],
            termination=Termination(result_dict["termination"]),
            duration=float(result_dict.get("duration", 0.0)),
            max_abs_offset=float(result_dict.get("max_abs_offset", 0.0)),
            index=int(result_dict.get("index", 0)),
            seed=int(result_dict.get("seed", 0)),
        )


@dataclass(frozen=True)
class OnlineReport:
    success_rate: float
    avg_completion: float
    km_per_infraction: float
    zero_infractions: bool
    trials: int
    total_km: float = 0.0
    infractions: int = 0

    def metric(self, name):
        if name not in online_metric_names:
            raise ValueError(f"Unknown online metric {name!r}. Supported: {list(online_metric_names)}")
        return getattr(self, name)

    def to_dict(self):
        return asdict(self)


online_metric_names = ("success_rate", "avg_completion", "km_per_infraction")


# ======================================================================================
#                               Infractions


def detect_infractions(
    town,
    trajectory,
    *,
    min_duration=default_infraction_min_duration,
    rearm_time=default_infraction_rearm_time,
    sidewalk=default_sidewalk_width,
):
    """
    Infractions along a temporally ordered trajectory.

    ``OffRoad`` is reported when the vehicle stays off the drivable surface for more than
    ``min_duration`` seconds, ``OppositeLane`` when it stays on the opposing lane for more
    than ``min_duration`` seconds. ``Collision`` is reported at the first point that is
    more than ``sidewalk`` meters beyond the drivable surface. Each continuous violation
    produces at most one event at its onset, and a kind is re-armed only after
    ``rearm_time`` seconds without violation.

    Parameters
    ----------
    town: TownMap
    trajectory: iterable of TrajectoryPoint

    Returns
    -------
    list of InfractionEvent
        Events ordered by time.
    """
    durations = {
        InfractionKind.OFF_ROAD: min_duration,
        InfractionKind.OPPOSITE_LANE: min_duration,
        InfractionKind.COLLISION: 0.0,
    }
    state = {kind: {"armed": True, "onset": None, "clear_since": None, "fired": False} for kind in durations}
    events = []

    for p in trajectory:
        off_road = town.off_road_distance(p.x, p.y)
        violations = {
            InfractionKind.OFF_ROAD: off_road > 0.0,
            InfractionKind.OPPOSITE_LANE: bool(p.on_opposing_lane),
            InfractionKind.COLLISION: off_road > sidewalk,
        }
        for kind, violating in violations.items():
            s = state[kind]
            if violating:
                s["clear_since"] = None
                if s["onset"] is None:
                    s["onset"] = (p.t, (p.x, p.y))
                    s["fired"] = False
                sustained = p.t - s["onset"][0]
                if s["armed"] and not s["fired"] and (sustained > durations[kind] + 1e-9 or durations[kind] == 0):
                    onset_t, onset_xy = s["onset"]
                    events.append(InfractionEvent(kind, float(onset_t), tuple(float(v) for v in onset_xy)))
                    s["fired"] = True
                    s["armed"] = False
            else:
                s["onset"] = None
                if s["clear_since"] is None:
                    s["clear_since"] = p.t
                if not s["armed"] and p.t - s["clear_since"] >= rearm_time - 1e-9:
                    s["armed"] = True

    events.sort(key=lambda e: e.time)
    return events


# ======================================================================================
#                               Episodes


def _observe(town, route, state, condition, rng):
    frame = lane_frame(town, route, state.pose)
    try:
        expert = expert_action(town, route, state)
        command = command_at(town, route, state.pose)
    except OffRouteError:
        expert = expert_action(town, route, state, off_route=math.inf)
        command = Command.CONTINUE
    features = condition.apply(frame_features(frame, state.speed), rng)
    return frame, Observation(features=features, command=command, speed=state.speed, expert=expert)


def run_episode(
    town,
    policy,
    spec,
    *,
    control_period=default_control_period,
    stuck_speed=default_stuck_speed,
    stuck_time=default_stuck_time,
    sidewalk=default_sidewalk_width,
    keep_trajectory=False,
):
    """
    Drive ``policy`` along the route of ``spec`` in closed loop at 10 Hz.

    The episode ends when the vehicle is within the goal radius of the goal point
    (``Goal``), when the time budget is exhausted (``Timeout``) or when the speed stays
    below 0.1 m/s for 10 s (``Stuck``). A vehicle that leaves the drivable surface by more
    than the sidewalk width hits static geometry and is halted for the rest of the episode.
    The policy is reset with the episode index of ``spec`` before the first step.
    Completion is the fraction of the route path covered at the end of the episode. It is
    negative for a vehicle that ends up behind the start of the route.

    Parameters
    ----------
    town: TownMap
    policy: Policy
        Driving policy. It is modified by the episode, pass a clone if it is shared.
    spec: EpisodeSpec

    Returns
    -------
    EpisodeResult
    """
    route = spec.route
    path = route.path
    goal = path.goal_point
    rng = np.random.default_rng([spec.seed, 3])
    policy.reset(spec.index)

    state = VehicleState(pose=route.start_pose(), speed=0.0)
    n_steps = int(math.ceil(spec.time_budget / control_period - 1e-9))
    trajectory, distance, slow_time, halted = [], 0.0, 0.0, False
    termination = Termination.TIMEOUT
    t = 0.0

    for step in range(n_steps + 1):
        t = step * control_period
        if math.hypot(state.pose.x - goal[0], state.pose.y - goal[1]) <= spec.goal_radius:
            termination = Termination.GOAL
            break
        frame, obs = _observe(town, route, state, spec.condition, rng)
        trajectory.append(
            TrajectoryPoint(
                t=t,
                x=state.pose.x,
                y=state.pose.y,
                yaw=state.pose.yaw,
                speed=state.speed,
                lateral_offset=frame.lateral_offset,
                on_opposing_lane=frame.on_opposing_lane,
            )
        )
        if slow_time >= stuck_time - 1e-9:
            termination = Termination.STUCK
            break
        if step == n_steps:
            break
        if not halted and frame.off_road_distance > sidewalk:
            halted = True
            logger.debug("Episode %d: collision with static geometry at t=%.1f s", spec.index, t)

        if halted:
            new_state = VehicleState(pose=state.pose, speed=0.0)
        else:
            new_state = advance(state, control_action(policy, obs), period=control_period)
        distance += math.hypot(new_state.pose.x - state.pose.x, new_state.pose.y - state.pose.y)
        state = new_state
        slow_time = slow_time + control_period if state.speed < stuck_speed else 0.0

    remaining = path.goal_s - path.progress(state.pose.x, state.pose.y)
    completion = min(1.0, 1.0 - remaining / route.path_length)
    infractions = detect_infractions(town, trajectory, sidewalk=sidewalk)
    result = EpisodeResult(
        success=termination == Termination.GOAL,
        completion=completion,
        distance_driven=distance / 1000.0,
        infractions=infractions,
        termination=termination,
        duration=t,
        max_abs_offset=max((abs(p.lateral_offset) for p in trajectory), default=0.0),
        index=spec.index,
        seed=spec.seed,
        trajectory=trajectory if keep_trajectory else [],
    )
    logger.debug(
        "Episode %d: %s, completion %.3f, %d infractions",
        spec.index,
        termination.value,
        completion,
        len(infractions),
    )
    return result


def aggregate_online(results):
    """
    Online metrics of a set of episodes: success rate, average completion and kilometers
    driven per infraction. Without infractions ``km_per_infraction`` is the total distance
    and ``zero_infractions`` is set.
    """
    results = list(results)
    if not results:
        raise EmptyResultsError("Can not aggregate an empty set of episode results")
    total_km = math.fsum(r.distance_driven for r in results)
    n_infractions = sum(len(r.infractions) for r in results)
    return OnlineReport(
        success_rate=sum(bool(r.success) for r in results) / len(results),
        avg_completion=math.fsum(r.completion for r in results) / len(results),
        km_per_infraction=total_km / n_infractions if n_infractions else total_km,
        zero_infractions=n_infractions == 0,
        trials=len(results),
        total_km=total_km,
        infractions=n_infractions,
    )


# ======================================================================================
#                               Suites


def make_suite(
    town, trials=default_suite_trials, seed=0, *, condition=clear, route_range=default_suite_route_range
):
    """
    Deterministic benchmark suite: ``trials`` random routes with lengths in
    ``route_range`` drawn from ``seed``.
    """
    if trials < 1:
        raise ValueError(f"Suite must contain at least one trial: {trials!r}")
    rng = np.random.default_rng([seed, 4])
    suite = []
    for n in range(trials):
        route = random_route(town, rng, min_length=route_range[0], max_length=route_range[1])
        trial_seed = int(rng.integers(0, 2**31 - 1))
        suite.append(EpisodeSpec.for_route(route, condition=condition, seed=trial_seed, index=n))
    return suite


def _run_one(args):
    town, policy, spec = args
    return run_episode(town, policy.clone(), spec)


def run_suite(town, policy, suite, *, jobs=1):
    """
    Run all episodes of ``suite``. Each episode drives its own copy of ``policy``. The
    results are returned in suite order for any number of parallel ``jobs``.
    """
    suite = list(suite)
    if jobs is None or jobs <= 1:
        return [_run_one((town, policy, spec)) for spec in suite]
    with ProcessPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(_run_one, [(town, policy, spec) for spec in suite]))


def suite_to_dict(town, suite):
    condition = suite[0].condition.name if suite else clear.name
    return {
        "format": suite_format_version,
        "town": town.town_id,
        "condition": condition,
        "trials": [{"start": s.route.start, "goal": s.route.goal, "seed": s.seed} for s in suite],
    }


def suite_from_dict(town, suite_dict):
    if suite_dict.get("format") != suite_format_version:
        raise FormatVersionMismatchError(suite_dict.get("format"), suite_format_version)
    if suite_dict.get("town") != town.town_id:
        raise ValueError(f"Suite was made for town {suite_dict.get('town')!r}, not {town.town_id!r}")
    condition = get_condition(suite_dict.get("condition", clear.name))
    return [
        EpisodeSpec.for_route(
            plan_route(town, t["start"], t["goal"]), condition=condition, seed=t["seed"], index=n
        )
        for n, t in enumerate(suite_dict["trials"])
    ]


def write_suite(town, suite, path):
    try:
        with open(path, "w") as f:
            json.dump(suite_to_dict(town, suite), f, indent=1)
            f.write("\n")
    except OSError as ex:
        raise ArtifactIoError(f"Failed to write suite {str(path)!r}: {ex}") from ex


def read_suite(town, path):
    try:
        with open(path) as f:
            suite_dict = json.load(f)
    except (OSError, ValueError) as ex:
        raise ArtifactIoError(f"Failed to read suite {str(path)!r}: {ex}") from ex
    return suite_from_dict(town, suite_dict)


def write_results(results, path):
    """
    Write episode results as JSON lines, one result per line.
    """
    try:
        with open(path, "w") as f:
            for r in results:
                f.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    except OSError as ex:
        raise ArtifactIoError(f"Failed to write episode results {str(path)!r}: {ex}") from ex


def read_results(path):
    try:
        with open(path) as f:
            return [EpisodeResult.from_dict(json.loads(line)) for line in f if line.strip()]
    except (OSError, ValueError, KeyError) as ex:
        raise ArtifactIoError(f"Failed to read episode results {str(path)!r}: {ex}") from ex
