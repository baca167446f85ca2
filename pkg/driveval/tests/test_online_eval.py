import itertools
import json
import pprint

import pytest

from driveval.errors import ArtifactIoError, EmptyResultsError, FormatVersionMismatchError
from driveval.online_eval import (
    EpisodeResult,
    EpisodeSpec,
    InfractionEvent,
    InfractionKind,
    OnlineReport,
    Termination,
    TrajectoryPoint,
    aggregate_online,
    detect_infractions,
    make_suite,
    read_results,
    read_suite,
    run_episode,
    run_suite,
    suite_from_dict,
    suite_to_dict,
    write_results,
    write_suite,
)
from driveval.policy import ConstantPolicy, ExpertPolicy, Policy, WhiteNoise, make_perturbed
from driveval.world import plan_route

from .common import get_town, make_result


def _trajectory(ys, *, opposing=None, x=50.0, dt=0.1):
    """
    Points along the straight corridor between intersections 0 and 1 at the given
    lateral positions, one point every ``dt`` seconds.
    """
    opposing = opposing or [False] * len(ys)
    return [
        TrajectoryPoint(t=n * dt, x=x, y=y, yaw=0.0, speed=5.0, lateral_offset=-1.75 - y, on_opposing_lane=o)
        for n, (y, o) in enumerate(zip(ys, opposing))
    ]


_on_lane, _off_road = -1.75, -4.5


# ======================================================================================
#                               Infractions


def test_detect_infractions_01():
    """
    A trajectory on the lane produces no events.
    """
    town = get_town("A")
    assert detect_infractions(town, _trajectory([_on_lane] * 100)) == []
    assert detect_infractions(town, []) == []


def test_detect_infractions_02():
    """
    A sustained excursion off the road is reported once, at its onset.
    """
    town = get_town("A")
    ys = [_on_lane] * 10 + [_off_road] * 30 + [_on_lane] * 10
    events = detect_infractions(town, _trajectory(ys))
    assert len(events) == 1, pprint.pformat(events)
    assert events[0].kind == InfractionKind.OFF_ROAD
    assert events[0].time == pytest.approx(1.0)
    assert events[0].position == (50.0, _off_road)


# fmt: off
@pytest.mark.parametrize("n_off, n_events", [
    (4, 0),
    (6, 0),
    (7, 1),
    (20, 1),
])
# fmt: on
def test_detect_infractions_03(n_off, n_events):
    """
    Excursions must last more than 0.5 s to be reported.
    """
    town = get_town("A")
    ys = [_on_lane] * 10 + [_off_road] * n_off + [_on_lane] * 10
    events = detect_infractions(town, _trajectory(ys))
    assert len(events) == n_events, pprint.pformat(events)


# fmt: off
@pytest.mark.parametrize("n_clear, n_events", [
    (10, 1),
    (20, 1),
    (21, 2),
    (50, 2),
])
# fmt: on
def test_detect_infractions_04(n_clear, n_events):
    """
    A second excursion is reported only after 2 s without violation.
    """
    town = get_town("A")
    ys = [_on_lane] * 10 + [_off_road] * 10 + [_on_lane] * n_clear + [_off_road] * 10 + [_on_lane] * 5
    events = detect_infractions(town, _trajectory(ys))
    assert len(events) == n_events, pprint.pformat(events)
    assert all(e.kind == InfractionKind.OFF_ROAD for e in events)
    if n_events == 2:
        assert events[1].time == pytest.approx((20 + n_clear) * 0.1)


def test_detect_infractions_05():
    """
    Leaving the road by more than the sidewalk width is an immediate collision.
    """
    town = get_town("A")
    events = detect_infractions(town, _trajectory([_on_lane] * 5 + [-10.0] + [_on_lane] * 5))
    assert [e.kind for e in events] == [InfractionKind.COLLISION]
    assert events[0].time == pytest.approx(0.5)

    # A wider sidewalk tolerates the same excursion
    events = detect_infractions(town, _trajectory([_on_lane] * 5 + [-10.0] + [_on_lane] * 5), sidewalk=7.0)
    assert events == []


def test_detect_infractions_06():
    """
    Driving on the opposing lane is reported independently of the other kinds.
    """
    town = get_town("A")
    ys = [_on_lane] * 5 + [1.75] * 10 + [_on_lane] * 5
    opposing = [False] * 5 + [True] * 10 + [False] * 5
    events = detect_infractions(town, _trajectory(ys, opposing=opposing))
    assert [e.kind for e in events] == [InfractionKind.OPPOSITE_LANE]
    assert events[0].time == pytest.approx(0.5)
    assert events[0].position == (50.0, 1.75)

    events = detect_infractions(town, _trajectory(ys, opposing=opposing), min_duration=2.0)
    assert events == []


# ======================================================================================
#                               Aggregation


def test_aggregate_online_01():
    results = [make_result(success=True)] * 20 + [make_result(success=False, completion=0.5)] * 5
    report = aggregate_online(results)
    assert isinstance(report, OnlineReport)
    assert report.trials == 25
    assert report.success_rate == pytest.approx(0.8)
    assert report.avg_completion == pytest.approx((20 + 2.5) / 25)


def test_aggregate_online_02():
    """
    Kilometers per infraction, with the total distance reported when there are none.
    """
    results = [make_result(km=4.0, n_infractions=1), make_result(km=8.0, n_infractions=2)]
    report = aggregate_online(results)
    assert report.km_per_infraction == pytest.approx(4.0)
    assert report.total_km == pytest.approx(12.0)
    assert report.infractions == 3
    assert not report.zero_infractions

    report = aggregate_online([make_result(km=4.0), make_result(km=8.0)])
    assert report.km_per_infraction == pytest.approx(12.0)
    assert report.zero_infractions
    assert report.metric("km_per_infraction") == report.km_per_infraction

    with pytest.raises(ValueError, match="Unknown online metric 'mse'"):
        report.metric("mse")


def test_aggregate_online_03():
    """
    Aggregation does not depend on the order of the episodes.
    """
    results = [
        make_result(success=True, completion=1.0, km=0.3, n_infractions=0),
        make_result(success=False, completion=0.25, km=0.1, n_infractions=2),
        make_result(success=False, completion=0.75, km=0.7, n_infractions=1),
    ]
    expected = aggregate_online(results)
    for perm in itertools.permutations(results):
        report = aggregate_online(perm)
        assert report.success_rate == expected.success_rate
        assert report.avg_completion == pytest.approx(expected.avg_completion)
        assert report.km_per_infraction == pytest.approx(expected.km_per_infraction)


def test_aggregate_online_04_fail():
    with pytest.raises(EmptyResultsError):
        aggregate_online([])


# ======================================================================================
#                               Episodes


# fmt: off
@pytest.mark.parametrize("kwargs, msg", [
    ({"time_budget": 0.0}, "Time budget must be positive"),
    ({"time_budget": -1.0}, "Time budget must be positive"),
    ({"time_budget": 10.0, "goal_radius": 0.0}, "Goal radius must be positive"),
    ({"time_budget": 10.0, "condition": "fog"}, "Unknown condition"),
])
# fmt: on
def test_EpisodeSpec_01_fail(kwargs, msg):
    route = plan_route(get_town("A"), 0, 3)
    with pytest.raises(ValueError, match=msg):
        EpisodeSpec(route=route, **kwargs)


def test_EpisodeSpec_02():
    route = plan_route(get_town("A"), 0, 3)
    spec = EpisodeSpec.for_route(route, seed=5, index=2)
    assert spec.time_budget == pytest.approx(300.0 * 3.6 / 10.0)
    assert spec.condition.name == "clear"
    assert (spec.seed, spec.index) == (5, 2)


def test_run_episode_01():
    """
    The expert drives a straight route to the goal without infractions.
    """
    town = get_town("A")
    spec = EpisodeSpec.for_route(plan_route(town, 0, 3))
    result = run_episode(town, ExpertPolicy(), spec, keep_trajectory=True)
    assert result.success, pprint.pformat(result.to_dict())
    assert result.termination == Termination.GOAL
    assert result.completion == pytest.approx(1.0, abs=0.02)
    assert result.infractions == []
    assert result.distance_driven == pytest.approx(0.3, abs=0.01)
    assert result.duration < spec.time_budget
    assert result.max_abs_offset < 0.5

    times = [p.t for p in result.trajectory]
    assert times == sorted(times)
    assert times[0] == 0.0


# fmt: off
@pytest.mark.parametrize("town_id, start, goal", [
    ("A", 0, 5),
    ("A", 4, 1),
    ("B", 0, 6),
])
# fmt: on
def test_run_episode_02(town_id, start, goal):
    """
    The expert completes routes with turns.
    """
    town = get_town(town_id)
    spec = EpisodeSpec.for_route(plan_route(town, start, goal))
    result = run_episode(town, ExpertPolicy(), spec)
    assert result.success, pprint.pformat(result.to_dict())
    assert result.completion == pytest.approx(1.0, abs=0.02)
    assert result.trajectory == []


def test_run_episode_03():
    """
    Constant steering leaves the road and never reaches the goal.
    """
    town = get_town("A")
    spec = EpisodeSpec.for_route(plan_route(town, 0, 3))
    result = run_episode(town, ConstantPolicy(0.3), spec)
    assert not result.success
    assert result.termination != Termination.GOAL
    assert result.completion < 1.0
    kinds = {e.kind for e in result.infractions}
    assert InfractionKind.OFF_ROAD in kinds, pprint.pformat(result.to_dict())


def test_run_episode_04():
    """
    A vehicle that never moves is stuck after 10 s.
    """
    town = get_town("A")
    spec = EpisodeSpec.for_route(plan_route(town, 0, 3))
    result = run_episode(town, ConstantPolicy(0.0, throttle=0.0), spec)
    assert result.termination == Termination.STUCK
    assert not result.success
    assert result.completion == pytest.approx(0.0, abs=1e-9)
    assert result.duration == pytest.approx(10.0)
    assert result.distance_driven == 0.0
    assert result.infractions == []


def test_run_episode_05():
    """
    Episodes are deterministic given the episode seed and index.
    """
    town = get_town("A")
    spec = EpisodeSpec.for_route(plan_route(town, 0, 5), seed=9, index=1)
    policy = make_perturbed(ExpertPolicy(), WhiteNoise(0.2), seed=4)
    r1 = run_episode(town, policy.clone(), spec)
    r2 = run_episode(town, policy.clone(), spec)
    assert r1.to_dict() == r2.to_dict()


def test_run_episode_06():
    """
    Short time budgets end the episode with a timeout.
    """
    town = get_town("A")
    spec = EpisodeSpec(route=plan_route(town, 0, 3), time_budget=5.0)
    result = run_episode(town, ExpertPolicy(), spec)
    assert result.termination == Termination.TIMEOUT
    assert not result.success
    assert 0.0 < result.completion < 0.5
    assert result.duration == pytest.approx(5.0)


class _UTurnPolicy(Policy):
    """
    Full left steering until the vehicle faces against the route, then straight ahead.
    """

    name = "u-turn"

    def steer(self, obs):
        return 1.0 if abs(obs.features[1]) < 3.0 else 0.0


def test_run_episode_07():
    """
    Completion is negative for a vehicle that drives away from the goal.
    """
    town = get_town("A")
    route = plan_route(town, 1, 3)
    spec = EpisodeSpec(route=route, time_budget=12.0)
    result = run_episode(town, _UTurnPolicy(), spec, keep_trajectory=True)
    assert not result.success
    assert result.trajectory[-1].x < route.start_pose().x
    assert -0.2 < result.completion < 0.0, pprint.pformat(result.to_dict())


# ======================================================================================
#                               Suites


def test_make_suite_01():
    town = get_town("A")
    suite = make_suite(town)
    assert len(suite) == 25
    assert [s.index for s in suite] == list(range(25))
    for spec in suite:
        assert 200.0 <= spec.route.length <= 1000.0
        assert spec.time_budget == pytest.approx(spec.route.length * 3.6 / 10.0)

    assert suite_to_dict(town, make_suite(town)) == suite_to_dict(town, suite)
    assert suite_to_dict(town, make_suite(town, seed=1)) != suite_to_dict(town, suite)

    small = make_suite(town, 3, seed=2, condition="soft_rain_sunset", route_range=(100.0, 300.0))
    assert len(small) == 3
    assert all(s.condition.name == "soft_rain_sunset" for s in small)
    assert all(100.0 <= s.route.length <= 300.0 for s in small)


def test_make_suite_02_fail():
    with pytest.raises(ValueError, match="at least one trial"):
        make_suite(get_town("A"), 0)


def test_run_suite_01():
    """
    Suite results are in suite order and do not depend on the number of jobs.
    """
    town = get_town("A")
    suite = make_suite(town, 2, seed=3, route_range=(200.0, 300.0))
    policy = make_perturbed(ExpertPolicy(), WhiteNoise(0.1), seed=1)
    serial = run_suite(town, policy, suite)
    parallel = run_suite(town, policy, suite, jobs=2)
    assert [r.index for r in serial] == [0, 1]
    assert [r.to_dict() for r in serial] == [r.to_dict() for r in parallel]


@pytest.mark.parametrize("town_id", ["A", "B"])
def test_run_suite_02(town_id):
    """
    The expert completes every route of the default suite without infractions and stays
    close to the lane center.
    """
    town = get_town(town_id)
    results = run_suite(town, ExpertPolicy(), make_suite(town), jobs=2)
    assert len(results) == 25
    for r in results:
        summary = pprint.pformat((r.index, r.termination, r.completion, r.max_abs_offset))
        assert r.success, summary
        assert r.infractions == [], summary
        assert r.max_abs_offset < 0.5, summary


def test_write_suite_01(tmp_path):
    town = get_town("A")
    suite = make_suite(town, 4, seed=6)
    path = tmp_path / "suite.json"
    write_suite(town, suite, path)
    suite_read = read_suite(town, path)
    assert suite_to_dict(town, suite_read) == suite_to_dict(town, suite)
    assert [s.time_budget for s in suite_read] == pytest.approx([s.time_budget for s in suite])


def test_suite_from_dict_01_fail(tmp_path):
    town = get_town("A")
    suite_dict = suite_to_dict(town, make_suite(town, 2))

    with pytest.raises(ValueError, match="made for town 'A', not 'B'"):
        suite_from_dict(get_town("B"), suite_dict)

    with pytest.raises(FormatVersionMismatchError):
        suite_from_dict(town, dict(suite_dict, format="driveval-suite/0"))

    path = tmp_path / "suite.json"
    path.write_text("{not json")
    with pytest.raises(ArtifactIoError, match="Failed to read suite"):
        read_suite(town, path)


def test_write_results_01(tmp_path):
    results = [
        EpisodeResult(
            success=False,
            completion=0.4,
            distance_driven=0.12,
            infractions=[InfractionEvent(InfractionKind.COLLISION, 3.5, (12.0, -9.0))],
            termination=Termination.STUCK,
            duration=40.0,
            max_abs_offset=7.25,
            index=3,
            seed=17,
        ),
        make_result(),
    ]
    path = tmp_path / "episodes.jsonl"
    write_results(results, path)

    with open(path) as f:
        lines = f.read().splitlines()
    assert len(lines) == 2
    assert json.loads(lines[0])["termination"] == "Stuck"
    assert json.loads(lines[0])["infractions"][0]["kind"] == "Collision"

    results_read = read_results(path)
    assert [r.to_dict() for r in results_read] == [r.to_dict() for r in results]

    with pytest.raises(ArtifactIoError):
        read_results(tmp_path / "missing.jsonl")
