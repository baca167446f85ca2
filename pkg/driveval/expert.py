import math
from dataclasses import dataclass

from ._defaults import (
    default_accel_gain,
    default_cruise_speed,
    default_drag_coefficient,
    default_impulse_duration_range,
    default_impulse_peak_range,
    default_impulse_rate,
    default_lookahead_time,
    default_max_wheel_angle,
    default_min_lookahead,
    default_off_route_distance,
    default_speed_gain,
    default_turn_curvature_lookahead,
    default_turn_curvature_threshold,
    default_turn_speed,
    default_wheelbase,
)
from .errors import OffRouteError
from .vehicle import Action, wrap_angle


@dataclass(frozen=True)
class ImpulseSpec:
    t0: float  # s
    duration: float  # s
    peak: float

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"Impulse duration must be positive: {self.duration!r}")
        if abs(self.peak) > 0.5:
            raise ValueError(f"Impulse peak must be in the range [-0.5, 0.5]: {self.peak!r}")

    @property
    def t_end(self):
        return self.t0 + self.duration


def triangular_impulse(t, spec):
    """
    Steering offset of a triangular impulse at time ``t``: zero outside the support
    ``[t0, t0 + duration]``, rising linearly to ``peak`` at the midpoint and falling back to zero.
    """
    if t <= spec.t0 or t >= spec.t_end:
        return 0.0
    u = (t - spec.t0) / (spec.duration / 2)
    return spec.peak * (u if u <= 1.0 else 2.0 - u)


def impulse_schedule(
    rng,
    horizon,
    *,
    rate=default_impulse_rate,
    duration_range=default_impulse_duration_range,
    peak_range=default_impulse_peak_range,
):
    """
    Draw the impulses of one noisy episode on ``[0, horizon]`` seconds. Start times follow a
    Poisson process with the given rate, counted from the end of the previous impulse, so
    impulses never overlap.
    """
    impulses = []
    t = rng.exponential(1.0 / rate)
    while t < horizon:
        duration = rng.uniform(*duration_range)
        peak = rng.uniform(*peak_range) * (1.0 if rng.random() < 0.5 else -1.0)
        impulses.append(ImpulseSpec(t0=float(t), duration=float(duration), peak=float(peak)))
        t += duration + rng.exponential(1.0 / rate)
    return impulses


def impulse_offset(t, impulses):
    return sum(triangular_impulse(t, spec) for spec in impulses)


def is_noisy_episode(index, phase, fraction):
    """
    Systematic selection of noisy episodes: with a random ``phase`` in [0, 1), every episode
    is noisy with probability ``fraction`` and any window of episodes holds the expected count
    up to rounding.
    """
    return math.floor((index + 1) * fraction + phase) > math.floor(index * fraction + phase)


def longitudinal_control(
    speed,
    curvature_ahead,
    *,
    cruise_speed=default_cruise_speed,
    turn_speed=default_turn_speed,
    threshold=default_turn_curvature_threshold,
    gain=default_speed_gain,
    drag=default_drag_coefficient,
    accel_gain=default_accel_gain,
):
    """
    Throttle and brake of the expert for the given speed and path curvature ahead (1/m).
    Returns ``(throttle, brake)``.
    """
    target = turn_speed if abs(curvature_ahead) > threshold else cruise_speed
    u = drag * target / accel_gain + gain * (target - speed)
    if u >= 0:
        return min(u, 1.0), 0.0
    return 0.0, min(-u, 1.0)


def pure_pursuit_steering(
    path,
    pose,
    speed,
    progress,
    *,
    min_lookahead=default_min_lookahead,
    lookahead_time=default_lookahead_time,
    wheelbase=default_wheelbase,
    max_wheel_angle=default_max_wheel_angle,
):
    """
    Normalized steering that steers the rear axle onto the route point ``L_d`` meters ahead of
    the projection ``progress`` along the path.
    """
    lookahead = max(min_lookahead, lookahead_time * speed)
    tx, ty = path.point_at(progress + lookahead)
    dx, dy = tx - pose.x, ty - pose.y
    dist = math.hypot(dx, dy)
    if dist < 1e-6:
        return 0.0
    alpha = wrap_angle(math.atan2(dy, dx) - pose.yaw)
    delta = math.atan2(2.0 * wheelbase * math.sin(alpha), dist)
    return min(1.0, max(-1.0, delta / max_wheel_angle))


def expert_action(
    town,
    route,
    state,
    *,
    off_route=default_off_route_distance,
    curvature_lookahead=default_turn_curvature_lookahead,
):
    """
    Action of the privileged expert: pure pursuit on the route centerline for steering,
    proportional speed control for throttle and brake. The target speed is 35 km/h and drops
    to 20 km/h when the route curvature 10 m ahead exceeds 0.02 1/m.

    Raises
    ------
    OffRouteError
        The vehicle is farther than ``off_route`` meters from the route.
    """
    path = route.path
    pose = state.pose
    proj = path.project(pose.x, pose.y)
    if proj.distance > off_route:
        raise OffRouteError(proj.distance, off_route)
    steering = pure_pursuit_steering(path, pose, state.speed, proj.s)
    throttle, brake = longitudinal_control(state.speed, path.curvature_at(proj.s + curvature_lookahead))
    return Action(steering=steering, throttle=throttle, brake=brake)
