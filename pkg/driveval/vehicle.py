import math
from dataclasses import dataclass

from ._defaults import (
    default_accel_gain,
    default_brake_gain,
    default_control_period,
    default_drag_coefficient,
    default_max_wheel_angle,
    default_physics_substep,
    default_wheelbase,
)
from .errors import NonFiniteInputError


def wrap_angle(angle):
    """
    Wrap an angle (radians) to the interval (-pi, pi]. Angles that are already in the
    interval are returned unchanged.
    """
    if -math.pi < angle <= math.pi:
        return angle
    a = math.fmod(angle + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


def _clip(value, low, high):
    return min(high, max(low, value))


@dataclass(frozen=True)
class Pose:
    x: float  # m
    y: float  # m
    yaw: float  # rad

    def rotated(self, yaw_offset):
        """
        Returns the pose at the same position with the heading turned by ``yaw_offset``.
        """
        return Pose(self.x, self.y, wrap_angle(self.yaw + yaw_offset))


@dataclass(frozen=True)
class VehicleState:
    pose: Pose
    speed: float = 0.0  # m/s


@dataclass(frozen=True)
class Action:
    steering: float = 0.0
    throttle: float = 0.0
    brake: float = 0.0

    def clamped(self):
        """
        Returns a copy of the action with steering clamped to [-1, 1] and
        throttle and brake clamped to [0, 1].
        """
        return Action(
            steering=_clip(self.steering, -1.0, 1.0),
            throttle=_clip(self.throttle, 0.0, 1.0),
            brake=_clip(self.brake, 0.0, 1.0),
        )

    def with_steering(self, steering):
        return Action(steering=steering, throttle=self.throttle, brake=self.brake)


def _check_finite(state, action, dt):
    values = {
        "x": state.pose.x,
        "y": state.pose.y,
        "yaw": state.pose.yaw,
        "speed": state.speed,
        "steering": action.steering,
        "throttle": action.throttle,
        "brake": action.brake,
        "dt": dt,
    }
    for name, value in values.items():
        if not math.isfinite(value):
            raise NonFiniteInputError(f"Vehicle input {name!r} is not finite: {value!r}")


def step_vehicle(
    state,
    action,
    dt,
    *,
    wheelbase=default_wheelbase,
    max_wheel_angle=default_max_wheel_angle,
    accel_gain=default_accel_gain,
    brake_gain=default_brake_gain,
    drag=default_drag_coefficient,
):
    """
    Advance the kinematic bicycle model by one physics step.

    The speed is updated first (``accel = 3.0 * throttle - 8.0 * brake - 0.05 * speed``,
    clamped at zero), then the heading and the rear-axle position are integrated with
    the updated speed and heading.

    Parameters
    ----------
    state: VehicleState
        Current state of the vehicle.
    action: Action
        Control input. Components outside their ranges are clamped.
    dt: float
        Step duration in seconds, ``0 < dt <= 0.1``.

    Returns
    -------
    VehicleState
        New state of the vehicle.

    Raises
    ------
    NonFiniteInputError
        Any state, action or time step value is not finite.
    ValueError
        The time step is out of range.
    """
    _check_finite(state, action, dt)
    if not (0 < dt <= 0.1):
        raise ValueError(f"Time step must be in the range (0, 0.1]: dt={dt!r}")

    action = action.clamped()
    pose = state.pose

    accel = accel_gain * action.throttle - brake_gain * action.brake - drag * state.speed
    speed = max(0.0, state.speed + accel * dt)

    yaw_rate = speed * math.tan(max_wheel_angle * action.steering) / wheelbase
    yaw = wrap_angle(pose.yaw + yaw_rate * dt)
    x = pose.x + speed * math.cos(yaw) * dt
    y = pose.y + speed * math.sin(yaw) * dt

    return VehicleState(pose=Pose(x, y, yaw), speed=speed)


def advance(state, action, *, period=default_control_period, substep=default_physics_substep, **kwargs):
    """
    Hold ``action`` over one control period and integrate it with fixed physics substeps.
    Extra keyword arguments are passed to ``step_vehicle``.
    """
    n_steps = max(1, int(round(period / substep)))
    for _ in range(n_steps):
        state = step_vehicle(state, action, substep, **kwargs)
    return state
