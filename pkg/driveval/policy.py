import copy
import math
from dataclasses import asdict, dataclass

import numpy as np

from ._defaults import default_control_period
from .expert import longitudinal_control
from .vehicle import Action
from .world import Command

feature_names = (
    "lateral_offset",
    "heading_error",
    "curvature_5",
    "curvature_10",
    "curvature_20",
    "dist_to_intersection",
    "speed",
)
_curvature_10_index = 3
_tie_tolerance = 1e-9


@dataclass(frozen=True, eq=False)
class Observation:
    """
    Policy input: the 7 lane-relative features, the high-level command and the true speed.
    ``expert`` is the privileged channel holding the expert's action for the same state
    (filled by the environment in closed loop, by the recorded label offline).
    """

    features: np.ndarray
    command: Command
    speed: float
    expert: Action = None

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        if features.shape != (len(feature_names),):
            raise ValueError(f"Observation must have {len(feature_names)} features: shape {features.shape!r}")
        if not np.all(np.isfinite(features)):
            raise ValueError(f"Observation features are not finite: {features!r}")
        if self.speed < 0:
            raise ValueError(f"Observation speed is negative: {self.speed!r}")
        object.__setattr__(self, "features", features)


def frame_features(frame, speed):
    return np.array(
        [frame.lateral_offset, frame.heading_error, *frame.curvature_ahead, frame.dist_to_intersection, speed],
        dtype=float,
    )


class Policy:
    """
    Base class of all policies. A policy predicts normalized steering from an observation;
    throttle and brake always come from the expert longitudinal controller. Policies with
    per-episode state are reset with ``reset(episode_index)`` and must be cloned before
    being used by concurrently running episodes.
    """

    name = "policy"
    uses_expert = False

    def reset(self, episode_index=0):
        pass

    def steer(self, obs):
        raise NotImplementedError

    def steer_stream(self, features, commands, expert_steering, speeds):
        """
        Steering for one temporally ordered stream of samples given as arrays
        (features ``n x 7``, command indices, expert steering and speed ``n``).
        """
        out = np.empty(len(features))
        for n in range(len(features)):
            obs = Observation(
                features=features[n],
                command=Command.from_index(int(commands[n])),
                speed=float(speeds[n]),
                expert=Action(steering=float(expert_steering[n])),
            )
            out[n] = self.steer(obs)
        return out

    def clone(self):
        return copy.deepcopy(self)

    def describe(self):
        return {"policy": self.name}


def predict(policy, obs):
    """
    Action of ``policy`` for ``obs``. Steering is clamped to [-1, 1]; throttle and brake
    are the expert's.
    """
    steering = min(1.0, max(-1.0, float(policy.steer(obs))))
    if obs.expert is not None:
        throttle, brake = obs.expert.throttle, obs.expert.brake
    else:
        curvature = obs.features[_curvature_10_index]
        throttle, brake = longitudinal_control(obs.speed, curvature)
    return Action(steering=steering, throttle=throttle, brake=brake)


class ExpertPolicy(Policy):
    name = "expert"
    uses_expert = True

    def steer(self, obs):
        if obs.expert is None:
            raise ValueError("The expert policy requires observations with the privileged expert channel")
        return obs.expert.steering

    def steer_stream(self, features, commands, expert_steering, speeds):
        return np.clip(np.asarray(expert_steering, dtype=float), -1.0, 1.0)


class ConstantPolicy(Policy):
    """
    Constant steering. A non-None ``throttle`` replaces the expert's longitudinal control.
    """

    name = "constant"

    def __init__(self, steering=0.0, throttle=None):
        self.steering = float(steering)
        self.throttle = throttle

    def steer(self, obs):
        return self.steering

    def steer_stream(self, features, commands, expert_steering, speeds):
        return np.full(len(features), min(1.0, max(-1.0, self.steering)))

    def describe(self):
        return {"policy": self.name, "steering": self.steering, "throttle": self.throttle}


def control_action(policy, obs):
    """
    Same as ``predict``, with the throttle override of ``ConstantPolicy`` applied.
    """
    action = predict(policy, obs)
    throttle = getattr(policy, "throttle", None)
    if throttle is not None:
        action = Action(steering=action.steering, throttle=float(throttle), brake=0.0)
    return action


# ======================================================================================
#                               Perturbations


@dataclass(frozen=True)
class WhiteNoise:
    std: float

    def __post_init__(self):
        _validate_non_negative("std", self.std)


@dataclass(frozen=True)
class EpisodeBias:
    magnitude: float

    def __post_init__(self):
        _validate_non_negative("magnitude", self.magnitude)


@dataclass(frozen=True)
class OUNoise:
    theta: float  # 1/s
    std: float

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"OUNoise theta must be positive: {self.theta!r}")
        _validate_non_negative("std", self.std)


@dataclass(frozen=True)
class TurnFlip:
    prob: float

    def __post_init__(self):
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError(f"TurnFlip probability must be in the range [0, 1]: {self.prob!r}")


@dataclass(frozen=True)
class Quantize:
    step: float

    def __post_init__(self):
        _validate_non_negative("step", self.step)


def _validate_non_negative(name, value):
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise TypeError(f"Parameter {name!r} must be a number: {value!r}")
    if not value >= 0:
        raise ValueError(f"Parameter {name!r} must be non-negative: {value!r}")


_perturbation_types = {cls.__name__: cls for cls in (WhiteNoise, EpisodeBias, OUNoise, TurnFlip, Quantize)}
_short_names = {"noise": WhiteNoise, "bias": EpisodeBias, "ou": OUNoise, "flip": TurnFlip, "quantize": Quantize}


def perturbation_to_dict(spec):
    return {"type": type(spec).__name__, **asdict(spec)}


def perturbation_from_dict(spec_dict):
    spec_dict = dict(spec_dict)
    type_name = spec_dict.pop("type", None)
    if type_name not in _perturbation_types:
        raise ValueError(f"Unknown perturbation type {type_name!r}. Supported: {sorted(_perturbation_types)}")
    return _perturbation_types[type_name](**{k: float(v) for k, v in spec_dict.items()})


def parse_perturbation(text):
    """
    Parse the short form of a perturbation, e.g. ``noise:0.05``, ``bias:0.1``, ``ou:1.0,0.2``,
    ``flip:0.5`` or ``quantize:0.1``.
    """
    name, _, args = text.partition(":")
    if name not in _short_names or not args:
        raise ValueError(f"Invalid perturbation {text!r}. Expected one of {sorted(_short_names)} with parameters")
    values = [float(v) for v in args.split(",")]
    return _short_names[name](*values)


def quantize(value, step):
    """
    Round ``value`` to the nearest multiple of ``step``, ties away from zero. A value whose
    quotient by ``step`` lies within 1e-9 of a half-integer counts as a tie, so decimal
    ties such as ``quantize(0.15, 0.1) == 0.2`` survive binary representation.
    """
    if step == 0:
        return value
    return math.copysign(math.floor(abs(value) / step + 0.5 + _tie_tolerance) * step, value)


class PerturbedPolicy(Policy):
    """
    Wraps a base policy and perturbs its steering. The perturbation is deterministic given
    the policy seed, the episode index passed to ``reset`` and the step index.
    """

    name = "perturbed"

    def __init__(self, base, spec, seed, *, control_period=default_control_period):
        self.base = base
        self.spec = spec
        self.seed = int(seed)
        self.control_period = control_period
        self.uses_expert = base.uses_expert
        self.reset(0)

    def reset(self, episode_index=0):
        self.base.reset(episode_index)
        self.episode_index = int(episode_index)
        self.step_index = 0
        self._rng = np.random.default_rng([self.seed, self.episode_index])
        self._ou = 0.0
        self._sign = 1.0 if self._rng.random() < 0.5 else -1.0
        self._flip = isinstance(self.spec, TurnFlip) and self._rng.random() < self.spec.prob

    def _perturb(self, steering, command):
        spec = self.spec
        if isinstance(spec, WhiteNoise):
            if spec.std > 0:
                steering += self._rng.normal(0.0, spec.std)
        elif isinstance(spec, EpisodeBias):
            steering += self._sign * spec.magnitude
        elif isinstance(spec, OUNoise):
            dt = self.control_period
            self._ou = self._ou * (1.0 - spec.theta * dt) + self._rng.normal(0.0, spec.std * math.sqrt(dt))
            steering += self._ou
        elif isinstance(spec, TurnFlip):
            if self._flip and command in (Command.LEFT, Command.RIGHT):
                steering = -steering
        elif isinstance(spec, Quantize):
            steering = quantize(steering, spec.step)
        self.step_index += 1
        return min(1.0, max(-1.0, steering))

    def steer(self, obs):
        return self._perturb(float(self.base.steer(obs)), obs.command)

    def steer_stream(self, features, commands, expert_steering, speeds):
        base = self.base.steer_stream(features, commands, expert_steering, speeds)
        return np.array([self._perturb(float(b), Command.from_index(int(c))) for b, c in zip(base, commands)])

    def describe(self):
        return {"policy": self.name, "base": self.base.describe(), "perturbation": perturbation_to_dict(self.spec)}


def make_perturbed(base, spec, seed):
    """
    Returns a ``PerturbedPolicy`` applying ``spec`` on top of a copy of ``base``.
    """
    if not isinstance(spec, tuple(_perturbation_types.values())):
        raise TypeError(f"Unsupported perturbation specification: {spec!r}")
    return PerturbedPolicy(base.clone(), spec, seed)
