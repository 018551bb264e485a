import math
from enum import Enum
from typing import Any, Dict, NamedTuple, Optional, Union

import numpy as np

from geometry import MotionDelta


FORWARD_STEP = 0.25  # meters
TURN_ANGLE = math.radians(10.0)


class Action(Enum):
    MoveForward = 'move_forward'
    TurnLeft = 'turn_left'
    TurnRight = 'turn_right'
    Stop = 'stop'

    @property
    def is_stop(self):
        return self is Action.Stop

    @property
    def is_turn(self):
        return self is Action.TurnLeft or self is Action.TurnRight

    @property
    def is_move(self):
        return not self.is_stop

    @classmethod
    def moves(cls):
        return cls.MoveForward, cls.TurnLeft, cls.TurnRight


class MotionNoise(NamedTuple):
    """
    Noise of one motion class: a diagonal bivariate Gaussian on the (z, x) translation and a
    univariate Gaussian on the heading. `var_*` are variances (m^2), `sigma_yaw` a standard deviation.
    """
    mu_z: float = 0.0
    mu_x: float = 0.0
    var_z: float = 0.0
    var_x: float = 0.0
    mu_yaw: float = 0.0
    sigma_yaw: float = 0.0

    @property
    def sigma_z(self) -> float:
        return math.sqrt(self.var_z)

    @property
    def sigma_x(self) -> float:
        return math.sqrt(self.var_x)

    def verify(self):
        if self.var_z < 0 or self.var_x < 0 or self.sigma_yaw < 0:
            raise ValueError('Noise variances must be non-negative, got {}.'.format(self))


# LoCoBot ILQR-controller noise.
LOCOBOT_LINEAR_NOISE = MotionNoise(mu_z=0.014, mu_x=0.009, var_z=0.006, var_x=0.005, mu_yaw=0.008, sigma_yaw=0.004)
LOCOBOT_ROTATIONAL_NOISE = MotionNoise(mu_z=0.003, mu_x=0.003, var_z=0.002, var_x=0.003, mu_yaw=0.023, sigma_yaw=0.012)


class NoiseModel(NamedTuple):
    linear: MotionNoise = LOCOBOT_LINEAR_NOISE
    rotational: MotionNoise = LOCOBOT_ROTATIONAL_NOISE
    truncation_k: float = 2.0

    @classmethod
    def noiseless(cls) -> 'NoiseModel':
        return cls(MotionNoise(), MotionNoise(), 2.0)

    @classmethod
    def from_dict(cls, params: Optional[Dict[str, Any]]) -> 'NoiseModel':
        """Builds a model from `{"linear": {...}, "rotational": {...}, "truncation_k": k}`; missing keys keep defaults."""
        params = params or {}
        defaults = cls()
        model = cls(linear=defaults.linear._replace(**params.get('linear', {})),
                    rotational=defaults.rotational._replace(**params.get('rotational', {})),
                    truncation_k=float(params.get('truncation_k', defaults.truncation_k)))
        model.verify()
        return model

    def to_dict(self) -> Dict[str, Any]:
        return {'linear': self.linear._asdict(), 'rotational': self.rotational._asdict(),
                'truncation_k': self.truncation_k}

    def verify(self):
        self.linear.verify()
        self.rotational.verify()
        if not self.truncation_k > 0:
            raise ValueError('NoiseModel.truncation_k must be positive, got {}.'.format(self.truncation_k))

    def for_action(self, action: Action) -> MotionNoise:
        _require_motion(action)
        return self.linear if action is Action.MoveForward else self.rotational


def _require_motion(action: Action):
    if action.is_stop:
        raise ValueError('Action `{}` does not move the agent.'.format(action.value))


def nominal_motion(action: Action) -> MotionDelta:
    _require_motion(action)
    if action is Action.MoveForward:
        return MotionDelta(0.0, 0.0, FORWARD_STEP, 0.0)
    if action is Action.TurnLeft:
        return MotionDelta(0.0, 0.0, 0.0, TURN_ANGLE)
    return MotionDelta(0.0, 0.0, 0.0, -TURN_ANGLE)


def truncated_normal(rng: np.random.Generator, mean: float, std: float, k: float,
                     size: Optional[int] = None) -> Union[float, np.ndarray]:
    """Gaussian samples restricted to mean +/- k*std by rejection; a zero std yields the mean."""
    if std == 0.0:
        return mean if size is None else np.full(size, mean, dtype=np.float64)
    if size is None:
        while True:
            value = rng.normal(mean, std)
            if abs(value - mean) <= k * std:
                return float(value)
    samples = rng.normal(mean, std, size=size)
    rejected = np.abs(samples - mean) > k * std
    while rejected.any():
        samples[rejected] = rng.normal(mean, std, size=int(rejected.sum()))
        rejected = np.abs(samples - mean) > k * std
    return samples


def sample_noisy_motion(action: Action, model: NoiseModel, rng: np.random.Generator) -> MotionDelta:
    noise = model.for_action(action)
    nominal = nominal_motion(action)
    k = model.truncation_k
    noise_z = truncated_normal(rng, noise.mu_z, noise.sigma_z, k)
    noise_x = truncated_normal(rng, noise.mu_x, noise.sigma_x, k)
    noise_yaw = truncated_normal(rng, noise.mu_yaw, noise.sigma_yaw, k)
    return MotionDelta(nominal.dx + noise_x, 0.0, nominal.dz + noise_z, nominal.dyaw + noise_yaw)


def sample_noisy_motions(action: Action, model: NoiseModel, rng: np.random.Generator, count: int) -> np.ndarray:
    """`count` noisy deltas at once, as a (count, 4) array of (dx, dy, dz, dyaw)."""
    noise = model.for_action(action)
    nominal = nominal_motion(action)
    k = model.truncation_k
    deltas = np.zeros((count, 4), dtype=np.float64)
    deltas[:, 2] = nominal.dz + truncated_normal(rng, noise.mu_z, noise.sigma_z, k, size=count)
    deltas[:, 0] = nominal.dx + truncated_normal(rng, noise.mu_x, noise.sigma_x, k, size=count)
    deltas[:, 3] = nominal.dyaw + truncated_normal(rng, noise.mu_yaw, noise.sigma_yaw, k, size=count)
    return deltas
