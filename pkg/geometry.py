import math
from typing import NamedTuple, Tuple, Union

import numpy as np


Point2 = Tuple[float, float]

TWO_PI = 2.0 * math.pi


def normalize_angle(angle: float) -> float:
    """Wraps an angle into (-pi, pi]."""
    wrapped = math.remainder(angle, TWO_PI)
    if wrapped <= -math.pi:
        wrapped += TWO_PI
    return wrapped


def _yaw_matrix4(x: float, y: float, z: float, yaw: float) -> np.ndarray:
    # Rotation about +y: +z (forward) turns toward +x (left) for positive yaw.
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, 0.0, s, x],
                     [0.0, 1.0, 0.0, y],
                     [-s, 0.0, c, z],
                     [0.0, 0.0, 0.0, 1.0]])


class Pose(NamedTuple):
    """
    Agent state. `x` is lateral (positive to the agent's left at yaw 0), `y` is vertical
    and `z` is the forward axis at yaw 0. `yaw` is a rotation about +y in (-pi, pi].
    """
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    yaw: float = 0.0

    @classmethod
    def identity(cls) -> 'Pose':
        return cls(0.0, 0.0, 0.0, 0.0)

    @classmethod
    def planar(cls, x: float, z: float, yaw: float = 0.0) -> 'Pose':
        return cls(float(x), 0.0, float(z), normalize_angle(float(yaw)))

    @property
    def position(self) -> Point2:
        return self.x, self.z

    def as_matrix4(self) -> np.ndarray:
        return _yaw_matrix4(self.x, self.y, self.z, self.yaw)


class MotionDelta(NamedTuple):
    """Egomotion between two consecutive agent states, expressed in the source frame."""
    dx: float = 0.0
    dy: float = 0.0
    dz: float = 0.0
    dyaw: float = 0.0

    @classmethod
    def zero(cls) -> 'MotionDelta':
        return cls(0.0, 0.0, 0.0, 0.0)

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)

    def as_pose(self) -> Pose:
        return Pose(self.dx, self.dy, self.dz, self.dyaw)

    def as_matrix4(self) -> np.ndarray:
        return _yaw_matrix4(self.dx, self.dy, self.dz, self.dyaw)


Frame = Union[Pose, MotionDelta]


def compose(parent: Frame, child_in_parent: Frame) -> Pose:
    px, py, pz, pyaw = parent
    cx, cy, cz, cyaw = child_in_parent
    c, s = math.cos(pyaw), math.sin(pyaw)
    return Pose(px + c * cx + s * cz,
                py + cy,
                pz - s * cx + c * cz,
                normalize_angle(pyaw + cyaw))


def inverse(pose: Frame) -> Pose:
    x, y, z, yaw = pose
    c, s = math.cos(yaw), math.sin(yaw)
    # -R^T t
    return Pose(-(c * x - s * z),
                -y,
                -(s * x + c * z),
                normalize_angle(-yaw))


def relative_pose(src_world: Frame, tgt_world: Frame) -> MotionDelta:
    """Pose of `tgt_world` expressed in the frame of `src_world` (T_src^-1 . T_tgt)."""
    rel = compose(inverse(src_world), tgt_world)
    return MotionDelta(*rel)


def transform_point(frame: Frame, point_in_frame: Point2) -> Point2:
    fx, _, fz, fyaw = frame
    px, pz = point_in_frame
    c, s = math.cos(fyaw), math.sin(fyaw)
    return fx + c * px + s * pz, fz - s * px + c * pz


def bearing_to(point_in_frame: Point2) -> float:
    """Bearing of a point in the agent frame; positive means the point is on the agent's left."""
    px, pz = point_in_frame
    return math.atan2(px, pz)
