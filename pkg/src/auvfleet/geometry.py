"""Shared frame conventions and small geometric helpers.

World frame is NED: x north, y east, z down (depth positive). Orientation is
roll/pitch/yaw in radians, positive pitch nose-up, yaw measured from north
toward east. All angles internal to the package are radians; degrees appear
only at logging and UI boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_pi(angle):
    """Wrap an angle (scalar or array) to (-pi, pi]; exactly pi stays +pi."""
    return -((-angle + math.pi) % TWO_PI - math.pi)


@dataclass(frozen=True)
class Pose6:
    """6-DOF pose in the NED world frame (meters, radians)."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def orientation(self) -> np.ndarray:
        return np.array([self.roll, self.pitch, self.yaw])

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.roll, self.pitch, self.yaw])

    @staticmethod
    def from_array(v) -> "Pose6":
        x, y, z, roll, pitch, yaw = (float(c) for c in v)
        return Pose6(x, y, z, roll, pitch, yaw)

    def wrapped(self) -> "Pose6":
        """Same pose with yaw and roll wrapped to (-pi, pi]."""
        return Pose6(self.x, self.y, self.z, wrap_pi(self.roll), self.pitch, wrap_pi(self.yaw))

    def rotation_matrix(self) -> np.ndarray:
        return rotation_matrix_rpy(self.roll, self.pitch, self.yaw)


def rotation_matrix_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Body-to-world rotation, Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def planar_bearing(from_xy, to_xy) -> float:
    """Bearing from one point to another in the horizontal NED plane.

    0 points north (+x), pi/2 points east (+y); result in (-pi, pi].
    """
    dx = to_xy[0] - from_xy[0]
    dy = to_xy[1] - from_xy[1]
    return wrap_pi(math.atan2(dy, dx))


def horizontal_distance(a_xy, b_xy) -> float:
    return math.hypot(b_xy[0] - a_xy[0], b_xy[1] - a_xy[1])
