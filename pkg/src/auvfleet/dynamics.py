"""Decoupled vehicle motion model: surge, yaw, and the nested pitch/depth plants.

The vehicle is actuated by a single thruster and three fins (top for yaw,
port/starboard for pitch). Each axis is a linear first- or second-order plant:

    surge:  m_u * du/dt + b_u * u = thruster_gain * thruster
    yaw:    I_z * dr/dt + b_psi * r = fin_effectiveness * top_fin
    pitch:  I_y * dq/dt + b_theta * q = fin_effectiveness * mean(port, stbd)
    depth:  m * dw/dt + b_z * w = -F_e * theta      (w = world-frame z rate)

Fin effectiveness is held at the linearization speed regardless of actual
surge, matching a controller design linearized about constant forward speed.
Roll is passively stabilized and frozen at zero.

Integration is semi-implicit Euler: velocities advance first, then positions
advance using the new velocities but the pre-update orientation. Using the
pre-update orientation makes discrete dead reckoning from sampled velocities
exactly consistent with the integrated trajectory when sampled every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .geometry import Pose6, wrap_pi

PITCH_LIMIT = math.pi / 2 - 1e-3


@dataclass(frozen=True)
class PlantParams:
    """Lumped linear plant coefficients; all inertias and dampings positive."""

    depth_mass: float = 20.0        # kg, mass-like coefficient of the depth plant
    depth_damping: float = 35.0     # N*s/m
    pitch_inertia: float = 1.5      # kg*m^2, about the pitch axis
    pitch_damping: float = 4.0      # N*m*s/rad
    trim_thrust: float = 12.0       # N, constant linearization force driving depth via pitch
    yaw_inertia: float = 1.2        # kg*m^2
    yaw_damping: float = 3.0        # N*m*s/rad
    surge_mass: float = 18.0        # kg
    surge_damping: float = 22.0     # N*s/m
    fin_effectiveness: float = 6.0  # N*m per rad of deflection at linearization speed
    thruster_gain: float = 30.0     # N per unit thruster command
    fin_limit: float = math.radians(30.0)  # rad, hardware deflection stop

    def validate(self) -> None:
        positive = {
            "depth_mass": self.depth_mass,
            "depth_damping": self.depth_damping,
            "pitch_inertia": self.pitch_inertia,
            "pitch_damping": self.pitch_damping,
            "yaw_inertia": self.yaw_inertia,
            "yaw_damping": self.yaw_damping,
            "surge_mass": self.surge_mass,
            "surge_damping": self.surge_damping,
            "fin_effectiveness": self.fin_effectiveness,
            "thruster_gain": self.thruster_gain,
            "fin_limit": self.fin_limit,
        }
        for name, value in positive.items():
            if not value > 0.0:
                raise ValueError(f"plant parameter {name} must be > 0, got {value}")
        if self.trim_thrust < 0.0:
            raise ValueError(f"plant parameter trim_thrust must be >= 0, got {self.trim_thrust}")


@dataclass(frozen=True)
class ActuatorCommand:
    """Saturated actuator set: thruster in [-1, 1], fin deflections in radians."""

    thruster: float = 0.0
    top_fin: float = 0.0
    port_fin: float = 0.0
    starboard_fin: float = 0.0

    @staticmethod
    def saturated(thruster: float, top_fin: float, port_fin: float,
                  starboard_fin: float, fin_limit: float) -> "ActuatorCommand":
        clamp = lambda v, lim: min(max(v, -lim), lim)
        return ActuatorCommand(
            thruster=clamp(thruster, 1.0),
            top_fin=clamp(top_fin, fin_limit),
            port_fin=clamp(port_fin, fin_limit),
            starboard_fin=clamp(starboard_fin, fin_limit),
        )


@dataclass(frozen=True)
class VehicleState:
    """Simulator ground truth: pose plus the decoupled velocity states."""

    pose: Pose6 = Pose6()
    u: float = 0.0    # surge speed, body x, m/s
    w_z: float = 0.0  # vertical speed, world z (positive down), m/s
    q: float = 0.0    # pitch rate, rad/s
    r: float = 0.0    # yaw rate, rad/s


def fins_to_torques(cmd: ActuatorCommand, u: float, params: PlantParams) -> tuple[float, float]:
    """Map fin deflections to (pitch torque, yaw torque).

    Pitch torque comes from the mean of port/starboard deflection, yaw torque
    from the top fin; both use the constant effectiveness at linearization
    speed, so `u` does not enter.
    """
    tau_pitch = params.fin_effectiveness * 0.5 * (cmd.port_fin + cmd.starboard_fin)
    tau_yaw = params.fin_effectiveness * cmd.top_fin
    return tau_pitch, tau_yaw


def step_dynamics(state: VehicleState, cmd: ActuatorCommand,
                  params: PlantParams, dt: float) -> VehicleState:
    """Advance the vehicle one step of `dt` seconds (semi-implicit Euler)."""
    if dt <= 0.0:
        raise ValueError("dt must be > 0")
    pose = state.pose
    tau_pitch, tau_yaw = fins_to_torques(cmd, state.u, params)

    u = state.u + dt * (params.thruster_gain * cmd.thruster - params.surge_damping * state.u) / params.surge_mass
    r = state.r + dt * (tau_yaw - params.yaw_damping * state.r) / params.yaw_inertia
    q = state.q + dt * (tau_pitch - params.pitch_damping * state.q) / params.pitch_inertia
    w_z = state.w_z + dt * (-params.trim_thrust * pose.pitch - params.depth_damping * state.w_z) / params.depth_mass

    # Positions advance with new velocities along the pre-update orientation.
    x = pose.x + dt * u * math.cos(pose.yaw)
    y = pose.y + dt * u * math.sin(pose.yaw)
    z = pose.z + dt * w_z

    pitch = pose.pitch + dt * q
    if pitch > PITCH_LIMIT:
        pitch, q = PITCH_LIMIT, 0.0
    elif pitch < -PITCH_LIMIT:
        pitch, q = -PITCH_LIMIT, 0.0
    yaw = wrap_pi(pose.yaw + dt * r)

    return VehicleState(pose=Pose6(x, y, z, 0.0, pitch, yaw), u=u, w_z=w_z, q=q, r=r)
