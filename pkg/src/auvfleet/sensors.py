"""Noisy sensor models sampled from ground truth on fixed rate schedules.

Four sensors feed the navigation stack: DVL (body-frame velocity), IMU/AHRS
(absolute roll/pitch/yaw), a pressure depth sensor, and GPS (horizontal
position, available only at the surface). Noise is independent zero-mean
Gaussian per axis, one labeled RNG stream per sensor per vehicle, so adding
or reordering vehicles never perturbs another vehicle's noise sequence.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .dynamics import VehicleState


class SensorKind(enum.Enum):
    DVL = "dvl"
    IMU = "imu"
    DEPTH = "depth"
    GPS = "gps"


AXES = {SensorKind.DVL: 3, SensorKind.IMU: 3, SensorKind.DEPTH: 1, SensorKind.GPS: 2}


@dataclass(frozen=True)
class Measurement:
    """One timestamped sensor sample; payload layout depends on kind.

    DVL: body-frame velocity (m/s). IMU: roll/pitch/yaw (rad).
    DEPTH: z (m, positive down). GPS: world x, y (m, local tangent frame).
    """

    kind: SensorKind
    t: float
    values: tuple

    def array(self) -> np.ndarray:
        return np.asarray(self.values)


@dataclass(frozen=True)
class SensorChannelConfig:
    rate_hz: float
    sigma: tuple  # one entry per axis
    enabled: bool = True


def _sigmas(value, axes: int) -> tuple:
    seq = [float(value)] * axes if np.isscalar(value) else [float(v) for v in value]
    if len(seq) != axes:
        raise ValueError(f"expected {axes} sigma entries, got {len(seq)}")
    if any(s < 0 for s in seq):
        raise ValueError("sensor sigma must be >= 0")
    return tuple(seq)


def channel(kind: SensorKind, rate_hz: float, sigma, enabled: bool = True) -> SensorChannelConfig:
    if rate_hz <= 0:
        raise ValueError("sensor rate must be > 0")
    return SensorChannelConfig(rate_hz=float(rate_hz), sigma=_sigmas(sigma, AXES[kind]), enabled=enabled)


@dataclass(frozen=True)
class SensorConfig:
    """Per-vehicle sensor suite configuration."""

    dvl: SensorChannelConfig = field(default_factory=lambda: channel(SensorKind.DVL, 4.0, 0.02))
    imu: SensorChannelConfig = field(default_factory=lambda: channel(SensorKind.IMU, 20.0, 0.01))
    depth: SensorChannelConfig = field(default_factory=lambda: channel(SensorKind.DEPTH, 10.0, 0.02))
    gps: SensorChannelConfig = field(default_factory=lambda: channel(SensorKind.GPS, 1.0, 1.0))
    surface_threshold: float = 0.3  # m; GPS fixes only at or above this depth

    def channels(self) -> dict:
        return {SensorKind.DVL: self.dvl, SensorKind.IMU: self.imu,
                SensorKind.DEPTH: self.depth, SensorKind.GPS: self.gps}

    def validate(self) -> None:
        if self.surface_threshold < 0:
            raise ValueError("surface_threshold must be >= 0")


def true_value(kind: SensorKind, truth: VehicleState) -> np.ndarray:
    """Noise-free sensor reading implied by the ground-truth state."""
    pose = truth.pose
    if kind is SensorKind.DVL:
        world_vel = np.array([truth.u * np.cos(pose.yaw), truth.u * np.sin(pose.yaw), truth.w_z])
        return pose.rotation_matrix().T @ world_vel
    if kind is SensorKind.IMU:
        return pose.orientation()
    if kind is SensorKind.DEPTH:
        return np.array([pose.z])
    if kind is SensorKind.GPS:
        return np.array([pose.x, pose.y])
    raise ValueError(f"unknown sensor kind {kind}")


def sample(kind: SensorKind, truth: VehicleState, t: float,
           cfg: SensorConfig, rng: np.random.Generator):
    """Draw one measurement, or None when the sensor has no fix.

    GPS returns None below the surface threshold. The noise draw is consumed
    either way so measurement sequences stay aligned across configurations.
    """
    ch = cfg.channels()[kind]
    noise = rng.normal(0.0, ch.sigma)
    if kind is SensorKind.GPS and truth.pose.z > cfg.surface_threshold:
        return None
    values = true_value(kind, truth) + noise
    return Measurement(kind=kind, t=t, values=tuple(float(v) for v in values))


class SensorSuite:
    """Rate scheduler plus per-sensor RNG streams for one vehicle.

    Rates must divide the tick rate so every sample lands exactly on a tick.
    """

    def __init__(self, cfg: SensorConfig, dt: float, rng_factory):
        cfg.validate()
        self.cfg = cfg
        self._period_ticks = {}
        self._rngs = {}
        tick_rate = 1.0 / dt
        for kind, ch in cfg.channels().items():
            if not ch.enabled:
                continue
            ratio = tick_rate / ch.rate_hz
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                raise ValueError(
                    f"{kind.value} rate {ch.rate_hz} Hz must divide the tick rate {tick_rate:g} Hz")
            self._period_ticks[kind] = int(round(ratio))
            self._rngs[kind] = rng_factory(kind.value)

    def due(self, tick: int) -> list:
        return [k for k, p in self._period_ticks.items() if tick % p == 0]

    def sample_due(self, tick: int, t: float, truth: VehicleState) -> list:
        out = []
        for kind in self.due(tick):
            m = sample(kind, truth, t, self.cfg, self._rngs[kind])
            if m is not None:
                out.append(m)
        return out
