"""
Looping ground-truth trajectories and the IMU-style controls that drive them.

Positions are produced by trapezoid integration of the analytic velocity,
and the acceleration control of step k is (v[k+1] - v[k]) / dt, so feeding
the noiseless controls to the filter's propagation reproduces the
ground truth up to rounding.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.error_handling import ConfigError
from estimation.pose_filter import GRAVITY, ControlInput, PositionObservation
from evaluation.metrics import default_truth_radius
from utils.rotations import quat_from_yaw, quat_to_rotation

logger = logging.getLogger(__name__)

# Texture value range before illumination
TEXTURE_MIN = 48
TEXTURE_MAX = 200


class AliasPair(BaseModel):
    """Two equal-length frame arcs; every visit of arc_b is rendered with arc_a's texture."""

    model_config = ConfigDict(extra="forbid")

    arc_a: Tuple[int, int] = Field(..., description="Inclusive frame range of the source arc")
    arc_b: Tuple[int, int] = Field(..., description="Inclusive frame range that copies arc_a")

    @model_validator(mode="after")
    def _equal_lengths(self):
        for lo, hi in (self.arc_a, self.arc_b):
            if lo < 0 or hi < lo:
                raise ValueError(f"invalid arc [{lo}, {hi}]")
        if self.arc_a[1] - self.arc_a[0] != self.arc_b[1] - self.arc_b[0]:
            raise ValueError("alias arcs must have the same length")
        return self


class SynthConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    trajectory: Literal["circle_two_lap", "figure_eight", "line"] = "circle_two_lap"
    scale: float = Field(25.0, description="Circle radius / figure-eight half width / line length (m)")
    frame_count: int = 1000
    frame_rate: float = Field(10.0, gt=0)
    vertical_amplitude: float = Field(0.0, description="Height oscillation amplitude (m); 0 keeps the path planar")
    lap_offset_m: float = Field(
        0.0, ge=0, description="circle_two_lap only: largest radial gap between the two laps (m); 0 retraces lap one"
    )
    gyro_noise_std: float = Field(5e-4, ge=0, description="Per-sample gyro noise (rad/s)")
    accel_noise_std: float = Field(0.02, ge=0, description="Per-sample accelerometer noise (m/s^2)")
    observation_interval: int = Field(10, ge=0, description="Frames between position observations; 0 disables")
    observation_std: float = Field(0.5, gt=0, description="Position observation noise (m)")
    gain_range: Tuple[float, float] = (0.5, 1.0)
    bias_range: Tuple[float, float] = (-20.0, 20.0)
    gamma_range: Tuple[float, float] = (1.0, 1.0)
    alias_pair: Optional[AliasPair] = None
    alias_min_separation_m: float = Field(25.0, ge=0)
    footprint_m: float = Field(8.0, gt=0, description="Ground width covered by one frame (m)")
    image_size: int = Field(256, ge=64)
    truth_radius_m: Optional[float] = Field(None, gt=0, description="Defaults to 3x the median frame spacing")
    seed: int = Field(7, ge=0, lt=2 ** 64)

    @model_validator(mode="after")
    def _check_illumination(self):
        for name in ("gain_range", "bias_range", "gamma_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is reversed: {lo} > {hi}")
        if self.gain_range[0] <= 0 or self.gamma_range[0] <= 0:
            raise ValueError("gain and gamma must be positive")
        if self.gain_range[1] * TEXTURE_MAX + self.bias_range[1] > 255:
            raise ValueError("gain_range/bias_range saturate bright pixels")
        if self.gain_range[0] * TEXTURE_MIN + self.bias_range[0] < 0:
            raise ValueError("gain_range/bias_range clip dark pixels")
        return self


@dataclass
class GroundTruth:
    timestamps: np.ndarray
    positions: np.ndarray  # (N, 3)
    rotations: np.ndarray  # (N, 4) scalar-first
    velocities: np.ndarray  # (N, 3)

    def __len__(self):
        return len(self.timestamps)


@dataclass
class Trajectory:
    truth: GroundTruth
    controls: List[ControlInput]
    observations: Dict[int, PositionObservation] = field(default_factory=dict)
    truth_radius: float = 0.0


def _analytic_velocity(cfg: SynthConfig, times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(position at t=0, velocities (N, 3))."""
    n = cfg.frame_count
    duration = n / cfg.frame_rate
    rate = 4.0 * np.pi / duration  # parameter speed: two laps over the sequence
    theta = rate * times
    s = cfg.scale
    velocity = np.zeros((len(times), 3))

    if cfg.trajectory == "circle_two_lap":
        # r(theta) = s + a (1 - cos(theta / 2)) / 2, so the laps drift apart by a |cos(phi / 2)| at angle phi
        a = cfg.lap_offset_m
        radius = s + 0.5 * a * (1.0 - np.cos(0.5 * theta))
        d_radius = 0.25 * a * np.sin(0.5 * theta)
        start = np.array([s, 0.0, 0.0])
        velocity[:, 0] = rate * (d_radius * np.cos(theta) - radius * np.sin(theta))
        velocity[:, 1] = rate * (d_radius * np.sin(theta) + radius * np.cos(theta))
    elif cfg.trajectory == "figure_eight":
        # Lemniscate of Gerono: (s sin t, s sin t cos t)
        start = np.zeros(3)
        velocity[:, 0] = s * rate * np.cos(theta)
        velocity[:, 1] = s * rate * np.cos(2.0 * theta)
    else:
        start = np.zeros(3)
        velocity[:, 0] = s / max(times[-1], 1.0 / cfg.frame_rate)

    if cfg.vertical_amplitude:
        velocity[:, 2] = 2.0 * cfg.vertical_amplitude * rate * np.cos(2.0 * theta)
    return start, velocity


def generate_trajectory(cfg: SynthConfig, margin: int = 30) -> Trajectory:
    if not np.isfinite(cfg.scale) or cfg.scale <= 0:
        raise ConfigError(f"synth.scale must be > 0, got {cfg.scale}")
    if cfg.frame_count < 2:
        raise ConfigError(f"synth.frame_count must be >= 2, got {cfg.frame_count}")
    if cfg.frame_count < 2 * margin:
        logger.warning(f"frame_count {cfg.frame_count} < 2 x margin ({margin}): few loops can be admissible")

    n = cfg.frame_count
    times = np.arange(n) / cfg.frame_rate
    dts = np.diff(times)
    start, velocities = _analytic_velocity(cfg, times)

    positions = np.zeros((n, 3))
    positions[0] = start
    for k in range(n - 1):
        positions[k + 1] = positions[k] + 0.5 * (velocities[k] + velocities[k + 1]) * dts[k]

    yaw = np.unwrap(np.arctan2(velocities[:, 1], velocities[:, 0]))
    rotations = np.stack([quat_from_yaw(y) for y in yaw])

    rng_controls, rng_obs, _ = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(3))
    gyro_noise = rng_controls.normal(0.0, cfg.gyro_noise_std, (n, 3)) if cfg.gyro_noise_std else np.zeros((n, 3))
    accel_noise = rng_controls.normal(0.0, cfg.accel_noise_std, (n, 3)) if cfg.accel_noise_std else np.zeros((n, 3))

    controls = []
    for k in range(n - 1):
        acceleration = (velocities[k + 1] - velocities[k]) / dts[k]
        specific_force = quat_to_rotation(rotations[k]).as_matrix().T @ (acceleration - GRAVITY)
        angular_velocity = np.array([0.0, 0.0, (yaw[k + 1] - yaw[k]) / dts[k]])
        controls.append(ControlInput(
            angular_velocity=angular_velocity + gyro_noise[k],
            linear_acceleration=specific_force + accel_noise[k],
            dt=dts[k],
        ))
    # Unused by the filter; keeps one control per frame
    last = controls[-1]
    controls.append(ControlInput(last.angular_velocity, last.linear_acceleration, dts[-1]))

    observations = {}
    if cfg.observation_interval > 0:
        for k in range(cfg.observation_interval, n, cfg.observation_interval):
            observations[k] = PositionObservation(positions[k] + rng_obs.normal(0.0, cfg.observation_std, 3))

    truth = GroundTruth(times, positions, rotations, velocities)
    radius = cfg.truth_radius_m or default_truth_radius(positions)
    logger.info(
        f"Generated {cfg.trajectory} trajectory: {n} frames, scale {cfg.scale} m, "
        f"{len(observations)} observations, truth radius {radius:.3f} m"
    )
    return Trajectory(truth, controls, observations, radius)


def illumination_draws(cfg: SynthConfig) -> np.ndarray:
    """(N, 3) per-frame (gain, bias, gamma) from the third seed stream."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[2])
    n = cfg.frame_count
    gains = rng.uniform(*cfg.gain_range, n)
    biases = rng.uniform(*cfg.bias_range, n)
    gammas = rng.uniform(*cfg.gamma_range, n)
    return np.stack([gains, biases, gammas], axis=1)
