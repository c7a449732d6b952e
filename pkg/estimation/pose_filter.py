"""
Pose-only error-state EKF.

Error-state layout (9 dims):
    [0:3]  δθ  rotation error (rad, right-multiplicative small angle)
    [3:6]  δv  velocity error (m/s)
    [6:9]  δp  position error (m)

Propagation follows the usual strapdown model with a fixed gravity vector;
the update observes position directly (H selects the position block).
Covariances are symmetrized after every step.
"""
import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np

from app.error_handling import CovarianceError, FilterError, InputError, LoopClosureError, SingularInnovationError
from utils.rotations import IDENTITY_QUAT, exp_so3, normalize_quat, quat_to_rotation, rotation_to_quat, skew

logger = logging.getLogger(__name__)

GRAVITY = np.array([0.0, 0.0, -9.81])

ROT = slice(0, 3)
VEL = slice(3, 6)
POS = slice(6, 9)
STATE_DIM = 9

# Numerical floor for the PSD invariant
PSD_TOLERANCE = 1e-9


def _frozen_array(value, shape, name):
    arr = np.array(value, dtype=float)
    if arr.shape != shape:
        raise InputError(f"{name} must have shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


def check_psd(matrix, what="covariance"):
    """Raises CovarianceError naming the offending eigenvalue."""
    matrix = np.asarray(matrix, dtype=float)
    if not np.all(np.isfinite(matrix)):
        raise CovarianceError(f"{what} has non-finite entries")
    eigenvalues = np.linalg.eigvalsh(0.5 * (matrix + matrix.T))
    smallest = float(eigenvalues[0])
    if smallest < -PSD_TOLERANCE:
        raise CovarianceError(
            f"{what} is not positive semi-definite: eigenvalue {smallest:.6e}", eigenvalue=smallest
        )


def symmetrize(matrix):
    return 0.5 * (matrix + matrix.T)


# --- Domain types ---

@dataclass(frozen=True)
class FilterState:
    position: np.ndarray
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    velocity: np.ndarray
    covariance: np.ndarray  # 9x9 over (rotation error, velocity, position)

    def __post_init__(self):
        object.__setattr__(self, "position", _frozen_array(self.position, (3,), "position"))
        object.__setattr__(self, "velocity", _frozen_array(self.velocity, (3,), "velocity"))
        object.__setattr__(self, "covariance", _frozen_array(self.covariance, (STATE_DIM, STATE_DIM), "covariance"))
        rotation = _frozen_array(normalize_quat(self.rotation), (4,), "rotation")
        object.__setattr__(self, "rotation", rotation)

    @property
    def position_covariance(self):
        return self.covariance[POS, POS].copy()

    @property
    def rotation_covariance(self):
        return self.covariance[ROT, ROT].copy()


@dataclass(frozen=True)
class ControlInput:
    angular_velocity: np.ndarray  # rad/s, body frame
    linear_acceleration: np.ndarray  # specific force, m/s^2, body frame
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "angular_velocity", _frozen_array(self.angular_velocity, (3,), "angular_velocity"))
        object.__setattr__(
            self, "linear_acceleration", _frozen_array(self.linear_acceleration, (3,), "linear_acceleration")
        )
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise InputError(f"control dt must be > 0, got {self.dt}")
        object.__setattr__(self, "dt", float(self.dt))


@dataclass(frozen=True)
class NoiseConfig:
    process_noise: np.ndarray  # 6x6 over (gyro, accel)
    observation_noise: np.ndarray  # 3x3

    def __post_init__(self):
        object.__setattr__(self, "process_noise", _frozen_array(self.process_noise, (6, 6), "process_noise"))
        object.__setattr__(
            self, "observation_noise", _frozen_array(self.observation_noise, (3, 3), "observation_noise")
        )
        for name in ("process_noise", "observation_noise"):
            matrix = getattr(self, name)
            if not np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-12):
                raise CovarianceError(f"{name} is not symmetric")
            check_psd(matrix, name)

    @classmethod
    def from_std(cls, gyro_std: float, accel_std: float, observation_std: float) -> "NoiseConfig":
        """Diagonal noise from per-sample standard deviations."""
        process = np.diag([gyro_std ** 2] * 3 + [accel_std ** 2] * 3)
        observation = np.eye(3) * observation_std ** 2
        return cls(process, observation)


@dataclass(frozen=True)
class PositionObservation:
    observed_position: np.ndarray

    def __post_init__(self):
        position = _frozen_array(self.observed_position, (3,), "observed_position")
        if not np.all(np.isfinite(position)):
            raise InputError(f"observation has non-finite components: {position}")
        object.__setattr__(self, "observed_position", position)


def initial_state(
    position=(0.0, 0.0, 0.0),
    rotation=IDENTITY_QUAT,
    velocity=(0.0, 0.0, 0.0),
    rotation_std: float = 0.0,
    velocity_std: float = 0.0,
    position_std: float = 0.0,
) -> FilterState:
    covariance = np.diag([rotation_std ** 2] * 3 + [velocity_std ** 2] * 3 + [position_std ** 2] * 3)
    return FilterState(position=position, rotation=rotation, velocity=velocity, covariance=covariance)


# --- Covariance algebra (arbitrary block sizes) ---

def propagate_covariance(P, F, G, Q):
    """P_{n|n-1} = F P F^T + G Q G^T, symmetrized."""
    P, F, G, Q = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (P, F, G, Q))
    return symmetrize(F @ P @ F.T + G @ Q @ G.T)


def kalman_gain_update(P, H, R) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (K, P_post) with K = P H^T S^-1 and P_post = (I - K H) P."""
    P, H, R = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (P, H, R))
    S = H @ P @ H.T + R
    condition = float(np.linalg.cond(S))
    if not np.isfinite(condition) or condition > 1.0 / np.finfo(float).eps:
        raise SingularInnovationError(
            f"innovation covariance is singular (condition number {condition:.3e})", condition
        )
    # S and P are symmetric, so (S^-1 H P)^T = P H^T S^-1
    K = np.linalg.solve(S, H @ P).T
    P_post = symmetrize((np.eye(P.shape[0]) - K @ H) @ P)
    return K, P_post


# --- Filter steps ---

def propagate(state: FilterState, control: ControlInput, noise: NoiseConfig) -> FilterState:
    check_psd(state.covariance, "prior covariance")

    rotation = quat_to_rotation(state.rotation)
    R = rotation.as_matrix()
    dt = control.dt
    f = control.linear_acceleration

    acceleration = R @ f + GRAVITY
    position = state.position + state.velocity * dt + 0.5 * acceleration * dt * dt
    velocity = state.velocity + acceleration * dt
    delta = exp_so3(control.angular_velocity * dt)
    new_rotation = rotation_to_quat(rotation * delta)

    F = np.eye(STATE_DIM)
    F[ROT, ROT] = delta.as_matrix().T
    F[VEL, ROT] = -R @ skew(f) * dt
    F[POS, ROT] = -0.5 * R @ skew(f) * dt * dt
    F[POS, VEL] = np.eye(3) * dt

    G = np.zeros((STATE_DIM, 6))
    G[ROT, 0:3] = -np.eye(3) * dt
    G[VEL, 3:6] = R * dt
    G[POS, 3:6] = 0.5 * R * dt * dt

    covariance = propagate_covariance(state.covariance, F, G, noise.process_noise)
    return FilterState(position=position, rotation=new_rotation, velocity=velocity, covariance=covariance)


def update(state: FilterState, obs: PositionObservation, noise: NoiseConfig) -> FilterState:
    check_psd(state.covariance, "predicted covariance")

    H = np.zeros((3, STATE_DIM))
    H[:, POS] = np.eye(3)
    innovation = obs.observed_position - state.position
    K, covariance = kalman_gain_update(state.covariance, H, noise.observation_noise)
    correction = K @ innovation

    rotation = quat_to_rotation(state.rotation) * exp_so3(correction[ROT])
    return FilterState(
        position=state.position + correction[POS],
        rotation=rotation_to_quat(rotation),
        velocity=state.velocity + correction[VEL],
        covariance=covariance,
    )


def run_filter(
    controls: Sequence[ControlInput],
    observations: Optional[Mapping[int, PositionObservation]],
    noise: NoiseConfig,
    initial: FilterState,
) -> list:
    """
    One state per control record. Frame 0 is `initial`; frame k > 0 is
    propagated from frame k-1 with controls[k-1]. An observation at frame k
    is applied after that frame's propagation.
    """
    if len(controls) == 0:
        raise InputError("run_filter needs at least one control record")
    observations = observations or {}

    states = []
    state = initial
    for frame in range(len(controls)):
        try:
            if frame > 0:
                state = propagate(state, controls[frame - 1], noise)
            if frame in observations:
                state = update(state, observations[frame], noise)
        except LoopClosureError as exc:
            raise FilterError(frame, exc) from exc
        states.append(state)

    logger.info(
        f"Filtered {len(states)} frames ({len(observations)} position updates), "
        f"final position std {np.sqrt(np.trace(states[-1].position_covariance) / 3):.3f} m"
    )
    return states


def infer_initial_velocity(p0, p1, control: ControlInput, rotation=IDENTITY_QUAT):
    """Velocity at frame 0 consistent with the propagation model between two known positions."""
    R = quat_to_rotation(rotation).as_matrix()
    acceleration = R @ control.linear_acceleration + GRAVITY
    dt = control.dt
    return (np.asarray(p1, dtype=float) - np.asarray(p0, dtype=float)) / dt - 0.5 * acceleration * dt
