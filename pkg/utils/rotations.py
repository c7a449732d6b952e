"""
Quaternion helpers on top of scipy's Rotation.

Quaternions are stored scalar-first (w, x, y, z) everywhere in this
project; scipy uses scalar-last, so every conversion goes through here.
"""
import numpy as np
from scipy.spatial.transform import Rotation

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def skew(v):
    """3x3 cross-product matrix."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def normalize_quat(q):
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q)
    if not np.isfinite(norm) or norm == 0.0:
        raise ValueError(f"Cannot normalize quaternion {q}")
    q = q / norm
    # Canonical hemisphere keeps output deterministic
    return -q if q[0] < 0 else q


def quat_to_rotation(q) -> Rotation:
    w, x, y, z = q
    return Rotation.from_quat([x, y, z, w])


def rotation_to_quat(rotation: Rotation):
    x, y, z, w = rotation.as_quat()
    return normalize_quat([w, x, y, z])


def quat_from_matrix(matrix):
    return rotation_to_quat(Rotation.from_matrix(np.asarray(matrix, dtype=float)))


def quat_from_yaw(yaw):
    return rotation_to_quat(Rotation.from_euler("z", float(yaw)))


def exp_so3(phi) -> Rotation:
    return Rotation.from_rotvec(np.asarray(phi, dtype=float))
