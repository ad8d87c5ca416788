"""Rigid-body transforms, pinhole projection and two-view triangulation.

Conventions: a camera pose stores the world-to-camera rotation ``R`` and the
camera center ``c`` in world coordinates, so ``x_cam = R @ (x - c)``.
Camera axes are x right, y down, z forward (along the optical axis).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateBaseline, PointBehindCamera

DEPTH_EPSILON = 1e-6
RAY_ANGLE_EPSILON = 1e-4
ROTATION_TOLERANCE = 1e-9


def skew(v):
    """Cross-product matrix ``[v]_x`` with ``skew(a) @ b == cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(omega) -> np.ndarray:
    """Rodrigues' formula for a rotation vector."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    K = skew(omega)
    if theta < 1e-8:
        # second-order Taylor expansion
        return np.eye(3) + K + 0.5 * K @ K
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * K @ K


def so3_log(R) -> np.ndarray:
    """Rotation vector of ``R`` (inverse of :func:`so3_exp` for angles < pi)."""
    R = np.asarray(R, dtype=float)
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        return 0.5 * w
    if np.pi - theta < 1e-6:
        # near pi: axis from the symmetric part
        B = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        k = int(np.argmax(axis))
        axis = B[k] / axis[k]
        axis /= np.linalg.norm(axis)
        return theta * axis
    return theta / (2.0 * np.sin(theta)) * w


def rotation_angle(R) -> float:
    """Angle of ``R`` in radians."""
    return float(np.arccos(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)))


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def nearest_rotation(M) -> np.ndarray:
    """Closest rotation to ``M`` in Frobenius norm (polar decomposition)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    D = np.diag([1.0, 1.0, np.linalg.det(U @ Vt)])
    return U @ D @ Vt


def rotation_error(R) -> float:
    """Largest violation of the rotation invariants (orthonormality, det=+1)."""
    R = np.asarray(R, dtype=float)
    ortho = np.max(np.abs(R.T @ R - np.eye(3)))
    return float(max(ortho, abs(np.linalg.det(R) - 1.0)))


def is_rotation(R, tol: float = ROTATION_TOLERANCE) -> bool:
    R = np.asarray(R)
    return R.shape == (3, 3) and bool(np.all(np.isfinite(R))) and rotation_error(R) <= tol


def compose_rotations(*rotations) -> np.ndarray:
    """Product of rotations, re-orthonormalized once at the end of the chain."""
    out = np.eye(3)
    for R in rotations:
        out = out @ R
    if rotation_error(out) > ROTATION_TOLERANCE * 1e-3:
        out = nearest_rotation(out)
    return out


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CameraPose:
    """World-to-camera rotation and camera center."""

    rotation: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotation)
        c = _frozen(self.center).reshape(-1)
        if R.shape != (3, 3) or not is_rotation(R):
            raise ValueError(f"not a rotation matrix (error {rotation_error(R) if R.shape == (3, 3) else 'shape'})")
        if c.shape != (3,) or not np.all(np.isfinite(c)):
            raise ValueError("camera center must be a finite 3-vector")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "center", c)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_rt(cls, R, t) -> "CameraPose":
        """Build from ``x_cam = R @ x + t``."""
        R = np.asarray(R, dtype=float)
        return cls(R, -R.T @ np.asarray(t, dtype=float))

    @property
    def translation(self) -> np.ndarray:
        """``t`` in ``x_cam = R @ x + t``."""
        return -self.rotation @ self.center

    def __eq__(self, other):
        if not isinstance(other, CameraPose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(self.center, other.center)

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.center.tobytes()))


@dataclass(frozen=True)
class PinholeIntrinsics:
    focal_x: float
    focal_y: float
    principal_x: float
    principal_y: float

    def __post_init__(self):
        vals = (self.focal_x, self.focal_y, self.principal_x, self.principal_y)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("intrinsics must be finite")
        if self.focal_x <= 0 or self.focal_y <= 0:
            raise ValueError("focal lengths must be positive")

    def as_tuple(self) -> tuple:
        return (self.focal_x, self.focal_y, self.principal_x, self.principal_y)

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.focal_x, 0.0, self.principal_x], [0.0, self.focal_y, self.principal_y], [0.0, 0.0, 1.0]]
        )


def world_to_camera(pose: CameraPose, p) -> np.ndarray:
    """Map world point(s) ``p`` (shape (3,) or (N, 3)) into the camera frame."""
    p = np.asarray(p, dtype=float)
    return (p - pose.center) @ pose.rotation.T


def camera_to_world(pose: CameraPose, p_cam) -> np.ndarray:
    """Inverse of :func:`world_to_camera`: ``c + R^T p_cam``."""
    p_cam = np.asarray(p_cam, dtype=float)
    return pose.center + p_cam @ pose.rotation


def project(intr: PinholeIntrinsics, p_cam) -> np.ndarray:
    """Pinhole projection of camera-frame point(s); raises for z <= DEPTH_EPSILON."""
    p_cam = np.asarray(p_cam, dtype=float)
    z = p_cam[..., 2]
    if np.any(z <= DEPTH_EPSILON):
        raise PointBehindCamera(f"point depth {np.min(z):.3g} <= {DEPTH_EPSILON}")
    u = intr.focal_x * p_cam[..., 0] / z + intr.principal_x
    v = intr.focal_y * p_cam[..., 1] / z + intr.principal_y
    return np.stack([u, v], axis=-1)


def pixel_ray(pose: CameraPose, intr: PinholeIntrinsics, pix) -> np.ndarray:
    """Unit viewing direction(s) of pixel(s) in world coordinates."""
    pix = np.asarray(pix, dtype=float)
    x = (pix[..., 0] - intr.principal_x) / intr.focal_x
    y = (pix[..., 1] - intr.principal_y) / intr.focal_y
    d_cam = np.stack([x, y, np.ones_like(x)], axis=-1)
    d = d_cam @ pose.rotation
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def triangulate_two_view(pose_a: CameraPose, pose_b: CameraPose, intr: PinholeIntrinsics, pix_a, pix_b) -> np.ndarray:
    """Midpoint triangulation: the point minimizing squared distance to both rays."""
    da = pixel_ray(pose_a, intr, pix_a)
    db = pixel_ray(pose_b, intr, pix_b)
    angle = np.arccos(np.clip(abs(float(da @ db)), 0.0, 1.0))
    if angle <= RAY_ANGLE_EPSILON:
        raise DegenerateBaseline(f"ray angle {angle:.3g} rad <= {RAY_ANGLE_EPSILON}")
    Pa = np.eye(3) - np.outer(da, da)
    Pb = np.eye(3) - np.outer(db, db)
    return np.linalg.solve(Pa + Pb, Pa @ pose_a.center + Pb @ pose_b.center)


def rigid_align(src, dst, with_scale: bool = False):
    """Least-squares ``dst ~ s * R @ src + t`` (Kabsch / Umeyama).

    Returns ``(R, t, s)``; ``s`` is 1 unless ``with_scale``.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    A, B = src - mu_s, dst - mu_d
    U, S, Vt = np.linalg.svd(B.T @ A)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt)) or 1.0])
    R = U @ D @ Vt
    s = float(np.trace(np.diag(S) @ D) / np.sum(A**2)) if with_scale else 1.0
    t = mu_d - s * R @ mu_s
    return R, t, s
