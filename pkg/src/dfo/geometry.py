"""
Rigid-body geometry: se(3)/SE(3) maps, the pinhole camera and the projective warp.

Twists are ordered (v, w): translational part first, rotation vector second.
A RigidTransform maps points x -> R x + t.

Pixel convention: (0, 0) is the center of the top-left pixel. Going one
pyramid level up halves the focal lengths and maps cx -> (cx + 0.5) / 2 - 0.5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import AngleNearPi, InvalidLevel, NonPositiveDepth, PointBehindCamera

SMALL_ANGLE = 1e-8
# below this the third-order coefficient (theta - sin theta) / theta^3 loses
# all precision to cancellation and is taken from its series
SERIES_ANGLE = 1e-3
PI_MARGIN = 1e-6
MIN_PROJECT_DEPTH = 1e-9
NUM_LEVELS = 4


def skew(w):
    """Hat operator: 3-vector to 3x3 skew-symmetric matrix."""
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def vee(W):
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


@dataclass(frozen=True)
class Twist:
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=float).reshape(3)
        w = np.array(self.w, dtype=float).reshape(3)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
            raise ValueError("twist components must be finite")
        v.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)

    @classmethod
    def from_vector(cls, xi) -> "Twist":
        xi = np.asarray(xi, dtype=float).reshape(6)
        return cls(xi[:3], xi[3:])

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.v, self.w])

    def __neg__(self) -> "Twist":
        return Twist(-self.v, -self.w)

    def hat(self) -> np.ndarray:
        """4x4 matrix form of the twist."""
        M = np.zeros((4, 4))
        M[:3, :3] = skew(self.w)
        M[:3, 3] = self.v
        return M


@dataclass(frozen=True)
class RigidTransform:
    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M) -> "RigidTransform":
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    def inverse(self) -> "RigidTransform":
        Rt = self.R.T
        return RigidTransform(Rt, -Rt @ self.t)

    def apply(self, X) -> np.ndarray:
        """Transform one point (3,) or an (N, 3) array of points."""
        X = np.asarray(X, dtype=float)
        return X @ self.R.T + self.t

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def is_valid(self, tol=1e-9) -> bool:
        return (np.allclose(self.R.T @ self.R, np.eye(3), atol=tol, rtol=0)
                and abs(np.linalg.det(self.R) - 1.0) <= tol)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


class Pixel(NamedTuple):
    u: float
    v: float


def _rotation_coefficients(theta):
    """Return (sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3)."""
    if theta < SMALL_ANGLE:
        return 1.0, 0.5, 1.0 / 6.0
    half = 0.5 * theta
    a = math.sin(theta) / theta
    b = 2.0 * (math.sin(half) / theta) ** 2
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        c = (theta - math.sin(theta)) / theta ** 3
    return a, b, c


def so3_exp(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    W = skew(w)
    a, b, _ = _rotation_coefficients(theta)
    return np.eye(3) + a * W + b * (W @ W)


def exp_map(xi) -> RigidTransform:
    """Exponential map se(3) -> SE(3); accepts a Twist or a 6-vector (v, w)."""
    if not isinstance(xi, Twist):
        xi = Twist.from_vector(xi)
    theta = float(np.linalg.norm(xi.w))
    W = skew(xi.w)
    W2 = W @ W
    a, b, c = _rotation_coefficients(theta)
    R = np.eye(3) + a * W + b * W2
    V = np.eye(3) + b * W + c * W2
    return RigidTransform(R, V @ xi.v)


def log_map(T: RigidTransform) -> Twist:
    """Inverse of exp_map for rotation angles away from pi."""
    R = T.R
    s = 0.5 * vee(R - R.T)
    sin_theta = float(np.linalg.norm(s))
    cos_theta = 0.5 * (np.trace(R) - 1.0)
    theta = math.atan2(sin_theta, cos_theta)
    if math.pi - theta < PI_MARGIN:
        raise AngleNearPi(f"rotation angle {theta!r} is within {PI_MARGIN} of pi")
    if theta < SERIES_ANGLE:
        t2 = theta * theta
        w = s * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0)
        d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        w = s * (theta / sin_theta)
        d = (1.0 - theta * sin_theta / (2.0 * (1.0 - cos_theta))) / (theta * theta)
    W = skew(w)
    V_inv = np.eye(3) - 0.5 * W + d * (W @ W)
    return Twist(V_inv @ T.t, w)


def _orthonormalize(R):
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Return a o b, i.e. the transform x -> a(b(x))."""
    R = a.R @ b.R
    if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-12:
        R = _orthonormalize(R)
    return RigidTransform(R, a.R @ b.t + a.t)


def adjoint(T: RigidTransform) -> np.ndarray:
    """6x6 adjoint for (v, w) ordered twists: exp(Ad_T xi) = T exp(xi) T^-1."""
    A = np.zeros((6, 6))
    A[:3, :3] = T.R
    A[:3, 3:] = skew(T.t) @ T.R
    A[3:, 3:] = T.R
    return A


def backproject(p, z, K: Intrinsics) -> np.ndarray:
    """3D point at depth z along the ray through pixel p."""
    if not z > 0:
        raise NonPositiveDepth(f"depth must be positive, got {z!r}")
    u, v = p
    return np.array([z * (u - K.cx) / K.fx, z * (v - K.cy) / K.fy, z])


def project(X, K: Intrinsics) -> Pixel:
    X = np.asarray(X, dtype=float)
    if not X[2] > MIN_PROJECT_DEPTH:
        raise PointBehindCamera(f"point depth {X[2]!r} is not in front of the camera")
    return Pixel(K.fx * X[0] / X[2] + K.cx, K.fy * X[1] / X[2] + K.cy)


def warp_point(p, z, T: RigidTransform, K: Intrinsics) -> tuple[Pixel, float]:
    """Move pixel p with depth z through T; returns the new pixel and its depth."""
    X = T.apply(backproject(p, z, K))
    return project(X, K), float(X[2])


def rescale_intrinsics(K: Intrinsics, level: int) -> Intrinsics:
    if not (isinstance(level, (int, np.integer)) and 1 <= level <= NUM_LEVELS):
        raise InvalidLevel(f"level must be in 1..{NUM_LEVELS}, got {level!r}")
    s = 2.0 ** (1 - level)
    return Intrinsics(K.fx * s, K.fy * s, (K.cx + 0.5) * s - 0.5, (K.cy + 0.5) * s - 0.5)


# Array versions used by the dense code paths. They skip the per-point checks
# and leave validity to the caller.

def backproject_pixels(u, v, z, K: Intrinsics) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    z = np.asarray(z, dtype=float)
    return np.stack([z * (u - K.cx) / K.fx, z * (v - K.cy) / K.fy, z], axis=-1)


def project_points(X, K: Intrinsics):
    """Project an (..., 3) array; returns (u, v, in_front)."""
    X = np.asarray(X, dtype=float)
    z = X[..., 2]
    in_front = z > MIN_PROJECT_DEPTH
    zs = np.where(in_front, z, 1.0)
    return K.fx * X[..., 0] / zs + K.cx, K.fy * X[..., 1] / zs + K.cy, in_front


def projection_jacobian(X, K: Intrinsics) -> np.ndarray:
    """d(pixel)/d(xi) for a left perturbation exp(xi) X, shape (N, 2, 6)."""
    X = np.asarray(X, dtype=float).reshape(-1, 3)
    x, y, z = X[:, 0], X[:, 1], X[:, 2]
    iz = 1.0 / z
    iz2 = iz * iz
    J = np.zeros((X.shape[0], 2, 6))
    J[:, 0, 0] = K.fx * iz
    J[:, 0, 2] = -K.fx * x * iz2
    J[:, 0, 3] = -K.fx * x * y * iz2
    J[:, 0, 4] = K.fx * (1.0 + x * x * iz2)
    J[:, 0, 5] = -K.fx * y * iz
    J[:, 1, 1] = K.fy * iz
    J[:, 1, 2] = -K.fy * y * iz2
    J[:, 1, 3] = -K.fy * (1.0 + y * y * iz2)
    J[:, 1, 4] = K.fy * x * y * iz2
    J[:, 1, 5] = K.fy * x * iz
    return J
