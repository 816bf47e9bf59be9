"""Rigid transforms, pinhole projection, dual-quadric projection and the
2D Gaussian Wasserstein distance.

Ellipses are treated as Gaussians: the covariance ``S`` is chosen so that the
eigenvalues of ``S^(1/2)`` are the ellipse semi-axes (the 1-sigma contour).

Most functions come in two flavours: a scalar one working on the small value
types below, and a ``*_batch`` one working on stacked numpy arrays, which is
what the relocalization loops use.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateConic, EmptyBox, PointBehindCamera

MIN_DEPTH = 1e-6
EIG_FLOOR = 1e-12
ROTATION_TOL = 1e-9


def _frozen(a, shape):
    a = np.array(a, dtype=float).reshape(shape)
    a.setflags(write=False)
    return a


# --------------------------------------------------------------------------
# rotations
# --------------------------------------------------------------------------


def hat(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def so3_exp(w):
    """Rodrigues formula: axis-angle vector to rotation matrix."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    W = hat(w)
    if theta < 1e-8:
        return np.eye(3) + W + 0.5 * W @ W
    return np.eye(3) + np.sin(theta) / theta * W + (1 - np.cos(theta)) / theta**2 * W @ W


def so3_log(R):
    """Rotation matrix to axis-angle vector."""
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)
    v = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        return 0.5 * v
    if np.pi - theta < 1e-6:
        # near pi the antisymmetric part vanishes; use the symmetric part
        B = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        k = int(np.argmax(axis))
        axis = B[k] / axis[k]
        axis /= np.linalg.norm(axis)
        return theta * axis
    return theta / (2 * np.sin(theta)) * v


def rotation_angle(R):
    """Angle (rad) of a rotation matrix, accurate for tiny angles."""
    return float(np.linalg.norm(so3_log(R)))


def quat_to_matrix(q):
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R):
    """Rotation matrix to unit quaternion (w, x, y, z) with w >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


def orthonormalize(R):
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


# --------------------------------------------------------------------------
# value types
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PoseSE3:
    """Rigid transform taking map coordinates to camera coordinates."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))
        if not self.is_valid(ROTATION_TOL):
            raise ValueError("rotation must be orthonormal with det +1 and the pose finite")

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M):
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def from_quaternion(cls, q_wxyz, t):
        return cls(quat_to_matrix(q_wxyz), t)

    @property
    def quaternion(self):
        return matrix_to_quat(self.rotation)

    def as_matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def inverse(self):
        Rt = self.rotation.T
        return PoseSE3(Rt, -Rt @ self.translation)

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first."""
        return PoseSE3(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __matmul__(self, other):
        return self.compose(other)

    def apply(self, points):
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    @property
    def camera_center(self):
        """Camera position expressed in map coordinates."""
        return -self.rotation.T @ self.translation

    def is_valid(self, tol=1e-9):
        R = self.rotation
        return bool(
            np.all(np.isfinite(R))
            and np.all(np.isfinite(self.translation))
            and np.max(np.abs(R.T @ R - np.eye(3))) <= tol
            and abs(np.linalg.det(R) - 1.0) <= tol
        )

    def __repr__(self):
        return f"PoseSE3(rotvec={so3_log(self.rotation).round(6)}, t={self.translation.round(6)})"


def transform_point(T: PoseSE3, p) -> np.ndarray:
    return T.rotation @ np.asarray(p, dtype=float) + T.translation


def pose_error(a: PoseSE3, b: PoseSE3):
    """Translation (same units as poses) and rotation (rad) difference."""
    dt = float(np.linalg.norm(a.translation - b.translation))
    dr = rotation_angle(a.rotation.T @ b.rotation)
    return dt, dr


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_string(cls, text):
        """Parse ``"fx,fy,cx,cy,w,h"``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 6:
            raise ValueError(f"expected 6 comma-separated values, got {len(parts)}")
        fx, fy, cx, cy = (float(p) for p in parts[:4])
        return cls(fx, fy, cx, cy, int(float(parts[4])), int(float(parts[5])))

    def to_string(self):
        return f"{self.fx!r},{self.fy!r},{self.cx!r},{self.cy!r},{self.width},{self.height}"

    @property
    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class Ellipse2D:
    center: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        c = _frozen(self.center, (2,))
        S = _frozen(self.covariance, (2, 2))
        if np.max(np.abs(S - S.T)) > 1e-9 * max(1.0, np.max(np.abs(S))):
            raise DegenerateConic("ellipse covariance is not symmetric")
        if np.linalg.eigvalsh(S)[0] <= 0:
            raise DegenerateConic("ellipse covariance is not positive-definite")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "covariance", S)

    @property
    def semi_axes(self):
        """Semi-axes, major first."""
        return np.sqrt(np.linalg.eigvalsh(self.covariance))[::-1]

    def bbox(self):
        half = np.sqrt(np.diag(self.covariance))
        return np.concatenate([self.center - half, self.center + half])


@dataclass(frozen=True, eq=False)
class DualQuadric:
    """Ellipsoid landmark: centre, orientation quaternion (w, x, y, z), semi-axes."""

    position: np.ndarray
    orientation: np.ndarray
    semi_axes: np.ndarray

    def __post_init__(self):
        q = np.array(self.orientation, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if n == 0:
            raise ValueError("zero quaternion")
        if abs(n - 1.0) > 1e-9:
            q = q / n
        s = _frozen(self.semi_axes, (3,))
        if not np.all(s > 0):
            raise ValueError("quadric semi-axes must be positive")
        object.__setattr__(self, "position", _frozen(self.position, (3,)))
        object.__setattr__(self, "orientation", _frozen(q, (4,)))
        object.__setattr__(self, "semi_axes", s)

    @classmethod
    def sphere(cls, center, radius):
        return cls(center, [1.0, 0.0, 0.0, 0.0], [radius] * 3)

    @property
    def rotation(self):
        return quat_to_matrix(self.orientation)

    def matrix(self):
        """4x4 dual form ``Z diag(s^2, -1) Z^T`` with ``Z = [R t; 0 1]``."""
        Z = np.eye(4)
        Z[:3, :3] = self.rotation
        Z[:3, 3] = self.position
        Q = Z @ np.diag(np.append(self.semi_axes**2, -1.0)) @ Z.T
        return 0.5 * (Q + Q.T)


# --------------------------------------------------------------------------
# projection
# --------------------------------------------------------------------------


def projection_matrix(T: PoseSE3, K: CameraIntrinsics):
    return K.matrix @ np.hstack([T.rotation, T.translation[:, None]])


def project_points_batch(R, t, K: CameraIntrinsics, points):
    """Pinhole projection of ``(N, 3)`` map points. Returns ``(uv, depth)``."""
    Xc = np.asarray(points, dtype=float) @ R.T + t
    z = Xc[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * Xc[..., 0] / z + K.cx
        v = K.fy * Xc[..., 1] / z + K.cy
    return np.stack([u, v], axis=-1), z


def project_center(T: PoseSE3, K: CameraIntrinsics, p) -> np.ndarray:
    uv, z = project_points_batch(T.rotation, T.translation, K, np.asarray(p, dtype=float)[None])
    if not z[0] > MIN_DEPTH:
        raise PointBehindCamera(f"camera-frame depth {z[0]:.3g} <= {MIN_DEPTH}")
    return uv[0]


def conic_to_ellipse_batch(Cstar):
    """Normalise stacked dual conics and extract ``(center, covariance, ok)``.

    ``ok`` flags conics whose 2x2 covariance block is positive-definite.
    """
    Cstar = np.asarray(Cstar, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        C = Cstar / (-Cstar[..., 2:3, 2:3])
    mu = -C[..., :2, 2]
    S = C[..., :2, :2] + mu[..., :, None] * mu[..., None, :]
    S = 0.5 * (S + np.swapaxes(S, -1, -2))
    det = S[..., 0, 0] * S[..., 1, 1] - S[..., 0, 1] ** 2
    ok = np.isfinite(det) & (S[..., 0, 0] > 0) & (det > 0)
    return mu, S, ok


def project_quadrics_batch(Qstar, R, t, K: CameraIntrinsics):
    """Project stacked ``(N, 4, 4)`` dual quadrics.

    Returns ``(centers, covariances, ok)``; ``ok`` is false for quadrics whose
    centre is behind the camera or whose image is not a proper ellipse.
    """
    P = K.matrix @ np.hstack([R, np.asarray(t, dtype=float)[:, None]])
    Cstar = np.einsum("ij,njk,lk->nil", P, Qstar, P)
    centers3 = Qstar[:, :3, 3] / -Qstar[:, 3:4, 3]
    depth = centers3 @ R[2] + t[2]
    mu, S, ok = conic_to_ellipse_batch(Cstar)
    return mu, S, ok & (depth > MIN_DEPTH)


def project_quadric(q: DualQuadric, T: PoseSE3, K: CameraIntrinsics) -> Ellipse2D:
    depth = transform_point(T, q.position)[2]
    if not depth > MIN_DEPTH:
        raise PointBehindCamera(f"quadric centre depth {depth:.3g} <= {MIN_DEPTH}")
    P = projection_matrix(T, K)
    Cstar = P @ q.matrix() @ P.T
    mu, S, ok = conic_to_ellipse_batch(Cstar[None])
    if not ok[0]:
        raise DegenerateConic("projected quadric is not a proper ellipse")
    return Ellipse2D(mu[0], S[0])


def inscribed_ellipse(bbox) -> Ellipse2D:
    x0, y0, x1, y1 = (float(v) for v in bbox)
    w, h = x1 - x0, y1 - y0
    if not (w > 0 and h > 0):
        raise EmptyBox(f"box {bbox!r} has non-positive extent")
    return Ellipse2D([(x0 + x1) / 2, (y0 + y1) / 2], np.diag([(w / 2) ** 2, (h / 2) ** 2]))


def ellipse_bboxes(centers, covariances):
    half = np.sqrt(np.stack([covariances[..., 0, 0], covariances[..., 1, 1]], axis=-1))
    return np.concatenate([centers - half, centers + half], axis=-1)


def box_iou(a, b):
    """IoU of boxes ``(..., 4)`` given as ``(x0, y0, x1, y1)``; broadcasts."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    iw = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0, None)
    ih = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0, None)
    inter = iw * ih
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
    union = area_a + area_b - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / union, 0.0)


# --------------------------------------------------------------------------
# Wasserstein
# --------------------------------------------------------------------------


def _sqrtm_spd(S):
    """Square root and inverse square root of stacked SPD matrices."""
    w, V = np.linalg.eigh(S)
    r = np.sqrt(np.clip(w, EIG_FLOOR, None))
    Vt = np.swapaxes(V, -1, -2)
    root = (V * r[..., None, :]) @ Vt
    inv_root = (V / r[..., None, :]) @ Vt
    return root, inv_root


def bures_sq_batch(S1, S2):
    """Covariance part of the squared W2 distance.

    Evaluated as ``||S1^(1/2) - S1^(-1/2) (S1^(1/2) S2 S1^(1/2))^(1/2)||_F^2``,
    the cost of the optimal linear transport map, which stays accurate when
    the two covariances nearly coincide (no trace cancellation). Identical
    covariances give exactly zero.
    """
    S1 = np.asarray(S1, dtype=float)
    S2 = np.asarray(S2, dtype=float)
    root1, inv_root1 = _sqrtm_spd(S1)
    M = root1 @ S2 @ root1
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    rootM, _ = _sqrtm_spd(M)
    D = root1 - inv_root1 @ rootM
    same = np.all(S1 == S2, axis=(-2, -1))
    return np.where(same, 0.0, np.sum(D * D, axis=(-2, -1)))


def wasserstein2_sq_batch(mu1, S1, mu2, S2):
    d = np.asarray(mu1, dtype=float) - np.asarray(mu2, dtype=float)
    return np.sum(d * d, axis=-1) + bures_sq_batch(S1, S2)


def _check_spd(S):
    if np.linalg.eigvalsh(0.5 * (S + S.T))[0] <= 0:
        raise DegenerateConic("covariance is not positive-definite")


def wasserstein2(e1: Ellipse2D, e2: Ellipse2D) -> float:
    _check_spd(e1.covariance)
    _check_spd(e2.covariance)
    return float(np.sqrt(wasserstein2_sq_batch(e1.center, e1.covariance, e2.center, e2.covariance)))
