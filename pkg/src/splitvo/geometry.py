"""Geometric primitives shared by all estimators.

Conventions used across the package:

* Rotations are 3x3 orthonormal matrices with determinant +1. The tangent
  chart is right-multiplicative: ``R(theta) = R @ exp([theta]_x)``, so tangent
  vectors live in the body frame.
* A relative pose maps keyframe coordinates to current-frame coordinates:
  ``p_cur = R @ p_kf + u * s`` with ``u`` a unit translation direction and
  ``s`` a scalar magnitude (possibly negative).
* Bearings are unit 3-vectors from a camera center toward a feature.
* Unit directions are parametrized by a host rotation whose third column is
  the direction; the 2-dof chart perturbs the host about its first two body
  axes. This avoids polar singularities.
* ``vec()`` of a matrix is column-major throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_EPS_ORTHO = 1e-9
_EPS_UNIT = 1e-12


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix [v]_x such that [v]_x w = v x w."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def vec(m: np.ndarray) -> np.ndarray:
    """Column-major vectorization."""
    return np.asarray(m).flatten(order="F")


def normalized(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError("cannot normalize zero vector")
    return v / n


def so3_exp_matrix(theta: np.ndarray) -> np.ndarray:
    """Rodrigues formula, stable for small angles."""
    theta = np.asarray(theta, dtype=float)
    angle = np.linalg.norm(theta)
    k = skew(theta)
    if angle < 1e-8:
        # 2nd-order Taylor keeps orthonormality to machine precision here
        return np.eye(3) + k + 0.5 * (k @ k)
    a = math.sin(angle) / angle
    b = (1.0 - math.cos(angle)) / (angle * angle)
    return np.eye(3) + a * k + b * (k @ k)


def so3_log_matrix(rot: np.ndarray) -> np.ndarray:
    """Principal-branch logarithm of a rotation matrix.

    Raises ValueError for rotations at (or numerically at) angle pi where the
    branch is ambiguous.
    """
    rot = np.asarray(rot, dtype=float)
    cos_angle = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    angle = math.acos(cos_angle)
    if angle > math.pi - 1e-9:
        raise ValueError("log branch ambiguous: rotation angle at pi")
    w = np.array(
        [rot[2, 1] - rot[1, 2], rot[0, 2] - rot[2, 0], rot[1, 0] - rot[0, 1]]
    )
    if angle < 1e-8:
        return 0.5 * w
    return (angle / (2.0 * math.sin(angle))) * w


@dataclass(frozen=True)
class Rotation:
    """Element of SO(3), stored as a 3x3 matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("rotation matrix must be 3x3")
        drift = np.linalg.norm(m.T @ m - np.eye(3))
        if drift > 1e-6:
            raise ValueError("matrix is not orthonormal")
        if np.linalg.det(m) < 0.0:
            raise ValueError("matrix has negative determinant")
        if drift > 1e-12:
            # re-orthonormalize so long composition chains stay conditioned
            u, _, vt = np.linalg.svd(m)
            m = u @ vt
            if np.linalg.det(m) < 0.0:
                m = u @ np.diag([1.0, 1.0, -1.0]) @ vt
        else:
            m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(np.eye(3))

    @staticmethod
    def exp(theta: np.ndarray) -> "Rotation":
        return Rotation(so3_exp_matrix(theta))

    def log(self) -> np.ndarray:
        return so3_log_matrix(self.matrix)

    def compose(self, other: "Rotation") -> "Rotation":
        return Rotation(self.matrix @ other.matrix)

    def inverse(self) -> "Rotation":
        return Rotation(self.matrix.T)

    def retract(self, theta: np.ndarray) -> "Rotation":
        """Right-multiplicative update R exp([theta]_x)."""
        return Rotation(self.matrix @ so3_exp_matrix(theta))

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.matrix @ v

    def angle_deg(self) -> float:
        """Rotation angle in degrees.

        atan2 of the skew-part norm against the trace stays well conditioned
        for tiny angles, where acos of the trace loses half the digits.
        """
        m = self.matrix
        s = 0.5 * math.hypot(m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1])
        c = (np.trace(m) - 1.0) / 2.0
        return math.degrees(math.atan2(s, c))

    def angle_to(self, other: "Rotation") -> float:
        """Geodesic distance to another rotation, degrees."""
        return self.inverse().compose(other).angle_deg()

    def to_quaternion(self) -> np.ndarray:
        """Unit quaternion (w, x, y, z) with w >= 0."""
        m = self.matrix
        t = np.trace(m)
        if t > 0.0:
            r = math.sqrt(1.0 + t)
            w = 0.5 * r
            x = (m[2, 1] - m[1, 2]) / (2.0 * r)
            y = (m[0, 2] - m[2, 0]) / (2.0 * r)
            z = (m[1, 0] - m[0, 1]) / (2.0 * r)
        else:
            i = int(np.argmax(np.diag(m)))
            j, k = (i + 1) % 3, (i + 2) % 3
            r = math.sqrt(1.0 + m[i, i] - m[j, j] - m[k, k])
            q = np.empty(4)
            q[1 + i] = 0.5 * r
            q[0] = (m[k, j] - m[j, k]) / (2.0 * r)
            q[1 + j] = (m[j, i] + m[i, j]) / (2.0 * r)
            q[1 + k] = (m[k, i] + m[i, k]) / (2.0 * r)
            w, x, y, z = q
        quat = np.array([w, x, y, z])
        if quat[0] < 0.0:
            quat = -quat
        return quat / np.linalg.norm(quat)

    @staticmethod
    def from_quaternion(q: np.ndarray) -> "Rotation":
        q = np.asarray(q, dtype=float)
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-6:
            raise ValueError("quaternion is not unit norm")
        w, x, y, z = q / n
        m = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )
        return Rotation(m)


def so3_exp(theta: np.ndarray) -> Rotation:
    return Rotation.exp(theta)


def so3_log(rot: Rotation) -> np.ndarray:
    return rot.log()


def _orthonormal_host(u: np.ndarray) -> np.ndarray:
    """Rotation matrix whose third column is u (deterministic completion)."""
    u = normalized(np.asarray(u, dtype=float))
    # pick the coordinate axis least aligned with u for a stable complement
    pick = np.argmin(np.abs(u))
    a = np.zeros(3)
    a[pick] = 1.0
    b1 = normalized(np.cross(u, a))
    b2 = np.cross(u, b1)
    # columns (b2, b1, u) give det = +1: (b2 x b1) . u = -(b1 x b2) . u ...
    # verify directly instead of reasoning by hand:
    m = np.column_stack([b1, b2, u])
    if np.linalg.det(m) < 0.0:
        m = np.column_stack([b2, b1, u])
    return m


@dataclass(frozen=True)
class UnitDirection:
    """Unit 3-vector parametrized by a host rotation (third column)."""

    host: Rotation

    @property
    def vector(self) -> np.ndarray:
        return self.host.matrix[:, 2]

    @staticmethod
    def from_vector(u: np.ndarray) -> "UnitDirection":
        return UnitDirection(Rotation(_orthonormal_host(u)))

    def retract(self, beta: np.ndarray) -> "UnitDirection":
        """Update the host about its first two body axes: host exp([b1,b2,0])."""
        beta = np.asarray(beta, dtype=float)
        return UnitDirection(self.host.retract(np.array([beta[0], beta[1], 0.0])))

    def tangent_basis(self) -> np.ndarray:
        """3x2 Jacobian d(vector)/d(beta) at beta = 0.

        With u(beta) = R_u exp([(b1, b2, 0)]_x) e_z the columns are
        (-R_u e_y, R_u e_x).
        """
        m = self.host.matrix
        return np.column_stack([-m[:, 1], m[:, 0]])

    def flipped(self) -> "UnitDirection":
        """Direction -u, host rotated by pi about its first body axis."""
        return UnitDirection(
            Rotation(self.host.matrix @ np.diag([1.0, -1.0, -1.0]))
        )

    def angle_to(self, other: "UnitDirection") -> float:
        """Angle to another direction in degrees, ignoring sign."""
        c = abs(float(np.dot(self.vector, other.vector)))
        return math.degrees(math.acos(min(1.0, c)))


def direction_retract(direction: UnitDirection, beta: np.ndarray) -> UnitDirection:
    return direction.retract(beta)


@dataclass(frozen=True)
class RelativePose:
    """Keyframe-to-frame transform split as rotation, direction, magnitude.

    The full translation is ``t = magnitude * direction.vector`` and points
    map as ``p_cur = R p_kf + t``.
    """

    rotation: Rotation
    direction: UnitDirection
    magnitude: float

    @property
    def translation(self) -> np.ndarray:
        return self.magnitude * self.direction.vector

    @staticmethod
    def identity() -> "RelativePose":
        return RelativePose(Rotation.identity(), UnitDirection.from_vector([0, 0, 1]), 0.0)

    @staticmethod
    def from_rt(rotation: Rotation, t: np.ndarray) -> "RelativePose":
        t = np.asarray(t, dtype=float)
        s = float(np.linalg.norm(t))
        if s < 1e-15:
            return RelativePose(rotation, UnitDirection.from_vector([0, 0, 1]), 0.0)
        return RelativePose(rotation, UnitDirection.from_vector(t / s), s)

    def compose(self, other: "RelativePose") -> "RelativePose":
        """self o other: apply ``other`` first, then ``self``."""
        rot = self.rotation.compose(other.rotation)
        t = self.rotation.apply(other.translation) + self.translation
        return RelativePose.from_rt(rot, t)

    def inverse(self) -> "RelativePose":
        rot = self.rotation.inverse()
        return RelativePose.from_rt(rot, -rot.apply(self.translation))

    def apply(self, p: np.ndarray) -> np.ndarray:
        return self.rotation.apply(p) + self.translation

    def camera_center(self) -> np.ndarray:
        """Center of the current camera expressed in keyframe coordinates."""
        return -self.rotation.matrix.T @ self.translation


@dataclass(frozen=True)
class Bearing:
    """Unit observation ray."""

    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=float)
        if v.shape != (3,):
            raise ValueError("bearing must be a 3-vector")
        n = np.linalg.norm(v)
        if abs(n - 1.0) > 1e-6:
            raise ValueError("bearing is not unit norm")
        v = v / n
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)

    @staticmethod
    def from_vector(v: np.ndarray) -> "Bearing":
        return Bearing(normalized(np.asarray(v, dtype=float)))


@dataclass(frozen=True)
class CameraModel:
    """Calibrated camera.

    ``kind`` is "pinhole" or "spherical". Both project a forward point with
    the same tangent-plane formula; they differ in how reprojection errors
    between a predicted point and an observed bearing are measured (see
    :func:`reprojection_errors_px`): the spherical model measures them on the
    tangent plane of the observed bearing, which keeps the error meaningful
    over a wide field of view.
    """

    kind: str
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.kind not in ("pinhole", "spherical"):
            raise ValueError(f"unknown camera kind: {self.kind!r}")
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be positive")
        if not (0.0 <= self.cx <= self.width and 0.0 <= self.cy <= self.height):
            raise ValueError("principal point must lie inside the image")

    @staticmethod
    def spherical_default() -> "CameraModel":
        return CameraModel("spherical", 200.0, 200.0, 320.0, 240.0, 640, 480)


def project(cam: CameraModel, point: np.ndarray) -> np.ndarray:
    """Project a 3D point (camera frame) to pixels.

    Pinhole uses the standard perspective division; the spherical model maps
    the bearing onto the tangent plane at the optical axis scaled by the
    focal length, which coincides with the same formula. ``z <= 0`` points
    are rejected for both.
    """
    p = np.asarray(point, dtype=float)
    if np.linalg.norm(p) == 0.0:
        raise ValueError("degenerate point")
    if p[2] <= 0.0:
        raise ValueError("behind camera")
    return np.array(
        [cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy]
    )


def project_many(cam: CameraModel, points: np.ndarray) -> np.ndarray:
    """Vectorized :func:`project` without the per-point error checks."""
    points = np.asarray(points, dtype=float)
    z = points[:, 2]
    return np.column_stack(
        [cam.fx * points[:, 0] / z + cam.cx, cam.fy * points[:, 1] / z + cam.cy]
    )


def pixel_in_image(cam: CameraModel, px: np.ndarray) -> bool:
    return bool(0.0 <= px[0] < cam.width and 0.0 <= px[1] < cam.height)


def unproject(cam: CameraModel, px: np.ndarray) -> np.ndarray:
    """Unit bearing for a pixel (inverse of the tangent-plane projection)."""
    d = np.array([(px[0] - cam.cx) / cam.fx, (px[1] - cam.cy) / cam.fy, 1.0])
    return normalized(d)


def tangent_basis_many(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal tangent bases for rows of unit vectors."""
    v = np.asarray(vectors, dtype=float)
    pick = np.argmin(np.abs(v), axis=1)
    a = np.eye(3)[pick]
    b1 = np.cross(v, a)
    b1 /= np.linalg.norm(b1, axis=1, keepdims=True)
    b2 = np.cross(v, b1)
    return b1, b2


def reprojection_errors_px(
    cam: CameraModel, points: np.ndarray, observed: np.ndarray
) -> np.ndarray:
    """Pixel-space errors between predicted points and observed bearings.

    points: (n, 3) predictions in the camera frame; observed: (n, 3) unit
    bearings. Pinhole compares projected pixels directly. Spherical measures
    the predicted bearing in the tangent plane of each observed bearing,
    scaled by the focal lengths, so errors stay comparable to pinhole pixels
    across the whole field of view. Returns (n, 2).
    """
    points = np.asarray(points, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if cam.kind == "pinhole":
        return project_many(cam, points) - project_many(cam, observed)
    b1, b2 = tangent_basis_many(observed)
    z = np.einsum("ij,ij->i", points, observed)
    # keep the residual finite (and large) when a prediction swings behind
    z = np.where(np.abs(z) < 1e-12, 1e-12, z)
    x = np.einsum("ij,ij->i", points, b1) / z
    y = np.einsum("ij,ij->i", points, b2) / z
    return np.column_stack([cam.fx * x, cam.fy * y])


def add_pixel_noise_to_bearings(
    cam: CameraModel, bearings: np.ndarray, sigma_px: float, rng: np.random.Generator
) -> np.ndarray:
    """Perturb unit bearings by Gaussian pixel noise in their tangent planes."""
    if sigma_px == 0.0:
        return np.array(bearings, dtype=float)
    b = np.asarray(bearings, dtype=float)
    b1, b2 = tangent_basis_many(b)
    d = rng.normal(0.0, sigma_px, size=(b.shape[0], 2))
    noisy = b + (d[:, 0] / cam.fx)[:, None] * b1 + (d[:, 1] / cam.fy)[:, None] * b2
    return noisy / np.linalg.norm(noisy, axis=1, keepdims=True)


def sampson_distance(
    rotation: Rotation, direction: UnitDirection, f: Bearing, f_prime: Bearing
) -> float:
    """First-order epipolar distance for a bearing correspondence.

    Uses the essential form E = [u]_x R. The algebraic error
    ``eps = f'^T E f`` is divided by the norm of its gradient with respect to
    perturbations of both bearings constrained to their tangent planes, which
    yields an angular distance (radians). Falls back to |eps| if the gradient
    degenerates. Symmetric in the sign of u.
    """
    e = skew(direction.vector) @ rotation.matrix
    fv, fpv = f.vector, f_prime.vector
    eps = float(fpv @ e @ fv)
    g1 = e.T @ fpv
    g1 = g1 - (fv @ g1) * fv
    g2 = e @ fv
    g2 = g2 - (fpv @ g2) * fpv
    denom = math.sqrt(float(g1 @ g1 + g2 @ g2))
    if denom < 1e-12:
        return abs(eps)
    return abs(eps) / denom


def sampson_distances_sq(
    rotation: Rotation, direction: UnitDirection, f: np.ndarray, f_prime: np.ndarray
) -> np.ndarray:
    """Vectorized squared Sampson distances for (n, 3) bearing arrays."""
    e = skew(direction.vector) @ rotation.matrix
    ef = f @ e.T           # rows: E f_i
    etfp = f_prime @ e     # rows: E^T f'_i
    eps = np.einsum("ij,ij->i", f_prime, ef)
    g1 = etfp - np.einsum("ij,ij->i", f, etfp)[:, None] * f
    g2 = ef - np.einsum("ij,ij->i", f_prime, ef)[:, None] * f_prime
    denom = np.einsum("ij,ij->i", g1, g1) + np.einsum("ij,ij->i", g2, g2)
    out = np.where(denom < 1e-24, np.abs(eps), eps * eps / np.maximum(denom, 1e-24))
    return out


def parallax_angle(rotation: Rotation, f: Bearing, f_prime: Bearing) -> float:
    """Angle between the rotation-compensated rays R f and f', degrees."""
    a = rotation.apply(f.vector)
    b = f_prime.vector
    return math.degrees(math.atan2(np.linalg.norm(np.cross(a, b)), float(a @ b)))


def parallax_angles_deg(
    rotation: Rotation, f: np.ndarray, f_prime: np.ndarray
) -> np.ndarray:
    """Vectorized parallax for (n, 3) bearing arrays."""
    a = f @ rotation.matrix.T
    cr = np.cross(a, f_prime)
    dt = np.einsum("ij,ij->i", a, f_prime)
    return np.degrees(np.arctan2(np.linalg.norm(cr, axis=1), dt))


def triangulate_two_view(
    rotation: Rotation, t: np.ndarray, f: Bearing, f_prime: Bearing
) -> float:
    """Midpoint triangulation; returns the depth along the keyframe ray ``f``.

    ``(rotation, t)`` maps keyframe coordinates into the current frame
    (p_cur = R p_kf + t). Raises on near-parallel rays.
    """
    if parallax_angle(rotation, f, f_prime) < math.degrees(1e-4):
        raise ValueError("insufficient parallax")
    t = np.asarray(t, dtype=float)
    c2 = -rotation.matrix.T @ t          # second camera center, keyframe frame
    g = rotation.matrix.T @ f_prime.vector  # second ray direction, keyframe frame
    fv = f.vector
    # minimize || f d1 - (c2 + g d2) ||^2 over (d1, d2)
    a11 = float(fv @ fv)
    a12 = -float(fv @ g)
    a22 = float(g @ g)
    b1 = float(fv @ c2)
    b2 = -float(g @ c2)
    det = a11 * a22 - a12 * a12
    if abs(det) < 1e-18:
        raise ValueError("insufficient parallax")
    d1 = (a22 * b1 - a12 * b2) / det
    return float(d1)
