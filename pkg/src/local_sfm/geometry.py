"""Pinhole cameras, rigid poses and the epipolar primitives behind the Hough bounds.

Conventions
-----------
A pose ``[R | t]`` maps root (world) coordinates into the camera frame,
``X_cam = R @ X_world + t``.  Pixels are ``(u, v)`` with ``u`` along the image
columns.  Depth always means the z coordinate in the camera frame.

The root frame is represented by an identity :class:`NormalizedPose` with a
scale of zero, which lets every ordered frame pair share the same relative
pose formula.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DegenerateTranslation, IllConditioned, InputError, NonPositiveDepth

logger = logging.getLogger(__name__)

_ORTHO_TOL = 1e-9
_MIN_DEPTH = 1e-9
_MIN_TRANSLATION = 1e-12
_MIN_DENOM = 1e-12


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics for one frame, all values in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InputError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InputError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def scaled(self, factor: float) -> "CameraIntrinsics":
        """Intrinsics of the same camera resampled by ``factor`` (pixel-centre aligned)."""
        return CameraIntrinsics(
            self.fx * factor,
            self.fy * factor,
            (self.cx + 0.5) * factor - 0.5,
            (self.cy + 0.5) * factor - 0.5,
            int(round(self.width * factor)),
            int(round(self.height * factor)),
        )

    def to_dict(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(
            float(d["fx"]),
            float(d["fy"]),
            float(d["cx"]),
            float(d["cy"]),
            int(d["width"]),
            int(d["height"]),
        )


def _check_rotation(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64).reshape(3, 3)
    if np.abs(R.T @ R - np.eye(3)).max() > _ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
        raise InputError("matrix is not a proper rotation")
    return R


@dataclass(frozen=True, eq=False)
class NormalizedPose:
    """Rotation plus unit translation direction; the scale is left free."""

    R: np.ndarray
    t_bar: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", _check_rotation(self.R))
        t = np.asarray(self.t_bar, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(t) - 1.0) > _ORTHO_TOL:
            raise InputError("translation direction must have unit norm")
        object.__setattr__(self, "t_bar", t)

    @classmethod
    def identity(cls) -> "NormalizedPose":
        return cls(np.eye(3), np.array([0.0, 0.0, 1.0]))

    @classmethod
    def from_unnormalized(cls, R: np.ndarray, t: np.ndarray) -> "NormalizedPose":
        R = orthonormalize(R)
        t = np.asarray(t, dtype=np.float64)
        return cls(R, t / np.linalg.norm(t))

    def with_scale(self, scale: float) -> "ScaledPose":
        """Combine the direction with a metric magnitude."""
        return ScaledPose(self.R, scale * self.t_bar)


@dataclass(frozen=True, eq=False)
class ScaledPose:
    """Metric pose: rotation and translation in meters."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", _check_rotation(self.R))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))

    @classmethod
    def identity(cls) -> "ScaledPose":
        return cls(np.eye(3), np.zeros(3))

    def transform(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points) @ self.R.T + self.t

    def inverse(self) -> "ScaledPose":
        return ScaledPose(self.R.T, -self.R.T @ self.t)

    def compose(self, other: "ScaledPose") -> "ScaledPose":
        """``self ∘ other``: apply ``other`` first."""
        return ScaledPose(self.R @ other.R, self.R @ other.t + self.t)

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t


@dataclass(frozen=True, eq=False)
class EpipolarSegment:
    """Chord of an epipolar line clipped by the inlier circle."""

    line: np.ndarray
    p_start: np.ndarray = field(default_factory=lambda: np.full(2, np.nan))
    p_end: np.ndarray = field(default_factory=lambda: np.full(2, np.nan))
    valid: bool = False


class RelativePose(NamedTuple):
    """Relative motion from frame i to frame j, ``X_j = R X_i + scale * t_bar``."""

    R: np.ndarray
    scale: float
    t_bar: np.ndarray
    degenerate: bool = False


# ---------------------------------------------------------------------------
# small SO(3) helpers


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=np.float64)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def orthonormalize(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=np.float64))
    R = U @ Vt
    if np.linalg.det(R) < 0:
        R = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
    return R


def rodrigues(rotvec: np.ndarray) -> np.ndarray:
    rotvec = np.asarray(rotvec, dtype=np.float64)
    theta = np.linalg.norm(rotvec)
    if theta < 1e-15:
        return np.eye(3) + skew(rotvec)
    k = skew(rotvec / theta)
    return np.eye(3) + np.sin(theta) * k + (1.0 - np.cos(theta)) * (k @ k)


def random_rotation(rng: np.random.Generator, max_angle: float = np.pi) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return rodrigues(axis * rng.uniform(0.0, max_angle))


def rotation_angle_deg(R_a: np.ndarray, R_b: np.ndarray) -> float:
    """Geodesic distance between two rotations in degrees."""
    c = (np.trace(R_a @ R_b.T) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def vector_angle_deg(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def look_at(center: np.ndarray, target: np.ndarray, down=(0.0, 1.0, 0.0)) -> ScaledPose:
    """World-to-camera pose of a camera at ``center`` looking at ``target`` (image y along ``down``)."""
    center = np.asarray(center, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - center
    z /= np.linalg.norm(z)
    x = np.cross(np.asarray(down, dtype=np.float64), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return ScaledPose(R, -R @ center)


# ---------------------------------------------------------------------------
# projection


def project(pose: ScaledPose, K: CameraIntrinsics, point3d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project world point(s) into a camera.

    Returns ``(pixel, depth)``; broadcasts over a leading axis of points.
    Raises :class:`NonPositiveDepth` if any transformed depth is ``<= 1e-9``.
    """
    X = pose.transform(np.asarray(point3d, dtype=np.float64))
    depth = X[..., 2]
    if np.any(depth <= _MIN_DEPTH):
        raise NonPositiveDepth("point lies behind or on the camera plane")
    u = K.fx * X[..., 0] / depth + K.cx
    v = K.fy * X[..., 1] / depth + K.cy
    return np.stack([u, v], axis=-1), depth


def backproject(pose: ScaledPose, K: CameraIntrinsics, pixel: np.ndarray, depth) -> np.ndarray:
    """Lift pixel(s) at the given depth back to world coordinates."""
    pixel = np.asarray(pixel, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise NonPositiveDepth("backprojection needs a positive depth")
    x = (pixel[..., 0] - K.cx) / K.fx
    y = (pixel[..., 1] - K.cy) / K.fy
    X_cam = np.stack([x * depth, y * depth, depth], axis=-1)
    return (X_cam - pose.t) @ pose.R


def pixel_rays(K: CameraIntrinsics, pixels: np.ndarray) -> np.ndarray:
    """Camera-frame ray directions with unit z (so the ray parameter is depth)."""
    pixels = np.asarray(pixels, dtype=np.float64)
    return np.stack(
        [(pixels[..., 0] - K.cx) / K.fx, (pixels[..., 1] - K.cy) / K.fy, np.ones(pixels.shape[:-1])],
        axis=-1,
    )


# ---------------------------------------------------------------------------
# two-view relations


def relative_pose(pose_i: NormalizedPose, s_i: float, pose_j: NormalizedPose, s_j: float) -> RelativePose:
    """Relative motion ``P_j P_i^-1`` of two scaled normalized poses.

    A vanishing combined translation (pure rotation) is returned with
    ``degenerate=True`` and a logged flag instead of raising.
    """
    if s_i < 0 or s_j < 0 or (s_i == 0 and s_j == 0):
        raise InputError("scales must be non-negative and not both zero")
    R_ij = pose_j.R @ pose_i.R.T
    t = -s_i * (R_ij @ pose_i.t_bar) + s_j * pose_j.t_bar
    s_ij = float(np.linalg.norm(t))
    if s_ij < _MIN_TRANSLATION:
        logger.debug("relative pose is a pure rotation (|t| = %.3g)", s_ij)
        return RelativePose(R_ij, 0.0, np.array([0.0, 0.0, 1.0]), True)
    return RelativePose(R_ij, s_ij, t / s_ij, False)


def epipolar_line(
    rel: RelativePose, K: CameraIntrinsics, pixel_i: np.ndarray, K_j: CameraIntrinsics | None = None
) -> np.ndarray:
    """Epipolar line in frame j of ``pixel_i``, normalized so ``(l1, l2)`` is unit length."""
    if rel.degenerate:
        raise DegenerateTranslation("epipolar geometry undefined for a pure rotation")
    K_j = K if K_j is None else K_j
    p = np.array([pixel_i[0], pixel_i[1], 1.0])
    line = K_j.inverse.T @ skew(rel.t_bar) @ rel.R @ K.inverse @ p
    n = np.hypot(line[0], line[1])
    if n < _MIN_TRANSLATION:
        raise DegenerateTranslation("pixel maps onto the epipole; its epipolar line vanishes")
    return line / n


def pure_rotation_pixel(
    rel: RelativePose, K: CameraIntrinsics, pixel_i: np.ndarray, K_j: CameraIntrinsics | None = None
) -> np.ndarray:
    """Pixel reached under the rotation alone; every epipolar line of ``pixel_i`` passes through it."""
    K_j = K if K_j is None else K_j
    h = K_j.matrix @ rel.R @ K.inverse @ np.array([pixel_i[0], pixel_i[1], 1.0])
    return h[:2] / h[2]


def line_circle_intersect(
    line: np.ndarray, center: np.ndarray, radius: float, origin: np.ndarray | None = None
) -> EpipolarSegment:
    """Chord of ``line`` inside the circle.

    Endpoints are ordered along the line direction ``(-l2, l1)``, or by
    increasing distance from ``origin`` when given.  Since the inverse scale
    map grows with the distance from the pure-rotation pixel, passing that
    pixel as ``origin`` orders the endpoints by ascending scale.
    """
    if radius <= 0:
        raise InputError("radius must be positive")
    line = np.asarray(line, dtype=np.float64)
    n = np.hypot(line[0], line[1])
    line = line / n
    center = np.asarray(center, dtype=np.float64)
    dist = line[0] * center[0] + line[1] * center[1] + line[2]
    if abs(dist) > radius:
        return EpipolarSegment(line)
    foot = center - dist * line[:2]
    half = np.sqrt(max(radius * radius - dist * dist, 0.0))
    direction = np.array([-line[1], line[0]])
    p_a = foot - half * direction
    p_b = foot + half * direction
    if origin is not None:
        origin = np.asarray(origin, dtype=np.float64)
        if np.linalg.norm(p_a - origin) > np.linalg.norm(p_b - origin):
            p_a, p_b = p_b, p_a
    return EpipolarSegment(line, p_a, p_b, True)


def line_sphere_intersect(
    ray_origin: np.ndarray, ray_dir: np.ndarray, center: np.ndarray, radius: float
) -> tuple[np.ndarray, np.ndarray, bool]:
    """Entry and exit points of the line ``origin + t * dir`` through a sphere (ascending ``t``)."""
    if radius <= 0:
        raise InputError("radius must be positive")
    o = np.asarray(ray_origin, dtype=np.float64)
    d = np.asarray(ray_dir, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise InputError("ray direction must be unit length")
    oc = o - np.asarray(center, dtype=np.float64)
    b = oc @ d
    disc = b * b - (oc @ oc - radius * radius)
    if disc < 0:
        nan = np.full(3, np.nan)
        return nan, nan, False
    root = np.sqrt(disc)
    return o + (-b - root) * d, o + (-b + root) * d, True


def scale_from_projection(
    rel: RelativePose,
    adjusted_depth: float,
    pixel_i: np.ndarray,
    target_pixel: np.ndarray,
    K: CameraIntrinsics,
    K_j: CameraIntrinsics | None = None,
) -> float:
    """Translation magnitude that moves ``pixel_i`` (at ``adjusted_depth``) onto ``target_pixel``.

    Closed form from the u-axis projection equation, switching to the v-axis
    form when its denominator has the larger magnitude.  Only ``rel.R`` and
    ``rel.t_bar`` are used; the returned value replaces ``rel.scale``.
    """
    K_j = K if K_j is None else K_j
    M = K_j.matrix @ rel.R @ K.inverse
    kt = K_j.matrix @ rel.t_bar
    p = np.array([pixel_i[0], pixel_i[1], 1.0])
    qx, qy = float(target_pixel[0]), float(target_pixel[1])
    den_x = kt[2] * qx - kt[0]
    den_y = kt[2] * qy - kt[1]
    if max(abs(den_x), abs(den_y)) < _MIN_DENOM:
        raise IllConditioned("target pixel sits on the epipole")
    w = M[2] @ p
    if abs(den_x) >= abs(den_y):
        return float(adjusted_depth * (M[0] @ p - qx * w) / den_x)
    return float(adjusted_depth * (M[1] @ p - qy * w) / den_y)
