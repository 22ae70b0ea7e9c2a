"""Hough accumulators turning per-pair inlier counting into matrix lookups.

For an ordered pair ``(i, j)`` with fixed normalized poses, the relative
translation direction is a positive combination of two limit directions:
``t_bar_j`` (``s_j`` dominates) and ``-R_ij t_bar_i`` (``s_i`` dominates).  A
row of the accumulator fixes the angle ``y`` of the relative direction from
``t_bar_j`` along that arc; a column fixes ``x = s_ij / r_i``.  For every
sampled pixel and row, the values of ``x`` that put the reprojection inside
the inlier circle form one interval, so the accumulator is a sum of row-wise
interval indicators.

Pairs that touch the root frame have a single relative direction and only
their first row is populated.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .errors import DegeneratePair, InputError
from .frames import PairSamples
from .geometry import (
    CameraIntrinsics,
    NormalizedPose,
    RelativePose,
    line_circle_intersect,
    pure_rotation_pixel,
    scale_from_projection,
)

logger = logging.getLogger(__name__)

DEFAULT_RESOLUTION = (100, 200)
_TINY = 1e-12


@dataclass(eq=False)
class HoughMatrix:
    """Discretized inlier-count accumulator for one ordered frame pair."""

    grid: np.ndarray  # (Y, X) int32
    x_max: float
    theta_max: float
    frame_pair: tuple[int, int]
    pixel_count: int
    rotation: np.ndarray  # R_ij
    direction_start: np.ndarray  # t_bar_j, y = 0
    direction_end: np.ndarray  # -R_ij t_bar_i, y = theta_max
    saturated: int = 0

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def single_row(self) -> bool:
        return self.theta_max == 0.0

    def row_direction(self, row: int) -> np.ndarray:
        return arc_direction(self.direction_start, self.direction_end, self.theta_max, row_center(row, self))


@dataclass(frozen=True)
class HoughCoordinates:
    x: float  # synthesized translation magnitude s_ij / r_i (meters)
    y: float  # angle of t_bar_ij from t_bar_j (radians)


def row_center(row: int, H: HoughMatrix) -> float:
    if H.single_row:
        return 0.0
    return (row + 0.5) * H.theta_max / H.grid.shape[0]


def arc_direction(start: np.ndarray, end: np.ndarray, theta_max: float, y: float) -> np.ndarray:
    """Unit vector at angle ``y`` from ``start`` on the great arc towards ``end``."""
    if theta_max == 0.0:
        return start.copy()
    s = math.sin(theta_max)
    return (math.sin(theta_max - y) * start + math.sin(y) * end) / s


def pair_limits(pose_i: NormalizedPose, pose_j: NormalizedPose, i_is_root: bool, j_is_root: bool):
    """Rotation, arc endpoints and angular extent for an ordered pair."""
    R_ij = pose_j.R @ pose_i.R.T
    end = -R_ij @ pose_i.t_bar
    start = pose_j.t_bar
    if i_is_root:
        return R_ij, start.copy(), start.copy(), 0.0
    if j_is_root:
        return R_ij, end.copy(), end.copy(), 0.0
    theta = float(np.arccos(np.clip(start @ end, -1.0, 1.0)))
    if math.sin(theta) < 1e-9:
        # the two limits are (anti)parallel: only one direction is reachable
        return R_ij, start.copy(), start.copy(), 0.0
    return R_ij, start.copy(), end.copy(), theta


def hough_coordinates(
    pose_i: NormalizedPose,
    s_i: float,
    r_i: float,
    pose_j: NormalizedPose,
    s_j: float,
    theta_max: float,
) -> HoughCoordinates:
    """Map scales and the source adjustment of a pair to accumulator coordinates.

    Pass ``s = 0`` for the root frame.
    """
    R_ij = pose_j.R @ pose_i.R.T
    t = -s_i * (R_ij @ pose_i.t_bar) + s_j * pose_j.t_bar
    s_ij = float(np.linalg.norm(t))
    if theta_max == 0.0 or s_ij < _TINY:
        return HoughCoordinates(s_ij / r_i, 0.0)
    y = float(np.arccos(np.clip(t @ pose_j.t_bar / s_ij, -1.0, 1.0)))
    return HoughCoordinates(s_ij / r_i, y)


# ---------------------------------------------------------------------------
# reference (scalar) bounds


def _interval_from_candidates(cands: list[float]) -> tuple[float, float, bool]:
    if not cands:
        return math.nan, math.nan, False
    return min(cands), max(cands), True


def pixel_bounds(
    rel: RelativePose,
    pixel_i: np.ndarray,
    pixel_j: np.ndarray,
    depth_i: float,
    lambda_2d: float,
    K: CameraIntrinsics,
    K_j: CameraIntrinsics | None = None,
) -> tuple[float, float, bool]:
    """Interval of ``s_ij / r_i`` whose reprojection of ``pixel_i`` lands within ``lambda_2d`` of ``pixel_j``.

    ``depth_i`` is the unadjusted depth.  Only the direction of ``rel`` is
    used.  The interval is additionally clipped to scales that keep the point
    in front of camera j.  Returns ``(J_min, J_max, valid)``; ``J_max`` may be
    ``inf`` when the epipole itself lies inside the circle.
    """
    K_j = K if K_j is None else K_j
    M = K_j.matrix @ rel.R @ K.inverse
    kt = K_j.matrix @ rel.t_bar
    A = M @ np.array([pixel_i[0], pixel_i[1], 1.0])
    line = np.cross(kt, A)
    if math.hypot(line[0], line[1]) < _TINY:
        return math.nan, math.nan, False
    dw = depth_i * A[2]
    z = kt[2]
    if dw > 0:
        lo_v, lo_open = 0.0, False
        hi_v = math.inf if z >= 0 else dw / -z
    elif z > 0:
        lo_v, lo_open, hi_v = -dw / z, True, math.inf
    else:
        return math.nan, math.nan, False

    q_rot = pure_rotation_pixel(rel, K, pixel_i, K_j) if abs(A[2]) > _TINY else None
    seg = line_circle_intersect(line, pixel_j, lambda_2d, origin=q_rot)
    if not seg.valid:
        return math.nan, math.nan, False

    def in_domain(s):
        if math.isinf(s):
            return math.isinf(hi_v)
        above = s > lo_v if lo_open else s >= lo_v
        return above and s < hi_v

    def on_chord(q):
        d = seg.p_end - seg.p_start
        tau = (q - seg.p_start) @ d
        return -1e-12 <= tau <= d @ d + 1e-12

    cands = []
    for q in (seg.p_start, seg.p_end):
        try:
            s = scale_from_projection(rel, depth_i, pixel_i, q, K, K_j)
        except Exception:  # endpoint on the epipole
            s = math.inf
        if in_domain(s):
            cands.append(s)
    if dw > 0 and q_rot is not None and on_chord(q_rot):
        cands.append(0.0)
    if z > 0 and on_chord(kt[:2] / z):
        cands.append(math.inf)
    return _interval_from_candidates(cands)


def sphere_bounds(
    rel: RelativePose,
    pixel_i: np.ndarray,
    depth_i: float,
    pixel_j: np.ndarray,
    depth_j: float,
    lambda_3d: float,
    K: CameraIntrinsics,
    K_j: CameraIntrinsics | None = None,
) -> tuple[float, float, bool]:
    """Scale interval for the 3D score: backprojections within ``lambda_3d`` meters."""
    from .geometry import line_sphere_intersect

    K_j = K if K_j is None else K_j
    base = rel.R @ (depth_i * (K.inverse @ np.array([pixel_i[0], pixel_i[1], 1.0])))
    center = depth_j * (K_j.inverse @ np.array([pixel_j[0], pixel_j[1], 1.0]))
    p0, p1, ok = line_sphere_intersect(base, rel.t_bar, center, lambda_3d)
    if not ok:
        return math.nan, math.nan, False
    s0 = float((p0 - base) @ rel.t_bar)
    s1 = float((p1 - base) @ rel.t_bar)
    if s1 < 0:
        return math.nan, math.nan, False
    return max(s0, 0.0), s1, True


# ---------------------------------------------------------------------------
# kernels


@numba.njit(cache=True)
def _paint(diff, row, lo, hi, dx, n_cols):
    """Add one interval to a difference-encoded row; returns 1 if it saturated."""
    if hi < 0.0 or lo > hi:
        return 0
    c_lo = math.ceil(lo / dx - 0.5)
    if c_lo < 0:
        c_lo = 0
    sat = 0
    if math.isinf(hi) or hi / dx - 0.5 >= n_cols - 1:
        c_hi = n_cols - 1
        if c_lo > n_cols - 1:
            c_lo = n_cols - 1
            sat = 1
    else:
        c_hi = math.floor(hi / dx - 0.5)
    if c_lo > c_hi:
        return sat
    diff[row, c_lo] += 1
    diff[row, c_hi + 1] -= 1
    return sat


@numba.njit(cache=True)
def _paint_2d(A, depths, targets, kt_rows, lam, x_max, n_cols, diff):
    n_rows_active = kt_rows.shape[0]
    dx = x_max / n_cols
    saturated = 0
    for r in range(n_rows_active):
        ktx = kt_rows[r, 0]
        kty = kt_rows[r, 1]
        z = kt_rows[r, 2]
        for m in range(A.shape[0]):
            ax = A[m, 0]
            ay = A[m, 1]
            aw = A[m, 2]
            d = depths[m]
            # epipolar line = epipole x (rotated pixel), homogeneous
            l0 = kty * aw - z * ay
            l1 = z * ax - ktx * aw
            l2 = ktx * ay - kty * ax
            nrm = math.sqrt(l0 * l0 + l1 * l1)
            if nrm < 1e-12:
                continue
            l0 /= nrm
            l1 /= nrm
            l2 /= nrm
            cx = targets[m, 0]
            cy = targets[m, 1]
            dist = l0 * cx + l1 * cy + l2
            if abs(dist) > lam:
                continue
            fx = cx - dist * l0
            fy = cy - dist * l1
            half = math.sqrt(max(lam * lam - dist * dist, 0.0))
            dirx = -l1
            diry = l0
            dw = d * aw
            if dw > 0.0:
                lo_v = 0.0
                lo_open = False
                hi_v = math.inf if z >= 0.0 else dw / -z
            elif z > 0.0:
                lo_v = -dw / z
                lo_open = True
                hi_v = math.inf
            else:
                continue
            lo = math.inf
            hi = -math.inf
            for sgn in (-1.0, 1.0):
                qx = fx + sgn * half * dirx
                qy = fy + sgn * half * diry
                den_x = z * qx - ktx
                den_y = z * qy - kty
                if abs(den_x) >= abs(den_y):
                    if abs(den_x) < 1e-12:
                        s = math.inf
                    else:
                        s = d * (ax - qx * aw) / den_x
                else:
                    s = d * (ay - qy * aw) / den_y
                if math.isinf(s):
                    ok = math.isinf(hi_v)
                else:
                    ok = (s > lo_v if lo_open else s >= lo_v) and s < hi_v
                if ok:
                    lo = min(lo, s)
                    hi = max(hi, s)
            if dw > 0.0 and abs(aw) > 1e-12:
                tau = (ax / aw - fx) * dirx + (ay / aw - fy) * diry
                if abs(tau) <= half + 1e-12:
                    lo = min(lo, 0.0)
                    hi = max(hi, 0.0)
            if z > 0.0:
                tau = (ktx / z - fx) * dirx + (kty / z - fy) * diry
                if abs(tau) <= half + 1e-12:
                    lo = min(lo, math.inf)
                    hi = math.inf
            if lo > hi:
                continue
            saturated += _paint(diff, r, lo, hi, dx, n_cols)
    return saturated


@numba.njit(cache=True)
def _paint_3d(base, centers, dir_rows, lam, x_max, n_cols, diff):
    dx = x_max / n_cols
    saturated = 0
    for r in range(dir_rows.shape[0]):
        tx = dir_rows[r, 0]
        ty = dir_rows[r, 1]
        tz = dir_rows[r, 2]
        for m in range(base.shape[0]):
            ox = base[m, 0] - centers[m, 0]
            oy = base[m, 1] - centers[m, 1]
            oz = base[m, 2] - centers[m, 2]
            b = ox * tx + oy * ty + oz * tz
            disc = b * b - (ox * ox + oy * oy + oz * oz - lam * lam)
            if disc < 0.0:
                continue
            root = math.sqrt(disc)
            hi = -b + root
            if hi < 0.0:
                continue
            lo = max(-b - root, 0.0)
            saturated += _paint(diff, r, lo, hi, dx, n_cols)
    return saturated


# ---------------------------------------------------------------------------
# construction


def _prepare(pose_i, pose_j, frame_pair, root, resolution):
    if resolution[0] <= 0 or resolution[1] <= 0:
        raise InputError("Hough resolution must be positive")
    i, j = frame_pair
    R_ij, start, end, theta = pair_limits(pose_i, pose_j, i == root, j == root)
    n_rows = 1 if theta == 0.0 else resolution[0]
    rows = np.array(
        [arc_direction(start, end, theta, (r + 0.5) * theta / resolution[0]) for r in range(n_rows)]
    )
    return R_ij, start, end, theta, rows


def build_hough_matrix(
    pose_i: NormalizedPose,
    pose_j: NormalizedPose,
    samples: PairSamples,
    lambda_2d: float,
    resolution: tuple[int, int],
    x_max: float,
    K_i: CameraIntrinsics,
    K_j: CameraIntrinsics,
    root: int | None = None,
) -> HoughMatrix:
    """Accumulate the 2D (reprojection) inlier intervals of all samples of a pair."""
    if len(samples) < 1:
        raise DegeneratePair(f"pair {(samples.i, samples.j)} has no samples")
    R_ij, start, end, theta, rows = _prepare(pose_i, pose_j, (samples.i, samples.j), root, resolution)
    M = K_j.matrix @ R_ij @ K_i.inverse
    ph = np.column_stack([samples.pixels_i, np.ones(len(samples))])
    A = ph @ M.T
    kt_rows = rows @ K_j.matrix.T
    diff = np.zeros((resolution[0], resolution[1] + 1), dtype=np.int32)
    sat = _paint_2d(
        np.ascontiguousarray(A),
        np.ascontiguousarray(samples.depths_i),
        np.ascontiguousarray(samples.targets),
        np.ascontiguousarray(kt_rows),
        float(lambda_2d),
        float(x_max),
        int(resolution[1]),
        diff,
    )
    if sat:
        logger.debug("pair %s: %d intervals saturated beyond x_max", (samples.i, samples.j), sat)
    grid = np.cumsum(diff[:, :-1], axis=1, dtype=np.int32)
    return HoughMatrix(grid, float(x_max), theta, (samples.i, samples.j), len(samples), R_ij, start, end, int(sat))


def build_hough_matrix_3d(
    pose_i: NormalizedPose,
    pose_j: NormalizedPose,
    samples: PairSamples,
    lambda_3d: float,
    resolution: tuple[int, int],
    x_max: float,
    K_i: CameraIntrinsics,
    K_j: CameraIntrinsics,
    root: int | None = None,
) -> HoughMatrix:
    """Accumulate the 3D (backprojection distance) inlier intervals; adjustments are fixed to 1."""
    if len(samples) < 1:
        raise DegeneratePair(f"pair {(samples.i, samples.j)} has no samples")
    R_ij, start, end, theta, rows = _prepare(pose_i, pose_j, (samples.i, samples.j), root, resolution)
    ph = np.column_stack([samples.pixels_i, np.ones(len(samples))])
    base = (ph @ K_i.inverse.T) * samples.depths_i[:, None] @ R_ij.T
    th = np.column_stack([samples.targets, np.ones(len(samples))])
    centers = (th @ K_j.inverse.T) * samples.depths_j[:, None]
    keep = samples.depths_j > 0
    diff = np.zeros((resolution[0], resolution[1] + 1), dtype=np.int32)
    sat = _paint_3d(
        np.ascontiguousarray(base[keep]),
        np.ascontiguousarray(centers[keep]),
        np.ascontiguousarray(rows),
        float(lambda_3d),
        float(x_max),
        int(resolution[1]),
        diff,
    )
    grid = np.cumsum(diff[:, :-1], axis=1, dtype=np.int32)
    return HoughMatrix(grid, float(x_max), theta, (samples.i, samples.j), len(samples), R_ij, start, end, int(sat))


# ---------------------------------------------------------------------------
# indexing


def _continuous_index(H: HoughMatrix, x: float, y: float) -> tuple[float, float]:
    n_rows, n_cols = H.grid.shape
    fx = min(max(x, 0.0), H.x_max) / (H.x_max / n_cols) - 0.5
    if H.single_row:
        fy = 0.0
    else:
        fy = min(max(y, 0.0), H.theta_max) / (H.theta_max / n_rows) - 0.5
    return fx, fy


def index_score(H: HoughMatrix, coords: HoughCoordinates, mode: str = "nearest") -> float:
    """Read the accumulator at ``coords``; out-of-range coordinates are clamped."""
    n_rows, n_cols = H.grid.shape
    fx, fy = _continuous_index(H, coords.x, coords.y)
    if mode == "nearest":
        col = min(max(int(math.floor(fx + 0.5)), 0), n_cols - 1)
        row = min(max(int(math.floor(fy + 0.5)), 0), n_rows - 1)
        return int(H.grid[row, col])
    if mode == "bilinear":
        return bilinear_sample(H.grid, fx, fy, single_row=H.single_row)[0]
    raise ValueError(f"unknown mode {mode!r}")


def bilinear_sample(grid: np.ndarray, fx: float, fy: float, single_row: bool = False):
    """Bilinear value and its partial derivatives w.r.t. the continuous indices."""
    n_rows, n_cols = grid.shape
    fx = min(max(fx, 0.0), n_cols - 1.0)
    c0 = min(int(fx), n_cols - 2) if n_cols > 1 else 0
    ax = fx - c0
    c1 = min(c0 + 1, n_cols - 1)
    if single_row or n_rows == 1:
        g0, g1 = float(grid[0, c0]), float(grid[0, c1])
        return g0 + ax * (g1 - g0), g1 - g0, 0.0
    fy = min(max(fy, 0.0), n_rows - 1.0)
    r0 = min(int(fy), n_rows - 2)
    ay = fy - r0
    r1 = r0 + 1
    g00, g01 = float(grid[r0, c0]), float(grid[r0, c1])
    g10, g11 = float(grid[r1, c0]), float(grid[r1, c1])
    top = g00 + ax * (g01 - g00)
    bot = g10 + ax * (g11 - g10)
    value = top + ay * (bot - top)
    d_fx = (1 - ay) * (g01 - g00) + ay * (g11 - g10)
    d_fy = bot - top
    return value, d_fx, d_fy


def argmax_cell(H: HoughMatrix) -> tuple[HoughCoordinates, int]:
    """Centre coordinates and count of the strongest cell among the active rows."""
    active = H.grid[:1] if H.single_row else H.grid
    flat = int(np.argmax(active))
    row, col = divmod(flat, active.shape[1])
    dx = H.x_max / H.grid.shape[1]
    y = 0.0 if H.single_row else (row + 0.5) * H.theta_max / H.grid.shape[0]
    return HoughCoordinates((col + 0.5) * dx, y), int(active[row, col])


def dump_pgm(H: HoughMatrix, path: str | Path) -> None:
    """Write the accumulator as a 16-bit binary PGM plus a JSON sidecar."""
    path = Path(path)
    grid = np.clip(H.grid, 0, 65535).astype(">u2")
    rows, cols = grid.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n65535\n".encode("ascii"))
        fh.write(grid.tobytes())
    sidecar = {
        "x_max": H.x_max,
        "theta_max": H.theta_max,
        "M": H.pixel_count,
        "frame_pair": list(H.frame_pair),
        "saturated": H.saturated,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))
