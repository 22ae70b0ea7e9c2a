"""Synthetic frame windows with exact ground truth, plus brute-force reference scorers.

The generated scenes stand in for learned depth and correspondence
estimators.  World coordinates coincide with the root camera frame.

The brute-force scorers count inliers by literally projecting every sample
with :func:`local_sfm.geometry.project`; they share no code with the Hough
path and serve as its oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import InvalidSpec
from .frames import FrameSet, PairSamples, default_root
from .geometry import (
    CameraIntrinsics,
    NormalizedPose,
    ScaledPose,
    backproject,
    look_at,
    project,
    rodrigues,
)

GEOMETRIES = ("random-surfel-cloud", "textured-plane-stack")


@dataclass
class SceneSpec:
    n_frames: int = 5
    width: int = 320
    height: int = 240
    focal: float = 260.0
    geometry: str = "random-surfel-cloud"
    n_surfels: int = 5000
    surfel_radius: float = 0.04
    box_depth: tuple[float, float] = (1.0, 4.0)
    box_half_width: float = 2.0
    baseline: float = 0.15
    noise_px: float = 0.0
    outlier_frac: float = 0.0
    depth_scale_corruption: tuple[float, float] | None = None
    depth_noise: float = 0.0
    seed: int = 0

    def validate(self):
        if self.n_frames < 2:
            raise InvalidSpec("need at least two frames")
        if self.baseline <= 0:
            raise InvalidSpec("baseline must be positive")
        if self.geometry not in GEOMETRIES:
            raise InvalidSpec(f"unknown geometry {self.geometry!r}")
        if not 0 <= self.outlier_frac < 1:
            raise InvalidSpec("outlier_frac must lie in [0, 1)")
        if self.noise_px < 0 or self.depth_noise < 0:
            raise InvalidSpec("noise levels must be non-negative")
        if not 0 < self.box_depth[0] < self.box_depth[1]:
            raise InvalidSpec("box depth range must be positive and ordered")
        if self.depth_scale_corruption is not None:
            lo, hi = self.depth_scale_corruption
            if not 0 < lo <= hi:
                raise InvalidSpec("corruption range must be positive and ordered")


@dataclass
class SyntheticScene:
    spec: SceneSpec
    intrinsics: list[CameraIntrinsics]
    gt_poses: list[ScaledPose]
    gt_depths: list[np.ndarray]
    gt_correspondences: dict[tuple[int, int], np.ndarray]
    depths: list[np.ndarray]
    correspondences: dict[tuple[int, int], np.ndarray]
    depth_corruptions: np.ndarray
    outlier_masks: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)
    root: int = 0

    @property
    def n_frames(self) -> int:
        return len(self.intrinsics)

    @property
    def supports(self) -> list[int]:
        return [k for k in range(self.n_frames) if k != self.root]

    def gt_normalized(self, frame: int) -> NormalizedPose:
        if frame == self.root:
            return NormalizedPose.identity()
        pose = self.gt_poses[frame]
        return NormalizedPose(pose.R, pose.t / np.linalg.norm(pose.t))

    def gt_scale(self, frame: int) -> float:
        return 0.0 if frame == self.root else float(np.linalg.norm(self.gt_poses[frame].t))

    def gt_adjustment(self, frame: int) -> float:
        """Planted adjustment ``1 / g`` that undoes the depth corruption."""
        return float(1.0 / self.depth_corruptions[frame])

    def to_frameset(self) -> FrameSet:
        return FrameSet(
            intrinsics=list(self.intrinsics),
            depths=[d.astype(np.float32) for d in self.depths],
            correspondences={k: v.astype(np.float32) for k, v in self.correspondences.items()},
            root=self.root,
        )


# ---------------------------------------------------------------------------
# rendering


@numba.njit(cache=True)
def _render_spheres(centers_cam, radius, fx, fy, cx, cy, width, height, depth):
    r2 = radius * radius
    for k in range(centers_cam.shape[0]):
        X = centers_cam[k, 0]
        Y = centers_cam[k, 1]
        Z = centers_cam[k, 2]
        if Z <= radius + 1e-3:
            continue
        u = fx * X / Z + cx
        v = fy * Y / Z + cy
        # generous bound on the silhouette radius in pixels
        rad = 1.5 * max(fx, fy) * radius / (Z - radius) + 2.0
        u0 = max(int(u - rad), 0)
        u1 = min(int(u + rad) + 1, width - 1)
        v0 = max(int(v - rad), 0)
        v1 = min(int(v + rad) + 1, height - 1)
        cc = X * X + Y * Y + Z * Z
        for row in range(v0, v1 + 1):
            dy = (row - cy) / fy
            for col in range(u0, u1 + 1):
                dx = (col - cx) / fx
                a = dx * dx + dy * dy + 1.0
                b = dx * X + dy * Y + Z
                disc = b * b - a * (cc - r2)
                if disc < 0.0:
                    continue
                t = (b - math.sqrt(disc)) / a
                if t <= 0.0:
                    continue
                cur = depth[row, col]
                if cur == 0.0 or t < cur:
                    depth[row, col] = t


def _render_planes(planes, pose, K: CameraIntrinsics):
    """Depth of the nearest plane ``n . X = c`` inside its rectangular extent."""
    H, W = K.height, K.width
    cols, rows = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))
    rays_cam = np.stack([(cols - K.cx) / K.fx, (rows - K.cy) / K.fy, np.ones_like(cols)], axis=-1)
    origin = pose.center
    rays_world = rays_cam @ pose.R  # R^T applied to each ray
    depth = np.zeros((H, W))
    for normal, offset, lo, hi in planes:
        denom = rays_world @ normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (offset - origin @ normal) / denom
        pts = origin + t[..., None] * rays_world
        inside = (t > 0) & np.all((pts >= lo - 1e-9) & (pts <= hi + 1e-9), axis=-1)
        better = inside & ((depth == 0) | (t < depth))
        depth[better] = t[better]
    return depth


def _camera_poses(spec: SceneSpec, root: int, rng: np.random.Generator, center: np.ndarray):
    radius = float(center[2])
    step = spec.baseline / radius
    poses = []
    for k in range(spec.n_frames):
        phi = (k - root) * step
        pos = center + radius * np.array([-math.sin(phi), 0.0, -math.cos(phi)])
        if k != root:
            pos = pos + np.array([0.0, rng.uniform(-0.3, 0.3) * spec.baseline, 0.0])
        pose = look_at(pos, center)
        if k != root:
            roll = rodrigues(np.array([0.0, 0.0, rng.uniform(-0.02, 0.02)]))
            pose = ScaledPose(roll @ pose.R, roll @ pose.t)
        poses.append(pose)
    # express everything in the root camera frame
    to_root = poses[root].inverse()
    return [p.compose(to_root) for p in poses], poses[root]


def _correspondence_map(depth_i, pose_i, K_i, depth_j, pose_j, K_j):
    H, W = depth_i.shape
    cols, rows = np.meshgrid(np.arange(W, dtype=np.float64), np.arange(H, dtype=np.float64))
    corr = np.zeros((H, W, 3))
    valid = depth_i > 0
    pix = np.stack([cols[valid], rows[valid]], axis=1)
    X = backproject(pose_i, K_i, pix, depth_i[valid])
    Xj = pose_j.transform(X)
    front = Xj[:, 2] > 1e-6
    uv = np.full((len(X), 2), -1.0)
    uv[front], _ = project(pose_j, K_j, X[front])
    z = Xj[:, 2]
    ui = np.rint(uv[:, 0]).astype(int)
    vi = np.rint(uv[:, 1]).astype(int)
    inside = front & (uv[:, 0] >= 0) & (uv[:, 0] <= K_j.width - 1) & (uv[:, 1] >= 0) & (uv[:, 1] <= K_j.height - 1)
    seen = np.zeros(len(X), dtype=bool)
    d_j = depth_j[vi[inside], ui[inside]]
    seen[inside] = (d_j > 0) & (np.abs(d_j - z[inside]) <= 0.01 * z[inside])
    out = np.zeros((len(X), 3))
    out[:, :2] = uv
    out[:, 2] = seen.astype(np.float64)
    corr[valid] = out
    return corr


def _displace_outliers(corr, frac, K, rng):
    conf = corr[..., 2]
    idx = np.flatnonzero(conf.ravel() > 0)
    n_out = int(math.floor(frac * len(idx)))
    mask = np.zeros(conf.shape, dtype=bool)
    if n_out == 0:
        return mask
    chosen = np.sort(rng.choice(idx, size=n_out, replace=False))
    rows, cols = np.divmod(chosen, conf.shape[1])
    base = corr[rows, cols, :2].copy()
    mag = rng.uniform(20.0, 100.0, size=n_out)
    angle = rng.uniform(0.0, 2 * math.pi, size=n_out)
    for _ in range(16):
        new = base + mag[:, None] * np.stack([np.cos(angle), np.sin(angle)], axis=1)
        bad = (new[:, 0] < 0) | (new[:, 0] > K.width - 1) | (new[:, 1] < 0) | (new[:, 1] > K.height - 1)
        if not bad.any():
            break
        angle[bad] = rng.uniform(0.0, 2 * math.pi, size=int(bad.sum()))
    new = base + mag[:, None] * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    bad = (new[:, 0] < 0) | (new[:, 0] > K.width - 1) | (new[:, 1] < 0) | (new[:, 1] > K.height - 1)
    if bad.any():
        # aim through the image centre: any step up to twice the distance to it stays inside
        centre = np.array([(K.width - 1) / 2, (K.height - 1) / 2])
        to_centre = centre - base[bad]
        dist = np.linalg.norm(to_centre, axis=1)
        step = np.minimum(mag[bad], np.maximum(20.0, 2 * dist))
        unit = np.where(dist[:, None] > 10.0, to_centre / np.maximum(dist, 1e-12)[:, None], [1.0, 0.0])
        new[bad] = base[bad] + step[:, None] * unit
    corr[rows, cols, :2] = new
    mask[rows, cols] = True
    return mask


def generate_scene(spec: SceneSpec) -> SyntheticScene:
    """Render a seeded synthetic window; see :class:`SceneSpec` for the knobs."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n_frames
    root = default_root(n)
    K = CameraIntrinsics(spec.focal, spec.focal, spec.width / 2 - 0.5, spec.height / 2 - 0.5, spec.width, spec.height)
    center = np.array([0.0, 0.0, 0.5 * (spec.box_depth[0] + spec.box_depth[1])])
    poses, _ = _camera_poses(spec, root, rng, center)

    if spec.geometry == "random-surfel-cloud":
        w = spec.box_half_width
        lo = np.array([-w, -w, spec.box_depth[0]])
        hi = np.array([w, w, spec.box_depth[1]])
        surfels = rng.uniform(lo, hi, size=(spec.n_surfels, 3))
        gt_depths = []
        for pose in poses:
            depth = np.zeros((K.height, K.width))
            _render_spheres(pose.transform(surfels), spec.surfel_radius, K.fx, K.fy, K.cx, K.cy, K.width, K.height, depth)
            gt_depths.append(depth)
    else:
        planes = []
        for k, z in enumerate((3.0, 4.0, 5.0)):
            tilt = rng.uniform(-0.25, 0.25, size=2)
            normal = np.array([tilt[0], tilt[1], 1.0])
            normal /= np.linalg.norm(normal)
            half = 0.9 + 0.6 * k
            planes.append(
                (normal, normal @ np.array([0.0, 0.0, z]), np.array([-half - 2, -half - 2, 0.0]), np.array([half, half, 10.0]))
            )
        gt_depths = [_render_planes(planes, pose, K) for pose in poses]

    gt_corr = {}
    for i in range(n):
        for j in range(n):
            if i != j:
                gt_corr[(i, j)] = _correspondence_map(gt_depths[i], poses[i], K, gt_depths[j], poses[j], K)

    corr = {}
    outliers = {}
    for key in sorted(gt_corr):
        c = gt_corr[key].copy()
        valid = c[..., 2] > 0
        if spec.noise_px > 0:
            c[..., :2][valid] += rng.normal(0.0, spec.noise_px, size=(int(valid.sum()), 2))
        outliers[key] = _displace_outliers(c, spec.outlier_frac, K, rng)
        corr[key] = c

    g = np.ones(n)
    if spec.depth_scale_corruption is not None:
        lo_g, hi_g = spec.depth_scale_corruption
        for k in range(n):
            if k != root:
                g[k] = rng.uniform(lo_g, hi_g)
    depths = []
    for k in range(n):
        d = gt_depths[k] * g[k]
        if spec.depth_noise > 0:
            d = d * np.clip(1.0 + rng.normal(0.0, spec.depth_noise, size=d.shape), 0.5, 1.5)
        depths.append(d)

    return SyntheticScene(
        spec=spec,
        intrinsics=[K] * n,
        gt_poses=poses,
        gt_depths=gt_depths,
        gt_correspondences=gt_corr,
        depths=depths,
        correspondences=corr,
        depth_corruptions=g,
        outlier_masks=outliers,
        root=root,
    )


# ---------------------------------------------------------------------------
# brute-force reference scores


def _scaled(pose: NormalizedPose, s: float) -> ScaledPose:
    return ScaledPose(pose.R, s * pose.t_bar)


def brute_force_pair_2d(pose_i, s_i, r_i, pose_j, s_j, samples: PairSamples, lambda_2d, K_i, K_j) -> int:
    P_i = _scaled(pose_i, s_i)
    P_j = _scaled(pose_j, s_j)
    X = backproject(P_i, K_i, samples.pixels_i, r_i * samples.depths_i)
    z = P_j.transform(X)[:, 2]
    front = z > 1e-9
    if not front.any():
        return 0
    q, _ = project(P_j, K_j, X[front])
    err = np.linalg.norm(q - samples.targets[front], axis=1)
    return int(np.count_nonzero(err < lambda_2d))


def brute_force_pair_3d(pose_i, s_i, pose_j, s_j, samples: PairSamples, lambda_3d, K_i, K_j) -> int:
    ok = samples.depths_j > 0
    if not ok.any():
        return 0
    X_i = backproject(_scaled(pose_i, s_i), K_i, samples.pixels_i[ok], samples.depths_i[ok])
    X_j = backproject(_scaled(pose_j, s_j), K_j, samples.targets[ok], samples.depths_j[ok])
    return int(np.count_nonzero(np.linalg.norm(X_i - X_j, axis=1) < lambda_3d))


def brute_force_score_2d(group, scales, adjustments, samples, lambda_2d, intrinsics, root) -> int:
    """Literal inlier count summed over every sampled ordered pair.

    ``group``, ``scales`` and ``adjustments`` map frame index to normalized
    pose, scale and depth adjustment; the root entries are filled in here.
    """
    total = 0
    for (i, j), smp in samples.items():
        total += brute_force_pair_2d(
            _pose_or_identity(group, i, root),
            0.0 if i == root else scales[i],
            1.0 if i == root else adjustments[i],
            _pose_or_identity(group, j, root),
            0.0 if j == root else scales[j],
            smp,
            lambda_2d,
            intrinsics[i],
            intrinsics[j],
        )
    return total


def brute_force_score_3d(group, scales, samples, lambda_3d, intrinsics, root) -> int:
    total = 0
    for (i, j), smp in samples.items():
        total += brute_force_pair_3d(
            _pose_or_identity(group, i, root),
            0.0 if i == root else scales[i],
            _pose_or_identity(group, j, root),
            0.0 if j == root else scales[j],
            smp,
            lambda_3d,
            intrinsics[i],
            intrinsics[j],
        )
    return total


def _pose_or_identity(group, frame, root):
    return NormalizedPose.identity() if frame == root else group[frame]
