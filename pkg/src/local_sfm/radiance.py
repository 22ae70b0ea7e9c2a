"""Network-free frustum radiance field over the root camera.

The field is a voxel grid of pre-activation occupancies indexed by root pixel
and depth bin.  Depth is rendered by alpha compositing along rays whose
parameter is the depth of the emitting camera, and the grid is optimized so
that rendered points agree with every frame's depthmap and correspondences.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import InputError, RayMissesFrustum
from .frames import FrameSet
from .geometry import CameraIntrinsics, ScaledPose

logger = logging.getLogger(__name__)

LOW_OPACITY = 0.1
ACTIVATION = "softplus"
_MIN_Z = 1e-6


@dataclass
class FrustumField:
    """Occupancy grid ``(H_v, W_v, D_v)`` over the root frustum, indexed ``(v, u, w)``."""

    params: torch.Tensor
    depth_bins: np.ndarray
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        if self.params.ndim != 3:
            raise InputError("field grid must be three-dimensional")
        bins = np.asarray(self.depth_bins, dtype=np.float64)
        if len(bins) != self.params.shape[2]:
            raise InputError("need one depth bin per grid slice")
        if len(bins) < 2 or np.any(np.diff(bins) <= 0) or bins[0] <= 0:
            raise InputError("depth bins must be positive and strictly increasing")
        self.depth_bins = bins

    @classmethod
    def create(
        cls,
        intrinsics: CameraIntrinsics,
        shape: tuple[int, int, int],
        depth_range: tuple[float, float],
        dtype: torch.dtype = torch.float32,
    ) -> "FrustumField":
        """Near-transparent field: every bin starts at ``sigma * delta = 1 / D_v``."""
        H_v, W_v, D_v = (int(v) for v in shape)
        bins = np.linspace(depth_range[0], depth_range[1], D_v)
        delta = bins[1] - bins[0]
        init = float(np.log(np.expm1(1.0 / (D_v * delta))))
        params = torch.full((H_v, W_v, D_v), init, dtype=dtype)
        return cls(params, bins, intrinsics)

    @classmethod
    def for_frames(
        cls,
        frames: FrameSet,
        adjustments,
        shape: tuple[int, int, int],
        dtype: torch.dtype = torch.float32,
    ) -> "FrustumField":
        """Field whose bins span ``[0.8 min, 1.2 max]`` of the adjusted input depths."""
        lo, hi = np.inf, 0.0
        for f, depth in enumerate(frames.depths):
            valid = depth[depth > 0] * (1.0 if f == frames.root else float(adjustments[f]))
            if valid.size:
                lo = min(lo, float(valid.min()))
                hi = max(hi, float(valid.max()))
        if not hi > 0:
            raise InputError("no valid depth to bound the field")
        return cls.create(frames.intrinsics[frames.root], shape, (0.8 * lo, 1.2 * hi), dtype)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.params.shape)

    @property
    def bin_width(self) -> float:
        return float(self.depth_bins[1] - self.depth_bins[0])

    def sigma(self) -> torch.Tensor:
        return F.softplus(self.params)

    def plant_depth(self, depth: np.ndarray, thickness: float | None = None, occupancy: float = 1e4) -> None:
        """Plant an opaque shell at ``depth`` (root raster, 0 = empty column) for oracle tests.

        ``thickness`` in meters; ``None`` fills every bin behind the surface.
        """
        H_v, W_v, D_v = self.shape
        K = self.intrinsics
        rows = np.clip(np.rint((np.arange(H_v) + 0.5) * K.height / H_v - 0.5).astype(int), 0, K.height - 1)
        cols = np.clip(np.rint((np.arange(W_v) + 0.5) * K.width / W_v - 0.5).astype(int), 0, K.width - 1)
        d = np.asarray(depth, dtype=np.float64)[np.ix_(rows, cols)]
        w = (d - self.depth_bins[0]) / self.bin_width
        t = np.arange(D_v)[None, None, :]
        front = np.rint(w)[..., None]
        solid = (t >= front) & (d[..., None] > 0)
        if thickness is not None:
            solid &= t <= front + thickness / self.bin_width
        values = np.where(solid, occupancy, -occupancy)
        with torch.no_grad():
            self.params.copy_(torch.as_tensor(values, dtype=self.params.dtype))


@dataclass
class RayRender:
    """Composited depth of one ray."""

    depth: float
    weights: np.ndarray
    transmittance: np.ndarray
    tail: float
    low_opacity: bool


@dataclass
class RayBatch:
    depth: torch.Tensor
    weights: torch.Tensor
    transmittance: torch.Tensor
    opacity: torch.Tensor
    hits: torch.Tensor


def _trilinear(params: torch.Tensor, gv, gu, gw) -> torch.Tensor:
    """Trilinear read of the grid at continuous ``(v, u, w)`` indices, clamped at the border."""
    H_v, W_v, D_v = params.shape

    def norm(g, n):
        return g * (2.0 / max(n - 1, 1)) - 1.0

    grid = torch.stack([norm(gw, D_v), norm(gu, W_v), norm(gv, H_v)], dim=-1)
    out = F.grid_sample(
        params[None, None],
        grid.reshape(1, 1, -1, 1, 3),
        mode="bilinear",
        padding_mode="border",
        align_corners=True,
    )
    return out.reshape(gv.shape)


def _root_coordinates(field: FrustumField, points: torch.Tensor):
    """Continuous grid indices of root-frame points and the inside-volume mask."""
    K = field.intrinsics
    H_v, W_v, D_v = field.shape
    z = points[..., 2]
    zs = torch.where(z > _MIN_Z, z, torch.ones_like(z))
    u = K.fx * points[..., 0] / zs + K.cx
    v = K.fy * points[..., 1] / zs + K.cy
    gu = (u + 0.5) * (W_v / K.width) - 0.5
    gv = (v + 0.5) * (H_v / K.height) - 0.5
    gw = (z - field.depth_bins[0]) / field.bin_width
    inside = (
        (z > _MIN_Z)
        & (gu >= -0.5)
        & (gu <= W_v - 0.5)
        & (gv >= -0.5)
        & (gv <= H_v - 0.5)
        & (gw >= -0.5)
        & (gw <= D_v - 0.5)
    )
    return gv, gu, gw, inside


def render_rays(field: FrustumField, origins: torch.Tensor, directions: torch.Tensor) -> RayBatch:
    """Composite depth along ``origin + d_t * direction`` for a batch of rays.

    ``directions`` carry unit depth in the emitting camera, so ``d_t`` are that
    camera's depths.  Samples outside the root frustum are empty.
    """
    dtype = field.params.dtype
    bins = torch.as_tensor(field.depth_bins, dtype=dtype)
    delta = torch.cat([bins[1:] - bins[:-1], (bins[-1] - bins[-2]).reshape(1)])
    points = origins[:, None, :] + bins[None, :, None] * directions[:, None, :]
    gv, gu, gw, inside = _root_coordinates(field, points)
    sigma = F.softplus(_trilinear(field.params, gv, gu, gw)) * inside
    tau = sigma * delta
    # exclusive cumulative sum: a sample does not shadow itself
    before = torch.cumsum(tau, dim=1) - tau
    trans = torch.exp(-before)
    weights = trans * (1.0 - torch.exp(-tau))
    return RayBatch(
        depth=(weights * bins).sum(dim=1),
        weights=weights,
        transmittance=trans,
        opacity=weights.sum(dim=1),
        hits=inside.any(dim=1),
    )


def render_depth(
    field: FrustumField, origin, direction, K_root: CameraIntrinsics | None = None
) -> RayRender:
    """Render a single ray; raises :class:`RayMissesFrustum` if no sample enters the volume."""
    if K_root is not None and K_root != field.intrinsics:
        raise InputError("field was built for different root intrinsics")
    dtype = field.params.dtype
    o = torch.as_tensor(np.asarray(origin, dtype=np.float64), dtype=dtype).reshape(1, 3)
    r = torch.as_tensor(np.asarray(direction, dtype=np.float64), dtype=dtype).reshape(1, 3)
    with torch.no_grad():
        out = render_rays(field, o, r)
    if not bool(out.hits[0]):
        raise RayMissesFrustum("ray never enters the root frustum")
    weights = out.weights[0].double().numpy()
    opacity = float(weights.sum())
    return RayRender(
        depth=float(out.depth[0]),
        weights=weights,
        transmittance=out.transmittance[0].double().numpy(),
        tail=max(0.0, 1.0 - opacity),
        low_opacity=opacity < LOW_OPACITY,
    )


# ---------------------------------------------------------------------------
# multi-view consistency


class CameraRig:
    """Frozen metric poses and intrinsics as tensors; frame ``root`` is the world frame."""

    def __init__(self, poses: list[ScaledPose], intrinsics: list[CameraIntrinsics], dtype=torch.float32):
        self.n = len(poses)
        self.intrinsics = list(intrinsics)
        self.R = [torch.as_tensor(p.R, dtype=dtype) for p in poses]
        self.t = [torch.as_tensor(p.t, dtype=dtype) for p in poses]
        self.center = [torch.as_tensor(p.center, dtype=dtype) for p in poses]

    def to_camera(self, f: int, points: torch.Tensor) -> torch.Tensor:
        return points @ self.R[f].T + self.t[f]

    def project(self, f: int, points: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        X = self.to_camera(f, points)
        z = X[..., 2]
        zs = torch.where(z > _MIN_Z, z, torch.ones_like(z))
        K = self.intrinsics[f]
        uv = torch.stack([K.fx * X[..., 0] / zs + K.cx, K.fy * X[..., 1] / zs + K.cy], dim=-1)
        return uv, z

    def rays(self, f: int, uv: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """World origins and unit-depth directions of frame ``f`` pixels."""
        K = self.intrinsics[f]
        local = torch.stack(
            [(uv[:, 0] - K.cx) / K.fx, (uv[:, 1] - K.cy) / K.fy, torch.ones_like(uv[:, 0])], dim=1
        )
        return self.center[f].expand(len(uv), 3), local @ self.R[f]


def _inside(K: CameraIntrinsics, uv: torch.Tensor) -> torch.Tensor:
    return (uv[:, 0] >= 0) & (uv[:, 0] <= K.width - 1) & (uv[:, 1] >= 0) & (uv[:, 1] <= K.height - 1)


@dataclass
class RoundTrip:
    """Root rays re-rendered from every frame: the shared chain of both losses and verification."""

    pixels: torch.Tensor
    root_depth: torch.Tensor
    root_ok: torch.Tensor
    points: torch.Tensor
    hop_pixels: list[torch.Tensor]
    hop_depth: list[torch.Tensor]
    hop_points: list[torch.Tensor]
    hop_ok: list[torch.Tensor]


def round_trip(field: FrustumField, rig: CameraRig, root: int, pixels: torch.Tensor) -> RoundTrip:
    """Render root pixels, project into each frame and re-render from there."""
    o, r = rig.rays(root, pixels)
    base = render_rays(field, o, r)
    root_ok = base.hits & (base.opacity >= LOW_OPACITY) & (base.depth > _MIN_Z)
    points = o + base.depth[:, None] * r
    hop_pixels, hop_depth, hop_points, hop_ok = [], [], [], []
    for f in range(rig.n):
        q, z = rig.project(f, points)
        oi, ri = rig.rays(f, q)
        hop = render_rays(field, oi, ri)
        inside = _inside(rig.intrinsics[f], q.detach())
        ok = root_ok & (z > _MIN_Z) & inside & hop.hits & (hop.opacity >= LOW_OPACITY)
        hop_pixels.append(q)
        hop_depth.append(z)
        hop_points.append(oi + hop.depth[:, None] * ri)
        hop_ok.append(ok)
    return RoundTrip(pixels, base.depth, root_ok, points, hop_pixels, hop_depth, hop_points, hop_ok)


def _bilinear_lookup(image: torch.Tensor, q: torch.Tensor):
    """Bilinear and nearest reads of an ``(H, W, C)`` raster at pixel locations ``q``."""
    H, W = image.shape[:2]
    u, v = q[:, 0], q[:, 1]
    inside = (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
    u = u.clamp(0, W - 1)
    v = v.clamp(0, H - 1)
    u0 = u.detach().floor().clamp(max=W - 2).long()
    v0 = v.detach().floor().clamp(max=H - 2).long()
    fu = (u - u0)[:, None]
    fv = (v - v0)[:, None]
    corners = torch.stack([image[v0, u0], image[v0, u0 + 1], image[v0 + 1, u0], image[v0 + 1, u0 + 1]])
    bil = (
        corners[0] * (1 - fu) * (1 - fv)
        + corners[1] * fu * (1 - fv)
        + corners[2] * (1 - fu) * fv
        + corners[3] * fu * fv
    )
    near = image[v.detach().round().long(), u.detach().round().long()]
    return bil, near, corners, inside


class ConsistencyTargets:
    """Adjusted depthmaps and correspondence maps as tensors, sampled differentiably.

    Reads are bilinear on smooth neighbourhoods and fall back to the nearest
    pixel across depth discontinuities or correspondence seams.
    """

    def __init__(self, frames: FrameSet, adjustments, dtype=torch.float32, confidence_min: float = 0.2):
        self.confidence_min = confidence_min
        self.depths = []
        for f, d in enumerate(frames.depths):
            scale = 1.0 if f == frames.root else float(adjustments[f])
            self.depths.append(torch.as_tensor(np.asarray(d, dtype=np.float64) * scale, dtype=dtype)[..., None])
        self.correspondences = {
            k: torch.as_tensor(np.asarray(c, dtype=np.float64), dtype=dtype) for k, c in frames.correspondences.items()
        }

    def depth(self, f: int, q: torch.Tensor, max_rel_jump: float = 0.05) -> tuple[torch.Tensor, torch.Tensor]:
        bil, near, corners, inside = _bilinear_lookup(self.depths[f], q)
        lo = corners[..., 0].min(dim=0).values
        hi = corners[..., 0].max(dim=0).values
        smooth = (lo > 0) & (hi - lo <= max_rel_jump * lo)
        value = torch.where(smooth, bil[:, 0], near[:, 0])
        return value, inside & (value > 0)

    def correspondence(self, i: int, j: int, q: torch.Tensor, max_spread: float = 2.0):
        bil, near, corners, inside = _bilinear_lookup(self.correspondences[(i, j)], q)
        confident = (corners[..., 2] >= self.confidence_min).all(dim=0)
        spread = (corners[..., :2].max(dim=0).values - corners[..., :2].min(dim=0).values).max(dim=1).values
        smooth = confident & (spread <= max_spread)
        value = torch.where(smooth[:, None], bil[:, :2], near[:, :2])
        return value, inside & (smooth | (near[:, 2] >= self.confidence_min))


@dataclass
class LossTerms:
    depth: torch.Tensor
    correspondence: torch.Tensor
    depth_count: int
    correspondence_count: int
    masked: int


def triangulation_losses(
    field: FrustumField,
    frames: FrameSet,
    poses: list[ScaledPose],
    adjustments,
    pixels,
    confidence_min: float = 0.2,
    rig: CameraRig | None = None,
    targets: ConsistencyTargets | None = None,
) -> LossTerms:
    """Depth and two-hop correspondence consistency of root-rendered points.

    The depth term is the mean absolute difference, in meters, between each
    point's depth in frame ``i`` and that frame's adjusted depthmap.  The
    correspondence term is the mean L1 distance, in normalized image units,
    between the point re-rendered from frame ``i`` and projected into ``j``
    and the correspondence target of ``i -> j``.  Unusable hops are masked.
    """
    dtype = field.params.dtype
    rig = rig or CameraRig(poses, frames.intrinsics, dtype)
    targets = targets or ConsistencyTargets(frames, adjustments, dtype, confidence_min)
    pixels = torch.as_tensor(np.asarray(pixels, dtype=np.float64), dtype=dtype)
    trip = round_trip(field, rig, frames.root, pixels)
    zero = field.params.sum() * 0.0

    d_sum, d_cnt, masked = zero, 0, 0
    for f in range(frames.n_frames):
        target, valid = targets.depth(f, trip.hop_pixels[f])
        ok = trip.root_ok & (trip.hop_depth[f] > _MIN_Z) & valid
        n_ok = int(ok.sum())
        masked += len(ok) - n_ok
        if n_ok:
            d_sum = d_sum + (trip.hop_depth[f] - target).abs()[ok].sum()
            d_cnt += n_ok

    c_sum, c_cnt = zero, 0
    for i in range(frames.n_frames):
        for j in range(frames.n_frames):
            if j == i or (i, j) not in frames.correspondences:
                continue
            target, valid = targets.correspondence(i, j, trip.hop_pixels[i])
            q_ij, z_j = rig.project(j, trip.hop_points[i])
            ok = trip.hop_ok[i] & (z_j > _MIN_Z) & valid
            n_ok = int(ok.sum())
            masked += len(ok) - n_ok
            if n_ok:
                K = frames.intrinsics[j]
                focal = torch.as_tensor([K.fx, K.fy], dtype=dtype)
                c_sum = c_sum + ((q_ij - target).abs() / focal).sum(dim=1)[ok].sum()
                c_cnt += n_ok

    return LossTerms(
        depth=d_sum / max(d_cnt, 1),
        correspondence=c_sum / max(c_cnt, 1),
        depth_count=d_cnt,
        correspondence_count=c_cnt,
        masked=masked,
    )


@dataclass
class FieldTrace:
    loss: list[float] = dc_field(default_factory=list)
    depth: list[float] = dc_field(default_factory=list)
    correspondence: list[float] = dc_field(default_factory=list)


def root_pixels(frames: FrameSet) -> np.ndarray:
    """Integer ``(u, v)`` of root pixels with valid input depth."""
    rows, cols = np.nonzero(frames.depths[frames.root] > 0)
    return np.stack([cols, rows], axis=1).astype(np.float64)


def optimize_field(
    field: FrustumField,
    frames: FrameSet,
    poses: list[ScaledPose],
    adjustments,
    iters: int = 80000,
    lr: float = 1e-4,
    seed: int = 0,
    batch: int = 1024,
    depth_weight: float = 0.01,
    confidence_min: float = 0.2,
    log_every: int = 500,
) -> tuple[FrustumField, FieldTrace]:
    """Adam on ``depth_weight * L_D + L_C`` with fresh root-pixel batches; poses stay frozen."""
    rng = np.random.default_rng(seed)
    candidates = root_pixels(frames)
    if len(candidates) == 0:
        raise InputError("root frame has no valid depth")
    rig = CameraRig(poses, frames.intrinsics, field.params.dtype)
    targets = ConsistencyTargets(frames, adjustments, field.params.dtype, confidence_min)
    params = field.params.detach().clone().requires_grad_(True)
    field = FrustumField(params, field.depth_bins, field.intrinsics)
    opt = torch.optim.Adam([params], lr=lr)
    trace = FieldTrace()
    for it in range(iters):
        idx = rng.choice(len(candidates), size=min(batch, len(candidates)), replace=False)
        terms = triangulation_losses(field, frames, poses, adjustments, candidates[idx], confidence_min, rig, targets)
        loss = depth_weight * terms.depth + terms.correspondence
        opt.zero_grad()
        loss.backward()
        opt.step()
        trace.loss.append(float(loss.detach()))
        trace.depth.append(float(terms.depth.detach()))
        trace.correspondence.append(float(terms.correspondence.detach()))
        if log_every and it % log_every == 0:
            logger.info(
                "field iter %d: L_D %.4g m, L_C %.4g, masked %d", it, trace.depth[-1], trace.correspondence[-1], terms.masked
            )
    field.params = params.detach()
    return field, trace
