"""Frame window container and per-pair correspondence sampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .geometry import CameraIntrinsics


@dataclass
class FrameSet:
    """N calibrated frames with depthmaps and ordered-pair correspondence maps.

    ``correspondences[(i, j)]`` is an ``(H, W, 3)`` float32 raster holding the
    absolute target pixel ``(u, v)`` in frame ``j`` and a confidence for every
    pixel of frame ``i``.  Depth ``0`` marks an invalid pixel.
    """

    intrinsics: list[CameraIntrinsics]
    depths: list[np.ndarray]
    correspondences: dict[tuple[int, int], np.ndarray]
    root: int
    frame_ids: list[str] = field(default_factory=list)
    mode: str = "rgb"

    def __post_init__(self):
        n = len(self.intrinsics)
        if len(self.depths) != n:
            raise InputError("need one depthmap per frame")
        if not 0 <= self.root < n:
            raise InputError(f"root index {self.root} outside [0, {n})")
        if not self.frame_ids:
            self.frame_ids = [f"frame_{k:03d}" for k in range(n)]

    @property
    def n_frames(self) -> int:
        return len(self.intrinsics)

    @property
    def supports(self) -> list[int]:
        return [k for k in range(self.n_frames) if k != self.root]

    def ordered_pairs(self) -> list[tuple[int, int]]:
        n = self.n_frames
        return [(i, j) for i in range(n) for j in range(n) if i != j]


def default_root(n_frames: int) -> int:
    """Zero-based index of the centre frame, ``floor((N + 1) / 2)`` counted from one."""
    return (n_frames + 1) // 2 - 1


@dataclass
class PairSamples:
    """``M`` correspondences sampled from one ordered frame pair."""

    i: int
    j: int
    pixels_i: np.ndarray  # (M, 2)
    depths_i: np.ndarray  # (M,) raw, unadjusted
    targets: np.ndarray  # (M, 2) pixels in frame j
    depths_j: np.ndarray  # (M,) depth of frame j at the target, 0 if unavailable
    confidence: np.ndarray  # (M,)

    def __len__(self) -> int:
        return len(self.depths_i)


def sample_depth(depth: np.ndarray, uv: np.ndarray, max_rel_jump: float = 0.05) -> np.ndarray:
    """Bilinear depth lookup that falls back to the nearest pixel across discontinuities.

    Returns 0 where the lookup leaves the image or touches invalid depth.
    """
    H, W = depth.shape
    u = uv[:, 0]
    v = uv[:, 1]
    inside = (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
    out = np.zeros(len(uv))
    if not inside.any():
        return out
    u = u[inside]
    v = v[inside]
    u0 = np.minimum(np.floor(u).astype(int), W - 2)
    v0 = np.minimum(np.floor(v).astype(int), H - 2)
    fu = u - u0
    fv = v - v0
    d00 = depth[v0, u0]
    d01 = depth[v0, u0 + 1]
    d10 = depth[v0 + 1, u0]
    d11 = depth[v0 + 1, u0 + 1]
    corners = np.stack([d00, d01, d10, d11])
    lo = corners.min(axis=0)
    hi = corners.max(axis=0)
    smooth = (lo > 0) & (hi - lo <= max_rel_jump * lo)
    bil = d00 * (1 - fu) * (1 - fv) + d01 * fu * (1 - fv) + d10 * (1 - fu) * fv + d11 * fu * fv
    nearest = depth[np.rint(v).astype(int), np.rint(u).astype(int)]
    out[inside] = np.where(smooth, bil, nearest)
    return out


def sample_pair(
    frames: FrameSet,
    i: int,
    j: int,
    count: int,
    rng: np.random.Generator,
    confidence_min: float = 0.2,
) -> PairSamples:
    """Draw up to ``count`` confident correspondences from ``i`` to ``j`` without replacement."""
    corr = frames.correspondences[(i, j)]
    depth_i = frames.depths[i]
    H, W = depth_i.shape
    K_j = frames.intrinsics[j]
    u_t = corr[..., 0]
    v_t = corr[..., 1]
    ok = (
        (corr[..., 2] >= confidence_min)
        & (depth_i > 0)
        & (u_t >= 0)
        & (u_t <= K_j.width - 1)
        & (v_t >= 0)
        & (v_t <= K_j.height - 1)
    )
    flat = np.flatnonzero(ok.ravel())
    if len(flat) > count:
        flat = np.sort(rng.choice(flat, size=count, replace=False))
    rows, cols = np.divmod(flat, W)
    pixels = np.stack([cols, rows], axis=1).astype(np.float64)
    targets = corr[rows, cols, :2].astype(np.float64)
    return PairSamples(
        i=i,
        j=j,
        pixels_i=pixels,
        depths_i=depth_i[rows, cols].astype(np.float64),
        targets=targets,
        depths_j=sample_depth(frames.depths[j], targets),
        confidence=corr[rows, cols, 2].astype(np.float64),
    )
