"""Multi-view geometric verification of the root depth and evaluation metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import torch

from .errors import EmptyOverlap
from .frames import FrameSet
from .geometry import ScaledPose
from .radiance import CameraRig, FrustumField, round_trip

logger = logging.getLogger(__name__)


@dataclass
class VerifiedCloud:
    """Root pixels whose rendered point is confirmed by enough support views."""

    pixels: np.ndarray  # (K, 2) integer (u, v)
    depths: np.ndarray  # (K,) meters
    points: np.ndarray  # (K, 3) root frame
    counts: np.ndarray  # (K,) consistent support views
    shape: tuple[int, int]

    @property
    def density(self) -> float:
        return len(self.depths) / float(self.shape[0] * self.shape[1])

    def sparse_depth(self) -> np.ndarray:
        """Dense float32 raster with unverified pixels at 0."""
        out = np.zeros(self.shape, dtype=np.float32)
        out[self.pixels[:, 1], self.pixels[:, 0]] = self.depths
        return out


def consistency_counts(
    field: FrustumField,
    frames: FrameSet,
    poses: list[ScaledPose],
    pixels: np.ndarray,
    lambda_c: float,
    chunk: int = 16384,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per root pixel: rendered depth, 3D point, consistent-view count and root opacity flag."""
    dtype = field.params.dtype
    rig = CameraRig(poses, frames.intrinsics, dtype)
    n = len(pixels)
    depth = np.zeros(n)
    points = np.zeros((n, 3))
    counts = np.zeros(n, dtype=np.int64)
    ok = np.zeros(n, dtype=bool)
    for lo in range(0, n, chunk):
        px = torch.as_tensor(pixels[lo : lo + chunk], dtype=dtype)
        with torch.no_grad():
            trip = round_trip(field, rig, frames.root, px)
        p = trip.points.double().numpy()
        sl = slice(lo, lo + len(px))
        depth[sl] = trip.root_depth.double().numpy()
        points[sl] = p
        ok[sl] = trip.root_ok.numpy()
        for f in frames.supports:
            dist = np.linalg.norm(trip.hop_points[f].double().numpy() - p, axis=1)
            counts[sl] += trip.hop_ok[f].numpy() & (dist <= lambda_c)
    return depth, points, counts, ok


def geometric_verify(
    field: FrustumField,
    frames: FrameSet,
    poses: list[ScaledPose],
    lambda_c: float = 0.01,
    n_c: int = 2,
) -> VerifiedCloud:
    """Keep root pixels whose point re-renders within ``lambda_c`` meters from at least ``n_c`` views."""
    K = frames.intrinsics[frames.root]
    rows, cols = np.mgrid[0 : K.height, 0 : K.width]
    pixels = np.stack([cols.ravel(), rows.ravel()], axis=1)
    depth, points, counts, ok = consistency_counts(field, frames, poses, pixels.astype(np.float64), lambda_c)
    keep = ok & (counts >= n_c)
    logger.info("verified %d of %d root pixels", int(keep.sum()), len(keep))
    return VerifiedCloud(pixels[keep], depth[keep], points[keep], counts[keep], (K.height, K.width))


def median_scale_align(pred: np.ndarray, gt: np.ndarray) -> tuple[float, np.ndarray]:
    """Scale ``pred`` by the median of ``gt / pred`` over pixels valid in both."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = (pred > 0) & (gt > 0)
    if not valid.any():
        raise EmptyOverlap("prediction and ground truth share no valid pixel")
    scale = float(np.median(gt[valid] / pred[valid]))
    return scale, scale * pred


def depth_metrics(pred: np.ndarray, gt: np.ndarray) -> dict:
    """Threshold accuracies and error statistics over pixels valid in both maps."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    valid = (pred > 0) & (gt > 0)
    if not valid.any():
        raise EmptyOverlap("prediction and ground truth share no valid pixel")
    p, g = pred[valid], gt[valid]
    ratio = np.maximum(p / g, g / p)
    return {
        "delta_0.5": float(np.mean(ratio < 1.25**0.5)),
        "delta_1": float(np.mean(ratio < 1.25)),
        "abs_rel": float(np.mean(np.abs(p - g) / g)),
        "rms": float(np.sqrt(np.mean((p - g) ** 2))),
        "count": int(valid.sum()),
    }
