"""Stage drivers shared by the CLI and the tests: pose search, triangulation and verification."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .brc import BRCResult, run_brc
from .config import PipelineConfig
from .frames import FrameSet
from .geometry import ScaledPose
from .minimal_solver import CandidatePool, build_candidate_pool
from .radiance import FieldTrace, FrustumField, optimize_field
from .verify import VerifiedCloud, depth_metrics, geometric_verify, median_scale_align

logger = logging.getLogger(__name__)


@dataclass
class PoseEstimate:
    pool: CandidatePool
    result: BRCResult
    poses: list[ScaledPose]
    adjustments: np.ndarray


def estimate_poses(frames: FrameSet, config: PipelineConfig) -> PoseEstimate:
    """Candidate pool plus greedy consensus search; the root gets the identity."""
    pool = build_candidate_pool(
        frames,
        k_candidates=config.k_candidates,
        ransac_iters=config.ransac_iters,
        sampson_threshold=config.sampson_threshold,
        seed=config.seed,
        samples=config.ransac_samples,
        confidence_min=config.confidence_min,
        refine_top=config.refine_top,
    )
    result = run_brc(frames, pool, config)
    poses = [result.poses.get(f, ScaledPose.identity()) for f in range(frames.n_frames)]
    adjustments = np.ones(frames.n_frames)
    for f, r in result.state.adjustments.items():
        adjustments[f] = r
    return PoseEstimate(pool, result, poses, adjustments)


def triangulate(
    frames: FrameSet, poses: list[ScaledPose], adjustments, config: PipelineConfig
) -> tuple[FrustumField, FieldTrace]:
    field = FrustumField.for_frames(frames, adjustments, config.rf_grid)
    return optimize_field(
        field,
        frames,
        poses,
        adjustments,
        iters=config.rf_iters,
        lr=config.rf_lr,
        seed=config.seed,
        batch=config.rf_batch,
        depth_weight=config.depth_loss_weight,
        confidence_min=config.confidence_min,
    )


def verify(field: FrustumField, frames: FrameSet, poses: list[ScaledPose], config: PipelineConfig) -> VerifiedCloud:
    return geometric_verify(field, frames, poses, config.lambda_c, config.n_c)


def evaluate(cloud: VerifiedCloud, frames: FrameSet, gt_depths: list[np.ndarray]) -> dict:
    """Metrics of the verified root depth and of the raw input depthmaps.

    Each is median-scaled once through its root map, and the input scale is
    shared by all frames.
    """
    root = frames.root
    scale_v, aligned = median_scale_align(cloud.sparse_depth(), gt_depths[root])
    scale_in, _ = median_scale_align(frames.depths[root], gt_depths[root])
    pred = np.concatenate([scale_in * np.asarray(d, dtype=np.float64).ravel() for d in frames.depths])
    gt = np.concatenate([np.asarray(g, dtype=np.float64).ravel() for g in gt_depths])
    return {
        "density": cloud.density,
        "verified": {**depth_metrics(aligned, gt_depths[root]), "scale": scale_v},
        "input": {**depth_metrics(pred, gt), "scale": scale_in},
    }
