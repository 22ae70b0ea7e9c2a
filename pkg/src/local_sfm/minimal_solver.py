"""Two-view candidate poses: minimal five-point hypotheses ranked by Sampson consensus.

For every support frame ``j`` a RANSAC loop over root-to-``j`` correspondences
collects essential-matrix hypotheses.  The hypotheses are ranked by their
Sampson inlier count, near-duplicates are merged and the best ``K`` distinct
normalized poses form that frame's candidate pool.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy.optimize import least_squares

from .errors import DegenerateConfiguration, InsufficientCorrespondences, PoolInvalid
from .frames import FrameSet, sample_pair
from .geometry import (
    CameraIntrinsics,
    NormalizedPose,
    orthonormalize,
    rodrigues,
    rotation_angle_deg,
    skew,
    vector_angle_deg,
)

logger = logging.getLogger(__name__)

_W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
_RESIDUAL_TOL = 1e-6
_ROTATION_ONLY_TOL = 1e-8


def _rotation_only(x1: np.ndarray, x2: np.ndarray) -> bool:
    """True when a single rotation maps every bearing of ``x1`` onto ``x2`` (no parallax)."""
    b1 = np.column_stack([x1, np.ones(len(x1))])
    b2 = np.column_stack([x2, np.ones(len(x2))])
    b1 /= np.linalg.norm(b1, axis=1, keepdims=True)
    b2 /= np.linalg.norm(b2, axis=1, keepdims=True)
    U, _, Vt = np.linalg.svd(b2.T @ b1)
    R = U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt
    return float(np.abs(b1 @ R.T - b2).max()) < _ROTATION_ONLY_TOL


def _normalize(K: CameraIntrinsics, pixels: np.ndarray) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=np.float64)
    return np.column_stack([(pixels[:, 0] - K.cx) / K.fx, (pixels[:, 1] - K.cy) / K.fy])


def essential_matrix(pose: NormalizedPose) -> np.ndarray:
    return skew(pose.t_bar) @ pose.R


def _triangulate_depths(R, t, x1, x2):
    """Depths of normalized correspondences in both cameras (midpoint-free linear solve)."""
    h1 = np.column_stack([x1, np.ones(len(x1))])
    h2 = np.column_stack([x2, np.ones(len(x2))])
    a = h1 @ R.T  # rotated rays of camera 1
    # solve  z2 * h2 = z1 * a + t  in the least-squares sense for (z1, z2)
    z1 = np.empty(len(x1))
    z2 = np.empty(len(x1))
    for k in range(len(x1)):
        A = np.column_stack([a[k], -h2[k]])
        sol, *_ = np.linalg.lstsq(A, -t, rcond=None)
        z1[k], z2[k] = sol
    return z1, z2


def decompose_essential(E: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> list[NormalizedPose]:
    """Cheirality-positive ``(R, t_bar)`` factorizations of ``E`` for normalized points."""
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    out = []
    for R in (U @ _W @ Vt, U @ _W.T @ Vt):
        for t in (U[:, 2], -U[:, 2]):
            z1, z2 = _triangulate_depths(R, t, x1, x2)
            n_front = int(np.count_nonzero((z1 > 0) & (z2 > 0)))
            if n_front == len(x1):
                out.append(NormalizedPose(orthonormalize(R), t / np.linalg.norm(t)))
    return out


def five_point(
    pixels_i: np.ndarray, pixels_j: np.ndarray, K_i: CameraIntrinsics, K_j: CameraIntrinsics
) -> list[NormalizedPose]:
    """All cheirality-positive poses ``X_j = R X_i + t`` consistent with five correspondences."""
    x1 = _normalize(K_i, pixels_i)
    x2 = _normalize(K_j, pixels_j)
    if len(x1) != 5:
        raise ValueError("five_point needs exactly five correspondences")
    if _rotation_only(x1, x2):
        raise DegenerateConfiguration("correspondences are explained by a rotation alone")
    try:
        stacked, _ = cv2.findEssentialMat(x1, x2, np.eye(3), method=cv2.LMEDS)
    except cv2.error as exc:
        raise DegenerateConfiguration(str(exc)) from exc
    if stacked is None or len(stacked) == 0:
        raise DegenerateConfiguration("minimal solver found no real solution")
    h1 = np.column_stack([x1, np.ones(5)])
    h2 = np.column_stack([x2, np.ones(5)])
    poses = []
    for k in range(0, len(stacked), 3):
        norm = np.linalg.norm(stacked[k : k + 3])
        if not np.isfinite(norm) or norm < 1e-12:
            continue
        E = stacked[k : k + 3] / norm
        if np.abs(np.einsum("ni,ij,nj->n", h2, E, h1)).max() > _RESIDUAL_TOL:
            continue
        poses.extend(decompose_essential(E, x1, x2))
    if not poses:
        raise DegenerateConfiguration("no solution passed the residual and cheirality checks")
    return poses


def fundamental_matrix(pose: NormalizedPose, K_i: CameraIntrinsics, K_j: CameraIntrinsics) -> np.ndarray:
    return K_j.inverse.T @ essential_matrix(pose) @ K_i.inverse


def sampson_distance(F: np.ndarray, pixels_i: np.ndarray, pixels_j: np.ndarray, signed: bool = False) -> np.ndarray:
    """First-order geometric distance (pixels) of each correspondence to the epipolar constraint."""
    h1 = np.column_stack([pixels_i, np.ones(len(pixels_i))])
    h2 = np.column_stack([pixels_j, np.ones(len(pixels_j))])
    Fx1 = h1 @ F.T
    Ftx2 = h2 @ F
    num = np.einsum("ni,ni->n", h2, Fx1)
    den = Fx1[:, 0] ** 2 + Fx1[:, 1] ** 2 + Ftx2[:, 0] ** 2 + Ftx2[:, 1] ** 2
    dist = num / np.sqrt(np.maximum(den, 1e-300))
    return dist if signed else np.abs(dist)


def _tangent_basis(t: np.ndarray) -> np.ndarray:
    a = np.array([1.0, 0.0, 0.0]) if abs(t[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    b1 = np.cross(t, a)
    b1 /= np.linalg.norm(b1)
    return np.stack([b1, np.cross(t, b1)], axis=1)


def refine_pose(
    pose: NormalizedPose,
    pixels_i: np.ndarray,
    pixels_j: np.ndarray,
    K_i: CameraIntrinsics,
    K_j: CameraIntrinsics,
    threshold: float,
    rounds: int = 2,
) -> NormalizedPose:
    """Least-squares polish of a hypothesis on its Sampson inliers."""
    for _ in range(rounds):
        inl = sampson_distance(fundamental_matrix(pose, K_i, K_j), pixels_i, pixels_j) < threshold
        if np.count_nonzero(inl) < 8:
            return pose
        p_i, p_j = pixels_i[inl], pixels_j[inl]
        basis = _tangent_basis(pose.t_bar)
        R0, t0 = pose.R, pose.t_bar

        def unpack(v, R0=R0, t0=t0, basis=basis):
            t = t0 + basis @ v[3:]
            return NormalizedPose(rodrigues(v[:3]) @ R0, t / np.linalg.norm(t))

        def residual(v):
            return sampson_distance(fundamental_matrix(unpack(v), K_i, K_j), p_i, p_j, signed=True)

        sol = least_squares(residual, np.zeros(5), loss="huber", f_scale=0.5 * threshold, max_nfev=50)
        pose = unpack(sol.x)
    return pose


@dataclass
class CandidatePool:
    """Ranked normalized-pose candidates per support frame."""

    poses: dict[int, list[NormalizedPose]] = field(default_factory=dict)
    scores: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def frames(self) -> list[int]:
        return sorted(self.poses)

    def size(self, frame: int) -> int:
        return len(self.poses[frame])

    def validate(self, supports, k_candidates: int | None = None) -> None:
        for f in supports:
            if f not in self.poses or not self.poses[f]:
                raise PoolInvalid(f"pool has no candidates for frame {f}")
            if k_candidates is not None and len(self.poses[f]) != k_candidates:
                raise PoolInvalid(f"frame {f}: expected {k_candidates} candidates, got {len(self.poses[f])}")
            if np.any(np.diff(self.scores[f]) > 0):
                raise PoolInvalid(f"frame {f}: candidate scores are not ranked")


def _is_duplicate(pose, accepted, rot_deg, dir_deg) -> bool:
    return any(
        rotation_angle_deg(pose.R, q.R) < rot_deg and vector_angle_deg(pose.t_bar, q.t_bar) < dir_deg
        for q in accepted
    )


def _ransac_hypotheses(pix_i, pix_j, K_i, K_j, iters, threshold, rng, start_order=0):
    """Score every minimal-sample hypothesis; returns ``[(score, order, pose)]``."""
    out = []
    order = start_order
    n = len(pix_i)
    for _ in range(iters):
        idx = rng.choice(n, size=5, replace=False)
        try:
            poses = five_point(pix_i[idx], pix_j[idx], K_i, K_j)
        except DegenerateConfiguration:
            continue
        for pose in poses:
            d = sampson_distance(fundamental_matrix(pose, K_i, K_j), pix_i, pix_j)
            out.append((int(np.count_nonzero(d < threshold)), order, pose))
            order += 1
    return out


def build_frame_candidates(
    pix_i: np.ndarray,
    pix_j: np.ndarray,
    K_i: CameraIntrinsics,
    K_j: CameraIntrinsics,
    k_candidates: int,
    ransac_iters: int,
    threshold: float,
    rng: np.random.Generator,
    refine_top: int = 4,
    dedupe_deg: float = 0.5,
    max_rounds: int = 10,
):
    """Ranked, deduplicated candidates for one pair of frames."""
    hyps = []
    accepted: list[NormalizedPose] = []
    scores: list[int] = []
    for _ in range(max_rounds):
        hyps += _ransac_hypotheses(pix_i, pix_j, K_i, K_j, ransac_iters, threshold, rng, len(hyps))
        hyps.sort(key=lambda h: (-h[0], h[1]))
        accepted, scores = [], []
        refined = 0
        for score, _, pose in hyps:
            if _is_duplicate(pose, accepted, dedupe_deg, dedupe_deg):
                continue
            if refined < refine_top:
                refined += 1
                pose = refine_pose(pose, pix_i, pix_j, K_i, K_j, threshold)
                d = sampson_distance(fundamental_matrix(pose, K_i, K_j), pix_i, pix_j)
                score = int(np.count_nonzero(d < threshold))
                if _is_duplicate(pose, accepted, dedupe_deg, dedupe_deg):
                    continue
            accepted.append(pose)
            scores.append(score)
            if len(accepted) == k_candidates:
                break
        if len(accepted) == k_candidates:
            break
        logger.debug("only %d distinct candidates, backfilling", len(accepted))
    if len(accepted) < k_candidates:
        raise PoolInvalid(f"only {len(accepted)} distinct candidates after {max_rounds} rounds")
    # refinement can reorder the head of the list
    order = sorted(range(len(accepted)), key=lambda k: -scores[k])
    return [accepted[k] for k in order], np.array([scores[k] for k in order])


def build_candidate_pool(
    frames: FrameSet,
    root: int | None = None,
    k_candidates: int = 128,
    ransac_iters: int = 2000,
    sampson_threshold: float = 2.0,
    seed: int = 0,
    samples: int = 2000,
    confidence_min: float = 0.2,
    refine_top: int = 4,
) -> CandidatePool:
    """Top ``k_candidates`` two-view poses of every support frame relative to the root."""
    root = frames.root if root is None else root
    pool = CandidatePool()
    for j in range(frames.n_frames):
        if j == root:
            continue
        rng = np.random.default_rng([seed, j])
        smp = sample_pair(frames, root, j, samples, rng, confidence_min)
        if len(smp) < 5:
            raise InsufficientCorrespondences(j, len(smp))
        poses, scores = build_frame_candidates(
            smp.pixels_i,
            smp.targets,
            frames.intrinsics[root],
            frames.intrinsics[j],
            k_candidates,
            ransac_iters,
            sampson_threshold,
            rng,
            refine_top=refine_top,
        )
        pool.poses[j] = poses
        pool.scores[j] = scores
    return pool
