import numpy as np
import pytest

from local_sfm.brc import (
    ConsensusState,
    HoughCache,
    PoseGroup,
    ba_consensus,
    cache_complexity_audit,
    draw_samples,
    greedy_epoch,
    run_brc,
    score_configuration,
)
from local_sfm.config import PipelineConfig
from local_sfm.errors import PoolInvalid
from local_sfm.geometry import NormalizedPose, backproject, project, rodrigues, rotation_angle_deg
from local_sfm.hough import argmax_cell
from local_sfm.minimal_solver import CandidatePool, build_candidate_pool
from local_sfm.synthetic import SceneSpec, generate_scene

M = 1000


@pytest.fixture(scope="module")
def scene3():
    return generate_scene(SceneSpec(n_frames=3, seed=4, depth_scale_corruption=(0.8, 1.25)))


def _decoy(pose: NormalizedPose, deg: float, seed: int) -> NormalizedPose:
    axis = np.random.default_rng(seed).normal(size=3)
    axis /= np.linalg.norm(axis)
    return NormalizedPose(rodrigues(np.radians(deg) * axis) @ pose.R, pose.t_bar)


def _pool(scene, decoy_first=()):
    """GT candidate per support frame, with a 10 degree decoy ranked ahead of it for ``decoy_first``."""
    poses, scores = {}, {}
    for f in scene.supports:
        gt = scene.gt_normalized(f)
        decoy = _decoy(gt, 10.0, f)
        poses[f] = [decoy, gt] if f in decoy_first else [gt, decoy]
        scores[f] = np.array([2, 1])
    return CandidatePool(poses, scores)


def _cache(scene, pool, mode="rgb", m=M):
    frames = scene.to_frameset()
    if mode == "rgbd":
        frames.depths = [d.astype(np.float32) for d in scene.gt_depths]
    samples = draw_samples(frames, m, 0, need_target_depth=mode == "rgbd")
    lam = 0.025 if mode == "rgbd" else 2.0
    return HoughCache(frames, pool, samples, mode=mode, lam=lam)


def _gt_state(scene):
    sup = scene.supports
    return ConsensusState({f: scene.gt_scale(f) for f in sup}, {f: scene.gt_adjustment(f) for f in sup})


def _rel_err(a, b):
    return abs(a - b) / abs(b)


class TestBAConsensus:
    def test_ground_truth_is_a_fixed_point(self, scene3):
        cache = _cache(scene3, _pool(scene3))
        group = PoseGroup.from_dict({f: 0 for f in scene3.supports})
        gt = _gt_state(scene3)
        st = ba_consensus(group, cache, init=gt)
        n_pairs = len(cache.samples)
        assert st.score >= 0.99 * n_pairs * M
        for f in scene3.supports:
            assert _rel_err(st.scales[f], gt.scales[f]) < 0.01
            assert _rel_err(st.adjustments[f], gt.adjustments[f]) < 0.01

    def test_recovers_from_perturbed_start(self, scene3):
        cache = _cache(scene3, _pool(scene3))
        group = PoseGroup.from_dict({f: 0 for f in scene3.supports})
        gt = _gt_state(scene3)
        start = ConsensusState({f: 1.5 * s for f, s in gt.scales.items()}, {f: 1.5 * r for f, r in gt.adjustments.items()})
        st = ba_consensus(group, cache, init=start)
        for f in scene3.supports:
            assert _rel_err(st.scales[f], gt.scales[f]) < 0.03
            assert _rel_err(st.adjustments[f], gt.adjustments[f]) < 0.03

    def test_two_frames_reduce_to_argmax(self):
        scene = generate_scene(SceneSpec(n_frames=2, seed=1))
        cache = _cache(scene, _pool(scene))
        f = scene.supports[0]
        st = ba_consensus(PoseGroup.from_dict({f: 0}), cache)
        best = sum(argmax_cell(cache.get(i, j, 0, 0)[0])[1] for i, j in cache.samples)
        assert st.score >= 0.98 * best

    def test_state_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            ConsensusState({1: 0.0}, {1: 1.0})


class TestGreedyEpoch:
    def test_incumbent_survives(self, scene3):
        pool = _pool(scene3)
        cache = _cache(scene3, pool)
        group = PoseGroup.from_dict({f: 0 for f in scene3.supports})
        state = ba_consensus(group, cache)
        new_group, new_state, improved = greedy_epoch(group, state, pool, cache)
        assert not improved
        assert new_group == group and new_state.score == state.score

    def test_planted_decoy_is_swapped_out(self, scene3):
        f = scene3.supports[0]
        pool = _pool(scene3, decoy_first=(f,))
        cache = _cache(scene3, pool)
        group = PoseGroup.from_dict({g: 0 for g in scene3.supports})
        state = ba_consensus(group, cache)
        new_group, new_state, improved = greedy_epoch(group, state, pool, cache)
        assert improved
        assert new_group.index(f) == 1
        assert new_state.score > state.score


def _small_config(**kw):
    base = dict(k_candidates=4, ransac_iters=60, ransac_samples=600, m_samples=600, local_refine_evals=40)
    return PipelineConfig(**{**base, **kw})


@pytest.fixture(scope="module")
def runs():
    out = []
    for seed in range(3):
        scene = generate_scene(
            SceneSpec(n_frames=4, seed=seed, noise_px=0.5, outlier_frac=0.2, depth_scale_corruption=(0.7, 1.4))
        )
        frames = scene.to_frameset()
        cfg = _small_config(seed=seed)
        pool = build_candidate_pool(frames, k_candidates=4, ransac_iters=60, samples=600, seed=seed)
        out.append((scene, frames, cfg, pool, run_brc(frames, pool, cfg)))
    return out


class TestRunBRC:
    def test_trace_is_monotone(self, runs):
        for *_, res in runs:
            assert all(b >= a for a, b in zip(res.score_trace, res.score_trace[1:]))

    def test_audit_bounds(self, runs):
        for scene, *_, res in runs:
            report = cache_complexity_audit(res, scene.n_frames, 4)
            assert report["ok"], report

    def test_last_epoch_builds_nothing(self, runs):
        for *_, res in runs:
            if res.epochs > 1:
                assert res.epoch_builds[-1] == 0

    def test_root_convention_reprojects_ground_truth(self, runs):
        scene, frames, _, _, res = runs[0]
        root = scene.root
        rows, cols = np.nonzero(scene.gt_depths[root] > 0)
        idx = np.random.default_rng(0).choice(len(rows), 200, replace=False)
        px = np.stack([cols[idx], rows[idx]], axis=1).astype(float)
        X = backproject(scene.gt_poses[root], scene.intrinsics[root], px, scene.gt_depths[root][rows[idx], cols[idx]])
        for f in scene.supports:
            est, _ = project(res.poses[f], scene.intrinsics[f], X)
            gt, _ = project(scene.gt_poses[f], scene.intrinsics[f], X)
            assert np.median(np.linalg.norm(est - gt, axis=1)) < 2.0

    def test_deterministic(self, runs):
        scene, frames, cfg, pool, res = runs[0]
        again = run_brc(frames, pool, cfg)
        assert again.score_trace == res.score_trace
        for f in frames.supports:
            np.testing.assert_array_equal(again.poses[f].R, res.poses[f].R)
            np.testing.assert_array_equal(again.poses[f].t, res.poses[f].t)

    def test_first_epoch_bound_small_case(self):
        scene = generate_scene(SceneSpec(n_frames=3, seed=2))
        frames = scene.to_frameset()
        cfg = _small_config(k_candidates=3, local_refine_deg=())
        pool = build_candidate_pool(frames, k_candidates=3, ransac_iters=60, samples=600)
        res = run_brc(frames, pool, cfg)
        assert res.epoch_builds[0] <= 22

    def test_two_frames_keep_pool_best(self):
        scene = generate_scene(SceneSpec(n_frames=2, seed=3))
        frames = scene.to_frameset()
        cfg = _small_config(local_refine_deg=())
        pool = build_candidate_pool(frames, k_candidates=4, ransac_iters=60, samples=600)
        res = run_brc(frames, pool, cfg)
        f = frames.supports[0]
        assert rotation_angle_deg(res.normalized[f].R, pool.poses[f][0].R) < 0.5

    def test_invalid_pool(self):
        scene = generate_scene(SceneSpec(n_frames=3, seed=2))
        with pytest.raises(PoolInvalid):
            run_brc(scene.to_frameset(), CandidatePool(), _small_config())


class TestScoringModes:
    @pytest.mark.parametrize("mode", ["rgb", "rgbd"])
    def test_ground_truth_group_ranks_first(self, scene3, mode):
        pool = _pool(scene3)
        cache = _cache(scene3, pool, mode=mode)
        gt = ba_consensus(PoseGroup.from_dict({f: 0 for f in scene3.supports}), cache).score
        for f in scene3.supports:
            group = PoseGroup.from_dict({g: 1 if g == f else 0 for g in scene3.supports})
            assert ba_consensus(group, cache).score < gt

    def test_score_configuration_matches_direct(self, scene3):
        cfg = _small_config(m_samples=M)
        normalized = {f: scene3.gt_normalized(f) for f in scene3.supports}
        st = score_configuration(scene3.to_frameset(), normalized, cfg, [_gt_state(scene3)])
        assert st.score >= 0.99 * 6 * M
