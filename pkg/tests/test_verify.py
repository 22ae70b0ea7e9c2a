import numpy as np
import pytest

from local_sfm.errors import EmptyOverlap
from local_sfm.frames import sample_depth
from local_sfm.geometry import backproject, project
from local_sfm.radiance import FrustumField
from local_sfm.verify import VerifiedCloud, consistency_counts, depth_metrics, geometric_verify, median_scale_align


def _planted(scene, shape, depth=None):
    frames = scene.to_frameset()
    field = FrustumField.for_frames(frames, np.ones(frames.n_frames), shape)
    field.plant_depth(scene.gt_depths[frames.root] if depth is None else depth, thickness=0.05)
    return frames, field


def _coverage(scene, n_c=2):
    """Fraction of root pixels whose true surface point is visible in at least ``n_c`` support frames."""
    root = scene.root
    rows, cols = np.nonzero(scene.gt_depths[root] > 0)
    px = np.stack([cols, rows], axis=1).astype(float)
    X = backproject(scene.gt_poses[root], scene.intrinsics[root], px, scene.gt_depths[root][rows, cols])
    seen = np.zeros(len(px), dtype=int)
    for f in scene.supports:
        uv, z = project(scene.gt_poses[f], scene.intrinsics[f], X)
        seen += np.abs(sample_depth(scene.gt_depths[f], uv) - z) < 0.01 * z
    return np.count_nonzero(seen >= n_c) / scene.gt_depths[root].size


@pytest.fixture(scope="module")
def fine(plane_scene):
    frames, field = _planted(plane_scene, (240, 320, 256))
    return frames, field, geometric_verify(field, frames, plane_scene.gt_poses)


@pytest.fixture(scope="module")
def coarse(plane_scene):
    return _planted(plane_scene, (120, 160, 128))


class TestGeometricVerify:
    def test_consistent_field_keeps_covered_pixels(self, fine, plane_scene):
        _, _, cloud = fine
        coverage = _coverage(plane_scene)
        assert coverage * 0.9 <= cloud.density <= coverage + 0.01

    def test_kept_points_are_accurate(self, fine, plane_scene):
        _, _, cloud = fine
        m = depth_metrics(cloud.sparse_depth(), plane_scene.gt_depths[plane_scene.root])
        assert m["delta_0.5"] == 1.0
        assert m["abs_rel"] < 0.005

    def test_kept_points_recheck(self, fine, plane_scene):
        frames, field, cloud = fine
        idx = np.random.default_rng(0).choice(len(cloud.pixels), 2000, replace=False)
        depth, points, counts, ok = consistency_counts(
            field, frames, plane_scene.gt_poses, cloud.pixels[idx].astype(float), 0.01
        )
        assert np.all(ok)
        assert np.all(counts >= 2)
        np.testing.assert_array_equal(counts, cloud.counts[idx])
        np.testing.assert_allclose(points, cloud.points[idx], rtol=0, atol=1e-9)

    def test_monotone_in_thresholds(self, coarse, plane_scene):
        frames, field = coarse
        poses = plane_scene.gt_poses
        by_lambda = [geometric_verify(field, frames, poses, lambda_c=lc).density for lc in (0.005, 0.01, 0.02)]
        by_count = [geometric_verify(field, frames, poses, n_c=n).density for n in (1, 2, 3, 4)]
        assert by_lambda == sorted(by_lambda)
        assert by_count == sorted(by_count, reverse=True)

    def test_corrupted_region_is_filtered(self, plane_scene):
        root = plane_scene.root
        gt = plane_scene.gt_depths[root]
        bad = gt.copy()
        block = (slice(60, 180), slice(80, 240))
        offsets = np.random.default_rng(1).uniform(0.0, 0.5, size=bad[block].shape)
        bad[block] = np.where(bad[block] > 0, bad[block] + offsets, 0.0)
        frames, field = _planted(plane_scene, (240, 320, 256), depth=bad)
        cloud = geometric_verify(field, frames, plane_scene.gt_poses)
        verified = depth_metrics(cloud.sparse_depth(), gt)
        unverified = depth_metrics(bad, gt)
        assert verified["delta_0.5"] >= unverified["delta_0.5"]
        assert verified["abs_rel"] < unverified["abs_rel"]

    def test_empty_field_keeps_nothing(self, plane_scene):
        frames = plane_scene.to_frameset()
        field = FrustumField.for_frames(frames, np.ones(frames.n_frames), (30, 40, 16))
        field.params.fill_(-50.0)
        assert geometric_verify(field, frames, plane_scene.gt_poses).density == 0.0


class TestCloud:
    def test_sparse_depth_raster(self):
        cloud = VerifiedCloud(
            np.array([[1, 0], [2, 1]]), np.array([3.0, 4.0]), np.zeros((2, 3)), np.array([2, 3]), (2, 3)
        )
        np.testing.assert_array_equal(cloud.sparse_depth(), [[0, 3, 0], [0, 0, 4]])
        assert cloud.density == pytest.approx(2 / 6)


class TestScaleAlignment:
    def test_identity(self):
        gt = np.random.default_rng(0).uniform(1, 5, (20, 30))
        scale, aligned = median_scale_align(gt, gt)
        assert scale == 1.0
        np.testing.assert_array_equal(aligned, gt)

    def test_half_scale(self):
        gt = np.random.default_rng(1).uniform(1, 5, (20, 30))
        assert median_scale_align(0.5 * gt, gt)[0] == pytest.approx(2.0)

    def test_robust_to_minority_outliers(self):
        rng = np.random.default_rng(2)
        gt = rng.uniform(1, 5, 1001)
        pred = 0.5 * gt
        bad = rng.choice(1001, 450, replace=False)
        pred[bad] *= rng.uniform(3, 10, 450)
        scale, _ = median_scale_align(pred, gt)
        assert 1.0 < scale <= 2.0 + 1e-12

    def test_ignores_invalid_pixels(self):
        gt = np.array([2.0, 4.0, 0.0, 6.0])
        pred = np.array([1.0, 0.0, 5.0, 3.0])
        assert median_scale_align(pred, gt)[0] == pytest.approx(2.0)

    def test_empty_overlap(self):
        with pytest.raises(EmptyOverlap):
            median_scale_align(np.zeros(4), np.ones(4))


class TestMetrics:
    def test_hand_computed(self):
        gt = np.array([1.0, 1.0, 1.0, 1.0])
        pred = np.array([1.0, 1.1, 1.2, 2.0])
        m = depth_metrics(pred, gt)
        assert m["delta_0.5"] == 0.5  # 1.25 ** 0.5 ~ 1.118
        assert m["delta_1"] == 0.75
        assert m["abs_rel"] == pytest.approx((0.1 + 0.2 + 1.0) / 4)
        assert m["rms"] == pytest.approx(np.sqrt((0.01 + 0.04 + 1.0) / 4))
        assert m["count"] == 4

    def test_symmetric_ratio(self):
        gt = np.array([2.0])
        assert depth_metrics(np.array([1.0]), gt)["delta_1"] == 0.0
        assert depth_metrics(np.array([1.7]), gt)["delta_1"] == 1.0

    def test_empty(self):
        with pytest.raises(EmptyOverlap):
            depth_metrics(np.zeros(3), np.zeros(3))
