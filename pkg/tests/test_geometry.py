import numpy as np
import pytest

from local_sfm.errors import DegenerateTranslation, IllConditioned, InputError, NonPositiveDepth
from local_sfm.geometry import (
    CameraIntrinsics,
    NormalizedPose,
    RelativePose,
    ScaledPose,
    backproject,
    epipolar_line,
    line_circle_intersect,
    line_sphere_intersect,
    project,
    pure_rotation_pixel,
    random_rotation,
    relative_pose,
    rotation_angle_deg,
    scale_from_projection,
)

from oracles import K_TEST, corollary1_violations, corollary2_max_error, project_at_scale, random_relative

K100 = CameraIntrinsics(100.0, 100.0, 50.0, 50.0, 100, 100)


class TestIntrinsics:
    def test_inverse_matches_matrix(self):
        np.testing.assert_allclose(K_TEST.matrix @ K_TEST.inverse, np.eye(3), atol=1e-15)

    def test_dict_round_trip(self):
        assert CameraIntrinsics.from_dict(K_TEST.to_dict()) == K_TEST

    @pytest.mark.parametrize("kw", [dict(fx=0.0), dict(cx=-1.0), dict(cy=500.0)])
    def test_rejects_bad_values(self, kw):
        base = dict(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)
        with pytest.raises(InputError):
            CameraIntrinsics(**{**base, **kw})


class TestPoses:
    def test_normalized_pose_requires_unit_direction(self):
        with pytest.raises(InputError):
            NormalizedPose(np.eye(3), np.array([0.0, 0.0, 2.0]))

    def test_rejects_reflection(self):
        with pytest.raises(InputError):
            ScaledPose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_inverse_and_compose(self):
        rng = np.random.default_rng(0)
        P = ScaledPose(random_rotation(rng), rng.normal(size=3))
        I = P.compose(P.inverse())
        np.testing.assert_allclose(I.R, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(I.t, np.zeros(3), atol=1e-12)
        np.testing.assert_allclose(P.transform(P.center), np.zeros(3), atol=1e-12)


class TestProjection:
    def test_optical_axis(self):
        px, d = project(ScaledPose.identity(), K100, np.array([0.0, 0.0, 2.0]))
        np.testing.assert_allclose(px, [50.0, 50.0])
        assert d == 2.0

    def test_off_axis(self):
        px, d = project(ScaledPose.identity(), K100, np.array([1.0, 0.0, 2.0]))
        np.testing.assert_allclose(px, [100.0, 50.0])
        assert d == 2.0

    def test_translated_camera(self):
        pose = ScaledPose(np.eye(3), np.array([0.0, 0.0, -1.0]))
        px, d = project(pose, K100, np.array([0.0, 0.0, 2.0]))
        np.testing.assert_allclose(px, [50.0, 50.0])
        assert d == pytest.approx(1.0)

    def test_behind_camera(self):
        with pytest.raises(NonPositiveDepth):
            project(ScaledPose.identity(), K100, np.array([0.0, 0.0, -1.0]))

    @pytest.mark.parametrize("pixel, point", [((50.0, 50.0), (0.0, 0.0, 2.0)), ((100.0, 50.0), (1.0, 0.0, 2.0))])
    def test_backproject_examples(self, pixel, point):
        np.testing.assert_allclose(backproject(ScaledPose.identity(), K100, np.array(pixel), 2.0), point)

    def test_backproject_rejects_nonpositive_depth(self):
        with pytest.raises(NonPositiveDepth):
            backproject(ScaledPose.identity(), K100, np.array([10.0, 10.0]), 0.0)

    def test_round_trip(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            pose = ScaledPose(random_rotation(rng), rng.normal(size=3))
            px = rng.uniform([0, 0], [K_TEST.width, K_TEST.height])
            d = rng.uniform(0.1, 20.0)
            back, depth = project(pose, K_TEST, backproject(pose, K_TEST, px, d))
            np.testing.assert_allclose(back, px, rtol=0, atol=1e-9)
            assert abs(depth - d) < 1e-9


class TestRelativePose:
    def setup_method(self):
        rng = np.random.default_rng(2)
        self.pi = NormalizedPose.from_unnormalized(random_rotation(rng), rng.normal(size=3))
        self.pj = NormalizedPose.from_unnormalized(random_rotation(rng), rng.normal(size=3))

    def test_root_source_limit(self):
        rel = relative_pose(self.pi, 0.0, self.pj, 1.0)
        assert rel.scale == pytest.approx(1.0)
        np.testing.assert_allclose(rel.t_bar, self.pj.t_bar, atol=1e-12)

    def test_root_target_limit(self):
        rel = relative_pose(self.pi, 1.0, self.pj, 0.0)
        np.testing.assert_allclose(rel.t_bar, -self.pj.R @ self.pi.R.T @ self.pi.t_bar, atol=1e-12)

    def test_hand_computed(self):
        pi = NormalizedPose(np.eye(3), np.array([1.0, 0.0, 0.0]))
        pj = NormalizedPose(np.eye(3), np.array([0.0, 1.0, 0.0]))
        rel = relative_pose(pi, 1.0, pj, 1.0)
        assert rel.scale == pytest.approx(np.sqrt(2.0))
        np.testing.assert_allclose(rel.t_bar, [-1 / np.sqrt(2), 1 / np.sqrt(2), 0.0], atol=1e-12)

    def test_matches_metric_composition(self):
        Pi, Pj = self.pi.with_scale(0.7), self.pj.with_scale(1.3)
        rel = relative_pose(self.pi, 0.7, self.pj, 1.3)
        direct = Pj.compose(Pi.inverse())
        np.testing.assert_allclose(rel.R, direct.R, atol=1e-12)
        np.testing.assert_allclose(rel.scale * rel.t_bar, direct.t, atol=1e-12)

    def test_pure_rotation_is_flagged(self):
        pose = NormalizedPose(np.eye(3), np.array([0.0, 0.0, 1.0]))
        assert relative_pose(pose, 1.0, pose, 1.0).degenerate

    def test_rejects_negative_scale(self):
        with pytest.raises(InputError):
            relative_pose(self.pi, -1.0, self.pj, 1.0)


class TestEpipolar:
    def test_ground_truth_projection_on_line(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            rel = random_relative(rng)
            p = rng.uniform([0, 0], [K_TEST.width, K_TEST.height])
            q, _ = project_at_scale(rel, K_TEST, p, rng.uniform(0.5, 5.0), rng.uniform(0.1, 1.0))
            if q is None:
                continue
            line = epipolar_line(rel, K_TEST, p)
            assert abs(line @ np.array([q[0], q[1], 1.0])) < 1e-7

    def test_degenerate_rotation(self):
        rel = RelativePose(np.eye(3), 0.0, np.array([0.0, 0.0, 1.0]), True)
        with pytest.raises(DegenerateTranslation):
            epipolar_line(rel, K_TEST, np.array([10.0, 10.0]))

    def test_pixel_at_epipole(self):
        rel = RelativePose(np.eye(3), 1.0, np.array([0.0, 0.0, 1.0]))
        with pytest.raises(DegenerateTranslation):
            epipolar_line(rel, K_TEST, np.array([K_TEST.cx, K_TEST.cy]))

    def test_pure_rotation_pixel_on_every_line(self):
        rng = np.random.default_rng(4)
        rel = random_relative(rng)
        p = np.array([100.0, 80.0])
        q = pure_rotation_pixel(rel, K_TEST, p)
        line = epipolar_line(rel, K_TEST, p)
        assert abs(line @ np.array([q[0], q[1], 1.0])) < 1e-9


class TestLineCircle:
    def test_horizontal_chord(self):
        seg = line_circle_intersect(np.array([0.0, 1.0, 0.0]), np.zeros(2), 1.0)
        assert seg.valid
        np.testing.assert_allclose(sorted([seg.p_start[0], seg.p_end[0]]), [-1.0, 1.0], atol=1e-12)
        np.testing.assert_allclose([seg.p_start[1], seg.p_end[1]], [0.0, 0.0], atol=1e-12)

    def test_miss(self):
        assert not line_circle_intersect(np.array([0.0, 1.0, -2.0]), np.zeros(2), 1.0).valid

    def test_diagonal(self):
        seg = line_circle_intersect(np.array([1.0, 1.0, 0.0]), np.array([1.0, -1.0]), np.sqrt(2.0))
        ends = sorted([tuple(np.round(seg.p_start, 12)), tuple(np.round(seg.p_end, 12))])
        np.testing.assert_allclose(ends, [(0.0, 0.0), (2.0, -2.0)], atol=1e-9)

    def test_origin_orders_endpoints(self):
        seg = line_circle_intersect(np.array([0.0, 1.0, 0.0]), np.zeros(2), 1.0, origin=np.array([5.0, 0.0]))
        np.testing.assert_allclose(seg.p_start, [1.0, 0.0], atol=1e-12)

    def test_endpoints_on_line_and_circle(self):
        rng = np.random.default_rng(5)
        for _ in range(500):
            line = rng.normal(size=3)
            center = rng.normal(size=2) * 10
            radius = rng.uniform(0.5, 20.0)
            seg = line_circle_intersect(line, center, radius)
            if not seg.valid:
                continue
            unit = line / np.hypot(line[0], line[1])
            for p in (seg.p_start, seg.p_end):
                assert abs(unit @ np.array([p[0], p[1], 1.0])) < 1e-6
                assert abs(np.linalg.norm(p - center) - radius) < 1e-6

    def test_rejects_nonpositive_radius(self):
        with pytest.raises(InputError):
            line_circle_intersect(np.array([0.0, 1.0, 0.0]), np.zeros(2), 0.0)


class TestLineSphere:
    def test_axis_hit(self):
        a, b, ok = line_sphere_intersect(np.zeros(3), np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, 5.0]), 1.0)
        assert ok
        np.testing.assert_allclose(a, [0, 0, 4])
        np.testing.assert_allclose(b, [0, 0, 6])

    def test_miss(self):
        _, _, ok = line_sphere_intersect(np.zeros(3), np.array([0.0, 0.0, 1.0]), np.array([10.0, 0.0, 0.0]), 1.0)
        assert not ok

    def test_random_endpoints_on_sphere(self):
        rng = np.random.default_rng(6)
        for _ in range(500):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            o = rng.normal(size=3)
            radius = rng.uniform(0.5, 3.0)
            offset = rng.normal(size=3)
            offset -= (offset @ d) * d
            offset *= rng.uniform(0, 0.99) * radius / np.linalg.norm(offset)
            center = o + rng.uniform(-5, 5) * d + offset
            a, b, ok = line_sphere_intersect(o, d, center, radius)
            assert ok
            for p in (a, b):
                assert abs(np.linalg.norm(p - center) - radius) < 1e-9

    def test_rejects_non_unit_direction(self):
        with pytest.raises(InputError):
            line_sphere_intersect(np.zeros(3), np.array([0.0, 0.0, 2.0]), np.ones(3), 1.0)


class TestScaleFromProjection:
    def test_round_trip(self):
        rng = np.random.default_rng(7)
        checked = 0
        while checked < 500:
            rel = random_relative(rng)
            p = rng.uniform([0, 0], [K_TEST.width, K_TEST.height])
            d, s = rng.uniform(0.5, 5.0), rng.uniform(0.05, 1.0)
            q, _ = project_at_scale(rel, K_TEST, p, d, s)
            if q is None:
                continue
            assert scale_from_projection(rel, d, p, q, K_TEST) == pytest.approx(s, rel=0, abs=1e-9)
            checked += 1

    def test_homogeneity(self):
        assert corollary2_max_error(1000, seed=8) < 1e-10

    def test_monotone_away_from_rotation_pixel(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            rel = random_relative(rng, max_angle_deg=5.0)
            p = rng.uniform([40, 40], [K_TEST.width - 40, K_TEST.height - 40])
            d = rng.uniform(1.0, 4.0)
            q_rot = pure_rotation_pixel(rel, K_TEST, p)
            q_far, _ = project_at_scale(rel, K_TEST, p, d, 0.5)
            if q_far is None:
                continue
            taus = np.linspace(0.01, 1.0, 100)
            js = [scale_from_projection(rel, d, p, q_rot + t * (q_far - q_rot), K_TEST) for t in taus]
            assert np.all(np.diff(js) > 0)

    def test_epipole_is_ill_conditioned(self):
        rel = RelativePose(np.eye(3), 1.0, np.array([0.0, 0.0, 1.0]))
        with pytest.raises(IllConditioned):
            scale_from_projection(rel, 1.0, np.array([10.0, 10.0]), np.array([K_TEST.cx, K_TEST.cy]), K_TEST)


class TestInlierCharacterization:
    def test_interval_iff_inside_circle(self):
        violations, _ = corollary1_violations(2000, seed=10)
        assert violations == 0


def test_rotation_angle_of_known_rotation():
    from local_sfm.geometry import rodrigues

    assert rotation_angle_deg(rodrigues(np.radians(30.0) * np.array([0.0, 0.0, 1.0])), np.eye(3)) == pytest.approx(30.0)
