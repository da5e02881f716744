import math

import numpy as np
import pytest

from bevloc.geometry import (
    CameraExtrinsics,
    CameraIntrinsics,
    CameraRig,
    EgoPose,
    HeightLift,
    camera_at,
    compose_pose,
    ground_to_pixel,
    ground_to_pixel_matrix,
    invert_pose,
    pixel_to_ground,
    surround_rig,
    wrap_angle,
)

from conftest import random_camera


class TestProjection:
    def test_nadir_principal_axis(self, nadir_camera):
        p = ground_to_pixel(nadir_camera, (0.0, 0.0), 0.0)
        assert p is not None
        np.testing.assert_allclose((p.u, p.v), (50.0, 50.0), atol=1e-9)
        assert p.depth == pytest.approx(1.5, abs=1e-12)

    def test_nadir_similar_triangles(self, nadir_camera):
        # 0.15 m of ground offset at depth 1.5 with f=100 is exactly 10 px
        p = ground_to_pixel(nadir_camera, (0.15, 0.0), 0.0)
        offset = math.hypot(p.u - 50.0, p.v - 50.0)
        assert offset == pytest.approx(10.0, abs=1e-9)

    def test_forward_camera_matrix_product_oracle(self):
        # explicit K @ P @ T_h chain as the independent reference
        cam = camera_at(
            "fw", (0.0, 0.0, 1.5), yaw=0.0, pitch_down=math.radians(10),
            fx=500.0, fy=500.0, width=545, height=225,
        )
        assert cam.intrinsics.cx == 272 and cam.intrinsics.cy == 112
        k = cam.intrinsics.matrix()
        p34 = cam.extrinsics.matrix()
        t = HeightLift(0.5).matrix()
        vec = k @ p34 @ t @ np.array([10.0, 1.0, 0.0, 1.0])
        expect = (vec[0] / vec[2], vec[1] / vec[2], vec[2])
        got = ground_to_pixel(cam, (10.0, 1.0), HeightLift(0.5))
        np.testing.assert_allclose((got.u, got.v, got.depth), expect, atol=1e-9)

    def test_behind_camera_signals_none(self):
        cam = camera_at("fw", (0.0, 0.0, 1.5), 0.0, math.radians(10), 300, 300, 400, 200)
        assert ground_to_pixel(cam, (-5.0, 0.0), 0.0) is None

    def test_projective_scale_invariance(self, nadir_camera):
        b = ground_to_pixel_matrix(nadir_camera, 0.3)
        v = b @ (2.0, -1.0, 1.0)
        for s in (0.25, 1.0, 7.5):
            w = s * v
            np.testing.assert_allclose(w[:2] / w[2], v[:2] / v[2], rtol=1e-12)


class TestInverse:
    def test_nadir_inverse(self, nadir_camera):
        g = pixel_to_ground(nadir_camera, (50.0, 50.0), 0.0)
        np.testing.assert_allclose(g, (0.0, 0.0), atol=1e-9)

    def test_horizon_pixel_no_intersection(self):
        level = camera_at("level", (0.0, 0.0, 1.5), 0.0, 0.0, 300.0, 300.0, 400, 200)
        # principal point of a level camera looks along the horizon
        assert pixel_to_ground(level, (199.5, 99.5), 0.0) is None

    def test_plane_through_camera_center_singular(self, nadir_camera):
        assert pixel_to_ground(nadir_camera, (50.0, 50.0), 1.5) is None

    def test_round_trip_randomized(self):
        rng = np.random.default_rng(42)
        checked = 0
        while checked < 2000:
            cam = random_camera(rng)
            h = rng.uniform(-0.5, 3.0)
            ground = (rng.uniform(-40, 40), rng.uniform(-40, 40))
            p = ground_to_pixel(cam, ground, h)
            if p is None or p.depth <= 0.1:
                continue
            back = pixel_to_ground(cam, (p.u, p.v), h)
            assert back is not None
            np.testing.assert_allclose(back, ground, atol=1e-6)
            checked += 1

    def test_lift_equals_lowered_camera(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            cam = random_camera(rng)
            h = rng.uniform(-0.5, 3.0)
            c = cam.extrinsics.center() - np.array([0.0, 0.0, h])
            lowered = type(cam)(
                cam.name,
                cam.intrinsics,
                CameraExtrinsics(cam.extrinsics.rotation, -cam.extrinsics.rotation @ c),
            )
            pix = (rng.uniform(0, cam.intrinsics.width - 1), rng.uniform(0, cam.intrinsics.height - 1))
            a = pixel_to_ground(cam, pix, h)
            b = pixel_to_ground(lowered, pix, 0.0)
            assert (a is None) == (b is None)
            if a is not None:
                np.testing.assert_allclose(a, b, atol=1e-9)


class TestPose:
    def test_identity_compose(self):
        p = EgoPose(3.0, -2.0, 0.7)
        q = compose_pose(EgoPose(), p)
        assert (q.x, q.y, q.yaw) == (p.x, p.y, p.yaw)

    def test_inverse(self):
        p = EgoPose(3.0, -2.0, 0.7)
        q = compose_pose(p, invert_pose(p))
        assert abs(q.x) < 1e-12 and abs(q.y) < 1e-12 and abs(q.yaw) < 1e-12

    def test_quarter_turn(self):
        q = compose_pose(EgoPose(1.0, 0.0, math.pi / 2), EgoPose(1.0, 0.0, 0.0))
        np.testing.assert_allclose((q.x, q.y, q.yaw), (1.0, 1.0, math.pi / 2), atol=1e-12)

    def test_associativity(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            a, b, c = (
                EgoPose(*rng.uniform(-5, 5, 2), rng.uniform(-4, 4)) for _ in range(3)
            )
            left = compose_pose(compose_pose(a, b), c)
            right = compose_pose(a, compose_pose(b, c))
            np.testing.assert_allclose(
                (left.x, left.y, left.yaw), (right.x, right.y, right.yaw), atol=1e-12
            )

    def test_yaw_normalization(self):
        assert EgoPose(0, 0, math.pi + 0.1).yaw == pytest.approx(-math.pi + 0.1)
        assert EgoPose(0, 0, -math.pi).yaw == pytest.approx(math.pi)
        assert wrap_angle(5 * math.pi) == pytest.approx(math.pi)


class TestValidation:
    def test_focal_positive(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(-1.0, 100.0, 50.0, 50.0, 100, 100)

    def test_principal_point_in_bounds(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(100.0, 100.0, 500.0, 50.0, 100, 100)

    def test_rotation_orthonormal(self):
        bad = np.eye(3)
        bad[0, 1] = 1e-6
        with pytest.raises(ValueError):
            CameraExtrinsics(bad, np.zeros(3))

    def test_lift_at_zero_is_identity(self):
        np.testing.assert_array_equal(HeightLift(0.0).matrix(), np.eye(4))


class TestRigJson:
    def test_round_trip(self, tmp_path):
        rig = surround_rig(n_cameras=4)
        path = tmp_path / "rig.json"
        rig.to_json(path)
        rig2 = CameraRig.from_json(path)
        assert len(rig2) == 4
        for a, b in zip(rig, rig2):
            assert a.name == b.name
            np.testing.assert_allclose(a.projection(), b.projection(), rtol=1e-15)

    def test_unique_names_required(self, nadir_camera):
        with pytest.raises(ValueError):
            CameraRig((nadir_camera, nadir_camera))
