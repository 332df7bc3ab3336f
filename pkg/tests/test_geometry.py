"""Projection, virtual crop construction, warping, and pose back-transform."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bowpose.errors import DegenerateBox, PointBehindCamera
from bowpose.geometry import (CameraIntrinsics, Pose, build_virtual_crop,
                              mask_bbox, pose_to_original, pose_to_virtual,
                              project, warp_image, warp_mask)
from conftest import random_rotation

K420 = CameraIntrinsics(fx=500.0, fy=500.0, cx=210.0, cy=210.0,
                        width=420, height=420)


class TestPose:
    def test_identity(self):
        p = Pose.identity()
        assert np.allclose(p.rotation, np.eye(3))
        assert np.allclose(p.translation, 0.0)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(ValueError):
            Pose(np.eye(3) * 2.0, np.zeros(3))

    def test_rejects_reflection(self):
        with pytest.raises(ValueError):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    def test_inverse_compose_is_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = Pose(random_rotation(rng), rng.normal(scale=100.0, size=3))
            q = p.compose(p.inverse())
            assert np.abs(q.rotation - np.eye(3)).max() < 1e-9
            assert np.abs(q.translation).max() < 1e-9

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_rotation_invariants(self, seed):
        rng = np.random.default_rng(seed)
        R = random_rotation(rng)
        p = Pose(R, np.zeros(3))
        assert p.is_valid(1e-9)


class TestProject:
    def test_optical_axis_point_maps_to_principal_point(self):
        pose = Pose(np.eye(3), np.array([0.0, 0.0, 1000.0]))
        uv = project(np.zeros(3), pose, K420)
        assert np.allclose(uv, [210.0, 210.0])

    def test_offset_point(self):
        pose = Pose(np.eye(3), np.array([0.0, 0.0, 1000.0]))
        uv = project(np.array([100.0, 0.0, 0.0]), pose, K420)
        assert np.allclose(uv, [260.0, 210.0])

    def test_behind_camera_raises(self):
        pose = Pose(np.eye(3), np.array([0.0, 0.0, -5.0]))
        with pytest.raises(PointBehindCamera):
            project(np.zeros(3), pose, K420)


class TestBuildVirtualCrop:
    def test_centered_bbox_gives_identity_rotation(self):
        crop = build_virtual_crop(K420, (160.0, 160.0, 260.0, 260.0),
                                  S=420, delta=0.6)
        assert np.abs(crop.rotation_to_virtual - np.eye(3)).max() < 1e-9

    def test_warped_bbox_longer_side(self):
        # width-100 bbox centered on the principal point
        crop = build_virtual_crop(K420, (160.0, 185.0, 260.0, 235.0),
                                  S=420, delta=0.6)
        corners = np.array([[160.0, 185.0, 1.0], [260.0, 185.0, 1.0],
                            [260.0, 235.0, 1.0], [160.0, 235.0, 1.0]])
        warped = corners @ crop.homography.T
        warped = warped[:, :2] / warped[:, 2:]
        side = max(warped[:, 0].max() - warped[:, 0].min(),
                   warped[:, 1].max() - warped[:, 1].min())
        assert abs(side - 252.0) <= 1.0

    def test_homography_consistency(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            x0, y0 = rng.uniform(0, 300, size=2)
            bbox = (x0, y0, x0 + rng.uniform(10, 100), y0 + rng.uniform(10, 100))
            crop = build_virtual_crop(K420, bbox, S=420, delta=0.6)
            Kv = crop.virtual_intrinsics
            expected = Kv.matrix @ crop.rotation_to_virtual @ \
                np.linalg.inv(K420.matrix)
            got = crop.homography / crop.homography[2, 2]
            expected = expected / expected[2, 2]
            assert np.abs(got - expected).max() < 1e-9
            assert Kv.width == Kv.height == 420
            assert Kv.cx == Kv.cy == 210.0

    def test_zero_area_bbox_raises(self):
        with pytest.raises(DegenerateBox):
            build_virtual_crop(K420, (100.0, 100.0, 100.0, 200.0), 420, 0.6)

    def test_deterministic(self):
        a = build_virtual_crop(K420, (37.0, 81.0, 190.0, 305.0), 420, 0.6)
        b = build_virtual_crop(K420, (37.0, 81.0, 190.0, 305.0), 420, 0.6)
        assert a.homography.tobytes() == b.homography.tobytes()
        assert a.rotation_to_virtual.tobytes() == b.rotation_to_virtual.tobytes()


class TestWarpImage:
    def test_identity_homography_is_identity(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(size=(64, 64, 3))
        crop = build_virtual_crop(
            CameraIntrinsics(fx=100.0, fy=100.0, cx=32.0, cy=32.0,
                             width=64, height=64),
            (12.0, 12.0, 52.0, 52.0), S=64, delta=0.625)
        # force the identity warp
        ident = type(crop)(virtual_intrinsics=crop.virtual_intrinsics,
                           rotation_to_virtual=np.eye(3),
                           homography=np.eye(3))
        out = warp_image(img, ident)
        assert np.abs(out - img).max() < 1e-9

    def test_translation_shifts_and_fills_black(self):
        img = np.ones((32, 32, 3))
        H = np.array([[1.0, 0.0, 10.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        crop = _crop_with(H, 32)
        out = warp_image(img, crop)
        assert np.all(out[:, :10] == 0.0)       # vacated left strip
        assert np.all(out[5, 12:30] == 1.0)

    def test_rotation_warp_preserves_collinearity(self):
        # three collinear 3D points stay collinear after a 10 degree
        # rotation-only virtual camera warp
        angle = np.radians(10.0)
        R = np.array([[np.cos(angle), 0.0, np.sin(angle)],
                      [0.0, 1.0, 0.0],
                      [-np.sin(angle), 0.0, np.cos(angle)]]).T
        Kv = K420
        H = Kv.matrix @ R @ np.linalg.inv(K420.matrix)
        pts3d = np.array([[0.0, 0.0, 1000.0], [50.0, 30.0, 1100.0],
                          [100.0, 60.0, 1200.0]])  # collinear in 3D
        uv = np.stack([K420.fx * pts3d[:, 0] / pts3d[:, 2] + K420.cx,
                       K420.fy * pts3d[:, 1] / pts3d[:, 2] + K420.cy], axis=1)
        h = np.concatenate([uv, np.ones((3, 1))], axis=1) @ H.T
        w = h[:, :2] / h[:, 2:]
        # area of the triangle spanned by the three warped points
        d1, d2 = w[1] - w[0], w[2] - w[0]
        area = 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])
        span = np.linalg.norm(w[2] - w[0])
        assert area / span < 0.1


def _crop_with(H, S):
    from bowpose.geometry import VirtualCrop
    Kv = CameraIntrinsics(fx=float(S), fy=float(S), cx=S / 2.0, cy=S / 2.0,
                          width=S, height=S)
    return VirtualCrop(virtual_intrinsics=Kv, rotation_to_virtual=np.eye(3),
                       homography=H)


class TestWarpMask:
    def test_identity_is_identity(self):
        rng = np.random.default_rng(1)
        mask = (rng.uniform(size=(32, 32)) > 0.5).astype(np.uint8)
        out = warp_mask(mask, _crop_with(np.eye(3), 32))
        assert np.array_equal(out, mask)

    def test_full_frame_mask_footprint(self):
        mask = np.ones((32, 32), dtype=np.uint8)
        H = np.array([[1.0, 0.0, 8.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        out = warp_mask(mask, _crop_with(H, 32))
        assert np.all(out[:, 8:] == 1)
        assert np.all(out[:, :8] == 0)

    def test_circle_area_preserved_under_translation(self):
        yy, xx = np.mgrid[0:64, 0:64]
        mask = ((xx - 24) ** 2 + (yy - 24) ** 2 <= 15 ** 2).astype(np.uint8)
        H = np.array([[1.0, 0.0, 7.0], [0.0, 1.0, 5.0], [0.0, 0.0, 1.0]])
        out = warp_mask(mask, _crop_with(H, 64))
        assert abs(int(out.sum()) - int(mask.sum())) <= 0.02 * mask.sum()


class TestPoseToOriginal:
    def test_identity_rotation_is_noop(self):
        crop = _crop_with(np.eye(3), 64)
        pose = Pose(np.eye(3), np.array([1.0, 2.0, 500.0]))
        out = pose_to_original(pose, crop)
        assert np.allclose(out.rotation, pose.rotation)
        assert np.allclose(out.translation, pose.translation)

    def test_round_trip(self):
        rng = np.random.default_rng(5)
        crop = build_virtual_crop(K420, (40.0, 60.0, 200.0, 260.0), 420, 0.6)
        for _ in range(20):
            pose = Pose(random_rotation(rng),
                        rng.uniform([-100, -100, 400], [100, 100, 1200]))
            back = pose_to_original(pose_to_virtual(pose, crop), crop)
            assert np.abs(back.rotation - pose.rotation).max() < 1e-10
            assert np.abs(back.translation - pose.translation).max() < 1e-10

    def test_two_path_projection_equivalence(self):
        # project with (pose_virtual, K_virtual), pull back through the
        # homography, compare against (pose_original, K_original)
        rng = np.random.default_rng(11)
        n_ok = 0
        while n_ok < 1000:
            x0, y0 = rng.uniform(20, 300, size=2)
            bbox = (x0, y0, x0 + rng.uniform(20, 100), y0 + rng.uniform(20, 100))
            crop = build_virtual_crop(K420, bbox, 420, 0.6)
            pose = Pose(random_rotation(rng),
                        np.array([rng.uniform(-50, 50), rng.uniform(-50, 50),
                                  rng.uniform(600, 1500)]))
            x = rng.uniform(-40.0, 40.0, size=3)
            pose_v = pose_to_virtual(pose, crop)
            try:
                uv_orig = project(x, pose, K420)
                uv_virt = project(x, pose_v, crop.virtual_intrinsics)
            except PointBehindCamera:
                continue
            h = np.linalg.inv(crop.homography) @ np.array([uv_virt[0],
                                                           uv_virt[1], 1.0])
            pulled = h[:2] / h[2]
            assert np.abs(pulled - uv_orig).max() < 1e-6
            n_ok += 1


class TestMaskBbox:
    def test_simple_box(self):
        mask = np.zeros((20, 20), dtype=np.uint8)
        mask[5:9, 3:12] = 1
        assert mask_bbox(mask) == (3.0, 5.0, 12.0, 9.0)

    def test_empty_raises(self):
        with pytest.raises(DegenerateBox):
            mask_bbox(np.zeros((10, 10), dtype=np.uint8))
