"""Back-projection, projection, and the pinhole round trip.

The expected world coordinates in the exact-value tests are hand-evaluated
from world = R @ (d * K^-1 @ [j, i, 1]^T) + t with
K^-1 @ [j, i, 1] = [(j - cx)/fx, (i - cy)/fy, 1].
"""

import numpy as np
import pytest

from scene_sampler.errors import InvalidInput
from scene_sampler.geometry import (
    DepthMap,
    Extrinsics,
    Intrinsics,
    backproject,
    load_depth_png,
    load_extrinsics,
    load_intrinsics,
    project,
    save_depth_png,
)

from conftest import make_depth


def random_pose(rng):
    """Proper rotation from QR, sign-fixed to det +1."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return Extrinsics(rotation=q, translation=rng.uniform(-5, 5, 3))


class TestBackproject:
    def test_identity_camera_unit_depth(self, identity_camera):
        intr, extr = identity_camera
        cmap = backproject(make_depth([[1.0]]), intr, extr)
        np.testing.assert_allclose(cmap.coords[0, 0], [0.0, 0.0, 1.0])
        assert cmap.valid[0, 0]

    def test_zero_depth_is_invalid(self, identity_camera):
        intr, extr = identity_camera
        cmap = backproject(make_depth([[0.0]]), intr, extr)
        assert not cmap.valid[0, 0]
        np.testing.assert_array_equal(cmap.coords[0, 0], [0.0, 0.0, 0.0])

    def test_principal_pixel_with_translation(self, vga_camera):
        """Principal-point pixel maps onto the optical axis: depth 2 at
        (i=240, j=320) with translation (1,2,3) lands at (1, 2, 5)."""
        intr, extr = vga_camera
        depth = np.zeros((480, 640))
        depth[240, 320] = 2.0
        cmap = backproject(make_depth(depth), intr, extr)
        np.testing.assert_allclose(cmap.coords[240, 320], [1.0, 2.0, 5.0], atol=1e-12)
        assert cmap.valid.sum() == 1

    def test_off_center_pixel_hand_computed(self, vga_camera):
        intr, extr = vga_camera
        depth = np.zeros((480, 640))
        depth[100, 40] = 3.0
        cmap = backproject(make_depth(depth), intr, extr)
        expect = np.array([(40 - 320) / 500 * 3, (100 - 240) / 500 * 3, 3.0]) + [1, 2, 3]
        np.testing.assert_allclose(cmap.coords[100, 40], expect, atol=1e-12)

    def test_dimension_mismatch_rejected(self, vga_camera):
        intr, extr = vga_camera
        with pytest.raises(InvalidInput):
            backproject(make_depth(np.ones((4, 4))), intr, extr)

    def test_nonfinite_depth_masked(self, identity_camera):
        intr, extr = identity_camera
        cmap = backproject(make_depth([[np.nan]]), intr, extr)
        assert not cmap.valid[0, 0]


class TestProject:
    def test_identity_axis_point(self, identity_camera):
        intr, extr = identity_camera
        u, v, d = project(np.array([0.0, 0.0, 1.0]), intr, extr)
        np.testing.assert_allclose([u, v, d], [0.0, 0.0, 1.0])

    def test_inverse_of_derived_example(self, vga_camera):
        intr, extr = vga_camera
        u, v, d = project(np.array([1.0, 2.0, 5.0]), intr, extr)
        np.testing.assert_allclose([u, v, d], [320.0, 240.0, 2.0], atol=1e-12)

    def test_behind_camera_signaled_by_depth(self, identity_camera):
        intr, extr = identity_camera
        _, _, d = project(np.array([0.0, 0.0, -2.0]), intr, extr)
        assert d < 0


class TestRoundTrip:
    def test_project_backproject_random_cameras(self):
        """|project(backproject(p)) - (j, i, d)|_inf < 1e-4 per valid pixel."""
        rng = np.random.default_rng(42)
        for _ in range(20):
            intr = Intrinsics(
                fx=rng.uniform(100, 800),
                fy=rng.uniform(100, 800),
                cx=rng.uniform(10, 50),
                cy=rng.uniform(10, 40),
                width=64,
                height=48,
            )
            extr = random_pose(rng)
            depth = make_depth(rng.uniform(0.5, 8.0, size=(48, 64)))
            cmap = backproject(depth, intr, extr)
            u, v, d = project(cmap.coords, intr, extr)
            jj, ii = np.meshgrid(np.arange(64), np.arange(48))
            assert np.abs(u - jj).max() < 1e-4
            assert np.abs(v - ii).max() < 1e-4
            assert np.abs(d - depth.values).max() < 1e-4

    def test_rigid_invariance(self):
        """Backprojecting under pose T then applying T^-1 matches identity pose."""
        rng = np.random.default_rng(7)
        intr = Intrinsics(fx=200.0, fy=210.0, cx=16.0, cy=12.0, width=32, height=24)
        extr = random_pose(rng)
        depth = make_depth(rng.uniform(0.5, 5.0, size=(24, 32)))
        posed = backproject(depth, intr, extr)
        plain = backproject(depth, intr, Extrinsics.identity())
        inv = extr.inverse()
        undone = posed.coords @ inv.rotation.T + inv.translation
        np.testing.assert_allclose(undone, plain.coords, atol=1e-5)


class TestTypes:
    def test_intrinsics_validation(self):
        with pytest.raises(InvalidInput):
            Intrinsics(fx=-1.0, fy=1.0, cx=0.0, cy=0.0, width=2, height=2)
        with pytest.raises(InvalidInput):
            Intrinsics(fx=1.0, fy=1.0, cx=5.0, cy=0.0, width=2, height=2)

    def test_extrinsics_rejects_non_rotation(self):
        with pytest.raises(InvalidInput):
            Extrinsics(rotation=np.eye(3) * 2.0, translation=np.zeros(3))
        with pytest.raises(InvalidInput):
            # reflection: orthonormal but det -1
            Extrinsics(rotation=np.diag([1.0, 1.0, -1.0]), translation=np.zeros(3))

    def test_depthmap_zeroes_invalid(self):
        dm = DepthMap.from_values(np.array([[1.0, -2.0], [np.inf, 0.5]]))
        np.testing.assert_array_equal(dm.valid, [[True, False], [False, True]])
        np.testing.assert_array_equal(dm.values, [[1.0, 0.0], [0.0, 0.5]])

    def test_matrix_round_trip(self):
        rng = np.random.default_rng(3)
        extr = random_pose(rng)
        again = Extrinsics.from_matrix(extr.matrix)
        np.testing.assert_allclose(again.rotation, extr.rotation)
        np.testing.assert_allclose(again.translation, extr.translation)


class TestFileFormats:
    def test_intrinsics_3x3_and_4x4(self, tmp_path):
        mat3 = "500 0 320\n0 500 240\n0 0 1\n"
        mat4 = "500 0 320 0\n0 500 240 0\n0 0 1 0\n0 0 0 1\n"
        for text in (mat3, mat4):
            path = tmp_path / "intrinsic.txt"
            path.write_text(text)
            intr = load_intrinsics(path, width=640, height=480)
            assert (intr.fx, intr.fy, intr.cx, intr.cy) == (500.0, 500.0, 320.0, 240.0)

    def test_extrinsics_file(self, tmp_path):
        path = tmp_path / "pose.txt"
        np.savetxt(path, np.eye(4), fmt="%.17g")
        extr = load_extrinsics(path)
        np.testing.assert_array_equal(extr.rotation, np.eye(3))

    def test_corrupt_pose_raises(self, tmp_path):
        path = tmp_path / "pose.txt"
        path.write_text("not a matrix\n")
        with pytest.raises(InvalidInput):
            load_extrinsics(path)

    def test_depth_png_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        depth = make_depth(rng.integers(0, 5000, size=(12, 16)) / 1000.0)
        path = tmp_path / "0.png"
        save_depth_png(path, depth, depth_scale=1000.0)
        loaded = load_depth_png(path, depth_scale=1000.0)
        np.testing.assert_array_equal(loaded.values, depth.values)
        np.testing.assert_array_equal(loaded.valid, depth.valid)

    def test_depth_scale_configurable(self, tmp_path):
        depth = make_depth([[2.0]])
        path = tmp_path / "0.png"
        save_depth_png(path, depth, depth_scale=500.0)
        loaded = load_depth_png(path, depth_scale=500.0)
        assert loaded.values[0, 0] == 2.0
