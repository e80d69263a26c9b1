"""Geometry tests: projection round trips, se3 maps, and the dense warp.

The dense warp is cross-checked against a scalar per-pixel composition of
backproject -> transform -> project, written independently below.
"""

import numpy as np
import pytest

import recsfm.tensor as T
from recsfm import geometry as G
from recsfm.errors import DimensionError, DomainError

from gradcheck import check_gradients


def random_intrinsics(rng, width=16, height=12):
    fx = float(rng.uniform(20, 80))
    fy = float(rng.uniform(20, 80))
    return G.Intrinsics(fx, fy, (width - 1) / 2, (height - 1) / 2, width, height)


def random_pose(rng, rot_scale=0.3, trans_scale=0.4):
    xi = np.concatenate([rng.normal(scale=rot_scale, size=3),
                         rng.normal(scale=trans_scale, size=3)])
    return G.se3_exp(xi)


def warp_pointwise(depth, pose, intr):
    """Scalar oracle for warp_coords: per-pixel lift, move, project."""
    h, w = depth.shape[1:]
    coords = np.zeros((2, h, w))
    valid = np.zeros((1, h, w))
    for i in range(h):
        for j in range(w):
            pt = G.backproject(np.array([j, i], dtype=float), depth[0, i, j], intr)
            moved = G.transform(pose, pt)
            pix, front = G.project(moved, intr)
            coords[:, i, j] = pix
            inside = 0 <= pix[0] <= w - 1 and 0 <= pix[1] <= h - 1
            valid[0, i, j] = float(front and inside)
    return coords, valid


class TestProjection:
    def test_principal_point(self):
        intr = G.Intrinsics(100, 100, 50, 50, 101, 101)
        pix, front = G.project(np.array([0.0, 0.0, 2.0]), intr)
        assert front
        np.testing.assert_allclose(pix, [50.0, 50.0])

    def test_unit_offset(self):
        intr = G.Intrinsics(100, 100, 50, 50, 101, 101)
        pix, front = G.project(np.array([1.0, 0.0, 2.0]), intr)
        np.testing.assert_allclose(pix, [100.0, 50.0])
        assert front

    def test_behind_camera_flag(self):
        intr = G.Intrinsics(100, 100, 50, 50, 101, 101)
        _, front = G.project(np.array([0.0, 0.0, -1.0]), intr)
        assert not front

    def test_backproject_examples(self):
        intr = G.Intrinsics(100, 100, 50, 50, 101, 101)
        np.testing.assert_allclose(G.backproject(np.array([50.0, 50.0]), 2.0, intr),
                                   [0.0, 0.0, 2.0])
        np.testing.assert_allclose(G.backproject(np.array([100.0, 50.0]), 2.0, intr),
                                   [1.0, 0.0, 2.0])
        with pytest.raises(DomainError):
            G.backproject(np.array([1.0, 1.0]), -0.5, intr)

    def test_round_trip_random(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            intr = random_intrinsics(rng)
            pix = np.stack([rng.uniform(0, intr.width - 1, size=8),
                            rng.uniform(0, intr.height - 1, size=8)])
            d = rng.uniform(0.5, 20.0, size=8)
            back, _ = G.project(G.backproject(pix, d, intr), intr)
            np.testing.assert_allclose(back, pix, atol=1e-9)


class TestSe3:
    def test_exp_zero_is_identity(self):
        p = G.se3_exp(np.zeros(6))
        np.testing.assert_array_equal(p.rotation, np.eye(3))
        np.testing.assert_array_equal(p.translation, np.zeros(3))

    def test_quarter_turn_about_z(self):
        p = G.se3_exp(np.array([0, 0, np.pi / 2, 0, 0, 0]))
        np.testing.assert_allclose(G.transform(p, np.array([1.0, 0, 0])),
                                   [0.0, 1.0, 0.0], atol=1e-9)

    def test_log_right_inverse(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            omega = rng.normal(size=3)
            norm = np.linalg.norm(omega)
            omega *= rng.uniform(0, 2.9) / max(norm, 1e-12)
            xi = np.concatenate([omega, rng.normal(size=3)])
            np.testing.assert_allclose(G.se3_log(G.se3_exp(xi)), xi, atol=1e-9)

    def test_log_small_angles(self):
        rng = np.random.default_rng(2)
        for scale in (1e-10, 1e-6, 1e-3):
            xi = np.concatenate([rng.normal(scale=scale, size=3),
                                 rng.normal(size=3)])
            np.testing.assert_allclose(G.se3_log(G.se3_exp(xi)), xi,
                                       rtol=1e-9, atol=1e-12)

    def test_compose_inverse_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            p = random_pose(rng)
            both = G.compose(G.inverse(p), p)
            np.testing.assert_allclose(both.rotation, np.eye(3), atol=1e-6)
            np.testing.assert_allclose(both.translation, 0, atol=1e-6)

    def test_rotation_stays_orthonormal_under_long_chains(self):
        """1000 float64 compositions keep R^T R = I thanks to periodic renorm."""
        rng = np.random.default_rng(4)
        acc = G.Pose.identity()
        for _ in range(1000):
            acc = G.compose(acc, random_pose(rng, rot_scale=0.8, trans_scale=1.0))
        gram = acc.rotation.T @ acc.rotation
        np.testing.assert_allclose(gram, np.eye(3), atol=1e-9)
        assert abs(np.linalg.det(acc.rotation) - 1.0) < 1e-9

    def test_exp_twist_matches_numpy_exp(self):
        """The differentiable exponential agrees with the ndarray one."""
        rng = np.random.default_rng(5)
        for scale in (1e-9, 1e-5, 0.3, 2.0):
            xi = rng.normal(scale=1.0, size=6) * scale
            pose = G.se3_exp(xi)
            rot_t, t_t = G.exp_twist(T.tensor(xi))
            np.testing.assert_allclose(rot_t.data, pose.rotation, atol=1e-12)
            np.testing.assert_allclose(t_t.data.reshape(3), pose.translation, atol=1e-12)


class TestWarpCoords:
    def test_identity_is_exact_pixel_grid(self):
        """Identity pose reproduces the pixel grid bit-for-bit, valid all 1."""
        rng = np.random.default_rng(10)
        intr = G.Intrinsics(37.0, 41.0, 7.5, 5.5, 16, 12)
        depth = rng.uniform(0.5, 9.0, size=(1, 12, 16))
        coords, valid = G.warp_coords(depth, G.Pose.identity(), intr)
        np.testing.assert_array_equal(coords.data, G.pixel_grid(16, 12))
        assert valid.min() == 1.0

    def test_identity_exact_via_zero_twist(self):
        intr = G.Intrinsics(37.0, 41.0, 7.5, 5.5, 16, 12)
        depth = np.full((1, 12, 16), 3.0)
        coords, _ = G.warp_coords(depth, T.tensor(np.zeros(6)), intr)
        np.testing.assert_array_equal(coords.data, G.pixel_grid(16, 12))

    def test_fronto_parallel_disparity(self):
        """Sideways baseline b over plane depth d shifts all pixels fx*b/d."""
        intr = G.Intrinsics(40.0, 40.0, 7.5, 7.5, 16, 16)
        d, b = 4.0, 0.25
        depth = np.full((1, 16, 16), d)
        pose = G.Pose(np.eye(3), np.array([-b, 0.0, 0.0]))
        coords, _ = G.warp_coords(depth, pose, intr)
        grid = G.pixel_grid(16, 16)
        np.testing.assert_allclose(coords.data[0] - grid[0], -intr.fx * b / d,
                                   atol=1e-6)
        np.testing.assert_allclose(coords.data[1], grid[1], atol=1e-6)

    def test_matches_pointwise_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            intr = random_intrinsics(rng, width=9, height=7)
            depth = rng.uniform(1.0, 8.0, size=(1, 7, 9))
            pose = random_pose(rng, rot_scale=0.1, trans_scale=0.3)
            coords, valid = G.warp_coords(depth, pose, intr)
            want_coords, want_valid = warp_pointwise(depth, pose, intr)
            keep = want_valid[0] > 0  # oracle pixels that stayed in front
            np.testing.assert_allclose(coords.data[:, keep], want_coords[:, keep],
                                       atol=1e-9)
            np.testing.assert_array_equal(valid, want_valid)

    def test_gradients_wrt_depth_and_twist(self):
        """FD check through backproject-transform-project chain."""
        rng = np.random.default_rng(12)
        intr = G.Intrinsics(11.0, 13.0, 3.5, 2.5, 8, 6)
        worst = 0.0
        for _ in range(20):
            depth = rng.uniform(2.0, 6.0, size=(1, 6, 8))
            xi = np.concatenate([rng.normal(scale=0.05, size=3),
                                 rng.normal(scale=0.1, size=3)])

            def build(d_t, xi_t):
                coords, _ = G.warp_coords(d_t, xi_t, intr)
                return (coords * coords).mean()

            worst = max(worst, check_gradients(build, [depth, xi]))
        assert worst < 1e-3, f"worst fd error {worst:.3e}"

    def test_rejects_bad_depth(self):
        intr = G.Intrinsics(10, 10, 3.5, 3.5, 8, 8)
        with pytest.raises(DomainError):
            G.warp_coords(np.zeros((1, 8, 8)), G.Pose.identity(), intr)
        with pytest.raises(DimensionError):
            G.warp_coords(np.ones((1, 4, 4)), G.Pose.identity(), intr)


class TestPoseText:
    def test_line_round_trip(self):
        rng = np.random.default_rng(20)
        p = random_pose(rng)
        q = G.parse_pose_line(G.pose_to_line(p))
        np.testing.assert_array_equal(q.rotation, p.rotation)
        np.testing.assert_array_equal(q.translation, p.translation)

    def test_rejects_short_line(self):
        with pytest.raises(DomainError):
            G.parse_pose_line("1 2 3")


class TestIntrinsics:
    def test_scaling_divides_consistently(self):
        intr = G.Intrinsics(64.0, 64.0, 31.5, 31.5, 64, 64)
        s = intr.scaled(8)
        assert (s.fx, s.fy, s.cx, s.cy) == (8.0, 8.0, 31.5 / 8, 31.5 / 8)
        assert (s.width, s.height) == (8, 8)

    def test_rejects_bad_focal(self):
        with pytest.raises(DomainError):
            G.Intrinsics(0.0, 1.0, 0, 0, 4, 4)
