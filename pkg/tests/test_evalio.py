import math

import numpy as np
import pytest

from dfo import evalio as ev
from dfo import geometry as geo
from dfo.errors import EmptyMask, LengthMismatch, MalformedLine, ShapeMismatch
from dfo.geometry import RigidTransform
from dfo.grids import Grid

from conftest import random_twist


def random_trajectory(rng, n):
    return ev.integrate([geo.exp_map(random_twist(rng, 0.5)) for _ in range(n - 1)])


def translated(points):
    return ev.Trajectory([RigidTransform(np.eye(3), p) for p in points])


class TestPoseFiles:
    def test_identity_line(self, tmp_path):
        p = tmp_path / "poses.txt"
        p.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n")
        traj = ev.read_kitti_poses(p)
        assert len(traj) == 1
        np.testing.assert_array_equal(traj.poses[0].matrix, np.eye(4))

    def test_roundtrip(self, tmp_path, rng):
        traj = random_trajectory(rng, 8)
        ev.write_kitti_poses(traj, tmp_path / "p.txt")
        back = ev.read_kitti_poses(tmp_path / "p.txt")
        for a, b in zip(traj.poses, back.poses):
            np.testing.assert_allclose(b.matrix, a.matrix, atol=1e-9)

    def test_blank_lines_skipped(self, tmp_path):
        p = tmp_path / "poses.txt"
        p.write_text("\n1 0 0 0 0 1 0 0 0 0 1 0\n\n1 0 0 1 0 1 0 0 0 0 1 0\n")
        assert ev.read_kitti_poses(p).positions.tolist() == [[0, 0, 0], [1, 0, 0]]

    @pytest.mark.parametrize("line, lineno", [
        ("1 0 0 0 0 1 0 0 0 0 1", 2),
        ("1 0 0 0 0 1 0 0 0 0 1 x", 2),
        ("2 0 0 0 0 1 0 0 0 0 1 0", 2),
        ("1 0 0 nan 0 1 0 0 0 0 1 0", 2),
    ])
    def test_malformed(self, tmp_path, line, lineno):
        p = tmp_path / "poses.txt"
        p.write_text("1 0 0 0 0 1 0 0 0 0 1 0\n" + line + "\n")
        with pytest.raises(MalformedLine) as info:
            ev.read_kitti_poses(p)
        assert info.value.lineno == lineno


class TestIntegrate:
    def test_identity(self):
        traj = ev.integrate([RigidTransform.identity()] * 4)
        assert len(traj) == 5
        for T in traj.poses:
            np.testing.assert_array_equal(T.matrix, np.eye(4))

    def test_forward_steps(self):
        traj = ev.integrate([RigidTransform(np.eye(3), [0, 0, 1])] * 4)
        np.testing.assert_allclose(traj.positions, [[0, 0, k] for k in range(5)])

    def test_fold_oracle(self, rng):
        rels = [geo.exp_map(random_twist(rng, 1.0)) for _ in range(6)]
        M = np.eye(4)
        for T in rels:
            M = M @ T.matrix
        np.testing.assert_allclose(ev.integrate(rels).poses[-1].matrix, M, atol=1e-12)

    def test_relative_extraction_inverts(self, rng):
        traj = random_trajectory(rng, 7)
        back = ev.integrate(ev.relative_poses(traj))
        for a, b in zip(traj.poses, back.poses):
            np.testing.assert_allclose(b.matrix, a.matrix, atol=1e-9)

    def test_empty(self):
        with pytest.raises(ValueError):
            ev.integrate([])


class TestAte:
    def test_perfect(self, rng):
        traj = random_trajectory(rng, 10)
        for n in (3, 5):
            assert ev.ate_snippets(traj, traj, n) == (0.0, 0.0)

    @pytest.mark.parametrize("s", [2.0, 0.3])
    def test_scale_invariance(self, rng, s):
        gt = random_trajectory(rng, 10)
        pred = ev.Trajectory([RigidTransform(T.R, s * T.t) for T in gt.poses])
        mean, std = ev.ate_snippets(pred, gt, 5)
        assert mean < 1e-12 and std < 1e-12

    def test_hand_computed_toy(self):
        gt = translated([[0, 0, k] for k in range(5)])
        pts = [[0, 0, k] for k in range(5)]
        pts[4] = [1, 0, 4]
        # s = 30/31, squared error sums to 30/31 over 5 frames
        mean, std = ev.ate_snippets(translated(pts), gt, 5)
        assert mean == pytest.approx(math.sqrt(6 / 31), rel=1e-12)
        assert std == 0.0

    def test_windows_use_first_frame_origin(self):
        gt = translated([[0, 0, k] for k in range(6)])
        pred = translated([[5, 5, 5 + k] for k in range(6)])
        assert ev.ate_snippets(pred, gt, 3)[0] < 1e-12

    def test_static_prediction(self):
        gt = translated([[0, 0, k] for k in range(3)])
        pred = translated([[0, 0, 0]] * 3)
        assert ev.ate_snippets(pred, gt, 3)[0] == pytest.approx(math.sqrt(5 / 3))

    def test_length_mismatch(self, rng):
        with pytest.raises(LengthMismatch):
            ev.ate_snippets(random_trajectory(rng, 5), random_trajectory(rng, 6), 3)
        with pytest.raises(LengthMismatch):
            ev.ate_snippets(random_trajectory(rng, 4), random_trajectory(rng, 4), 5)


@pytest.fixture
def depth_gt(rng):
    return Grid(rng.uniform(1.0, 60.0, (20, 30)), "depth")


class TestDepthMetrics:
    def test_perfect(self, depth_gt):
        assert ev.depth_metrics(depth_gt, depth_gt).as_tuple() == (0, 0, 0, 0, 1, 1, 1)

    def test_median_scaling(self, depth_gt):
        pred = depth_gt.with_data(2 * depth_gt.data)
        m = ev.depth_metrics(pred, depth_gt, median_scale=True)
        np.testing.assert_allclose(m.as_tuple(), (0, 0, 0, 0, 1, 1, 1), atol=1e-12)

    def test_constant_ratio_closed_form(self, depth_gt):
        g = depth_gt.data[:, :, 0]
        g = g[1.3 * g <= 80.0]
        m = ev.depth_metrics(depth_gt.with_data(1.3 * depth_gt.data),
                             depth_gt, mask=1.3 * depth_gt.data[:, :, 0] <= 80.0)
        assert m.abs_rel == pytest.approx(0.3, abs=1e-12)
        assert m.sq_rel == pytest.approx(0.09 * g.mean(), rel=1e-12)
        assert m.rmse == pytest.approx(0.3 * math.sqrt(np.mean(g ** 2)), rel=1e-12)
        assert m.rmse_log == pytest.approx(math.log(1.3), rel=1e-12)
        assert (m.a1, m.a2, m.a3) == (0.0, 1.0, 1.0)

    def test_thresholds_monotone(self, rng, depth_gt):
        for _ in range(20):
            pred = depth_gt.with_data(depth_gt.data * rng.lognormal(0, 0.4, depth_gt.data.shape))
            m = ev.depth_metrics(pred, depth_gt)
            assert 0 <= m.a1 <= m.a2 <= m.a3 <= 1
            assert min(m.abs_rel, m.sq_rel, m.rmse, m.rmse_log) >= 0

    def test_cap_excludes_far_pixels(self):
        gt = Grid(np.array([[10.0, 100.0]]), "depth")
        pred = Grid(np.array([[10.0, 5.0]]), "depth")
        assert ev.depth_metrics(pred, gt).abs_rel == 0.0

    def test_empty_mask(self, depth_gt):
        with pytest.raises(EmptyMask):
            ev.depth_metrics(depth_gt, depth_gt, mask=np.zeros((20, 30)))

    def test_shape_mismatch(self, depth_gt):
        with pytest.raises(ShapeMismatch):
            ev.depth_metrics(Grid(np.ones((3, 3)), "depth"), depth_gt)

    def test_dict_keys(self, depth_gt):
        assert list(ev.depth_metrics(depth_gt, depth_gt).to_dict()) == list(ev.DepthMetrics.NAMES)
