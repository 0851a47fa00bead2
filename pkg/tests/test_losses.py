import numpy as np
import pytest

from dfo import losses as L
from dfo import selection as sel
from dfo import synthetic as syn
from dfo.errors import NoValidPixels, ShapeMismatch
from dfo.geometry import Intrinsics, RigidTransform
from dfo.grids import Grid


def checkerboard(H, W):
    v, u = np.mgrid[0:H, 0:W]
    return Grid(((u + v) % 2).astype(float), "image")


def translation_snippet(seed=0, height=48, width=64):
    """Fronto plane with a bilinear texture seen by three translated cameras."""
    scene = syn.random_scene(seed, surface="fronto", height=height, width=width,
                             image_texture="bilinear")
    rng = np.random.default_rng(seed)
    z = scene.surface.offset
    poses = [RigidTransform.identity()]
    for _ in range(2):
        rel = syn.translation_motion(rng, z, 0.05)
        poses.append(RigidTransform(np.eye(3), rel.t + poses[-1].t))
    frames = [syn.render_frame(scene, P) for P in poses]
    images = [[v.image for v in f.views] for f in frames]
    depths = [[v.depth for v in f.views] for f in frames]
    Ks = [scene.level_intrinsics(l) for l in range(1, 5)]
    return images, depths, poses, Ks, frames


class TestWarpImage:
    def test_identity(self, rng, K):
        I = Grid(rng.random((20, 30, 3)), "image")
        out, valid = L.warp_image(I, Grid(np.full((20, 30), 3.0), "depth"), RigidTransform.identity(), K)
        np.testing.assert_allclose(out.data, I.data, atol=1e-12)
        assert valid.data.all()

    def test_plane_shift(self):
        H, W, z, b = 30, 40, 4.0, 0.2
        K = Intrinsics(80.0, 80.0, 19.5, 14.5)
        v, u = np.mgrid[0:H, 0:W].astype(float)
        I_s = Grid(0.01 * u + 0.02 * v + 0.1, "image")
        out, valid = L.warp_image(I_s, Grid(np.full((H, W), z), "depth"),
                                  RigidTransform(np.eye(3), [b, 0, 0]), K)
        shift = K.fx * b / z
        m = valid.data[:, :, 0] > 0
        expected = 0.01 * (u + shift) + 0.02 * v + 0.1
        np.testing.assert_allclose(out.data[:, :, 0][m], expected[m], atol=1e-6)
        # the right-hand band leaves the source
        assert not m[:, -1].any() and m[:, 0].all()

    def test_large_translation_invalid_band(self, K):
        out, valid = L.warp_image(Grid(np.ones((20, 30)), "image"), Grid(np.full((20, 30), 2.0), "depth"),
                                  RigidTransform(np.eye(3), [0.1, 0, 0]), K)
        assert 0 < valid.data.mean() < 1
        assert np.all(out.data[valid.data < 0.5] == 0)

    def test_shape_mismatch(self, K):
        with pytest.raises(ShapeMismatch):
            L.warp_image(Grid(np.ones((4, 4)), "image"), Grid(np.ones((4, 5)), "depth"),
                         RigidTransform.identity(), K)


class TestSsim:
    def test_self_similarity(self, rng):
        I = Grid(rng.random((12, 14, 3)), "image")
        np.testing.assert_allclose(L.ssim(I, I).data, 1.0, atol=1e-12)

    def test_inverted_checkerboard(self):
        I = checkerboard(8, 8)
        assert np.all(L.ssim(I, I.with_data(1 - I.data)).data < 0)

    def test_symmetric(self, rng):
        a, b = Grid(rng.random((9, 9)), "image"), Grid(rng.random((9, 9)), "image")
        np.testing.assert_allclose(L.ssim(a, b).data, L.ssim(b, a).data, atol=1e-12)

    def test_range(self, rng):
        for _ in range(10):
            s = L.ssim(Grid(rng.random((7, 7)), "image"), Grid(rng.random((7, 7)), "image")).data
            assert np.all((s >= -1) & (s <= 1))

    def test_window_statistics(self, rng):
        a, b = rng.random((6, 6)), rng.random((6, 6))
        wa, wb = a[1:4, 2:5], b[1:4, 2:5]
        ma, mb = wa.mean(), wb.mean()
        va, vb = wa.var(), wb.var()
        cov = np.mean((wa - ma) * (wb - mb))
        c1, c2 = 0.01 ** 2, 0.03 ** 2
        expected = (2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2))
        got = L.ssim(Grid(a, "image"), Grid(b, "image")).data[2, 3, 0]
        assert got == pytest.approx(expected, abs=1e-12)


class TestRobustClip:
    def test_below_knee(self):
        assert L.robust_clip(0.1, 0.15) == 0.1

    @pytest.mark.parametrize("eps", [0.15, 0.3])
    def test_continuous_at_knee(self, eps):
        assert L.robust_clip(eps, eps) == eps
        assert L.robust_clip(np.nextafter(eps, 0), eps) == pytest.approx(eps, abs=1e-15)

    def test_above_knee(self):
        assert L.robust_clip(0.5, 0.3) == pytest.approx(0.32)

    def test_monotone_with_slopes(self):
        x = np.linspace(0, 2, 2001)
        y = L.robust_clip(x, 0.3)
        assert np.all(np.diff(y) >= 0)
        np.testing.assert_allclose(np.diff(y[x < 0.3]) / 0.001, 1.0, rtol=1e-9)
        np.testing.assert_allclose(np.diff(y[x > 0.301]) / 0.001, 0.1, rtol=1e-9)


class TestAppearanceLoss:
    def test_identical(self, rng):
        I = Grid(rng.random((10, 10, 3)), "image")
        assert L.appearance_loss(I, I) == 0.0

    def test_constant_images(self):
        a = Grid(np.zeros((6, 6)), "image")
        b = Grid(np.ones((6, 6)), "image")
        # flat windows: SSIM = C1 / (1 + C1), so DSSIM sits just below 0.5
        c1 = 0.01 ** 2
        dssim = (1 - c1 / (1 + c1)) / 2
        expected = 0.85 * L.robust_clip(dssim, 0.15) + 0.15 * L.robust_clip(1.0, 0.3)
        assert expected == pytest.approx(0.85 * L.robust_clip(0.5, 0.15) + 0.15 * L.robust_clip(1.0, 0.3),
                                         abs=1e-5)
        assert L.appearance_loss(a, b) == pytest.approx(expected, abs=1e-12)

    def test_no_valid_pixels(self):
        I = Grid(np.zeros((5, 5)), "image")
        with pytest.raises(NoValidPixels):
            L.appearance_loss(I, I, Grid(np.zeros((5, 5)), "mask"))

    def test_validity_eroded_by_window(self, rng):
        a = Grid(rng.random((9, 9)), "image")
        d = a.data.copy()
        d[4, 4] += 0.5
        mask = np.ones((9, 9))
        mask[4, 4] = 0
        # every window touching the damaged pixel is excluded, so the loss vanishes
        assert L.appearance_loss(a, a.with_data(d), Grid(mask, "mask")) < 1e-15

    def test_non_negative(self, rng):
        for _ in range(5):
            a, b = Grid(rng.random((8, 8)), "image"), Grid(rng.random((8, 8)), "image")
            assert L.appearance_loss(a, b) > 0


class TestSmoothness:
    def test_constant_depth(self, rng):
        assert L.smoothness_loss(Grid(np.full((5, 6), 2.0), "depth"), Grid(rng.random((5, 6)), "image")) == 0

    def test_ramp_constant_image(self):
        v, u = np.mgrid[0:5, 0:6].astype(float)
        Z = Grid(1 + 0.3 * u, "depth")
        assert L.smoothness_loss(Z, Grid(np.zeros((5, 6)), "image")) == pytest.approx(0.3)

    def test_edges_reduce_penalty(self):
        v, u = np.mgrid[0:6, 0:6].astype(float)
        Z = Grid(1 + 0.3 * u, "depth")
        edges = Grid((u % 2).astype(float), "image")
        assert L.smoothness_loss(Z, edges) < L.smoothness_loss(Z, Grid(np.zeros((6, 6)), "image"))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            L.smoothness_loss(Grid(np.ones((4, 4)), "depth"), Grid(np.ones((4, 5)), "image"))


class TestDisparity:
    def test_conversion(self):
        np.testing.assert_allclose(L.disparity_to_depth([0.0, 1.0]), [100.0, 1 / 10.01])


class TestLossWeights:
    def test_defaults(self):
        w = L.LossWeights()
        assert (w.smoothness, w.sparsity, w.reconstruction) == (0.1, 0.01, 0.01)
        assert (w.alpha, w.eps_dssim, w.eps_l1) == (0.85, 0.15, 0.3)

    @pytest.mark.parametrize("kw", [dict(smoothness=-1), dict(alpha=1.5)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            L.LossWeights(**kw)


@pytest.fixture(scope="module")
def snippet():
    return translation_snippet()


class TestTotalLoss:
    def test_ground_truth_appearance(self, snippet):
        images, depths, poses, Ks, _ = snippet
        b = L.total_loss(images, depths, poses, Ks)
        assert len(b.appearance) == 4 * 6
        assert b.appearance_total < 1e-6

    def test_identical_frames_all_zero(self):
        Z = [Grid(np.full((8, 8), 2.0), "depth")]
        I = [Grid(np.full((8, 8), 0.5), "image")]
        K = [Intrinsics(10, 10, 3.5, 3.5)]
        b = L.total_loss([I, I], [Z, Z], [RigidTransform.identity()] * 2, K)
        assert b.total == 0.0

    def test_linearity_in_each_weight(self, snippet):
        images, depths, poses, Ks, frames = snippet
        masks = [[sel.harden(sel.gumbel_sample(sel.uniform_prior(*im.shape[:2], 0.3), 0.1, i * 4 + l))
                  for l, im in enumerate(ims)] for i, ims in enumerate(images)]
        recon = [(images[0][0], images[0][0].with_data(images[0][0].data + 0.01))]

        def total(**kw):
            return L.total_loss(images, depths, poses, Ks, L.LossWeights(**kw), masks=masks,
                                rho=[0.3] * 4, reconstructions=recon)

        base = total(smoothness=0, sparsity=0, reconstruction=0)
        for name, attr in (("smoothness", "smoothness_total"), ("sparsity", "sparsity"),
                           ("reconstruction", "reconstruction")):
            for lam in (0.5, 2.0):
                b = total(**{k: (lam if k == name else 0.0)
                             for k in ("smoothness", "sparsity", "reconstruction")})
                assert abs(b.total - (base.total + lam * getattr(b, attr))) < 1e-10
        only_sm = total(smoothness=0.1, sparsity=0, reconstruction=0, alpha=0.85)
        assert only_sm.total - only_sm.appearance_total == pytest.approx(0.1 * only_sm.smoothness_total,
                                                                        abs=1e-12)

    def test_level_weighting(self, snippet):
        images, depths, poses, Ks, _ = snippet
        b = L.total_loss(images, depths, poses, Ks)
        expected = sum(v / 2 ** (l - 1) for (l, _), v in b.smoothness.items())
        assert b.smoothness_total == pytest.approx(expected, rel=1e-15)

    def test_breakdown_dict(self, snippet):
        images, depths, poses, Ks, _ = snippet
        d = L.total_loss(images, depths, poses, Ks).to_dict()
        assert "appearance.l1.0->1" in d and "smoothness.l4.2" in d
        assert d["total"] == pytest.approx(d["appearance"] + 0.1 * d["smoothness"])

    def test_masks_need_targets(self, snippet):
        images, depths, poses, Ks, _ = snippet
        with pytest.raises(ValueError):
            L.total_loss(images, depths, poses, Ks, masks=[[None] * 4] * 3)

    def test_single_frame_rejected(self, snippet):
        images, depths, poses, Ks, _ = snippet
        with pytest.raises(ShapeMismatch):
            L.total_loss(images[:1], depths[:1], poses[:1], Ks)
