"""View-synthesis and regularisation losses.

These are evaluation metrics for a given (depth, pose, image) configuration:
the appearance term compares a target image with a source image warped into
the target view, the smoothness term penalises depth gradients except across
image edges, and the total objective adds the selection sparsity and an L2
reconstruction term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import binary_erosion, uniform_filter

from . import geometry as geo
from .errors import NoValidPixels, ShapeMismatch
from .geometry import Intrinsics, RigidTransform
from .grids import Grid, sample
from .selection import sparsity_kl

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class LossWeights:
    smoothness: float = 0.1
    sparsity: float = 0.01
    reconstruction: float = 0.01
    alpha: float = 0.85
    eps_dssim: float = 0.15
    eps_l1: float = 0.3

    def __post_init__(self):
        for name in ("smoothness", "sparsity", "reconstruction", "eps_dssim", "eps_l1"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


def warp_image(I_s: Grid, Z_t: Grid, T: RigidTransform, K: Intrinsics):
    """Sample the source image at the target pixels' warped positions.

    ``T`` maps target-camera points into the source camera. Returns the
    warped image and a mask grid that is 1 where the warp landed inside the
    source with the point in front of the camera.
    """
    if Z_t.shape[:2] != I_s.shape[:2] or Z_t.channels != 1:
        raise ShapeMismatch(f"depth {Z_t.shape} does not match image {I_s.shape}")
    H, W = Z_t.height, Z_t.width
    v, u = np.mgrid[0:H, 0:W].astype(float)
    if not T.t.any() and np.array_equal(T.R, np.eye(3)):
        # skip the rounding of backproject-then-project so the warp is exact
        us, vs, front = u, v, np.ones((H, W), bool)
    else:
        X = geo.backproject_pixels(u, v, Z_t.data[:, :, 0], K)
        us, vs, front = geo.project_points(T.apply(X.reshape(-1, 3)), K)
    values, ok = sample(I_s, us.reshape(H, W), vs.reshape(H, W))
    valid = ok & front.reshape(H, W)
    values[~valid] = 0.0
    return I_s.with_data(values), Grid(valid.astype(float), "mask")


def ssim(a: Grid, b: Grid) -> Grid:
    """Per-pixel, per-channel SSIM over 3x3 uniform windows (mirror padding)."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"ssim inputs differ: {a.shape} vs {b.shape}")
    x, y = a.data, b.data

    def box(z):
        return uniform_filter(z, size=(3, 3, 1), mode="mirror")

    mu_x, mu_y = box(x), box(y)
    var_x = box(x * x) - mu_x ** 2
    var_y = box(y * y) - mu_y ** 2
    cov = box(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return Grid(np.clip(num / den, -1.0, 1.0), "image")


def robust_clip(x, eps: float):
    """x below the knee, 0.1 x + 0.9 eps above it (continuous at eps).

    The upper branch is evaluated as eps + 0.1 (x - eps) so that it returns
    eps exactly at the knee; 0.1 eps + 0.9 eps can be one ulp off.
    """
    x = np.asarray(x, dtype=float)
    out = np.where(x < eps, x, eps + 0.1 * (x - eps))
    return float(out) if out.ndim == 0 else out


def appearance_loss(I_t: Grid, I_warped: Grid, validity: Grid = None,
                    weights: LossWeights = LossWeights()) -> float:
    """Mean over valid pixels of clipped DSSIM and clipped L1, mixed by alpha.

    SSIM at a pixel reads its whole 3x3 window, so a pixel only counts when
    every pixel of its window is valid.
    """
    if I_t.shape != I_warped.shape:
        raise ShapeMismatch(f"appearance inputs differ: {I_t.shape} vs {I_warped.shape}")
    if validity is None:
        valid = np.ones(I_t.shape[:2], bool)
    else:
        if validity.shape[:2] != I_t.shape[:2]:
            raise ShapeMismatch(f"validity {validity.shape} does not match image {I_t.shape}")
        valid = validity.data[:, :, 0] >= 0.5
        valid = binary_erosion(valid, structure=np.ones((3, 3), bool), border_value=1)
    if not valid.any():
        raise NoValidPixels("no valid pixels for the appearance loss")
    dssim = np.mean((1.0 - ssim(I_t, I_warped).data) / 2.0, axis=2)
    l1 = np.mean(np.abs(I_t.data - I_warped.data), axis=2)
    per_pixel = (weights.alpha * robust_clip(dssim, weights.eps_dssim)
                 + (1.0 - weights.alpha) * robust_clip(l1, weights.eps_l1))
    return float(per_pixel[valid].mean())


def smoothness_loss(Z: Grid, I: Grid) -> float:
    """Edge-aware first-order smoothness with forward differences."""
    if Z.shape[:2] != I.shape[:2]:
        raise ShapeMismatch(f"depth {Z.shape} does not match image {I.shape}")
    z = Z.data[:, :, 0]
    total = 0.0
    for axis in (1, 0):
        if z.shape[axis] < 2:
            continue
        dz = np.abs(np.diff(z, axis=axis))
        di = np.mean(np.abs(np.diff(I.data, axis=axis)), axis=2)
        total += float(np.mean(dz * np.exp(-di)))
    return total


def disparity_to_depth(x):
    """Network output in [0, 1] to depth, 1 / (10 x + 0.01)."""
    return 1.0 / (10.0 * np.asarray(x, dtype=float) + 0.01)


@dataclass
class LossBreakdown:
    weights: LossWeights
    appearance: dict = field(default_factory=dict)     # (level, target, source) -> value
    smoothness: dict = field(default_factory=dict)     # (level, frame) -> value
    sparsity: float = 0.0
    reconstruction: float = 0.0

    @property
    def appearance_total(self) -> float:
        return float(sum(self.appearance.values()))

    @property
    def smoothness_total(self) -> float:
        """Smoothness with the per-level weight 1 / 2^(level - 1) applied."""
        return float(sum(v / 2 ** (lvl - 1) for (lvl, _), v in self.smoothness.items()))

    @property
    def total(self) -> float:
        w = self.weights
        return (self.appearance_total + w.smoothness * self.smoothness_total
                + w.sparsity * self.sparsity + w.reconstruction * self.reconstruction)

    def to_dict(self) -> dict:
        out = {}
        for (lvl, i, j), v in sorted(self.appearance.items()):
            out[f"appearance.l{lvl}.{i}->{j}"] = v
        for (lvl, i), v in sorted(self.smoothness.items()):
            out[f"smoothness.l{lvl}.{i}"] = v
        out["appearance"] = self.appearance_total
        out["smoothness"] = self.smoothness_total
        out["sparsity"] = self.sparsity
        out["reconstruction"] = self.reconstruction
        out["total"] = self.total
        return out


def total_loss(images, depths, poses, intrinsics, weights: LossWeights = LossWeights(),
               masks=None, rho=None, reconstructions=None) -> LossBreakdown:
    """Snippet objective summed over levels and ordered frame pairs.

    images, depths: per frame, a sequence of per-level grids (finest first).
    poses: per frame, the reference-to-camera transform.
    intrinsics: per-level Intrinsics.
    masks, rho: optional per-frame sequences of per-level SelectionMasks and
    the per-level target sparsities; every mask adds its KL term.
    reconstructions: optional (input, reconstruction) grid pairs whose mean
    squared error forms the reconstruction term.
    """
    n = len(images)
    if n < 2 or len(depths) != n or len(poses) != n:
        raise ShapeMismatch("a snippet needs >= 2 frames with an image, depth and pose each")
    levels = len(intrinsics)
    out = LossBreakdown(weights)
    for lvl in range(1, levels + 1):
        K = intrinsics[lvl - 1]
        for i in range(n):
            I_t, Z_t = images[i][lvl - 1], depths[i][lvl - 1]
            out.smoothness[(lvl, i)] = smoothness_loss(Z_t, I_t)
            for j in range(n):
                if i == j:
                    continue
                T = geo.compose(poses[j], poses[i].inverse())
                warped, valid = warp_image(images[j][lvl - 1], Z_t, T, K)
                out.appearance[(lvl, i, j)] = appearance_loss(I_t, warped, valid, weights)
    if masks is not None:
        if rho is None:
            raise ValueError("sparsity targets are required with masks")
        out.sparsity = float(sum(sparsity_kl(m, rho[l]) for frame in masks
                                 for l, m in enumerate(frame) if m is not None))
    if reconstructions is not None:
        out.reconstruction = float(sum(np.mean((a.data - b.data) ** 2) for a, b in reconstructions))
    return out
