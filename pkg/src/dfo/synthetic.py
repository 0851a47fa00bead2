"""
Synthetic scenes with known depth, features and camera motion.

The scene lives in the reference camera frame (frame 0). Its surface is a
graph over the reference view, and every field is parameterised by the
level-1 reference pixel coordinates of the surface point, so the reference
view shows the fields exactly and other views follow from ray casting.

Fields are sums of sinusoids plus an optional bilinear term in the
reference's normalised image coordinates. When a view is rendered at a
coarser pyramid level, sinusoids shorter than ``min_wavelength`` pixels of
that level are left out, which keeps every level band-limited.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import SceneBehindCamera
from .geometry import NUM_LEVELS, Intrinsics, RigidTransform
from .grids import Grid, pyramid_shape

NEWTON_TOL = 1e-13
NEWTON_MAX_ITER = 60


@dataclass(frozen=True)
class Field:
    """C-channel scalar field over reference pixel coordinates.

    value_c(p) = offset_c + sum_m amp_cm * sin(2 pi freq_cm . p + phase_cm)
                 + poly_c . (x, y, x * y)
    where p is the level-1 reference pixel and (x, y) its normalised ray.
    """

    freqs: np.ndarray            # (C, M, 2) cycles per level-1 pixel
    phases: np.ndarray           # (C, M)
    amps: np.ndarray             # (C, M)
    offset: np.ndarray           # (C,)
    poly: np.ndarray = None      # (C, 3)

    def __post_init__(self):
        C = np.asarray(self.offset).shape[0]
        object.__setattr__(self, "freqs", np.asarray(self.freqs, float).reshape(C, -1, 2))
        object.__setattr__(self, "phases", np.asarray(self.phases, float).reshape(C, -1))
        object.__setattr__(self, "amps", np.asarray(self.amps, float).reshape(C, -1))
        object.__setattr__(self, "offset", np.asarray(self.offset, float))
        poly = np.zeros((C, 3)) if self.poly is None else np.asarray(self.poly, float).reshape(C, 3)
        object.__setattr__(self, "poly", poly)

    @property
    def channels(self) -> int:
        return self.offset.shape[0]

    def wavelengths(self) -> np.ndarray:
        """(C, M) wavelengths in level-1 pixels."""
        f = np.linalg.norm(self.freqs, axis=-1)
        with np.errstate(divide="ignore"):
            return np.where(f > 0, 1.0 / np.where(f > 0, f, 1.0), np.inf)

    def evaluate(self, pu, pv, x, y, min_wavelength_l1=0.0) -> np.ndarray:
        """Values at reference pixels (pu, pv) / normalised coords (x, y), shape (..., C)."""
        pu = np.asarray(pu, float)
        pv = np.asarray(pv, float)
        C = self.channels
        ch, comp = np.nonzero((self.wavelengths() >= min_wavelength_l1) & (self.amps != 0))
        pts = np.stack([pu.ravel(), pv.ravel()], axis=1)
        arg = pts @ (2 * np.pi * self.freqs[ch, comp].T)
        arg += self.phases[ch, comp]
        np.sin(arg, out=arg)
        mix = np.zeros((ch.size, C))
        mix[np.arange(ch.size), ch] = self.amps[ch, comp]
        out = (arg @ mix).reshape(pu.shape + (C,)) + self.offset
        basis = np.stack([x, y, x * y], axis=-1)
        return out + basis @ self.poly.T

    def min_wavelength(self, min_wavelength_l1=0.0) -> float:
        wl = self.wavelengths()
        wl = wl[(wl >= min_wavelength_l1) & (self.amps != 0)]
        return float(wl.min()) if wl.size else math.inf


@dataclass(frozen=True)
class PlaneSurface:
    """Plane n . X = offset in the reference frame (n unit, offset > 0)."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, float)
        object.__setattr__(self, "normal", n / np.linalg.norm(n))
        if not self.offset > 0:
            raise ValueError("plane must lie in front of the reference camera")

    def reference_depth(self, x, y):
        n = self.normal
        return self.offset / (n[0] * x + n[1] * y + n[2])

    def intersect(self, c, d):
        """Ray parameter for rays c + lam * d (d: (..., 3)); nan if no hit."""
        denom = d @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = (self.offset - c @ self.normal) / denom
        return np.where(np.abs(denom) > 1e-12, lam, np.nan)


@dataclass(frozen=True)
class HarmonicSurface:
    """Reference depth z(x, y) = base * (1 + sum a_j cos(2 pi f_j . (x, y) + phi_j))."""

    base: float
    amps: np.ndarray
    freqs: np.ndarray       # (J, 2) cycles per unit of normalised coordinate
    phases: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "amps", np.asarray(self.amps, float).reshape(-1))
        object.__setattr__(self, "freqs", np.asarray(self.freqs, float).reshape(-1, 2))
        object.__setattr__(self, "phases", np.asarray(self.phases, float).reshape(-1))
        if not (self.base > 0 and np.sum(np.abs(self.amps)) < 1):
            raise ValueError("harmonic surface must stay in front of the camera")

    def reference_depth(self, x, y):
        arg = 2 * np.pi * (x[..., None] * self.freqs[:, 0] + y[..., None] * self.freqs[:, 1]) + self.phases
        return self.base * (1.0 + np.sum(self.amps * np.cos(arg), axis=-1))

    def intersect(self, c, d):
        # Newton on g(lam) = Q_z - z(Q_x / Q_z, Q_y / Q_z), Q = c + lam d,
        # started on the mean-depth plane
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = (self.base - c[2]) / d[..., 2]

            def g(lam):
                Q = c + lam[..., None] * d
                return Q[..., 2] - self.reference_depth(Q[..., 0] / Q[..., 2], Q[..., 1] / Q[..., 2])

            for _ in range(NEWTON_MAX_ITER):
                h = 1e-7 * np.maximum(np.abs(lam), 1.0)
                gl = g(lam)
                slope = (g(lam + h) - g(lam - h)) / (2 * h)
                step = gl / slope
                lam = lam - step
                if np.all(np.abs(step) <= NEWTON_TOL * np.maximum(np.abs(lam), 1.0)):
                    break
            ok = np.abs(g(lam)) <= 1e-9 * np.maximum(np.abs(lam), 1.0)
        return np.where(ok, lam, np.nan)


@dataclass(frozen=True)
class Scene:
    surface: object
    features: Field
    image: Field
    intrinsics: Intrinsics
    height: int
    width: int
    min_wavelength: float = 6.0

    def level_intrinsics(self, level: int) -> Intrinsics:
        return geo.rescale_intrinsics(self.intrinsics, level)

    def level_shape(self, level: int):
        return pyramid_shape(self.height, self.width, level)


@dataclass(frozen=True)
class RenderedView:
    features: Grid
    image: Grid
    depth: Grid


@dataclass(frozen=True)
class TrajectorySpec:
    """Frame-to-frame transforms; relatives[k] maps camera-k points into camera k+1."""

    relatives: tuple

    def __post_init__(self):
        object.__setattr__(self, "relatives", tuple(self.relatives))
        if len(self.relatives) < 1:
            raise ValueError("a trajectory needs at least two frames")

    @property
    def n(self) -> int:
        return len(self.relatives) + 1

    def poses(self) -> list:
        """World (reference) to camera transforms for every frame."""
        out = [RigidTransform.identity()]
        for rel in self.relatives:
            out.append(geo.compose(rel, out[-1]))
        return out


@dataclass
class Frame:
    pose: RigidTransform                 # reference -> camera
    views: list = field(default_factory=list)     # RenderedView per level, finest first

    def __getitem__(self, level: int) -> RenderedView:
        return self.views[level - 1]


def render_view(scene: Scene, T: RigidTransform, level: int = 1) -> RenderedView:
    """Render the camera whose pose is T (reference -> camera) at a pyramid level."""
    K = scene.level_intrinsics(level)
    H, W = scene.level_shape(level)
    v, u = np.mgrid[0:H, 0:W].astype(float)
    rays = geo.backproject_pixels(u, v, np.ones_like(u), K)          # camera-frame rays, z = 1
    Rt = T.R.T
    c = -Rt @ T.t
    d = rays @ T.R                                                   # R^T applied to each ray
    lam = scene.surface.intersect(c, d)
    Q = c + lam[..., None] * d
    if not (np.all(np.isfinite(lam)) and np.all(lam > 0) and np.all(Q[..., 2] > 0)):
        raise SceneBehindCamera(f"surface not in front of the camera for every pixel at level {level}")
    x = Q[..., 0] / Q[..., 2]
    y = Q[..., 1] / Q[..., 2]
    K1 = scene.intrinsics
    pu = K1.fx * x + K1.cx
    pv = K1.fy * y + K1.cy
    cutoff = scene.min_wavelength * 2 ** (level - 1)
    feats = scene.features.evaluate(pu, pv, x, y, cutoff)
    img = scene.image.evaluate(pu, pv, x, y, cutoff)
    return RenderedView(Grid(feats, "feature"), Grid(img, "image"), Grid(lam, "depth"))


def render_frame(scene: Scene, pose: RigidTransform, levels=NUM_LEVELS) -> Frame:
    return Frame(pose, [render_view(scene, pose, l) for l in range(1, levels + 1)])


def make_snippet(scene: Scene, traj: TrajectorySpec, levels=NUM_LEVELS) -> list:
    return [render_frame(scene, P, levels) for P in traj.poses()]


def corrupt(grid: Grid, fraction: float, magnitude: float, seed: int) -> Grid:
    """Overwrite a seeded ``fraction`` of pixels with noise of norm ``magnitude``.

    Each corrupted pixel gets a vector drawn uniformly from the sphere of
    radius ``magnitude`` in channel space (a random sign for one channel).
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    corrupted, _ = corrupt_with_index(grid, fraction, magnitude, seed)
    return corrupted


def corrupt_with_index(grid: Grid, fraction: float, magnitude: float, seed: int):
    """Like corrupt(), also returning the (row, col) arrays that were replaced."""
    H, W, C = grid.shape
    rng = np.random.default_rng(seed)
    n = int(round(fraction * H * W))
    flat = rng.choice(H * W, size=n, replace=False)
    noise = rng.standard_normal((n, C))
    noise *= magnitude / np.linalg.norm(noise, axis=1, keepdims=True)
    data = grid.data.copy()
    rows, cols = np.unravel_index(flat, (H, W))
    data[rows, cols] = noise
    return grid.with_data(data), (rows, cols)


# Scene and motion generators

def random_field(rng, channels: int, components: int = 6, wavelengths=(20.0, 160.0),
                 amplitude: float = 1.0, coarse_components: int = 2) -> Field:
    """Random band-limited sinusoid mixture.

    The first ``coarse_components`` of each channel use wavelengths in the
    upper half of the band so every channel survives the coarsest cutoff.
    """
    lo, hi = wavelengths
    wl = np.exp(rng.uniform(np.log(lo), np.log(hi), size=(channels, components)))
    mid = math.sqrt(lo * hi)
    wl[:, :coarse_components] = np.exp(rng.uniform(np.log(max(mid, lo)), np.log(hi),
                                                   size=(channels, coarse_components)))
    theta = rng.uniform(0, 2 * np.pi, size=(channels, components))
    freqs = np.stack([np.cos(theta), np.sin(theta)], axis=-1) / wl[..., None]
    phases = rng.uniform(0, 2 * np.pi, size=(channels, components))
    amps = rng.uniform(0.5, 1.0, size=(channels, components))
    # a sinusoid of amplitude a has variance a^2 / 2 over the plane
    amps *= amplitude / np.sqrt(0.5 * np.sum(amps ** 2, axis=1, keepdims=True))
    return Field(freqs, phases, amps, np.zeros(channels))


def bilinear_image_field() -> Field:
    """Texture that is bilinear in the reference's normalised coordinates."""
    return Field(np.zeros((1, 0, 2)), np.zeros((1, 0)), np.zeros((1, 0)), [0.5], [[0.2, 0.15, 0.1]])


def random_scene(seed: int, surface: str = "slanted", height: int = 96, width: int = 128,
                 K: Intrinsics = None, channels: int = 16, image_texture: str = "sinusoid",
                 depth_range=(3.0, 8.0), max_tilt_deg: float = 30.0,
                 wavelengths=(20.0, 160.0), min_wavelength: float = 6.0) -> Scene:
    rng = np.random.default_rng(seed)
    if K is None:
        f = 0.8 * width
        K = Intrinsics(f, f, (width - 1) / 2.0, (height - 1) / 2.0)
    z0 = rng.uniform(*depth_range)
    if surface == "fronto":
        surf = PlaneSurface([0.0, 0.0, 1.0], z0)
    elif surface == "slanted":
        tilt = math.radians(rng.uniform(0.3, 1.0) * max_tilt_deg)
        az = rng.uniform(0, 2 * np.pi)
        n = np.array([math.sin(tilt) * math.cos(az), math.sin(tilt) * math.sin(az), math.cos(tilt)])
        surf = PlaneSurface(n, z0 * n[2])
    elif surface == "harmonic":
        J = 3
        th = rng.uniform(0, 2 * np.pi, J)
        fr = rng.uniform(0.2, 0.8, J)[:, None] * np.stack([np.cos(th), np.sin(th)], axis=1)
        surf = HarmonicSurface(z0, rng.uniform(0.01, 0.04, J), fr, rng.uniform(0, 2 * np.pi, J))
    else:
        raise ValueError(f"unknown surface type {surface!r}")
    feats = random_field(rng, channels, wavelengths=wavelengths)
    if image_texture == "sinusoid":
        img = random_field(rng, 1, wavelengths=wavelengths, amplitude=0.12)
        img = Field(img.freqs, img.phases, img.amps, [0.5])
    elif image_texture == "bilinear":
        img = bilinear_image_field()
    else:
        raise ValueError(f"unknown image texture {image_texture!r}")
    return Scene(surf, feats, img, K, height, width, min_wavelength)


def random_motion(rng, mean_depth: float, translation_fraction: float = 0.05,
                  max_rotation_deg: float = 2.0, min_rotation_deg: float = 0.0) -> RigidTransform:
    """Random rigid motion with |t| = fraction * mean depth and a bounded rotation angle."""
    t = rng.standard_normal(3)
    t *= translation_fraction * mean_depth / np.linalg.norm(t)
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = math.radians(rng.uniform(min_rotation_deg, max_rotation_deg))
    return RigidTransform(geo.so3_exp(angle * axis), t)


def translation_motion(rng, mean_depth: float, translation_fraction: float = 0.05) -> RigidTransform:
    t = rng.standard_normal(3)
    t *= translation_fraction * mean_depth / np.linalg.norm(t)
    return RigidTransform(np.eye(3), t)


def homography(scene: Scene, T: RigidTransform, level: int = 1) -> np.ndarray:
    """Reference-to-view pixel homography induced by a plane scene."""
    surf = scene.surface
    if not isinstance(surf, PlaneSurface):
        raise TypeError("only plane scenes induce a homography")
    K = scene.level_intrinsics(level).matrix
    return K @ (T.R + np.outer(T.t, surf.normal) / surf.offset) @ np.linalg.inv(K)
