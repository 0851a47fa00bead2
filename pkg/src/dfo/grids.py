"""Dense H x W x C grids, smoothing, pyramids and bilinear sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateChannel, ShapeMismatch
from .geometry import NUM_LEVELS, Intrinsics, rescale_intrinsics

KINDS = ("image", "feature", "depth", "mask")

BINOMIAL_3x3 = np.outer([1.0, 2.0, 1.0], [1.0, 2.0, 1.0]) / 16.0


@dataclass(frozen=True)
class Grid:
    """Immutable H x W x C array of float64 with a semantic tag.

    A 2-D array is accepted and treated as a single channel.
    """

    data: np.ndarray
    kind: str = "feature"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown grid kind {self.kind!r}")
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"grid must be H x W x C with all sides >= 1, got {data.shape}")
        if self.kind == "depth" and not np.all(data > 0):
            raise ValueError("depth grids must be strictly positive")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def with_data(self, data, kind=None) -> "Grid":
        return Grid(data, self.kind if kind is None else kind)


@dataclass(frozen=True)
class LevelConfig:
    channels: int
    patch: int
    sparsity: float

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.patch < 1 or self.patch % 2 == 0:
            raise ValueError(f"patch size must be odd and >= 1, got {self.patch}")
        if not 0.0 < self.sparsity < 1.0:
            raise ValueError(f"sparsity must lie in (0, 1), got {self.sparsity}")


DEFAULT_LEVEL_CONFIGS = (
    LevelConfig(16, 3, 0.3),
    LevelConfig(16, 3, 0.3),
    LevelConfig(8, 3, 0.5),
    LevelConfig(8, 1, 0.7),
)


@dataclass(frozen=True)
class Pyramid:
    """Four grids, finest first, with their intrinsics and level settings."""

    levels: tuple
    intrinsics: tuple
    configs: tuple = DEFAULT_LEVEL_CONFIGS

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(self, "intrinsics", tuple(self.intrinsics))
        object.__setattr__(self, "configs", tuple(self.configs))
        if not (len(self.levels) == len(self.intrinsics) == len(self.configs) == NUM_LEVELS):
            raise ValueError(f"a pyramid has exactly {NUM_LEVELS} levels")
        H, W = self.levels[0].height, self.levels[0].width
        for i, g in enumerate(self.levels):
            if g.shape[:2] != pyramid_shape(H, W, i + 1):
                raise ShapeMismatch(f"level {i + 1} has shape {g.shape[:2]}, "
                                    f"expected {pyramid_shape(H, W, i + 1)}")

    def __getitem__(self, level: int) -> Grid:
        """1-based level access."""
        return self.levels[level - 1]

    @property
    def kind(self) -> str:
        return self.levels[0].kind


def pyramid_shape(height: int, width: int, level: int) -> tuple[int, int]:
    f = 2 ** (level - 1)
    return -(-height // f), -(-width // f)


def _convolve3x3(data: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    H, W, _ = data.shape
    padded = np.pad(data, ((1, 1), (1, 1), (0, 0)), mode="edge")
    out = np.zeros_like(data)
    for dy in range(3):
        for dx in range(3):
            out += kernel[dy, dx] * padded[dy:dy + H, dx:dx + W]
    return out


def gaussian_smooth(g: Grid) -> Grid:
    """3x3 binomial smoothing per channel with replicate borders."""
    if g.kind not in ("image", "feature"):
        raise ValueError(f"smoothing applies to image or feature grids, not {g.kind!r}")
    return g.with_data(_convolve3x3(g.data, BINOMIAL_3x3))


def downsample2(g: Grid) -> Grid:
    """Smooth then keep every other row and column starting at index 0.

    Depth grids are smoothed the same way (a convex combination keeps them
    positive); masks are decimated without smoothing.
    """
    if g.height < 2 or g.width < 2:
        raise ValueError(f"cannot downsample a {g.height}x{g.width} grid")
    data = g.data if g.kind == "mask" else _convolve3x3(g.data, BINOMIAL_3x3)
    return g.with_data(data[::2, ::2])


def build_pyramid(g: Grid, K: Intrinsics, configs=DEFAULT_LEVEL_CONFIGS) -> Pyramid:
    levels = [g]
    for _ in range(NUM_LEVELS - 1):
        levels.append(downsample2(levels[-1]))
    return Pyramid(levels, [rescale_intrinsics(K, l) for l in range(1, NUM_LEVELS + 1)], configs)


def zscore_normalize(g: Grid, min_variance: float = 1e-12) -> Grid:
    """Per-channel zero mean and unit variance over spatial positions."""
    flat = g.data.reshape(-1, g.channels)
    mean = flat.mean(axis=0)
    centered = flat - mean
    var = np.mean(centered * centered, axis=0)
    bad = np.flatnonzero(var <= min_variance)
    if bad.size:
        raise DegenerateChannel(f"channel(s) {bad.tolist()} have no spatial variance")
    return g.with_data((centered / np.sqrt(var)).reshape(g.shape))


def _cells(g: Grid, u, v):
    """Lower-left support index, fractional offsets and validity for samples."""
    H, W = g.height, g.width
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    valid = (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
    uc = np.where(valid, u, 0.0)
    vc = np.where(valid, v, 0.0)
    x0 = np.clip(np.floor(uc).astype(np.intp), 0, max(W - 2, 0))
    y0 = np.clip(np.floor(vc).astype(np.intp), 0, max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    return x0, y0, x1, y1, uc - x0, vc - y0, valid


def _corners(g: Grid, u, v):
    x0, y0, x1, y1, fx, fy, valid = _cells(g, u, v)
    flat = g.data.reshape(-1, g.channels)
    W = g.width
    r0 = y0 * W
    r1 = y1 * W
    return (flat[r0 + x0], flat[r0 + x1], flat[r1 + x0], flat[r1 + x1],
            fx[..., None], fy[..., None], valid)


def _interpolate(c00, c01, c10, c11, fx, fy):
    top = c01 - c00
    top *= fx
    top += c00
    bottom = c11 - c10
    bottom *= fx
    bottom += c10
    bottom -= top
    bottom *= fy
    bottom += top
    return bottom


def _bilinear_parts(g: Grid, u, v):
    """Values, d/du and d/dv of the bilinear surface plus validity, sharing work.

    With dx0 = c01 - c00, e = (c11 - c10) - dx0 and dy = c10 - c00:
    d/du = dx0 + fy e, d/dv = dy + fx e, value = c00 + fx dx0 + fy d/dv.
    """
    c00, c01, c10, c11, fx, fy, valid = _corners(g, u, v)
    dx0 = np.subtract(c01, c00, out=c01)
    e = np.subtract(c11, c10, out=c11)
    e -= dx0
    dy = np.subtract(c10, c00, out=c10)
    gu = e * fy
    gu += dx0
    e *= fx
    gv = np.add(dy, e, out=e)
    dx0 *= fx
    value = np.add(c00, dx0, out=c00)
    value += fy * gv
    invalid = ~valid
    for arr in (value, gu, gv):
        arr[invalid] = 0.0
    return value, gu, gv, valid


def sample(g: Grid, u, v):
    """Vectorised bilinear sampling.

    Returns (values, valid) with values of shape u.shape + (C,). Samples whose
    support leaves the grid are flagged invalid and set to zero.
    """
    *c, valid = _corners(g, u, v)
    out = _interpolate(*c)
    out[~valid] = 0.0
    return out, valid


def sample_gradient(g: Grid, u, v):
    """Analytic (d/du, d/dv) of the bilinear surface, shape u.shape + (C, 2)."""
    _, gu, gv, valid = _bilinear_parts(g, u, v)
    return np.stack([gu, gv], axis=-1), valid


def sample_with_gradient(g: Grid, u, v):
    """Values and separate (d/du, d/dv) arrays from one set of corner lookups.

    Returns (values, gu, gv, valid), each sample array of shape u.shape + (C,).
    """
    return _bilinear_parts(g, u, v)


def bilinear_sample(g: Grid, p):
    """Sample one pixel position; returns (C-vector, valid)."""
    values, valid = sample(g, np.array([p[0]]), np.array([p[1]]))
    return values[0], bool(valid[0])


def bilinear_gradient(g: Grid, p):
    """Returns (2 x C matrix of d/du and d/dv, valid)."""
    grad, valid = sample_gradient(g, np.array([p[0]]), np.array([p[1]]))
    return grad[0].T, bool(valid[0])


def patch_offsets(k: int) -> np.ndarray:
    """(k*k, 2) lattice offsets (du, dv) in row-major order."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"patch size must be odd and >= 1, got {k}")
    r = np.arange(k) - (k - 1) // 2
    dv, du = np.meshgrid(r, r, indexing="ij")
    return np.stack([du.ravel(), dv.ravel()], axis=1).astype(float)


def extract_patches(g: Grid, u, v, k: int):
    """Patches around N points; returns ((N, C*k*k) channel-major, valid (N,))."""
    off = patch_offsets(k)
    u = np.asarray(u, dtype=float).reshape(-1, 1) + off[:, 0]
    v = np.asarray(v, dtype=float).reshape(-1, 1) + off[:, 1]
    values, valid = sample(g, u, v)                      # (N, k*k, C)
    n = values.shape[0]
    return values.transpose(0, 2, 1).reshape(n, -1), valid.all(axis=1)


def extract_patch(g: Grid, p, k: int):
    values, valid = extract_patches(g, [p[0]], [p[1]], k)
    return values[0], bool(valid[0])
