"""Hand-made feature pyramids standing in for learned feature maps.

intensity          the image channels themselves
gradient           grey level plus its horizontal and vertical derivatives
random-projection  a seeded linear map of each pixel's 3x3 grey neighbourhood
                   and gradient onto the level's configured channel count

Each level is computed from that level's image and z-score normalised.
Learned features can be supplied directly as DFOG grids instead.
"""

from __future__ import annotations

import numpy as np

from .grids import Grid, Pyramid, zscore_normalize


def _grey(image: Grid) -> np.ndarray:
    return image.data.mean(axis=2)


def _derivatives(grey: np.ndarray):
    if min(grey.shape) < 2:
        return np.zeros_like(grey), np.zeros_like(grey)
    gy, gx = np.gradient(grey)
    return gx, gy


def intensity_features(image: Grid) -> Grid:
    return Grid(image.data, "feature")


def gradient_features(image: Grid) -> Grid:
    g = _grey(image)
    gx, gy = _derivatives(g)
    return Grid(np.stack([g, gx, gy], axis=2), "feature")


def random_projection_features(image: Grid, channels: int, seed: int) -> Grid:
    g = _grey(image)
    gx, gy = _derivatives(g)
    padded = np.pad(g, 1, mode="edge")
    H, W = g.shape
    stack = [padded[dy:dy + H, dx:dx + W] for dy in range(3) for dx in range(3)]
    desc = np.stack(stack + [gx, gy], axis=2)                      # (H, W, 11)
    P = np.random.default_rng(seed).standard_normal((desc.shape[2], channels))
    return Grid(desc @ P / np.sqrt(desc.shape[2]), "feature")


def feature_pyramid(source: str, images: Pyramid, seed: int = 0) -> Pyramid:
    """Z-scored feature pyramid from an image pyramid."""
    levels = []
    for i, img in enumerate(images.levels):
        if source == "intensity":
            f = intensity_features(img)
        elif source == "gradient":
            f = gradient_features(img)
        elif source == "random-projection":
            # the projection depends only on (seed, level) so every frame shares it
            f = random_projection_features(img, images.configs[i].channels, seed * 16 + i)
        else:
            raise ValueError(f"unknown feature source {source!r}")
        levels.append(zscore_normalize(f))
    return Pyramid(levels, images.intrinsics, images.configs)
