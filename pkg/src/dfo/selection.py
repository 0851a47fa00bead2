"""Feature point selection masks.

Masks are drawn with the binary Gumbel-softmax relaxation: the logits for
"selected" and "not selected" each get an independent Gumbel draw and the
soft weight is the two-class softmax, i.e. a sigmoid of the logit difference
divided by the temperature. Hardening at 0.5 recovers an exact
Bernoulli(p) sample regardless of the temperature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .grids import Grid

PROB_EPS = 1e-6
# keeps soft weights strictly inside (0, 1) after float64 saturation
WEIGHT_EPS = 1e-12


@dataclass(frozen=True)
class SelectionMask:
    weights: Grid
    mode: str = "hard"
    temperature: float = 1.0

    def __post_init__(self):
        if self.mode not in ("soft", "hard"):
            raise ValueError(f"mode must be 'soft' or 'hard', got {self.mode!r}")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.weights.channels != 1:
            raise ValueError("selection masks have a single channel")

    @classmethod
    def from_array(cls, selected) -> "SelectionMask":
        """Hard mask from a boolean (H, W) array."""
        return cls(Grid(np.asarray(selected, dtype=float), "mask"), "hard")

    @classmethod
    def full(cls, height: int, width: int) -> "SelectionMask":
        return cls.from_array(np.ones((height, width)))

    @property
    def selected(self) -> np.ndarray:
        """Boolean (H, W) array of weights >= 0.5."""
        return self.weights.data[:, :, 0] >= 0.5

    @property
    def fraction(self) -> float:
        return float(self.weights.data.mean())


def probability_map(p) -> Grid:
    """Wrap an (H, W) array of probabilities, clamped to [1e-6, 1 - 1e-6]."""
    p = np.clip(np.asarray(p, dtype=float), PROB_EPS, 1.0 - PROB_EPS)
    return Grid(p, "mask")


def uniform_prior(height: int, width: int, rho: float) -> Grid:
    return probability_map(np.full((height, width), rho))


def gumbel_sample(p: Grid, tau: float, seed: int) -> SelectionMask:
    if not tau > 0:
        raise ValueError("temperature must be positive")
    prob = np.clip(p.data[:, :, 0], PROB_EPS, 1.0 - PROB_EPS)
    rng = np.random.default_rng(seed)
    g1 = rng.gumbel(size=prob.shape)
    g0 = rng.gumbel(size=prob.shape)
    logits = (np.log(prob) + g1 - np.log1p(-prob) - g0) / tau
    w = np.clip(expit(logits), WEIGHT_EPS, 1.0 - WEIGHT_EPS)
    return SelectionMask(Grid(w, "mask"), "soft", tau)


def harden(m: SelectionMask) -> SelectionMask:
    """Threshold soft weights at 0.5; ties go to 1."""
    w = (m.weights.data >= 0.5).astype(float)
    return SelectionMask(m.weights.with_data(w), "hard", m.temperature)


def sparsity_kl(m: SelectionMask, rho: float) -> float:
    """KL(rho || rho_hat) between the target and the mask's selection rate."""
    if not 0.0 < rho < 1.0:
        raise ValueError(f"target sparsity must lie in (0, 1), got {rho}")
    rho_hat = min(max(m.fraction, PROB_EPS), 1.0 - PROB_EPS)
    return float(rho * np.log(rho / rho_hat)
                 + (1.0 - rho) * np.log((1.0 - rho) / (1.0 - rho_hat)))


def gradient_prior(image: Grid, rho: float) -> Grid:
    """Selection probabilities that increase with local gradient magnitude.

    The map is linear in the normalised rank of the gradient magnitude and
    centred on rho, so its mean is rho exactly and ties share a probability.
    """
    if image.kind != "image":
        raise ValueError(f"gradient prior expects an image grid, got {image.kind!r}")
    if not 0.0 < rho < 1.0:
        raise ValueError(f"target sparsity must lie in (0, 1), got {rho}")
    H, W = image.height, image.width
    gy, gx = np.gradient(image.data, axis=(0, 1)) if min(H, W) > 1 else (0.0 * image.data,) * 2
    mag = np.mean(np.abs(gx) + np.abs(gy), axis=2)
    rank = rankdata(mag.ravel(), method="average").reshape(H, W)
    n = rank.size
    centred = (rank - (n + 1) / 2.0) / max(n - 1, 1)          # in [-0.5, 0.5]
    slope = 2.0 * (min(rho, 1.0 - rho) - 2 * PROB_EPS)
    return probability_map(rho + slope * centred)
