"""Run configuration read from an INI file.

Every section and key is optional; missing keys take the defaults below.

[pyramid]
level1 .. level4      "channels patch sparsity", e.g. "16 3 0.3"

[solver]
max_iterations        iterations per level (15)
convergence           stop when the normalised step norm falls below this (1e-7)
damping_min           Levenberg floor (1e-6)
damping_max           largest damping tried before a level stalls (1e2)
damping_factor        damping growth after a rejected step (10)
min_inliers           fewer usable points skip the level (24)
levels                comma separated enabled levels ("1,2,3,4")
strict_ic             target-side Jacobian computed once per level (false)

[selection]
prior                 gradient | uniform
tau                   Gumbel temperature used at solve time (0.1)
tau_start, tau_end    annealing schedule endpoints, informational (1.0, 0.1)

[losses]
lambda_sm, lambda_sp, lambda_ae   term weights (0.1, 0.01, 0.01)
alpha                 SSIM share of the appearance term (0.85)
eps_dssim, eps_l1     robust clipping knees (0.15, 0.3)

[features]
source                intensity | gradient | random-projection | dfog
zscore_dfog           normalise features read from DFOG files (false)

[synthetic]
height, width         level-1 resolution (192, 256)
channels              feature channels of the scene (16)
surface               slanted | fronto | harmonic
image_texture         sinusoid | bilinear
frames                snippet length (3)
translation_fraction  |t| per step as a fraction of the mean depth (0.05)
max_rotation_deg      largest rotation per step (2.0)
tolerance_rotation_deg, tolerance_translation   pass thresholds (0.01, 1e-3)

[evaluation]
depth_cap             largest ground-truth depth evaluated (80)
min_depth             smallest depth evaluated (1e-3)
median_scale          median-scale predictions (true)

[run]
seed                  master seed (42)
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace

from .errors import ConfigError
from .grids import DEFAULT_LEVEL_CONFIGS, LevelConfig
from .losses import LossWeights
from .solver import SolverConfig

FEATURE_SOURCES = ("intensity", "gradient", "random-projection", "dfog")


@dataclass(frozen=True)
class SyntheticConfig:
    height: int = 192
    width: int = 256
    channels: int = 16
    surface: str = "slanted"
    image_texture: str = "sinusoid"
    frames: int = 3
    translation_fraction: float = 0.05
    max_rotation_deg: float = 2.0
    tolerance_rotation_deg: float = 0.01
    tolerance_translation: float = 1e-3


@dataclass(frozen=True)
class RunConfig:
    levels: tuple = DEFAULT_LEVEL_CONFIGS
    solver: SolverConfig = field(default_factory=SolverConfig)
    losses: LossWeights = field(default_factory=LossWeights)
    prior: str = "gradient"
    tau: float = 0.1
    tau_start: float = 1.0
    tau_end: float = 0.1
    feature_source: str = "dfog"
    zscore_dfog: bool = False
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    depth_cap: float = 80.0
    min_depth: float = 1e-3
    median_scale: bool = True
    seed: int = 42

    def __post_init__(self):
        if len(self.levels) != 4:
            raise ConfigError("exactly 4 pyramid levels are required")
        if self.prior not in ("gradient", "uniform"):
            raise ConfigError(f"unknown selection prior {self.prior!r}")
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if self.feature_source not in FEATURE_SOURCES:
            raise ConfigError(f"unknown feature source {self.feature_source!r}")
        if self.synthetic.frames < 2:
            raise ConfigError("a snippet needs at least 2 frames")

    def with_overrides(self, **kw) -> "RunConfig":
        try:
            return replace(self, **kw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def parse_levels(text: str) -> tuple:
    try:
        levels = tuple(int(x) for x in text.replace(" ", "").split(",") if x)
    except ValueError as exc:
        raise ConfigError(f"bad level list {text!r}") from exc
    if not levels or any(l < 1 or l > 4 for l in levels):
        raise ConfigError(f"levels must be drawn from 1..4, got {text!r}")
    return levels


_SOLVER_KEYS = {"max_iterations": int, "convergence": float, "damping_min": float,
                "damping_max": float, "damping_factor": float, "min_inliers": int,
                "strict_ic": _parse_bool}
_LOSS_KEYS = {"lambda_sm": "smoothness", "lambda_sp": "sparsity", "lambda_ae": "reconstruction",
              "alpha": "alpha", "eps_dssim": "eps_dssim", "eps_l1": "eps_l1"}
_SYNTH_KEYS = {"height": int, "width": int, "channels": int, "surface": str, "image_texture": str,
               "frames": int, "translation_fraction": float, "max_rotation_deg": float,
               "tolerance_rotation_deg": float, "tolerance_translation": float}
_KNOWN = {
    "pyramid": {"level1", "level2", "level3", "level4"},
    "solver": set(_SOLVER_KEYS) | {"levels"},
    "selection": {"prior", "tau", "tau_start", "tau_end"},
    "losses": set(_LOSS_KEYS),
    "features": {"source", "zscore_dfog"},
    "synthetic": set(_SYNTH_KEYS),
    "evaluation": {"depth_cap", "min_depth", "median_scale"},
    "run": {"seed"},
}


def load_config(path=None, text: str = None) -> RunConfig:
    """Read a RunConfig from an INI file (or string); unknown keys are errors."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        if path is not None:
            with open(path) as fh:
                cp.read_file(fh)
        elif text is not None:
            cp.read_string(text)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read configuration: {exc}") from exc
    for section in cp.sections():
        if section not in _KNOWN:
            raise ConfigError(f"unknown section [{section}]")
        unknown = set(cp[section]) - _KNOWN[section]
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    try:
        return _build(cp)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def _build(cp) -> RunConfig:
    kw = {}
    if cp.has_section("pyramid"):
        levels = list(DEFAULT_LEVEL_CONFIGS)
        for i in range(4):
            value = cp["pyramid"].get(f"level{i + 1}")
            if value is None:
                continue
            parts = value.split()
            if len(parts) != 3:
                raise ValueError(f"level{i + 1} needs 'channels patch sparsity', got {value!r}")
            levels[i] = LevelConfig(int(parts[0]), int(parts[1]), float(parts[2]))
        kw["levels"] = tuple(levels)
    if cp.has_section("solver"):
        sec = cp["solver"]
        skw = {k: conv(sec[k]) for k, conv in _SOLVER_KEYS.items() if k in sec}
        if "levels" in sec:
            skw["enabled_levels"] = parse_levels(sec["levels"])
        kw["solver"] = SolverConfig(**skw)
    if cp.has_section("selection"):
        sec = cp["selection"]
        if "prior" in sec:
            kw["prior"] = sec["prior"].strip()
        for k in ("tau", "tau_start", "tau_end"):
            if k in sec:
                kw[k] = float(sec[k])
    if cp.has_section("losses"):
        sec = cp["losses"]
        kw["losses"] = LossWeights(**{attr: float(sec[k]) for k, attr in _LOSS_KEYS.items() if k in sec})
    if cp.has_section("features"):
        sec = cp["features"]
        if "source" in sec:
            kw["feature_source"] = sec["source"].strip()
        if "zscore_dfog" in sec:
            kw["zscore_dfog"] = _parse_bool(sec["zscore_dfog"])
    if cp.has_section("synthetic"):
        sec = cp["synthetic"]
        kw["synthetic"] = SyntheticConfig(**{k: conv(sec[k].strip()) for k, conv in _SYNTH_KEYS.items()
                                             if k in sec})
    if cp.has_section("evaluation"):
        sec = cp["evaluation"]
        for k in ("depth_cap", "min_depth"):
            if k in sec:
                kw[k] = float(sec[k])
        if "median_scale" in sec:
            kw["median_scale"] = _parse_bool(sec["median_scale"])
    if cp.has_section("run") and "seed" in cp["run"]:
        kw["seed"] = int(cp["run"]["seed"])
    return RunConfig(**kw)
