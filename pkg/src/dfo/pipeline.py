"""Frame directories, synthetic export and the sequence solve shared by the CLI.

Frame directory layout (KKKK is the zero-padded frame number, l the level):

    intrinsics.txt              "fx fy cx cy" for level 1
    frame_KKKK_image.pgm|ppm    level-1 image (8 bit)
    frame_KKKK_image_l{l}.dfog  optional float image per level, preferred when present
    frame_KKKK_depth.dfog       level-1 depth, or per level frame_KKKK_depth_l{l}.dfog
    frame_KKKK_feat_l{l}.dfog   feature grids (needed for the dfog feature source)
    frame_KKKK_prob_l{l}.dfog   optional selection probability maps
    frame_KKKK_recon_l1.dfog    optional reconstruction of the level-1 image
    poses_gt.txt                optional KITTI camera-to-world ground truth

Missing levels of an image or depth pyramid are built by smoothing and
decimating level 1.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry as geo
from . import synthetic as syn
from .config import RunConfig
from .errors import ConfigError, FormatError
from .evalio import Trajectory, integrate, write_kitti_poses
from .features import feature_pyramid
from .geometry import NUM_LEVELS, Intrinsics, RigidTransform
from .grids import Grid, Pyramid, downsample2, zscore_normalize
from .io import read_dfog, read_image, write_dfog, write_image
from .selection import gradient_prior, gumbel_sample, harden, probability_map, uniform_prior
from .solver import SolveReport, rotation_error_deg, solve_pyramid, translation_error_rel

_FRAME = re.compile(r"^frame_(\d{4})_")


def stream_seed(*parts: int) -> int:
    """Independent, reproducible seed for a (seed, frame, level, ...) tuple."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass
class FrameData:
    index: int
    images: Pyramid
    depths: Pyramid
    features: Pyramid = None
    probabilities: list = None
    reconstruction: Grid = None


def read_intrinsics(path) -> Intrinsics:
    try:
        vals = [float(x) for x in Path(path).read_text().split()]
    except OSError as exc:
        raise FormatError(f"cannot read intrinsics: {exc}") from exc
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if len(vals) != 4:
        raise FormatError(f"{path}: expected 'fx fy cx cy', found {len(vals)} values")
    try:
        return Intrinsics(*vals)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def write_intrinsics(K: Intrinsics, path) -> None:
    Path(path).write_text(f"{K.fx:.17g} {K.fy:.17g} {K.cx:.17g} {K.cy:.17g}\n")


def frame_indices(directory) -> list:
    d = Path(directory)
    if not d.is_dir():
        raise FormatError(f"{directory} is not a directory")
    found = sorted({int(m.group(1)) for p in d.iterdir() if (m := _FRAME.match(p.name))})
    if len(found) < 2:
        raise FormatError(f"{directory}: need at least two frames, found {len(found)}")
    return found


def _level_grids(d: Path, stem: str, kind: str, level1_loader, configs, K):
    per_level = [d / f"{stem}_l{l}.dfog" for l in range(1, NUM_LEVELS + 1)]
    if per_level[0].exists():
        grids = [read_dfog(per_level[0], kind)]
    else:
        grids = [level1_loader()]
    for l in range(2, NUM_LEVELS + 1):
        p = per_level[l - 1]
        grids.append(read_dfog(p, kind) if p.exists() else downsample2(grids[-1]))
    return Pyramid(grids, [geo.rescale_intrinsics(K, l) for l in range(1, NUM_LEVELS + 1)], configs)


def load_frame(directory, k: int, K: Intrinsics, cfg: RunConfig) -> FrameData:
    d = Path(directory)
    stem = f"frame_{k:04d}"

    def image_l1():
        for ext in ("pgm", "ppm"):
            p = d / f"{stem}_image.{ext}"
            if p.exists():
                return read_image(p)
        raise FormatError(f"frame {k}: no image file")

    def depth_l1():
        p = d / f"{stem}_depth.dfog"
        if not p.exists():
            raise FormatError(f"frame {k}: no depth file")
        return read_dfog(p, "depth")

    images = _level_grids(d, f"{stem}_image", "image", image_l1, cfg.levels, K)
    depths = _level_grids(d, f"{stem}_depth", "depth", depth_l1, cfg.levels, K)
    for img, dep in zip(images.levels, depths.levels):
        if img.shape[:2] != dep.shape[:2]:
            raise FormatError(f"frame {k}: image {img.shape[:2]} and depth {dep.shape[:2]} differ")
    out = FrameData(k, images, depths)
    feats = [d / f"{stem}_feat_l{l}.dfog" for l in range(1, NUM_LEVELS + 1)]
    if all(p.exists() for p in feats):
        grids = [read_dfog(p, "feature") for p in feats]
        if cfg.zscore_dfog:
            grids = [zscore_normalize(g) for g in grids]
        out.features = Pyramid(grids, images.intrinsics, cfg.levels)
    probs = [d / f"{stem}_prob_l{l}.dfog" for l in range(1, NUM_LEVELS + 1)]
    if all(p.exists() for p in probs):
        out.probabilities = [probability_map(read_dfog(p, "mask").data[:, :, 0]) for p in probs]
    recon = d / f"{stem}_recon_l1.dfog"
    if recon.exists():
        out.reconstruction = read_dfog(recon, "image")
    return out


def load_sequence(directory, cfg: RunConfig):
    K = read_intrinsics(Path(directory) / "intrinsics.txt")
    return K, [load_frame(directory, k, K, cfg) for k in frame_indices(directory)]


def features_for(frame: FrameData, cfg: RunConfig) -> Pyramid:
    if cfg.feature_source == "dfog":
        if frame.features is None:
            raise FormatError(f"frame {frame.index}: the dfog feature source needs "
                              f"frame_{frame.index:04d}_feat_l1..l4.dfog")
        return frame.features
    return feature_pyramid(cfg.feature_source, frame.images, cfg.seed)


def selection_masks(frame: FrameData, cfg: RunConfig) -> list:
    """Hardened Gumbel samples of each level's probability map."""
    masks = []
    for l in range(1, NUM_LEVELS + 1):
        rho = cfg.levels[l - 1].sparsity
        img = frame.images[l]
        if frame.probabilities is not None:
            p = frame.probabilities[l - 1]
        elif cfg.prior == "gradient":
            p = gradient_prior(img, rho)
        else:
            p = uniform_prior(img.height, img.width, rho)
        masks.append(harden(gumbel_sample(p, cfg.tau, stream_seed(cfg.seed, frame.index, l))))
    return masks


def solve_pair(target: FrameData, source: FrameData, cfg: RunConfig) -> SolveReport:
    """Transform mapping target-camera points into the source camera."""
    ft, fs = features_for(target, cfg), features_for(source, cfg)
    return solve_pyramid(ft, fs, target.depths, selection_masks(target, cfg), cfg.solver)


def solve_sequence(directory, cfg: RunConfig):
    """Solve consecutive pairs; returns (trajectory, reports)."""
    _, frames = load_sequence(directory, cfg)
    reports = [solve_pair(frames[k], frames[k + 1], cfg) for k in range(len(frames) - 1)]
    traj = integrate([r.transform.inverse() for r in reports])
    traj.indices = [f.index for f in frames]
    return traj, reports


def write_reports(reports, out_dir) -> None:
    out = Path(out_dir)
    text = []
    for k, r in enumerate(reports):
        text.append(f"# pair {k} -> {k + 1}\n")
        text.append(r.to_text())
    (out / "report.txt").write_text("".join(text))
    lines = []
    for k, r in enumerate(reports):
        lines.extend(_kv_lines(f"pair{k}", r.to_dict()))
    (out / "report.kv").write_text("".join(line + "\n" for line in lines))


def _kv_lines(prefix: str, obj) -> list:
    if isinstance(obj, dict):
        return [line for key, v in obj.items() for line in _kv_lines(f"{prefix}.{key}", v)]
    if isinstance(obj, list) and obj and isinstance(obj[0], dict):
        return [line for i, v in enumerate(obj) for line in _kv_lines(f"{prefix}.{i}", v)]
    return [f"{prefix}={format_value(obj)}"]


def format_value(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return f"{v:.12g}"
    if isinstance(v, list):
        return " ".join(format_value(x) for x in v)
    if v is None:
        return "none"
    return str(v)


def kv_dump(d: dict) -> str:
    return "".join(f"{k}={format_value(v)}\n" for k, v in d.items())


# Synthetic snippets

def synthetic_snippet(cfg: RunConfig):
    """Seeded scene and snippet; returns (scene, frames, true relative transforms).

    relatives[k] maps camera-k points into camera k+1, like the solver output.
    """
    sc = cfg.synthetic
    try:
        scene = syn.random_scene(cfg.seed, surface=sc.surface, height=sc.height, width=sc.width,
                                 channels=sc.channels, image_texture=sc.image_texture)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rng = np.random.default_rng(stream_seed(cfg.seed, 1))
    frames = [syn.render_frame(scene, RigidTransform.identity())]
    relatives = []
    for _ in range(sc.frames - 1):
        mean_depth = float(frames[-1][1].depth.data.mean())
        if sc.max_rotation_deg > 0:
            rel = syn.random_motion(rng, mean_depth, sc.translation_fraction, sc.max_rotation_deg)
        else:
            rel = syn.translation_motion(rng, mean_depth, sc.translation_fraction)
        relatives.append(rel)
        frames.append(syn.render_frame(scene, geo.compose(rel, frames[-1].pose)))
    return scene, frames, relatives


def export_snippet(scene, frames, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_intrinsics(scene.intrinsics, out / "intrinsics.txt")
    for k, fr in enumerate(frames):
        stem = out / f"frame_{k:04d}"
        img1 = fr[1].image
        if img1.channels in (1, 3):
            write_image(img1, f"{stem}_image.{'pgm' if img1.channels == 1 else 'ppm'}")
        write_dfog(fr[1].depth, f"{stem}_depth.dfog")
        for l in range(1, NUM_LEVELS + 1):
            write_dfog(fr[l].image, f"{stem}_image_l{l}.dfog")
            write_dfog(fr[l].depth, f"{stem}_depth_l{l}.dfog")
            write_dfog(fr[l].features, f"{stem}_feat_l{l}.dfog")
    # the reference frame is the world frame, so camera-to-world is pose^-1
    write_kitti_poses(Trajectory([fr.pose.inverse() for fr in frames]), out / "poses_gt.txt")


def pose_errors(reports, relatives) -> list:
    return [(rotation_error_deg(r.transform, T), translation_error_rel(r.transform, T))
            for r, T in zip(reports, relatives)]
