"""Command-line entry point.

    dfo synth-solve [--config C] [--seed S] [--out DIR] [--levels 1,2,3,4] [--feature-source F]
    dfo solve FRAMES_DIR [--config C] [--out DIR] [--levels ...] [--feature-source F]
    dfo eval-pose PRED GT [--snippet-len {3,5}]
    dfo eval-depth PRED GT [--mask M] [--config C]
    dfo losses SNIPPET_DIR [--config C]

Exit codes: 0 success, 1 synthetic tolerance failure, 2 bad input or configuration.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from .config import FEATURE_SOURCES, RunConfig, load_config, parse_levels
from .errors import DFOError
from .evalio import ate_snippets, depth_metrics, read_kitti_poses, write_kitti_poses
from .io import read_dfog
from .losses import total_loss
from .solver import SolverConfig

log = logging.getLogger("dfo")

EXIT_OK, EXIT_TOLERANCE, EXIT_INPUT = 0, 1, 2


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "feature_source", None):
        over["feature_source"] = args.feature_source
    if getattr(args, "snippet_len", None) and args.command == "synth-solve":
        sc = cfg.synthetic
        over["synthetic"] = type(sc)(**{**sc.__dict__, "frames": args.snippet_len})
    if getattr(args, "levels", None):
        s = cfg.solver
        over["solver"] = SolverConfig(**{**s.__dict__, "enabled_levels": parse_levels(args.levels)})
    return cfg.with_overrides(**over) if over else cfg


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_solution(traj, reports, out: Path) -> None:
    write_kitti_poses(traj, out / "poses.txt")
    pl.write_reports(reports, out)


def cmd_synth_solve(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, "dfo_synth")
    scene, frames, relatives = pl.synthetic_snippet(cfg)
    frames_dir = out / "frames"
    pl.export_snippet(scene, frames, frames_dir)
    traj, reports = pl.solve_sequence(frames_dir, cfg)
    _write_solution(traj, reports, out)
    sc = cfg.synthetic
    errors = pl.pose_errors(reports, relatives)
    lines, ok = [], True
    for k, (rot, trans) in enumerate(errors):
        passed = rot < sc.tolerance_rotation_deg and trans < sc.tolerance_translation
        ok &= passed
        lines.append(f"pair{k}.rotation_error_deg={rot:.6e}\n"
                     f"pair{k}.translation_error_rel={trans:.6e}\n"
                     f"pair{k}.pass={int(passed)}\n")
    lines.append(f"pass={int(ok)}\n")
    summary = "".join(lines)
    (out / "summary.txt").write_text(summary)
    sys.stdout.write(summary)
    return EXIT_OK if ok else EXIT_TOLERANCE


def cmd_solve(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, "dfo_solve")
    traj, reports = pl.solve_sequence(args.frames, cfg)
    _write_solution(traj, reports, out)
    sys.stdout.write(f"pairs={len(reports)}\nconverged={sum(r.converged for r in reports)}\n"
                     f"poses={out / 'poses.txt'}\n")
    return EXIT_OK


def cmd_eval_pose(args) -> int:
    pred = read_kitti_poses(args.pred)
    gt = read_kitti_poses(args.gt)
    mean, std = ate_snippets(pred, gt, args.snippet_len)
    sys.stdout.write(f"{'metric':<12}{'mean':>16}{'std':>16}\n"
                     f"{f'ATE-{args.snippet_len}':<12}{mean:>16.6e}{std:>16.6e}\n")
    sys.stdout.write(pl.kv_dump({"snippet_len": args.snippet_len, "ate_mean": mean, "ate_std": std}))
    return EXIT_OK


def cmd_eval_depth(args) -> int:
    cfg = _config(args)
    pred = read_dfog(args.pred, "feature")
    gt = read_dfog(args.gt, "feature")
    mask = read_dfog(args.mask, "mask") if args.mask else None
    m = depth_metrics(pred, gt, mask, median_scale=cfg.median_scale, cap=cfg.depth_cap,
                      min_depth=cfg.min_depth)
    d = m.to_dict()
    sys.stdout.write("".join(f"{k:>10}" for k in d) + "\n")
    sys.stdout.write("".join(f"{v:>10.4f}" for v in d.values()) + "\n")
    sys.stdout.write(pl.kv_dump(d))
    return EXIT_OK


def cmd_losses(args) -> int:
    cfg = _config(args)
    directory = Path(args.snippet)
    gt_path = directory / "poses_gt.txt"
    if not gt_path.exists():
        raise FileNotFoundError(f"{gt_path} is missing")
    K, frames = pl.load_sequence(directory, cfg)
    traj = read_kitti_poses(gt_path)
    if len(traj) != len(frames):
        raise DFOError(f"{len(traj)} poses for {len(frames)} frames")
    poses = [T.inverse() for T in traj.poses]
    masks = [pl.selection_masks(f, cfg) for f in frames]
    recon = [(f.images[1], f.reconstruction) for f in frames if f.reconstruction is not None]
    b = total_loss([f.images.levels for f in frames], [f.depths.levels for f in frames], poses,
                   frames[0].images.intrinsics, cfg.losses, masks=masks,
                   rho=[c.sparsity for c in cfg.levels], reconstructions=recon or None)
    sys.stdout.write(pl.kv_dump(b.to_dict()))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dfo", description="Direct feature odometry solver.")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver warnings")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="INI configuration file")
        sp.add_argument("--seed", type=int, help="override [run] seed")
        if out:
            sp.add_argument("--out", help="output directory")
        sp.add_argument("--levels", help="comma separated enabled levels, e.g. 1,2,3,4")
        sp.add_argument("--feature-source", choices=FEATURE_SOURCES)

    sp = sub.add_parser("synth-solve", help="solve a seeded synthetic snippet")
    common(sp)
    sp.add_argument("--snippet-len", type=int, choices=(3, 5))
    sp.set_defaults(func=cmd_synth_solve)

    sp = sub.add_parser("solve", help="solve consecutive frames of a directory")
    sp.add_argument("frames")
    common(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("eval-pose", help="snippet ATE of two KITTI pose files")
    sp.add_argument("pred")
    sp.add_argument("gt")
    sp.add_argument("--snippet-len", type=int, choices=(3, 5), default=5)
    sp.set_defaults(func=cmd_eval_pose)

    sp = sub.add_parser("eval-depth", help="depth metrics of two DFOG depth grids")
    sp.add_argument("pred")
    sp.add_argument("gt")
    sp.add_argument("--mask")
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_eval_depth)

    sp = sub.add_parser("losses", help="loss breakdown of a snippet directory")
    sp.add_argument("snippet")
    common(sp, out=False)
    sp.set_defaults(func=cmd_losses)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DFOError, OSError, ValueError) as exc:
        sys.stderr.write(f"dfo {args.command}: error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
