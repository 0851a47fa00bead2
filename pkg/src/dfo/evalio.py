"""KITTI pose files, trajectory integration, snippet ATE and depth metrics.

Absolute poses are camera-to-world. A relative pose for the step k -> k+1 is
the pose of camera k+1 expressed in camera k, so absolutes chain as
absolute_{k+1} = absolute_k o relative_k. The solver's transform for the pair
(target k, source k+1) maps camera-k points into camera k+1, which is the
inverse of that relative pose.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as geo
from .errors import EmptyMask, LengthMismatch, MalformedLine, ShapeMismatch
from .geometry import RigidTransform
from .grids import Grid

# poses are printed with 12 significant digits
ROTATION_TOL = 1e-8


@dataclass
class Trajectory:
    poses: list                                   # camera-to-world RigidTransforms
    indices: list = field(default=None)

    def __post_init__(self):
        self.poses = list(self.poses)
        if self.indices is None:
            self.indices = list(range(len(self.poses)))

    def __len__(self):
        return len(self.poses)

    @property
    def positions(self) -> np.ndarray:
        return np.array([T.t for T in self.poses]).reshape(-1, 3)


def read_kitti_poses(path) -> Trajectory:
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 12:
                raise MalformedLine(lineno, f"expected 12 values, found {len(parts)}")
            try:
                vals = np.array([float(p) for p in parts])
            except ValueError as exc:
                raise MalformedLine(lineno, str(exc)) from exc
            if not np.all(np.isfinite(vals)):
                raise MalformedLine(lineno, "non-finite value")
            M = vals.reshape(3, 4)
            T = RigidTransform(M[:, :3], M[:, 3])
            if not T.is_valid(ROTATION_TOL):
                raise MalformedLine(lineno, "rotation block is not a rotation matrix")
            poses.append(T)
    return Trajectory(poses)


def format_kitti_pose(T: RigidTransform) -> str:
    M = np.hstack([T.R, T.t[:, None]])
    return " ".join(f"{x:.12g}" for x in M.ravel())


def write_kitti_poses(traj, path) -> None:
    poses = traj.poses if isinstance(traj, Trajectory) else list(traj)
    Path(path).write_text("".join(format_kitti_pose(T) + "\n" for T in poses))


def integrate(relatives) -> Trajectory:
    """Chain relative poses (camera k+1 in camera k) into camera-to-world absolutes."""
    relatives = list(relatives)
    if not relatives:
        raise ValueError("need at least one relative pose")
    out = [RigidTransform.identity()]
    for rel in relatives:
        out.append(geo.compose(out[-1], rel))
    return Trajectory(out)


def relative_poses(traj: Trajectory) -> list:
    """Inverse of integrate(): relative_k = absolute_k^-1 o absolute_{k+1}."""
    P = traj.poses
    return [geo.compose(P[k].inverse(), P[k + 1]) for k in range(len(P) - 1)]


def _window_positions(poses, start, n):
    origin = poses[start].inverse()
    return np.array([geo.compose(origin, poses[k]).t for k in range(start, start + n)])


def ate_snippets(pred: Trajectory, gt: Trajectory, n: int):
    """Mean and std over all n-frame windows of the scale-aligned RMS position error.

    Each window is expressed in the coordinates of its first frame, the
    predicted positions are scaled by the least-squares factor
    s = <gt, pred> / <pred, pred> (1 when the prediction does not move) and
    the error is sqrt(mean_k |s p_k - g_k|^2).
    """
    if len(pred) != len(gt):
        raise LengthMismatch(f"prediction has {len(pred)} poses, ground truth {len(gt)}")
    if n < 2 or len(gt) < n:
        raise LengthMismatch(f"need at least {max(n, 2)} poses for {n}-frame snippets, got {len(gt)}")
    errors = []
    for start in range(len(gt) - n + 1):
        p = _window_positions(pred.poses, start, n)
        g = _window_positions(gt.poses, start, n)
        denom = float(np.sum(p * p))
        scale = float(np.sum(g * p)) / denom if denom > 1e-300 else 1.0
        errors.append(np.sqrt(np.mean(np.sum((scale * p - g) ** 2, axis=1))))
    errors = np.array(errors)
    return float(errors.mean()), float(errors.std())


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    a1: float
    a2: float
    a3: float

    NAMES = ("abs_rel", "sq_rel", "rmse", "rmse_log", "a1", "a2", "a3")

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, k) for k in self.NAMES)

    def to_dict(self) -> dict:
        return dict(zip(self.NAMES, self.as_tuple()))


def depth_metrics(pred: Grid, gt: Grid, mask=None, median_scale: bool = False,
                  cap: float = 80.0, min_depth: float = 1e-3) -> DepthMetrics:
    """Standard monocular depth errors over pixels with min_depth < gt <= cap.

    With ``median_scale`` the prediction is multiplied by median(gt)/median(pred)
    first; predictions are then clipped to [min_depth, cap].
    """
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    p = pred.data[:, :, 0]
    g = gt.data[:, :, 0]
    valid = (g > min_depth) & (g <= cap)
    if mask is not None:
        m = mask.data[:, :, 0] if isinstance(mask, Grid) else np.asarray(mask)
        valid &= m >= 0.5
    if not valid.any():
        raise EmptyMask("no pixels to evaluate")
    p, g = p[valid], g[valid]
    if median_scale:
        p = p * (np.median(g) / np.median(p))
    p = np.clip(p, min_depth, cap)
    ratio = np.maximum(p / g, g / p)
    diff = p - g
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(diff) / g)),
        sq_rel=float(np.mean(diff ** 2 / g)),
        rmse=float(np.sqrt(np.mean(diff ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        a1=float(np.mean(ratio < 1.25)),
        a2=float(np.mean(ratio < 1.25 ** 2)),
        a3=float(np.mean(ratio < 1.25 ** 3)),
    )
