"""
Direct feature alignment on SE(3).

Given z-score normalised target/source feature maps, the target depth map and
a hard selection mask, find the transform T (target camera -> source camera)
minimising

    E(T) = sum_i || patch(phi_t, u_i) - patch(phi_s, warp(u_i, z_i, T)) ||^2

by damped Gauss-Newton with left-multiplicative updates T <- exp(dxi) T.
Levels are solved coarse to fine (4 -> 1); the translation handed down to the
next level is rescaled by the ratio of mean depths of the two levels.

Internally twists are solved in depth-normalised units (translation divided
by the level's mean depth), so damping and the convergence test behave the
same whatever the absolute depth scale is.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import DFOError, EmptyResidualSet, ShapeMismatch, SingularSystem
from .geometry import Intrinsics, RigidTransform, Twist
from .grids import Grid, Pyramid, patch_offsets, sample, sample_gradient, sample_with_gradient
from .selection import SelectionMask

log = logging.getLogger(__name__)

MAX_CONDITION = 1e12
MIN_GN_POINTS = 6


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 15
    convergence: float = 1e-7
    damping_min: float = 1e-6
    damping_max: float = 1e2
    damping_factor: float = 10.0
    min_inliers: int = 24
    enabled_levels: tuple = (1, 2, 3, 4)
    # Jacobian from the target once per level instead of re-linearising at
    # the current warp every iteration
    strict_ic: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (self.convergence > 0 and self.damping_min > 0):
            raise ValueError("thresholds must be positive")
        if self.damping_max < self.damping_min:
            raise ValueError("damping_max must be >= damping_min")
        if self.damping_factor <= 1:
            raise ValueError("damping_factor must exceed 1")
        object.__setattr__(self, "enabled_levels", tuple(sorted(set(self.enabled_levels))))


@dataclass
class ResidualSet:
    """Residuals of the selected points whose warp stayed inside the source.

    ``index`` refers back to the row-major list of selected pixels, and
    ``n_invalid`` counts selected points dropped for invalid warps.
    """

    residuals: np.ndarray       # (N, C*k*k)
    pixels: np.ndarray          # (N, 2) target (u, v)
    depths: np.ndarray          # (N,)
    index: np.ndarray           # (N,)
    n_invalid: int = 0

    @property
    def sq_norms(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.residuals, self.residuals)

    @property
    def energy(self) -> float:
        return float(self.sq_norms.sum())

    def __len__(self):
        return self.residuals.shape[0]

    def subset(self, keep) -> "ResidualSet":
        return ResidualSet(self.residuals[keep], self.pixels[keep], self.depths[keep],
                           self.index[keep], self.n_invalid)


@dataclass
class IterationLog:
    iteration: int
    energy: float
    energy_after: float
    energy_baseline: float
    inliers: int
    removed: int
    threshold: float
    damping: float
    step_norm: float
    accepted: bool
    removed_index: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("iteration", "energy", "energy_after", "energy_baseline", "inliers", "removed",
                 "threshold", "damping", "step_norm", "accepted")}


@dataclass
class LevelLog:
    level: int
    status: str = "pending"
    iterations: list = field(default_factory=list)
    initial: RigidTransform = None
    final: RigidTransform = None
    mean_depth: float = float("nan")
    selected: int = 0
    message: str = ""

    @property
    def energies(self) -> list:
        return [it.energy for it in self.iterations]

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "status": self.status,
            "message": self.message,
            "selected": self.selected,
            "mean_depth": self.mean_depth,
            "initial": _pose_list(self.initial),
            "final": _pose_list(self.final),
            "iterations": [it.to_dict() for it in self.iterations],
        }


@dataclass
class SolveReport:
    transform: RigidTransform
    levels: list
    converged: bool

    def level(self, level: int) -> LevelLog:
        for lg in self.levels:
            if lg.level == level:
                return lg
        raise KeyError(level)

    def to_dict(self) -> dict:
        return {
            "transform": _pose_list(self.transform),
            "converged": self.converged,
            "levels": [lg.to_dict() for lg in self.levels],
        }

    def to_text(self) -> str:
        lines = [f"converged {int(self.converged)}"]
        for lg in self.levels:
            lines.append(f"level {lg.level} status {lg.status} selected {lg.selected} "
                         f"mean_depth {lg.mean_depth:.9g}"
                         + (f" note {lg.message}" if lg.message else ""))
            for it in lg.iterations:
                lines.append(
                    f"  iter {it.iteration} energy {it.energy:.9e} after {it.energy_after:.9e} "
                    f"inliers {it.inliers} removed {it.removed} threshold {it.threshold:.6e} "
                    f"damping {it.damping:.1e} step {it.step_norm:.3e} "
                    f"{'accepted' if it.accepted else 'rejected'}")
        lines.append("transform " + " ".join(f"{x:.12g}" for x in _pose_list(self.transform)))
        return "\n".join(lines) + "\n"


def _pose_list(T):
    if T is None:
        return None
    return [float(x) for x in T.matrix[:3].ravel()]


class LevelProblem:
    """Precomputed per-level data: selected points, their 3D positions and target patches.

    Patch samples are kept as (n, k*k, C) arrays internally; the public
    residual layout (n, C*k*k) is channel-major.
    """

    def __init__(self, feat_t: Grid, feat_s: Grid, depth_t: Grid, mask: SelectionMask,
                 K: Intrinsics, k: int):
        _check_shapes(feat_t, feat_s, depth_t, mask)
        self.feat_t, self.feat_s, self.K, self.k = feat_t, feat_s, K, k
        self.offsets = patch_offsets(k)
        sel = mask.selected if mask is not None else np.ones(depth_t.shape[:2], bool)
        ys, xs = np.nonzero(sel)
        self.n_selected = ys.size
        r = (k - 1) // 2
        H, W = depth_t.height, depth_t.width
        inside = (xs >= r) & (xs <= W - 1 - r) & (ys >= r) & (ys <= H - 1 - r)
        self.n_border = int(np.count_nonzero(~inside))
        self.index = np.flatnonzero(inside)
        xs, ys = xs[inside], ys[inside]
        self.pixels = np.stack([xs, ys], axis=1).astype(float)
        self.depths = depth_t.data[ys, xs, 0]
        self.points = geo.backproject_pixels(self.pixels[:, 0], self.pixels[:, 1], self.depths, K)
        # integer lattice positions: sampling returns the raw grid values
        tu = self.pixels[:, 0][:, None] + self.offsets[:, 0]
        tv = self.pixels[:, 1][:, None] + self.offsets[:, 1]
        self.target_samples, _ = sample(feat_t, tu, tv)           # (n, k*k, C)
        self.mean_depth = float(depth_t.data.mean())

    def __len__(self):
        return self.pixels.shape[0]

    @property
    def target(self) -> np.ndarray:
        return _channel_major(self.target_samples)

    def _warp(self, T: RigidTransform, rows):
        Xs = T.apply(self.points[rows])
        if _is_identity(T):
            # backproject-then-project is only exact to rounding; keep the lattice exact
            u, v = self.pixels[rows, 0], self.pixels[rows, 1]
            front = np.ones(u.shape, bool)
        else:
            u, v, front = geo.project_points(Xs, self.K)
        su = u[:, None] + self.offsets[:, 0]
        sv = v[:, None] + self.offsets[:, 1]
        return Xs, su, sv, front

    def evaluate(self, T: RigidTransform, rows, with_gradient: bool = False):
        """Residual samples (n, k*k, C), validity, points in the source frame and,
        optionally, the source gradients as a pair of (n, k*k, C) arrays."""
        Xs, su, sv, front = self._warp(T, rows)
        if with_gradient:
            vals, gu, gv, ok = sample_with_gradient(self.feat_s, su, sv)
            grad = (gu, gv)
        else:
            (vals, ok), grad = sample(self.feat_s, su, sv), None
        valid = front & ok.all(axis=1)
        res = self.target_samples[rows] - vals
        res[~valid] = 0.0
        return res, valid, Xs, grad

    def residuals(self, T: RigidTransform, rows=None):
        """Return (residuals (n, C*k*k), valid (n,), transformed points) for ``rows``."""
        if rows is None:
            rows = np.arange(len(self))
        res, valid, Xs, _ = self.evaluate(T, rows)
        return _channel_major(res), valid, Xs

    def jacobian(self, T: RigidTransform, rows):
        """d(residual)/d(xi) for T <- exp(xi) T, shape (n, C*k*k, 6)."""
        Xs, su, sv, _ = self._warp(T, rows)
        grad, _ = sample_gradient(self.feat_s, su, sv)    # (n, k*k, C, 2)
        duv = geo.projection_jacobian(Xs, self.K)         # (n, 2, 6)
        J = -np.einsum("nscd,ndj->ncsj", grad, duv)
        return J.reshape(J.shape[0], -1, 6)

    def target_gradients(self):
        """Central-difference target gradients at every lattice sample, two (n, k*k, C) arrays."""
        d = self.feat_t.data
        gy, gx = np.gradient(d, axis=(0, 1)) if min(d.shape[:2]) > 1 else (0 * d, 0 * d)
        grad_grid = Grid(np.concatenate([gx, gy], axis=2), "feature")
        C = d.shape[2]
        su = self.pixels[:, 0][:, None] + self.offsets[:, 0]
        sv = self.pixels[:, 1][:, None] + self.offsets[:, 1]
        g, _ = sample(grad_grid, su, sv)                 # (n, k*k, 2C)
        return g[..., :C], g[..., C:]

    def target_jacobian(self):
        """Inverse-compositional Jacobian at the identity warp, all rows."""
        duv = geo.projection_jacobian(self.points, self.K)
        J = np.einsum("nscd,ndj->ncsj", np.stack(self.target_gradients(), axis=-1), duv)
        return J.reshape(J.shape[0], -1, 6)

    def residual_set(self, T: RigidTransform) -> ResidualSet:
        res, valid, _ = self.residuals(T)
        return ResidualSet(res[valid], self.pixels[valid], self.depths[valid], self.index[valid],
                           n_invalid=self.n_border + int(np.count_nonzero(~valid)))


def _is_identity(T: RigidTransform) -> bool:
    return not T.t.any() and np.array_equal(T.R, np.eye(3))


def _channel_major(samples: np.ndarray) -> np.ndarray:
    n, s, c = samples.shape
    return samples.transpose(0, 2, 1).reshape(n, s * c)


def _structured_normal_equations(res, gu, gv, duv):
    """J^T J and J^T r for J = [gu gv] . duv without forming J.

    ``res``, ``gu`` and ``gv`` are (n, s, C), ``duv`` is (n, 2, 6). Each point
    contributes duv^T G duv with its 2x2 structure tensor G, which is far
    cheaper than materialising the (n, s*C, 6) Jacobian.
    """
    n = res.shape[0]
    a, b, r = gu.reshape(n, -1), gv.reshape(n, -1), res.reshape(n, -1)
    G = np.empty((n, 2, 2))
    G[:, 0, 0] = np.einsum("nm,nm->n", a, a)
    G[:, 0, 1] = G[:, 1, 0] = np.einsum("nm,nm->n", a, b)
    G[:, 1, 1] = np.einsum("nm,nm->n", b, b)
    q = np.stack([np.einsum("nm,nm->n", a, r), np.einsum("nm,nm->n", b, r)], axis=1)
    B = np.matmul(G, duv)                                      # (n, 2, 6)
    A = duv.reshape(-1, 6)
    return A.T @ B.reshape(-1, 6), A.T @ q.reshape(-1)


def _check_shapes(feat_t, feat_s, depth_t, mask):
    if feat_t.shape != feat_s.shape:
        raise ShapeMismatch(f"target features {feat_t.shape} vs source features {feat_s.shape}")
    if depth_t.shape[:2] != feat_t.shape[:2] or depth_t.channels != 1:
        raise ShapeMismatch(f"depth {depth_t.shape} does not match features {feat_t.shape}")
    if mask is not None and mask.weights.shape[:2] != feat_t.shape[:2]:
        raise ShapeMismatch(f"mask {mask.weights.shape} does not match features {feat_t.shape}")


def compute_residuals(feat_t: Grid, feat_s: Grid, depth_t: Grid, mask: SelectionMask,
                      T: RigidTransform, K: Intrinsics, k: int) -> ResidualSet:
    return LevelProblem(feat_t, feat_s, depth_t, mask, K, k).residual_set(T)


def jacobian_ic(feat_s: Grid, depth_t: Grid, mask: SelectionMask, T0: RigidTransform,
                K: Intrinsics, k: int) -> np.ndarray:
    """Per-point (C*k*k, 6) Jacobians at T0, rows aligned with compute_residuals.

    The target features only enter the residual, not its derivative, so the
    source map stands in for them here.
    """
    prob = LevelProblem(feat_s, feat_s, depth_t, mask, K, k)
    _, valid, _ = prob.residuals(T0)
    return prob.jacobian(T0, np.flatnonzero(valid))


def outlier_threshold(rs) -> float:
    """Half-way point between the median and the maximum squared residual norm."""
    norms = rs.sq_norms if isinstance(rs, ResidualSet) else np.asarray(rs, dtype=float)
    if norms.size == 0:
        raise EmptyResidualSet("no valid residuals to threshold")
    return 0.5 * (float(np.median(norms)) + float(norms.max()))


def inlier_mask(norms: np.ndarray, threshold: float = None) -> np.ndarray:
    """Points strictly below the threshold.

    When the median equals the maximum the rule would discard every point at
    the top value, so removal is skipped and everything is kept.
    """
    norms = np.asarray(norms, dtype=float)
    if threshold is None:
        threshold = outlier_threshold(norms)
    if np.median(norms) >= norms.max():
        return np.ones(norms.shape, bool)
    return norms < threshold


def gauss_newton_step(rs, J, damping: float = 1e-6, translation_scale: float = 1.0,
                      weights=None) -> Twist:
    """Solve (sum w J^T J + damping I) dxi = -sum w J^T r.

    ``rs`` is a ResidualSet or an (N, m) array; ``J`` is (N, m, 6). The damping
    acts on the twist with its translation expressed in units of
    ``translation_scale``.
    """
    r = rs.residuals if isinstance(rs, ResidualSet) else np.asarray(rs, dtype=float)
    J = np.asarray(J, dtype=float)
    if r.shape[0] < MIN_GN_POINTS:
        raise SingularSystem(f"{r.shape[0]} points cannot constrain 6 degrees of freedom")
    if weights is not None:
        w = np.sqrt(np.asarray(weights, dtype=float))[:, None]
        r = r * w
        J = J * w[:, :, None]
    Jf = J.reshape(-1, 6)
    return solve_normal_equations(Jf.T @ Jf, Jf.T @ r.reshape(-1), damping, translation_scale)


def solve_normal_equations(JtJ, Jtr, damping: float = 1e-6,
                           translation_scale: float = 1.0) -> Twist:
    """Damped solve of JtJ dxi = -Jtr with translation measured in ``translation_scale``."""
    s = np.array([translation_scale] * 3 + [1.0] * 3)
    H = JtJ * np.outer(s, s) + damping * np.eye(6)
    g = Jtr * s
    eig = np.linalg.eigvalsh(H)
    if not eig[0] > 0 or eig[-1] / eig[0] > MAX_CONDITION:
        raise SingularSystem(f"normal equations are singular (eigenvalues {eig[0]:.3e}..{eig[-1]:.3e})")
    L = np.linalg.cholesky(H)
    delta = -np.linalg.solve(L.T, np.linalg.solve(L, g))
    return Twist.from_vector(delta * s)


def update_pose(T: RigidTransform, delta) -> RigidTransform:
    return geo.compose(geo.exp_map(delta), T)


def _normalised_norm(delta: Twist, scale: float) -> float:
    return float(np.linalg.norm(np.concatenate([delta.v / scale, delta.w])))


def solve_level(feat_t: Grid, feat_s: Grid, depth_t: Grid, mask: SelectionMask,
                T_init: RigidTransform, K: Intrinsics, k: int,
                cfg: SolverConfig = SolverConfig(), level: int = 1):
    """Iterate residuals -> outlier removal -> Jacobian -> damped GN -> update.

    Returns (transform, LevelLog). A level with fewer than ``cfg.min_inliers``
    usable points is skipped and returns T_init unchanged.
    """
    prob = LevelProblem(feat_t, feat_s, depth_t, mask, K, k)
    lg = LevelLog(level, initial=T_init, mean_depth=prob.mean_depth, selected=prob.n_selected)
    scale = prob.mean_depth
    T = T_init
    if cfg.strict_ic:
        grad_t = prob.target_gradients()
        duv_t = geo.projection_jacobian(prob.points, K)
    lg.status = "max_iterations"
    every = np.arange(len(prob))
    evaluation = None
    for it in range(1, cfg.max_iterations + 1):
        if evaluation is None:
            evaluation = prob.evaluate(T, every, with_gradient=not cfg.strict_ic)
        res, valid, Xs, grad = evaluation
        rows = np.flatnonzero(valid)
        if rows.size < cfg.min_inliers:
            lg.status = "skipped" if it == 1 else "lost"
            lg.message = f"{rows.size} valid points, need {cfg.min_inliers}"
            log.warning("level %d: %s", level, lg.message)
            break
        res = res[rows]
        norms = np.einsum("nsc,nsc->n", res, res)
        thr = outlier_threshold(norms)
        keep = inlier_mask(norms, thr)
        removed_index = prob.index[rows[~keep]]
        rows, res = rows[keep], res[keep]
        norms_kept = norms[keep]
        energy = float(norms_kept.sum())
        if rows.size < cfg.min_inliers:
            lg.status = "skipped" if it == 1 else "lost"
            lg.message = f"{rows.size} inliers after outlier removal, need {cfg.min_inliers}"
            log.warning("level %d: %s", level, lg.message)
            break
        if rows.size < MIN_GN_POINTS:
            raise SingularSystem(f"{rows.size} points cannot constrain 6 degrees of freedom")
        if cfg.strict_ic:
            JtJ, Jtr = _structured_normal_equations(res, grad_t[0][rows], grad_t[1][rows], duv_t[rows])
        else:
            JtJ, Jtr = _structured_normal_equations(res, grad[0][rows], grad[1][rows],
                                                    geo.projection_jacobian(Xs[rows], K))
            Jtr = -Jtr

        damping = cfg.damping_min
        accepted = False
        while True:
            delta = solve_normal_equations(JtJ, Jtr, damping, translation_scale=scale)
            if cfg.strict_ic:
                delta = Twist.from_vector(-geo.adjoint(T) @ delta.vector)
            candidate = update_pose(T, delta)
            # the whole set is evaluated so an accepted candidate can be reused
            evaluation = prob.evaluate(candidate, every, with_gradient=not cfg.strict_ic)
            res_c, valid_c = evaluation[0][rows], evaluation[1][rows]
            # compare on the points that stay inside the source under both poses
            baseline = float(norms_kept[valid_c].sum())
            energy_after = float(np.einsum("nsc,nsc->", res_c[valid_c], res_c[valid_c]))
            if np.count_nonzero(valid_c) >= cfg.min_inliers and energy_after <= baseline:
                accepted = True
                break
            damping *= cfg.damping_factor
            if damping > cfg.damping_max * (1 + 1e-9):
                break

        step = _normalised_norm(delta, scale)
        lg.iterations.append(IterationLog(it, energy, energy_after, baseline, int(rows.size),
                                          int(removed_index.size), thr, damping,
                                          step, accepted, removed_index))
        if not accepted:
            lg.status = "stalled"
            break
        T = candidate
        if step < cfg.convergence:
            lg.status = "converged"
            break
    lg.final = T
    return T, lg


def solve_pyramid(feat_t: Pyramid, feat_s: Pyramid, depth_t: Pyramid, masks,
                  cfg: SolverConfig = SolverConfig(), T_init: RigidTransform = None) -> SolveReport:
    """Coarse-to-fine solve over the four levels; returns the level-1 transform.

    ``masks`` is a sequence of four SelectionMasks (finest first) or None for
    dense alignment. Level 4 starts from ``T_init`` (identity by default).
    """
    n = len(feat_t.levels)
    masks = [None] * n if masks is None else list(masks)
    T = RigidTransform.identity() if T_init is None else T_init
    logs = []
    prev_mean = None
    for level in range(n, 0, -1):
        i = level - 1
        mean_depth = float(depth_t.levels[i].data.mean())
        if prev_mean is not None:
            T = RigidTransform(T.R, T.t * (mean_depth / prev_mean))
        prev_mean = mean_depth
        K = feat_t.intrinsics[i]
        k = feat_t.configs[i].patch
        if level not in cfg.enabled_levels:
            lg = LevelLog(level, "disabled", initial=T, final=T, mean_depth=mean_depth)
            logs.append(lg)
            continue
        try:
            T, lg = solve_level(feat_t.levels[i], feat_s.levels[i], depth_t.levels[i], masks[i],
                                T, K, k, cfg, level)
        except DFOError as exc:
            log.warning("level %d failed (%s); passing its initialisation through", level, exc)
            lg = LevelLog(level, "failed", initial=T, final=T, mean_depth=mean_depth, message=str(exc))
        logs.append(lg)
    fine = [lg for lg in logs if lg.level == 1][0]
    return SolveReport(T, logs, fine.status == "converged")


def rotation_error_deg(T_est: RigidTransform, T_true: RigidTransform) -> float:
    dR = T_est.R @ T_true.R.T
    c = np.clip(0.5 * (np.trace(dR) - 1.0), -1.0, 1.0)
    s = 0.5 * np.linalg.norm(geo.vee(dR - dR.T))
    return math.degrees(math.atan2(s, c))


def translation_error_rel(T_est: RigidTransform, T_true: RigidTransform) -> float:
    """|t_est - t_true| / |t_true|, or the absolute error when the truth does not move."""
    err = float(np.linalg.norm(T_est.t - T_true.t))
    norm = float(np.linalg.norm(T_true.t))
    return err / norm if norm > 0 else err
