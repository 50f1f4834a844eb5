"""Discrete dynamic movement primitives.

Two transformation-system formulations share one canonical phase system
tau * dx/dt = -alpha_x * x:

  bio:       tau dz/dt = a_z (b_z (g - y) - z) - a_z b_z (g - y0) x + a_z b_z f(x)
  original:  tau dz/dt = a_z (b_z (g - y) - z) + (g - y0) f(x)

with tau dy/dt = z and f(x) the normalized Gaussian-basis mix times x.
The original formulation scales its forcing by (g - y0), which is exactly
what produces the two documented failure modes (acceleration blow-up when
the fitted amplitude is small, and full trajectory inversion when the goal
crosses the start); the bio formulation restructures the terms to avoid
both. Integration is explicit Euler at cfg.dt.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import InsufficientDataError, SkillPipeError

VARIANTS = ("original", "bio")


class DivergenceError(SkillPipeError):
    """Integration produced a non-finite state."""

    def __init__(self, step):
        super().__init__(f"non-finite DMP state at step {step}")
        self.step = step


@dataclass
class DmpConfig:
    alpha_z: float = 25.0
    beta_z: float | None = None   # defaults to alpha_z / 4
    alpha_x: float | None = None  # defaults to alpha_z / 3
    tau: float = 1.0
    n_basis: int = 10
    variant: str = "bio"
    dt: float = 0.001

    def __post_init__(self):
        if self.beta_z is None:
            self.beta_z = self.alpha_z / 4.0
        if self.alpha_x is None:
            self.alpha_x = self.alpha_z / 3.0
        if min(self.alpha_z, self.beta_z, self.alpha_x) <= 0:
            raise ValueError("rate constants must be positive")
        if self.n_basis < 2:
            raise ValueError("need at least 2 basis functions")
        if self.dt <= 0 or self.tau <= 0:
            raise ValueError("dt and tau must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")


@dataclass
class BasisSet:
    """Gaussian basis over the canonical phase. Centers are placed at equally
    spaced times (exponentially spaced in x); widths are half the gap to the
    previous center, with the first width copied from the second."""

    centers: np.ndarray
    widths: np.ndarray

    @staticmethod
    def for_config(cfg: DmpConfig, duration: float) -> "BasisSet":
        t_centers = np.linspace(0.0, duration, cfg.n_basis)
        c = np.exp(-cfg.alpha_x * t_centers / cfg.tau)
        w = np.empty(cfg.n_basis)
        w[1:] = 0.5 * (c[:-1] - c[1:])
        w[0] = w[1]
        return BasisSet(c, w)

    def activations(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.exp(-((x[:, None] - self.centers[None, :]) ** 2)
                      / (2.0 * self.widths[None, :] ** 2))


@dataclass
class DmpWeights:
    """Single-DOF parameter set: basis weights plus start and goal."""

    w: np.ndarray
    y0: float
    g: float
    degenerate: np.ndarray | None = None  # flags bases with ~zero support

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if not np.all(np.isfinite(self.w)):
            raise ValueError("weights must be finite")


@dataclass
class DmpTrajectory:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    yd: np.ndarray
    ydd: np.ndarray


def n_steps(cfg: DmpConfig, duration: float) -> int:
    return int(np.ceil(duration / cfg.dt)) + 1


def canonical_rollout(cfg: DmpConfig, duration: float) -> np.ndarray:
    """Euler-integrated phase x(t) from x=1, sampled at cfg.dt. The Euler
    step is a fixed shrink factor, so the sequence is a cumulative product."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    steps = n_steps(cfg, duration)
    factor = 1.0 - cfg.dt * cfg.alpha_x / cfg.tau
    xs = np.empty(steps)
    xs[0] = 1.0
    np.cumprod(np.full(steps - 1, factor), out=xs[1:])
    return xs


def forcing(basis: BasisSet, w, x) -> np.ndarray:
    """f(x) = [sum_i psi_i(x) w_i / sum_i psi_i(x)] * x (raw, unscaled)."""
    psi = basis.activations(x)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return (psi @ np.asarray(w, dtype=float)) / (psi.sum(axis=1) + 1e-12) * x


def _integrate_multi(cfg: DmpConfig, weights: list[DmpWeights],
                     duration: float) -> DmpTrajectory:
    """Euler integration of several DOFs against one shared phase.
    Arrays come back with shape (steps, n_dof). The phase and the forcing
    series only depend on the weights, so they are precomputed in bulk and
    the loop carries just the (y, z) state recurrence."""
    steps = n_steps(cfg, duration)
    basis = BasisSet.for_config(cfg, duration)
    nd = len(weights)
    W = np.stack([wt.w for wt in weights], axis=1)      # (n_basis, nd)
    y0 = np.array([wt.y0 for wt in weights])
    g = np.array([wt.g for wt in weights])

    xs = canonical_rollout(cfg, duration)
    psi = basis.activations(xs)                          # (steps, n_basis)
    f_raw = (psi @ W) / (psi.sum(axis=1, keepdims=True) + 1e-12) * xs[:, None]

    a_z, b_z, tau = cfg.alpha_z, cfg.beta_z, cfg.tau
    if cfg.variant == "bio":
        drive = a_z * b_z * (f_raw - (g - y0)[None, :] * xs[:, None])
    else:
        drive = (g - y0)[None, :] * f_raw

    ts = np.arange(steps) * cfg.dt
    dt = cfg.dt
    if nd == 1:
        # scalar fast path: same arithmetic as the vector loop below
        dr = drive[:, 0].tolist()
        g0, y, z = float(g[0]), float(y0[0]), 0.0
        y_l, yd_l, ydd_l = [], [], []
        for k in range(steps):
            zdot = (a_z * (b_z * (g0 - y) - z) + dr[k]) / tau
            y_l.append(y)
            yd_l.append(z / tau)
            ydd_l.append(zdot / tau)
            y = y + dt * z / tau
            z = z + dt * zdot
        ys = np.array(y_l)[:, None]
        yds = np.array(yd_l)[:, None]
        ydds = np.array(ydd_l)[:, None]
    else:
        ys = np.empty((steps, nd))
        yds = np.empty((steps, nd))
        ydds = np.empty((steps, nd))
        y = y0.copy()
        z = np.zeros(nd)
        for k in range(steps):
            zdot = (a_z * (b_z * (g - y) - z) + drive[k]) / tau
            ys[k] = y
            yds[k] = z / tau
            ydds[k] = zdot / tau
            y = y + dt * z / tau
            z = z + dt * zdot
    if not (np.all(np.isfinite(ys)) and np.all(np.isfinite(ydds))):
        bad = ~(np.all(np.isfinite(ys), axis=1)
                & np.all(np.isfinite(ydds), axis=1))
        raise DivergenceError(int(np.flatnonzero(bad)[0]))
    return DmpTrajectory(ts, xs, ys, yds, ydds)


def integrate(cfg: DmpConfig, weights: DmpWeights, duration: float) -> DmpTrajectory:
    """Single-DOF rollout; trajectory arrays are 1-D."""
    traj = _integrate_multi(cfg, [weights], duration)
    return DmpTrajectory(traj.t, traj.x, traj.y[:, 0], traj.yd[:, 0],
                         traj.ydd[:, 0])


def integrate_batch(cfg: DmpConfig, weight_rows: np.ndarray, y0: float,
                    g: float, duration: float) -> DmpTrajectory:
    """Integrate many single-DOF weight vectors (rows) that share a start,
    goal, and phase; columns of the returned arrays index the batch.
    Equivalent to calling integrate() per row."""
    ws = [DmpWeights(row, y0, g) for row in np.atleast_2d(weight_rows)]
    return _integrate_multi(cfg, ws, duration)


def fit_from_demo(traj, dt_demo: float, cfg: DmpConfig,
                  y0: float | None = None, g: float | None = None) -> DmpWeights:
    """Fit basis weights so a rollout reproduces the demonstrated 1-DOF
    trajectory. The forcing target is recovered by inverting the
    transformation system from finite-difference derivatives, then solved
    as a ridge-regularized least squares over the normalized basis mix.
    Start and goal default to the trajectory endpoints.
    """
    y = np.asarray(traj, dtype=float)
    if y.ndim != 1:
        raise ValueError("fit_from_demo expects a single DOF")
    if len(y) < 3:
        raise InsufficientDataError("need >= 3 samples to fit")
    if y0 is None:
        y0 = float(y[0])
    if g is None:
        g = float(y[-1])
    duration = (len(y) - 1) * dt_demo
    t = np.arange(len(y)) * dt_demo
    yd = np.gradient(y, dt_demo)
    ydd = np.gradient(yd, dt_demo)
    x = np.exp(-cfg.alpha_x * t / cfg.tau)

    a_z, b_z, tau = cfg.alpha_z, cfg.beta_z, cfg.tau
    if cfg.variant == "bio":
        f_target = ((tau**2 * ydd + a_z * tau * yd) / (a_z * b_z)
                    - (g - y) + (g - y0) * x)
    else:
        denom = g - y0
        if abs(denom) < 1e-12:
            # original formulation cannot express motion when g == y0
            basis = BasisSet.for_config(cfg, duration)
            return DmpWeights(np.zeros(cfg.n_basis), y0, g,
                              degenerate=np.ones(cfg.n_basis, dtype=bool))
        f_target = (tau**2 * ydd + a_z * tau * yd - a_z * b_z * (g - y)) / denom

    basis = BasisSet.for_config(cfg, duration)
    psi = basis.activations(x)
    A = psi / (psi.sum(axis=1, keepdims=True) + 1e-12) * x[:, None]
    ridge = 1e-9 * np.eye(cfg.n_basis)
    w = np.linalg.solve(A.T @ A + ridge, A.T @ f_target)
    support = (A**2).sum(axis=0)
    degenerate = support < 1e-9
    w = np.where(degenerate, 0.0, w)
    return DmpWeights(w, y0, g, degenerate=degenerate)


def pose_dmp_rollout(cfg: DmpConfig, weights: list[DmpWeights],
                     duration: float):
    """Roll out 7 pose DOFs (x, y, z, qx, qy, qz, qw) against one shared
    phase. Each DOF integrates independently; the emitted pose samples get
    their quaternion block renormalized, the integration state does not.

    Returns (pose_vec7_samples, raw_trajectory).
    """
    if len(weights) != 7:
        raise ValueError("pose rollout needs exactly 7 DOF weight sets")
    raw = _integrate_multi(cfg, weights, duration)
    poses = raw.y.copy()
    norms = np.linalg.norm(poses[:, 3:7], axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise DivergenceError(int(np.argmax(norms < 1e-12)))
    poses[:, 3:7] /= norms
    return poses, raw


def trajectory_to_csv(traj: DmpTrajectory) -> str:
    """t, x, then per-DOF y, yd, ydd columns."""
    y = np.atleast_2d(traj.y.T).T
    yd = np.atleast_2d(traj.yd.T).T
    ydd = np.atleast_2d(traj.ydd.T).T
    nd = y.shape[1]
    cols = ["t", "x"]
    for d in range(nd):
        cols += [f"y{d}", f"yd{d}", f"ydd{d}"]
    lines = [",".join(cols)]
    for k in range(len(traj.t)):
        row = [f"{traj.t[k]:.9g}", f"{traj.x[k]:.9g}"]
        for d in range(nd):
            row += [f"{y[k, d]:.9g}", f"{yd[k, d]:.9g}", f"{ydd[k, d]:.9g}"]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
