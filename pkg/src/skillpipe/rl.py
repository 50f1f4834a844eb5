"""Cost evaluation and policy-search updates (PI2 and PoWER).

Parameters are per-DOF, per-basis weight matrices explored with zero-mean
Gaussian noise held constant within a rollout. PI2 exponentiates min-max
normalized cost-to-go into per-timestep rollout weights and time-averages
the weighted noise with the basis activations; PoWER importance-samples the
highest-return rollouts seen so far. Both updates consume rollouts whose
parameters are re-based against the current policy, so previously executed
rollouts can be reused (importance sampling over the best trials so far).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import SkillPipeError


@dataclass
class CostWeights:
    """Nonnegative weights for the immediate (acceleration) and terminal
    (state mismatch) cost terms, plus the flat per-event gripper cost."""

    w_imm: np.ndarray
    w_ter: np.ndarray
    gripper_action_cost: float = 5.0

    def __post_init__(self):
        self.w_imm = np.asarray(self.w_imm, dtype=float)
        self.w_ter = np.asarray(self.w_ter, dtype=float)
        if np.any(self.w_imm < 0) or np.any(self.w_ter < 0):
            raise ValueError("cost weights must be nonnegative")


def immediate_cost(accel, weights: CostWeights) -> float:
    """w_imm^T |accel| for one sample."""
    accel = np.asarray(accel, dtype=float)
    if accel.shape != weights.w_imm.shape:
        raise ValueError(f"accel shape {accel.shape} != weights "
                         f"{weights.w_imm.shape}")
    return float(weights.w_imm @ np.abs(accel))


def terminal_cost(s_T, s_T_obs, weights: CostWeights) -> float:
    """w_ter^T |s_T - s_T_obs|; quaternion blocks must be sign-canonical."""
    s_T = np.asarray(s_T, dtype=float)
    s_T_obs = np.asarray(s_T_obs, dtype=float)
    if s_T.shape != s_T_obs.shape or s_T.shape != weights.w_ter.shape:
        raise ValueError("terminal state dimensions do not match weights")
    return float(weights.w_ter @ np.abs(s_T - s_T_obs))


def step_cost_series(accels, weights: CostWeights) -> np.ndarray:
    """Per-step immediate costs normalized by trajectory length, so their
    sum is the mean per-step cost."""
    accels = np.asarray(accels, dtype=float)
    return np.abs(accels) @ weights.w_imm / len(accels)


@dataclass
class Rollout:
    """One executed trial: the noise actually applied, the absolute
    parameters used, per-step immediate costs, and the terminal cost."""

    eps: np.ndarray | None          # (n_dof, n_basis), relative to its base
    theta_abs: np.ndarray | None    # parameters the trial actually ran with
    step_costs: np.ndarray          # (n_steps,)
    terminal_cost: float
    psi: np.ndarray                 # (n_steps, n_basis) basis activations
    power_return: float | None = None
    info: dict = field(default_factory=dict)

    @property
    def total_cost(self) -> float:
        return float(np.sum(self.step_costs) + self.terminal_cost)


def _rebased_eps(rollouts, theta):
    return np.stack([r.theta_abs - theta for r in rollouts])


def pi2_update(rollouts: list[Rollout], theta: np.ndarray,
               h: float = 10.0) -> np.ndarray:
    """Path-integral style update.

    Cost-to-go S_i(t) = terminal + sum_{k>=t} immediate; per-timestep rollout
    weights P_i(t) = exp(-h (S_i(t) - min_i) / (max_i - min_i + 1e-12)),
    normalized over rollouts; the weighted noise is time-averaged per basis
    with the basis activations. Identical costs give uniform weights (the
    update degenerates to the plain mean of the noise), never an error.
    """
    if len(rollouts) < 2:
        raise ValueError("pi2_update needs at least 2 rollouts")
    theta = np.asarray(theta, dtype=float)
    eps = _rebased_eps(rollouts, theta)            # (B, n_dof, n_basis)
    costs = np.stack([r.step_costs for r in rollouts])  # (B, T)
    term = np.array([r.terminal_cost for r in rollouts])
    S = np.cumsum(costs[:, ::-1], axis=1)[:, ::-1] + term[:, None]
    smin = S.min(axis=0, keepdims=True)
    smax = S.max(axis=0, keepdims=True)
    P = np.exp(-h * (S - smin) / (smax - smin + 1e-12))
    P /= P.sum(axis=0, keepdims=True)              # (B, T)
    psi = rollouts[0].psi                          # (T, n_basis)
    # dtheta(t) = sum_i P_i(t) eps_i, then basis-activation time average
    dtheta_t = np.einsum("bt,bdj->tdj", P, eps)
    num = np.einsum("tj,tdj->dj", psi, dtheta_t)
    den = psi.sum(axis=0)
    return theta + num / den


def power_update(rollouts: list[Rollout], theta: np.ndarray,
                 n_elite: int = 10) -> np.ndarray:
    """EM-style update: importance sampling over the n_elite best-return
    rollouts, theta' = theta + sum(eps_i R_i) / (sum R_i + 1e-12). Noise is
    constant within a rollout, so the basis-activation time average of the
    per-timestep delta reduces to the delta itself.
    """
    if len(rollouts) < 2:
        raise ValueError("power_update needs at least 2 rollouts")
    theta = np.asarray(theta, dtype=float)
    rets = np.array([r.power_return for r in rollouts], dtype=float)
    if np.any(~np.isfinite(rets)):
        raise ValueError("every rollout needs a finite power_return")
    order = np.argsort(-rets, kind="stable")[:n_elite]
    eps = _rebased_eps(rollouts, theta)[order]
    R = rets[order]
    return theta + np.einsum("b,bdj->dj", R, eps) / (R.sum() + 1e-12)


def score(ydd) -> float:
    """Policy score S = sum_t exp(-0.01 |ydd_t|) over an acceleration
    profile (raw sum; divide by the sample count to compare across
    different grids)."""
    ydd = np.asarray(ydd, dtype=float)
    return float(np.sum(np.exp(-0.01 * np.abs(ydd))))


def per_sample_score(ydd) -> float:
    ydd = np.asarray(ydd, dtype=float)
    return score(ydd) / ydd.size


@dataclass
class LearnConfig:
    first_update_after: int = 10
    trials_per_update: int = 5
    max_updates: int = 5          # additional updates after the first one
    convergence_delta: float = 3.0
    exploration_std: float | np.ndarray = 1.0   # scalar or per-DOF
    pi2_h: float = 10.0
    pi2_elite: int = 10           # best-so-far rollouts fed to each update
    power_elite: int = 10
    eval_rollouts: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        if min(self.first_update_after, self.trials_per_update) < 1:
            raise ValueError("trial counts must be >= 1")
        if self.max_updates < 0:
            raise ValueError("max_updates must be >= 0")
        if np.any(np.asarray(self.exploration_std) <= 0):
            raise ValueError("exploration_std must be positive")


@dataclass
class LearnResult:
    theta: np.ndarray             # best parameters by evaluation cost
    theta_final: np.ndarray       # parameters after the last update
    curve: list                   # per-trial (trial, total, imm_sum, ter, update)
    eval_costs: list              # noise-free eval after theta0 and each update
    converged: bool
    rollouts: list                # every executed Rollout, in trial order


class EnvFailure(SkillPipeError):
    """Environment could not complete a rollout."""


def learn(env_rollout_fn, theta0: np.ndarray, cfg: LearnConfig,
          method: str = "pi2") -> LearnResult:
    """Run the trial schedule: `first_update_after` exploratory trials, one
    update, then `trials_per_update` trials per update for up to
    `max_updates` more updates, stopping early when consecutive noise-free
    evaluation costs differ by less than `convergence_delta`.

    `env_rollout_fn(theta) -> Rollout` must be deterministic in theta; each
    trial's noise stream derives from (rng_seed, trial index), so the curve
    is reproducible and independent of scheduling.
    """
    if method not in ("pi2", "power"):
        raise ValueError("method must be 'pi2' or 'power'")
    theta = np.asarray(theta0, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta0 must be finite")
    std = np.broadcast_to(np.asarray(cfg.exploration_std, dtype=float)
                          .reshape(-1, 1), theta.shape)

    def evaluate(th):
        return env_rollout_fn(th).total_cost

    history: list[Rollout] = []
    curve = []
    eval_costs = [evaluate(theta)]
    candidates = [(eval_costs[0], theta.copy())]
    trial = 0
    converged = False
    batches = [cfg.first_update_after] + [cfg.trials_per_update] * cfg.max_updates

    for update_idx, batch in enumerate(batches):
        for _ in range(batch):
            rng = np.random.default_rng([cfg.rng_seed, trial])
            eps = rng.normal(0.0, 1.0, theta.shape) * std
            try:
                r = env_rollout_fn(theta + eps)
            except EnvFailure:
                return LearnResult(min(candidates, key=lambda c: c[0])[1],
                                   theta, curve, eval_costs, False, history)
            r.eps = eps
            r.theta_abs = theta + eps
            history.append(r)
            curve.append((trial, r.total_cost, float(np.sum(r.step_costs)),
                          r.terminal_cost, update_idx))
            trial += 1
        if method == "pi2":
            pool = sorted(history, key=lambda r: r.total_cost)[:cfg.pi2_elite]
            theta = pi2_update(pool, theta, h=cfg.pi2_h)
        else:
            theta = power_update(history, theta, n_elite=cfg.power_elite)
        eval_costs.append(evaluate(theta))
        candidates.append((eval_costs[-1], theta.copy()))
        if abs(eval_costs[-1] - eval_costs[-2]) < cfg.convergence_delta:
            converged = True
            break

    best = min(candidates, key=lambda c: c[0])[1]
    return LearnResult(best, theta, curve, eval_costs, converged, history)
