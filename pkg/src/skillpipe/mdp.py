"""Per-segment MDP formulation, option learning, and the reformulation loop.

Each demonstration segment becomes a problem <state space, action space,
cost>: the state is the abstracted relative-pose vector, the actions are
pose DMPs (plus, after reformulation, a private gripper-force DMP), and the
cost combines per-step acceleration penalties, flat gripper open/close
penalties, and the terminal mismatch against the segment's observed end
state. A learned option terminates successfully when that terminal cost
falls below the threshold C; options whose estimated success probability
stays below alpha trigger the formulation search: try the selected
abstraction with the gripper action added, then the next-ranked abstraction
without and with it, and so on, backtracking to the previous segment when
the queue empties.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dmp as dmp_mod
from . import rl, segmentation, sim
from .core import (Abstraction, Demonstration, Pose, SkillPipeError,
                   abstract_state, relative_pose)

POSE_DOFS = 7


class PipelineFailureError(SkillPipeError):
    """Reformulation backtracked past the first segment."""


@dataclass
class MdpSpec:
    abstraction: Abstraction
    include_gripper_action: bool
    cost_weights: rl.CostWeights
    s_T_obs: np.ndarray
    duration: float
    workspace_min: np.ndarray
    workspace_max: np.ndarray

    @property
    def n_dofs(self):
        return POSE_DOFS + (1 if self.include_gripper_action else 0)

    def describe(self, hand_id):
        return {**self.abstraction.describe(hand_id),
                "gripper_action": self.include_gripper_action}


@dataclass
class DmpPolicy:
    pose: list                      # 7 DmpWeights in the reference frame
    gripper: object | None          # DmpWeights in newtons, or None
    reference: str
    dmp_config: dmp_mod.DmpConfig

    def theta(self) -> np.ndarray:
        rows = [w.w for w in self.pose]
        if self.gripper is not None:
            rows.append(self.gripper.w)
        return np.stack(rows)

    def with_theta(self, theta: np.ndarray) -> "DmpPolicy":
        pose = [dmp_mod.DmpWeights(theta[d], w.y0, w.g)
                for d, w in enumerate(self.pose)]
        gripper = None
        if self.gripper is not None:
            gripper = dmp_mod.DmpWeights(theta[POSE_DOFS],
                                         self.gripper.y0, self.gripper.g)
        return DmpPolicy(pose, gripper, self.reference, self.dmp_config)


@dataclass
class OptionRecord:
    policy: DmpPolicy
    initiation_states: list         # abstracted start states that succeeded
    termination_threshold: float
    success_prob: float

    def __post_init__(self):
        if not 0.0 <= self.success_prob <= 1.0:
            raise ValueError("success_prob must lie in [0, 1]")
        if self.termination_threshold <= 0:
            raise ValueError("termination threshold must be positive")


@dataclass
class CostConfig:
    """Experiment-level knobs for building per-segment cost weights."""

    w_imm_pose: float = 0.01
    w_imm_gripper: float = 0.0
    w_ter_pos: float = 10.0
    w_ter_quat: float = 5.0
    gripper_action_cost: float = 5.0
    clamp_penalty: float = 1.0
    termination_threshold: float = 20.0
    alpha: float = 0.8
    alpha_model: float = 0.2

    def weights_for(self, n_entities: int, include_gripper: bool) -> rl.CostWeights:
        w_imm = np.full(POSE_DOFS + (1 if include_gripper else 0),
                        self.w_imm_pose)
        if include_gripper:
            w_imm[-1] = self.w_imm_gripper
        per_entity = np.array([self.w_ter_pos] * 3 + [self.w_ter_quat] * 4)
        w_ter = np.tile(per_entity, n_entities)
        return rl.CostWeights(w_imm, w_ter, self.gripper_action_cost)


def formulate_initial(segment: segmentation.Segment, demo: Demonstration,
                      cost_cfg: CostConfig, world_cfg: sim.WorldConfig) -> MdpSpec:
    """Initial formulation: abstracted relative-pose state, pose-only
    actions (private information assumed unimportant), terminal target from
    the segment's final demonstration frame."""
    return _formulate(segment.abstraction, False, segment, demo, cost_cfg,
                      world_cfg)


def _formulate(abstraction, include_gripper, segment, demo, cost_cfg,
               world_cfg) -> MdpSpec:
    s_T_obs = abstract_state(demo.frames[segment.end], abstraction)
    duration = (segment.end - segment.start) * demo.dt
    weights = cost_cfg.weights_for(len(abstraction.relevant), include_gripper)
    return MdpSpec(abstraction, include_gripper, weights, s_T_obs, duration,
                   world_cfg.workspace_min, world_cfg.workspace_max)


def init_policy(spec: MdpSpec, demo: Demonstration,
                segment: segmentation.Segment,
                dmp_cfg: dmp_mod.DmpConfig | None = None,
                carry_from: DmpPolicy | None = None) -> DmpPolicy:
    """Fit the 7 pose DMPs to the demonstrated hand trajectory expressed in
    the reference frame. When reformulating with an unchanged abstraction,
    the previously learned pose weights carry over; a newly added gripper
    primitive always starts at zero weights with zero start/goal force."""
    if segment.end - segment.start < 2:
        raise ValueError("segment too short to fit a policy")
    duration = (segment.end - segment.start) * demo.dt
    cfg = dmp_cfg or dmp_mod.DmpConfig(tau=duration)
    if cfg.tau != duration:
        cfg = dmp_mod.DmpConfig(alpha_z=cfg.alpha_z, beta_z=cfg.beta_z,
                                alpha_x=cfg.alpha_x, tau=duration,
                                n_basis=cfg.n_basis, variant=cfg.variant,
                                dt=cfg.dt)
    if carry_from is not None and carry_from.reference == spec.abstraction.reference:
        pose = [dmp_mod.DmpWeights(w.w.copy(), w.y0, w.g)
                for w in carry_from.pose]
    else:
        rel = np.array([relative_pose(f.hand, f.objects[spec.abstraction.reference])
                        for f in demo.frames[segment.start:segment.end + 1]])
        pose = [dmp_mod.fit_from_demo(rel[:, d], demo.dt, cfg)
                for d in range(POSE_DOFS)]
    gripper = None
    if spec.include_gripper_action:
        gripper = dmp_mod.DmpWeights(np.zeros(cfg.n_basis), 0.0, 0.0)
    return DmpPolicy(pose, gripper, spec.abstraction.reference, cfg)


def beta(s_T, spec: MdpSpec, C: float) -> int:
    """Option termination indicator: 1 iff the terminal cost is strictly
    below the threshold C."""
    return int(rl.terminal_cost(s_T, spec.s_T_obs, spec.cost_weights) < C)


class SegmentEnv:
    """Wraps the world into an `env_rollout_fn` for the policy search.

    Rollouts start from a frozen world state; immediate costs are the
    length-normalized weighted DMP accelerations plus the flat gripper
    open/close cost at each force-threshold crossing and a flat penalty per
    workspace-clamped tick; the terminal cost compares the abstracted final
    state against the segment's observed one.
    """

    def __init__(self, world_cfg: sim.WorldConfig, start: sim.WorldState,
                 spec: MdpSpec, policy_template: DmpPolicy,
                 cost_cfg: CostConfig):
        self.world_cfg = world_cfg
        self.start = start
        self.spec = spec
        self.template = policy_template
        self.cost_cfg = cost_cfg

    def rollout(self, theta: np.ndarray) -> rl.Rollout:
        policy = self.template.with_theta(np.asarray(theta, dtype=float))
        log = sim.run_policy(self.world_cfg, self.start, policy,
                             self.spec.duration)
        step_costs = rl.step_cost_series(log.accels, self.spec.cost_weights)
        open_now = log.lambdas >= self.world_cfg.force_threshold
        crossings = np.flatnonzero(np.diff(open_now.astype(int)) != 0) + 1
        step_costs = step_costs.copy()
        step_costs[crossings] += self.spec.cost_weights.gripper_action_cost
        step_costs[log.clamped] += self.cost_cfg.clamp_penalty
        s_T = abstract_state(log.final_state.public(self.world_cfg.hand_id),
                             self.spec.abstraction)
        term = rl.terminal_cost(s_T, self.spec.s_T_obs, self.spec.cost_weights)
        return rl.Rollout(eps=None, theta_abs=None, step_costs=step_costs,
                          terminal_cost=term, psi=log.psi,
                          info={"final_state": log.final_state, "s_T": s_T})

    __call__ = rollout


def jittered_start(base: sim.WorldState, world_cfg: sim.WorldConfig,
                   rng: np.random.Generator, pos_jitter: float = 0.01,
                   yaw_jitter_deg: float = 5.0) -> sim.WorldState:
    """Uniform +-pos_jitter on block x, y and +-yaw_jitter on block yaw;
    the hand and the table are left alone."""
    blocks = {}
    for bid, pose in base.blocks.items():
        dx, dy = rng.uniform(-pos_jitter, pos_jitter, 2)
        yaw = np.deg2rad(rng.uniform(-yaw_jitter_deg, yaw_jitter_deg))
        q = np.array([0.0, 0.0, np.sin(yaw / 2), np.cos(yaw / 2)])
        from .core import quat_multiply
        blocks[bid] = Pose(pose.loc + np.array([dx, dy, 0.0]),
                           quat_multiply(q, pose.quat))
    return sim.WorldState(base.hand, base.gripper_force, blocks,
                          base.attached, base.attach_offset)


def estimate_success(option: OptionRecord, spec: MdpSpec,
                     world_cfg: sim.WorldConfig, start: sim.WorldState,
                     n_eval: int = 10, seed: int = 0,
                     pos_jitter: float = 0.01, yaw_jitter_deg: float = 5.0,
                     cost_cfg: CostConfig | None = None):
    """Fraction of noise-free rollouts from jittered start states that end
    with the termination condition satisfied. Environment failures count
    as failures. Returns (probability, successful abstracted start states).
    """
    if n_eval < 1:
        raise ValueError("n_eval must be >= 1")
    cost_cfg = cost_cfg or CostConfig()
    theta = option.policy.theta()
    successes = 0
    initiation = []
    for i in range(n_eval):
        rng = np.random.default_rng([seed, i])
        start_i = jittered_start(start, world_cfg, rng, pos_jitter,
                                 yaw_jitter_deg)
        env = SegmentEnv(world_cfg, start_i, spec, option.policy, cost_cfg)
        try:
            r = env.rollout(theta)
        except SkillPipeError:
            continue
        if beta(r.info["s_T"], spec, option.termination_threshold):
            successes += 1
            initiation.append(abstract_state(
                start_i.public(world_cfg.hand_id), spec.abstraction))
    return successes / n_eval, initiation


@dataclass
class ReformState:
    """Per-segment formulation-search bookkeeping (Algorithm-1 style)."""

    reform_curr: bool = False
    reform_prev: bool = False
    queue: list = field(default_factory=list)   # pending (abstraction, gripper)
    attempted: set = field(default_factory=set)


BACKTRACK = "backtrack"


def reformulate(i: int, states: dict, seg_result: segmentation.SegmentationResult,
                demo: Demonstration, cost_cfg: CostConfig,
                world_cfg: sim.WorldConfig, prior=None):
    """Pop the next formulation for segment i; returns (segment, MdpSpec)
    or the BACKTRACK sentinel.

    On first entry the queue is built from the candidates whose evidence
    ratio clears alpha_model, ordered best first, each expanded into its
    pose-only and pose-plus-gripper variants, minus the already-tried
    initial formulation. An empty queue resets the flags, arms reform_prev,
    and returns BACKTRACK; the next call then reformulates segment i-1.
    Backtracking below segment 0 is a pipeline failure.
    """
    if i < 0:
        raise PipelineFailureError("reformulation backtracked past segment 0")
    st = states.setdefault(i, ReformState())
    if st.reform_prev:
        st.reform_prev = False
        return reformulate(i - 1, states, seg_result, demo, cost_cfg,
                           world_cfg, prior)
    seg = seg_result.segments[i]
    if not st.reform_curr:
        ranked = segmentation.rank_candidates(
            demo, seg.start, seg.end, prior=prior,
            alpha_model=cost_cfg.alpha_model)
        st.queue = []
        st.attempted = {(seg.abstraction, False)}  # the initial formulation
        for q, _ in ranked:
            for grip in (False, True):
                if (q, grip) not in st.attempted:
                    st.queue.append((q, grip))
        st.reform_curr = True
    if st.queue:
        abstraction, grip = st.queue.pop(0)
        st.attempted.add((abstraction, grip))
        return i, _formulate(abstraction, grip, seg, demo, cost_cfg, world_cfg)
    st.reform_curr = False
    st.reform_prev = True
    return BACKTRACK


def run_pipeline(demo: Demonstration, world_cfg: sim.WorldConfig,
                 seg_prior: segmentation.SegPrior | None = None,
                 cost_cfg: CostConfig | None = None,
                 learn_cfg: rl.LearnConfig | None = None,
                 dmp_cfg: dmp_mod.DmpConfig | None = None,
                 seed: int = 0, max_attempts: int = 50):
    """Segment the demonstration, then learn one option per segment in
    order, reformulating (and, if a segment's queue empties, backtracking)
    until every option clears the success threshold alpha.

    Returns (options, report) where the report carries the segmentation and
    each formulation attempt's learning curve and success estimate.
    """
    cost_cfg = cost_cfg or CostConfig()
    learn_cfg = learn_cfg or rl.LearnConfig()
    seg_result = segmentation.map_segment(demo, seg_prior)
    n_seg = len(seg_result.segments)
    options: dict[int, OptionRecord] = {}
    reform_states: dict[int, ReformState] = {}
    specs: dict[int, MdpSpec] = {}
    policies: dict[int, DmpPolicy] = {}
    history = [[] for _ in range(n_seg)]

    i = 0
    attempts = 0
    pending: dict[int, MdpSpec] = {}
    while i < n_seg:
        if attempts >= max_attempts:
            raise PipelineFailureError(
                f"no passing formulation after {max_attempts} attempts")
        seg = seg_result.segments[i]
        spec = pending.pop(i, None)
        if spec is None:
            spec = formulate_initial(seg, demo, cost_cfg, world_cfg)
        start = _world_at_frame(demo, seg.start, world_cfg)
        policy0 = init_policy(spec, demo, seg, dmp_cfg,
                              carry_from=policies.get(i))
        env = SegmentEnv(world_cfg, start, spec, policy0, cost_cfg)
        cfg_i = _derive_learn_cfg(learn_cfg, seed, i, attempts, spec)
        result = rl.learn(env.rollout, policy0.theta(), cfg_i, method="pi2")
        learned = policy0.with_theta(result.theta)
        option = OptionRecord(learned, [], cost_cfg.termination_threshold, 0.0)
        prob, initiation = estimate_success(
            option, spec, world_cfg, start, n_eval=learn_cfg.eval_rollouts,
            seed=_derive_seed(seed, i, attempts), cost_cfg=cost_cfg)
        option.success_prob = prob
        option.initiation_states = initiation
        history[i].append({
            "formulation": spec.describe(demo.hand_id),
            "success_prob": prob,
            "trials": len(result.curve),
            "eval_costs": list(map(float, result.eval_costs)),
            "curve": result.curve,
            "converged": result.converged,
        })
        attempts += 1
        policies[i] = learned
        if prob >= cost_cfg.alpha:
            options[i] = option
            specs[i] = spec
            i += 1
            continue
        nxt = reformulate(i, reform_states, seg_result, demo, cost_cfg,
                          world_cfg, prior=seg_prior)
        if nxt is BACKTRACK:
            # queue exhausted: the armed reform_prev makes the next call
            # reformulate an earlier segment; learned artifacts from this
            # level down get discarded and relearned
            nxt = reformulate(i, reform_states, seg_result, demo, cost_cfg,
                              world_cfg, prior=seg_prior)
            if nxt is BACKTRACK:
                raise PipelineFailureError("exhausted formulations")
            level, spec_next = nxt
            for k in range(level + 1, n_seg):
                options.pop(k, None)
                policies.pop(k, None)
                specs.pop(k, None)
            pending[level] = spec_next
            i = level
        else:
            level, spec_next = nxt
            pending[level] = spec_next
            i = level

    report = {
        "segmentation": seg_result.to_json_obj(demo.hand_id),
        "alpha": cost_cfg.alpha,
        "segments": [
            {"index": k, "attempts": history[k],
             "final_success_prob": options[k].success_prob}
            for k in range(n_seg)
        ],
    }
    return [options[k] for k in range(n_seg)], [specs[k] for k in range(n_seg)], report


def _world_at_frame(demo: Demonstration, frame: int,
                    world_cfg: sim.WorldConfig) -> sim.WorldState:
    pub = demo.frames[frame]
    return sim.WorldState(pub.hand, 0.0, dict(pub.objects))


def _derive_seed(*parts) -> int:
    return int(np.random.default_rng(list(parts)).integers(2**31))


def _derive_learn_cfg(cfg: rl.LearnConfig, seed, i, attempts, spec) -> rl.LearnConfig:
    std = np.asarray(cfg.exploration_std, dtype=float)
    if std.ndim > 0 and std.shape[0] > spec.n_dofs:
        std = std[:spec.n_dofs]
    return rl.LearnConfig(
        first_update_after=cfg.first_update_after,
        trials_per_update=cfg.trials_per_update,
        max_updates=cfg.max_updates,
        convergence_delta=cfg.convergence_delta,
        exploration_std=std if std.ndim else float(std),
        pi2_h=cfg.pi2_h, pi2_elite=cfg.pi2_elite,
        power_elite=cfg.power_elite, eval_rollouts=cfg.eval_rollouts,
        rng_seed=_derive_seed(seed, i, attempts, 7))


def execute_options(skills, world_cfg: sim.WorldConfig, start: sim.WorldState):
    """Run learned options back to back from a start state; `skills` is a
    sequence of (OptionRecord, MdpSpec) pairs. Returns the final world
    state, the per-option terminal betas, and the per-option final states."""
    state = start
    betas = []
    finals = []
    for option, spec in skills:
        log = sim.run_policy(world_cfg, state, option.policy, spec.duration)
        state = log.final_state
        s_T = abstract_state(state.public(world_cfg.hand_id), spec.abstraction)
        betas.append(beta(s_T, spec, option.termination_threshold))
        finals.append(state)
    return state, betas, finals


def skill_to_json_obj(option: OptionRecord, spec: MdpSpec,
                      hand_id: str) -> dict:
    pol = option.policy
    return {
        "abstraction": spec.abstraction.describe(hand_id),
        "gripper_action": spec.include_gripper_action,
        "s_T_obs": list(map(float, spec.s_T_obs)),
        "duration": spec.duration,
        "cost_weights": {
            "w_imm": list(map(float, spec.cost_weights.w_imm)),
            "w_ter": list(map(float, spec.cost_weights.w_ter)),
            "gripper_action_cost": spec.cost_weights.gripper_action_cost,
        },
        "workspace_min": list(map(float, spec.workspace_min)),
        "workspace_max": list(map(float, spec.workspace_max)),
        "dmp": {
            "alpha_z": pol.dmp_config.alpha_z,
            "beta_z": pol.dmp_config.beta_z,
            "alpha_x": pol.dmp_config.alpha_x,
            "tau": pol.dmp_config.tau,
            "n_basis": pol.dmp_config.n_basis,
            "variant": pol.dmp_config.variant,
            "dt": pol.dmp_config.dt,
        },
        "pose_dofs": [{"w": list(map(float, w.w)), "y0": w.y0, "g": w.g}
                      for w in pol.pose],
        "gripper": (None if pol.gripper is None else
                    {"w": list(map(float, pol.gripper.w)),
                     "y0": pol.gripper.y0, "g": pol.gripper.g}),
        "termination_threshold": option.termination_threshold,
        "success_prob": option.success_prob,
        "initiation_states": [list(map(float, s))
                              for s in option.initiation_states],
    }


def skill_from_json_obj(obj: dict, hand_id: str) -> tuple[OptionRecord, MdpSpec]:
    cfg = dmp_mod.DmpConfig(**obj["dmp"])
    pose = [dmp_mod.DmpWeights(np.array(d["w"]), d["y0"], d["g"])
            for d in obj["pose_dofs"]]
    gripper = None
    if obj["gripper"] is not None:
        g = obj["gripper"]
        gripper = dmp_mod.DmpWeights(np.array(g["w"]), g["y0"], g["g"])
    ab = obj["abstraction"]
    abstraction = Abstraction(frozenset(ab["relevant"]), ab["reference"])
    policy = DmpPolicy(pose, gripper, abstraction.reference, cfg)
    option = OptionRecord(policy,
                          [np.array(s) for s in obj["initiation_states"]],
                          obj["termination_threshold"], obj["success_prob"])
    cw = obj["cost_weights"]
    spec = MdpSpec(abstraction, obj["gripper_action"],
                   rl.CostWeights(np.array(cw["w_imm"]), np.array(cw["w_ter"]),
                                  cw["gripper_action_cost"]),
                   np.array(obj["s_T_obs"]), obj["duration"],
                   np.array(obj["workspace_min"]),
                   np.array(obj["workspace_max"]))
    return option, spec
