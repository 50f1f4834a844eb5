"""Deterministic kinematic tabletop world.

Stands in for a physical arm-plus-camera rig: the hand is a free-flying
gripper frame commanded in pose, blocks are rigid boxes that exist only
through grasp/attach/release semantics (no dynamics, friction, or
toppling). A block attaches when the gripper force reaches the threshold
while the hand is at its grasp point with an aligned approach axis; it then
follows the hand rigidly and, on release, drops straight down onto the
highest support surface beneath its center.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (Demonstration, Pose, PublicState, SkillPipeError,
                   quat_rotate, relative_pose)


class DemoGenerationError(SkillPipeError):
    """Script cannot be realized in the world (grasp rules, degenerate phase)."""


@dataclass
class BlockSpec:
    block_id: str
    dims: tuple      # (length, width, height) along the block frame x, y, z
    pose: Pose


@dataclass
class WorldConfig:
    blocks: list[BlockSpec]
    table_height: float = 0.0
    grasp_tolerance: float = 0.015
    grasp_angle_tol: float = 0.3
    force_threshold: float = 1.0
    control_dt: float = 0.01
    workspace_min: np.ndarray = field(
        default_factory=lambda: np.array([0.2, -0.4, 0.0]))
    workspace_max: np.ndarray = field(
        default_factory=lambda: np.array([0.8, 0.4, 0.5]))
    hand_id: str = "hand"

    def __post_init__(self):
        self.workspace_min = np.asarray(self.workspace_min, dtype=float)
        self.workspace_max = np.asarray(self.workspace_max, dtype=float)
        if self.grasp_tolerance <= 0 or self.control_dt <= 0:
            raise ValueError("grasp_tolerance and control_dt must be positive")
        for b in self.blocks:
            if b.pose.loc[2] - b.dims[2] / 2 < self.table_height - 1e-9:
                raise ValueError(f"block {b.block_id} starts below the table")

    def dims_of(self, block_id):
        for b in self.blocks:
            if b.block_id == block_id:
                return b.dims
        raise KeyError(block_id)


@dataclass
class WorldState:
    hand: Pose
    gripper_force: float
    blocks: dict[str, Pose]
    attached: str | None = None
    attach_offset: Pose | None = None  # block pose in the hand frame at grasp

    def public(self, hand_id="hand") -> PublicState:
        return PublicState(hand_id, self.hand, dict(self.blocks))


def initial_state(cfg: WorldConfig, hand: Pose) -> WorldState:
    return WorldState(hand, 0.0, {b.block_id: b.pose for b in cfg.blocks})


def clamp_to_workspace(cfg: WorldConfig, pose: Pose):
    """Clamp the location into the workspace box; returns (pose, clamped?)."""
    loc = np.clip(pose.loc, cfg.workspace_min, cfg.workspace_max)
    if np.array_equal(loc, pose.loc):
        return pose, False
    return Pose(loc, pose.quat), True


def _vertical_axis(pose: Pose):
    return quat_rotate(pose.quat, np.array([0.0, 0.0, 1.0]))


def _support_top(cfg: WorldConfig, state: WorldState, block_id: str) -> float:
    """Top z of the highest surface directly beneath the block's center."""
    center = state.blocks[block_id].loc
    best = cfg.table_height
    for other_id, other_pose in state.blocks.items():
        if other_id == block_id:
            continue
        dims = cfg.dims_of(other_id)
        top = other_pose.loc[2] + dims[2] / 2
        if top > center[2] + 1e-9:
            continue  # only surfaces beneath the center can support
        # footprint test in the support block's frame
        rel = quat_rotate(np.array([-other_pose.quat[0], -other_pose.quat[1],
                                    -other_pose.quat[2], other_pose.quat[3]]),
                          center - other_pose.loc)
        if abs(rel[0]) <= dims[0] / 2 and abs(rel[1]) <= dims[1] / 2:
            best = max(best, top)
    return best


def step(cfg: WorldConfig, state: WorldState, commanded_hand: Pose,
         commanded_force: float) -> WorldState:
    """Advance one control tick: teleport the hand, apply the force command,
    then resolve release and attachment. Pure function of its inputs."""
    force = max(float(commanded_force), 0.0)
    blocks = dict(state.blocks)
    attached = state.attached
    offset = state.attach_offset

    if attached is not None:
        blocks[attached] = commanded_hand.compose(offset)

    new = WorldState(commanded_hand, force, blocks, attached, offset)

    if new.attached is not None and force < cfg.force_threshold:
        # release: drop straight down onto the support beneath
        bid = new.attached
        new.attached = None
        new.attach_offset = None
        pose = new.blocks[bid]
        top = _support_top(cfg, new, bid)
        z = top + cfg.dims_of(bid)[2] / 2
        new.blocks[bid] = Pose(np.array([pose.loc[0], pose.loc[1], z]),
                               pose.quat)
    elif new.attached is None and force >= cfg.force_threshold:
        hand_axis = _vertical_axis(commanded_hand)
        candidates = []
        for bid, pose in new.blocks.items():
            d = np.linalg.norm(pose.loc - commanded_hand.loc)
            if d > cfg.grasp_tolerance:
                continue
            cos_a = abs(float(np.dot(hand_axis, _vertical_axis(pose))))
            if np.arccos(min(cos_a, 1.0)) > cfg.grasp_angle_tol:
                continue
            candidates.append((d, bid))
        if candidates:
            candidates.sort()  # nearest wins, ties by id
            bid = candidates[0][1]
            new.attached = bid
            new.attach_offset = Pose.from_vec7(
                relative_pose(new.blocks[bid], commanded_hand))
    return new


def max_interpenetration(cfg: WorldConfig, state: WorldState) -> float:
    """Largest pairwise box overlap depth (axis-aligned approximation)."""
    worst = 0.0
    ids = list(state.blocks)
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            pa, pb = state.blocks[a].loc, state.blocks[b].loc
            da = np.asarray(cfg.dims_of(a)) / 2
            db = np.asarray(cfg.dims_of(b)) / 2
            overlap = (da + db) - np.abs(pa - pb)
            if np.all(overlap > 0):
                worst = max(worst, float(overlap.min()))
    return worst


# ---------------------------------------------------------------------------
# scripted demonstrations (synthetic replacement for the camera pipeline)
# ---------------------------------------------------------------------------

@dataclass
class Phase:
    """One script phase: the hand interpolates through `targets` (min-jerk
    per leg) while `gripper` newtons are commanded throughout."""

    name: str
    targets: list          # (Pose, duration seconds) pairs
    gripper: float = 0.0


def _minjerk(s):
    return 10 * s**3 - 15 * s**4 + 6 * s**5


def _interp_pose(a: Pose, b: Pose, alpha: float) -> Pose:
    loc = a.loc + (b.loc - a.loc) * alpha
    qa, qb = a.quat, b.quat
    if np.dot(qa, qb) < 0:
        qb = -qb
    q = qa + (qb - qa) * alpha
    return Pose(loc, q / np.linalg.norm(q))


def generate_demo(cfg: WorldConfig, script: list[Phase],
                  start_hand: Pose, frame_rate: float = 30.0):
    """Execute the script through the world and emit the public-state
    demonstration (gripper force stays private). Returns the demonstration
    plus per-phase frame boundaries and the private force trace.
    """
    for ph in script:
        for _, dur in ph.targets:
            if dur <= 0:
                raise DemoGenerationError(
                    f"phase {ph.name!r} has a non-positive leg duration")

    dt = 1.0 / frame_rate
    state = initial_state(cfg, start_hand)
    frames = [state.public(cfg.hand_id)]
    lambdas = [0.0]
    boundaries = {}
    frame = 0
    prev_force = 0.0
    hand_from = start_hand

    for ph in script:
        phase_start = frame
        for target, dur in ph.targets:
            steps = max(int(round(dur * frame_rate)), 1)
            for k in range(1, steps + 1):
                cmd = _interp_pose(hand_from, target, _minjerk(k / steps))
                state = step(cfg, state, cmd, ph.gripper)
                frame += 1
                frames.append(state.public(cfg.hand_id))
                lambdas.append(ph.gripper)
                if max_interpenetration(cfg, state) > 1e-3:
                    raise DemoGenerationError(
                        f"blocks interpenetrate during phase {ph.name!r}")
            hand_from = target
        if (ph.gripper >= cfg.force_threshold > prev_force
                and state.attached is None):
            raise DemoGenerationError(
                f"phase {ph.name!r} closed the gripper but nothing attached")
        prev_force = ph.gripper
        boundaries[ph.name] = (phase_start, frame)

    demo = Demonstration(frames, dt)
    return demo, {"phase_boundaries": boundaries,
                  "lambda_trace": np.array(lambdas)}


def run_policy(cfg: WorldConfig, start: WorldState, policy, duration: float):
    """Execute a DMP policy through the world.

    The policy's pose DMPs live in its reference object's frame; their start
    is re-anchored to the hand's current relative pose so the attractor
    adapts to perturbed worlds. Each control tick composes the generated
    relative pose with the reference object's current pose, clamps it into
    the workspace, and steps the world with the commanded gripper force
    (zero when the policy has no gripper primitive).
    """
    from . import dmp as dmp_mod

    dcfg = policy.dmp_config
    ref_pose0 = start.blocks[policy.reference]
    rel0 = relative_pose(start.hand, ref_pose0)
    pose_weights = [dmp_mod.DmpWeights(w.w, float(rel0[d]), w.g,
                                       degenerate=w.degenerate)
                    for d, w in enumerate(policy.pose)]
    weights = list(pose_weights)
    if policy.gripper is not None:
        weights.append(policy.gripper)

    raw = dmp_mod._integrate_multi(dcfg, weights, duration)
    rel_traj = raw.y[:, :7].copy()
    norms = np.linalg.norm(rel_traj[:, 3:7], axis=1, keepdims=True)
    rel_traj[:, 3:7] /= np.maximum(norms, 1e-12)
    force_traj = (np.maximum(raw.y[:, 7], 0.0) if policy.gripper is not None
                  else np.zeros(len(raw.t)))

    stride = max(int(round(cfg.control_dt / dcfg.dt)), 1)
    ticks = np.arange(0, len(raw.t), stride)
    basis = dmp_mod.BasisSet.for_config(dcfg, duration)
    psi = basis.activations(raw.x[ticks])

    state = start
    states = [state]
    clamped_mask = np.zeros(len(ticks), dtype=bool)
    for i, k in enumerate(ticks):
        ref_pose = state.blocks[policy.reference]
        rel = Pose.from_vec7(rel_traj[k])
        cmd = ref_pose.compose(rel)
        cmd, clamped = clamp_to_workspace(cfg, cmd)
        clamped_mask[i] = clamped
        state = step(cfg, state, cmd, force_traj[k])
        states.append(state)

    return PolicyRollout(times=raw.t[ticks],
                         states=states,
                         accels=raw.ydd[ticks],
                         lambdas=force_traj[ticks],
                         psi=psi,
                         clamped=clamped_mask,
                         final_state=state)


@dataclass
class PolicyRollout:
    times: np.ndarray
    states: list
    accels: np.ndarray     # (n_ticks, n_dof) DMP accelerations
    lambdas: np.ndarray    # commanded force per tick
    psi: np.ndarray        # (n_ticks, n_basis)
    clamped: np.ndarray    # ticks whose command left the workspace box
    final_state: WorldState

    @property
    def n_clamped(self) -> int:
        return int(self.clamped.sum())


def rollout_to_csv(rollout: PolicyRollout, hand_id="hand") -> str:
    """Demonstration-format CSV plus a trailing private lambda column
    (debug output only; never fed back into segmentation)."""
    ids = rollout.states[0].public(hand_id).entity_ids
    lines = ["t," + ",".join(f"{e}_{c}" for e in ids
                             for c in ("x", "y", "z", "qx", "qy", "qz", "qw"))
             + ",lambda"]
    for t, st, lam in zip(rollout.times, rollout.states[1:], rollout.lambdas):
        pub = st.public(hand_id)
        vals = [f"{t:.9g}"]
        for e in ids:
            vals.extend(f"{v:.9g}" for v in pub.pose_of(e).to_vec7())
        vals.append(f"{lam:.9g}")
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"
