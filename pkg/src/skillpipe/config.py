"""Experiment configuration: flat key=value files plus the canonical
block-stacking setup used by the CLI and the acceptance suite.

Values are space-separated numbers or single tokens; unknown keys are
rejected so typos fail loudly. The defaults reproduce a desk-scale
two-block stacking task observed at 30 Hz.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dmp as dmp_mod
from . import mdp, rl, segmentation, sim
from .core import Pose


def parse_kv(text: str) -> dict:
    """Parse flat `key = value` lines; '#' starts a comment."""
    out = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {ln}: expected 'key = value'")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def format_kv(d: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in d.items())


@dataclass
class StackExperiment:
    """Everything needed to generate, segment, and learn the stacking demo."""

    # world geometry
    table_height: float = 0.0
    block_size: float = 0.04
    blue_xy: tuple = (0.5, -0.15)
    green_xy: tuple = (0.5, 0.15)
    grasp_tolerance: float = 0.025
    grasp_angle_tol: float = 0.3
    force_threshold: float = 0.5
    control_dt: float = 0.01
    workspace: tuple = (0.2, -0.4, 0.0, 0.8, 0.4, 0.5)
    # demo script
    frame_rate: float = 30.0
    hand_start: tuple = (0.35, -0.30, 0.20)
    reach_duration: float = 3.0
    grasp_dwell: float = 0.5
    transport_duration: float = 3.0
    release_dwell: float = 0.3
    retreat_duration: float = 2.0
    carry_height: float = 0.15
    retreat_offset: tuple = (-0.10, -0.05, 0.14)
    grasp_force: float = 2.0
    # segmentation (rigid attachment makes true co-movement numerically
    # zero, so the threshold sits near machine scale; 0.02 suits noisy data)
    expected_len_k: float = 100.0
    d_thresh: float = 1e-6
    # costs / gating
    w_imm_pose: float = 0.01
    w_imm_gripper: float = 0.0
    w_ter_pos: float = 100.0
    w_ter_quat: float = 5.0
    gripper_action_cost: float = 5.0
    clamp_penalty: float = 1.0
    termination_threshold: float = 20.0
    alpha: float = 0.8
    alpha_model: float = 0.2
    # learning
    first_update_after: int = 10
    trials_per_update: int = 5
    max_updates: int = 5
    convergence_delta: float = 3.0
    exploration_std_pose: float = 0.03
    exploration_std_gripper: float = 15.0
    pi2_h: float = 10.0
    eval_rollouts: int = 10
    n_basis: int = 10

    @property
    def hand_id(self):
        return "hand"

    @property
    def blue(self):
        return "b_blue"

    @property
    def green(self):
        return "b_green"

    def world_config(self) -> sim.WorldConfig:
        h = self.block_size / 2
        mk = lambda xy: Pose(np.array([xy[0], xy[1], self.table_height + h]),
                             np.array([0.0, 0.0, 0.0, 1.0]))
        dims = (self.block_size,) * 3
        ws = np.asarray(self.workspace, dtype=float)
        return sim.WorldConfig(
            blocks=[sim.BlockSpec(self.blue, dims, mk(self.blue_xy)),
                    sim.BlockSpec(self.green, dims, mk(self.green_xy))],
            table_height=self.table_height,
            grasp_tolerance=self.grasp_tolerance,
            grasp_angle_tol=self.grasp_angle_tol,
            force_threshold=self.force_threshold,
            control_dt=self.control_dt,
            workspace_min=ws[[0, 1, 2]], workspace_max=ws[[3, 4, 5]],
            hand_id=self.hand_id)

    def demo_script(self):
        ident = np.array([0.0, 0.0, 0.0, 1.0])
        h = self.block_size / 2
        grasp = Pose(np.array([*self.blue_xy, self.table_height + h]), ident)
        lift = Pose(np.array([*self.blue_xy, self.carry_height]), ident)
        over = Pose(np.array([*self.green_xy, self.carry_height]), ident)
        stack = Pose(np.array([*self.green_xy,
                               self.table_height + 3 * h]), ident)
        retreat = Pose(stack.loc + np.asarray(self.retreat_offset), ident)
        leg = self.transport_duration / 3.0
        return [
            sim.Phase("reach", [(grasp, self.reach_duration)], 0.0),
            sim.Phase("grasp", [(grasp, self.grasp_dwell)], self.grasp_force),
            sim.Phase("transport", [(lift, leg), (over, leg), (stack, leg)],
                      self.grasp_force),
            sim.Phase("release", [(stack, self.release_dwell)], 0.0),
            sim.Phase("retreat", [(retreat, self.retreat_duration)], 0.0),
        ]

    def start_hand(self) -> Pose:
        return Pose(np.asarray(self.hand_start, dtype=float),
                    np.array([0.0, 0.0, 0.0, 1.0]))

    def generate_demo(self):
        return sim.generate_demo(self.world_config(), self.demo_script(),
                                 self.start_hand(), self.frame_rate)

    def seg_prior(self) -> segmentation.SegPrior:
        return segmentation.SegPrior(expected_len_k=self.expected_len_k,
                                     d_thresh=self.d_thresh)

    def cost_config(self) -> mdp.CostConfig:
        return mdp.CostConfig(
            w_imm_pose=self.w_imm_pose, w_imm_gripper=self.w_imm_gripper,
            w_ter_pos=self.w_ter_pos, w_ter_quat=self.w_ter_quat,
            gripper_action_cost=self.gripper_action_cost,
            clamp_penalty=self.clamp_penalty,
            termination_threshold=self.termination_threshold,
            alpha=self.alpha, alpha_model=self.alpha_model)

    def learn_config(self, seed: int = 0) -> rl.LearnConfig:
        std = np.array([self.exploration_std_pose] * mdp.POSE_DOFS
                       + [self.exploration_std_gripper])
        return rl.LearnConfig(
            first_update_after=self.first_update_after,
            trials_per_update=self.trials_per_update,
            max_updates=self.max_updates,
            convergence_delta=self.convergence_delta,
            exploration_std=std, pi2_h=self.pi2_h,
            eval_rollouts=self.eval_rollouts, rng_seed=seed)

    def dmp_config(self) -> dmp_mod.DmpConfig:
        return dmp_mod.DmpConfig(n_basis=self.n_basis)


_FLOAT_KEYS = {f.name for f in StackExperiment.__dataclass_fields__.values()
               if f.type in ("float", "int")}
_INT_KEYS = {"first_update_after", "trials_per_update", "max_updates",
             "eval_rollouts", "n_basis"}
_TUPLE_KEYS = {"blue_xy": 2, "green_xy": 2, "hand_start": 3,
               "retreat_offset": 3, "workspace": 6}


def stack_experiment_from_kv(kv: dict) -> StackExperiment:
    """Build the experiment from parsed key=value pairs; unknown keys are an
    error that names the offending key."""
    exp = StackExperiment()
    for key, val in kv.items():
        if key in _TUPLE_KEYS:
            parts = tuple(float(v) for v in val.split())
            if len(parts) != _TUPLE_KEYS[key]:
                raise ValueError(f"key {key!r} needs {_TUPLE_KEYS[key]} numbers")
            setattr(exp, key, parts)
        elif key in _INT_KEYS:
            setattr(exp, key, int(val))
        elif key in _FLOAT_KEYS:
            setattr(exp, key, float(val))
        else:
            raise ValueError(f"unknown config key {key!r}")
    return exp


def load_experiment(path: str | None) -> StackExperiment:
    if path is None:
        return StackExperiment()
    with open(path) as fh:
        return stack_experiment_from_kv(parse_kv(fh.read()))
