"""Imitation learning for tabletop manipulation: skill segmentation with
abstraction selection, per-skill MDP formulation with DMP policies improved
by path-integral policy search, automatic reformulation with private gripper
actions, and a kinematic simulator that stands in for the robot."""

__version__ = "0.1.0"

from .core import (Abstraction, Demonstration, Pose, PublicState,
                   abstract_state, finite_diff_accel, load_demonstration,
                   relative_pose, save_demonstration)
from .segmentation import (SegPrior, SegmentationResult,
                           candidate_abstractions, exhaustive_map_segment,
                           map_segment, rank_candidates)
from .dmp import (BasisSet, DmpConfig, DmpTrajectory, DmpWeights,
                  canonical_rollout, fit_from_demo, forcing, integrate,
                  pose_dmp_rollout)
from .rl import (CostWeights, LearnConfig, Rollout, immediate_cost, learn,
                 per_sample_score, pi2_update, power_update, score,
                 terminal_cost)
from .mdp import (CostConfig, DmpPolicy, MdpSpec, OptionRecord, beta,
                  estimate_success, execute_options, formulate_initial,
                  init_policy, reformulate, run_pipeline)
from .sim import (BlockSpec, Phase, WorldConfig, WorldState, generate_demo,
                  initial_state, run_policy, step)
from .config import StackExperiment
