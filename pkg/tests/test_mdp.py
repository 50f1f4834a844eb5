import numpy as np
import pytest

from skillpipe.core import Abstraction, abstract_state
from skillpipe.mdp import (BACKTRACK, CostConfig, OptionRecord,
                           PipelineFailureError, beta,
                           estimate_success, formulate_initial, init_policy,
                           jittered_start, reformulate, run_pipeline,
                           skill_from_json_obj, skill_to_json_obj,
                           _world_at_frame)
from skillpipe.segmentation import map_segment, rank_candidates
from skillpipe.sim import run_policy


@pytest.fixture(scope="module")
def seg_result(experiment, stack_demo):
    demo, _ = stack_demo
    return map_segment(demo, experiment.seg_prior())


class TestFormulate:
    def test_reach_segment_state_space(self, experiment, stack_demo,
                                       seg_result):
        demo, _ = stack_demo
        spec = formulate_initial(seg_result.segments[0], demo,
                                 experiment.cost_config(),
                                 experiment.world_config())
        assert spec.abstraction == Abstraction(frozenset({"hand"}),
                                               experiment.blue)
        assert spec.s_T_obs.shape == (7,)
        assert not spec.include_gripper_action
        assert spec.n_dofs == 7

    def test_transport_segment_state_space(self, experiment, stack_demo,
                                           seg_result):
        demo, _ = stack_demo
        spec = formulate_initial(seg_result.segments[1], demo,
                                 experiment.cost_config(),
                                 experiment.world_config())
        assert spec.abstraction.reference == experiment.green
        assert spec.s_T_obs.shape == (14,)
        assert not spec.include_gripper_action

    def test_terminal_target_from_final_frame(self, experiment, stack_demo,
                                              seg_result):
        demo, _ = stack_demo
        seg = seg_result.segments[1]
        spec = formulate_initial(seg, demo, experiment.cost_config(),
                                 experiment.world_config())
        expected = abstract_state(demo.frames[seg.end], seg.abstraction)
        assert np.array_equal(spec.s_T_obs, expected)


class TestInitPolicy:
    def test_gripper_zeros_on_creation(self, experiment, stack_demo,
                                       seg_result):
        demo, _ = stack_demo
        seg = seg_result.segments[1]
        cc, wc = experiment.cost_config(), experiment.world_config()
        states = {}
        _, spec = reformulate(1, states, seg_result, demo, cc, wc,
                              prior=experiment.seg_prior())
        assert spec.include_gripper_action
        policy = init_policy(spec, demo, seg, experiment.dmp_config())
        assert policy.gripper is not None
        assert np.all(policy.gripper.w == 0.0)
        assert policy.gripper.y0 == 0.0 and policy.gripper.g == 0.0

    def test_pose_weights_carry_over(self, experiment, stack_demo, seg_result):
        demo, _ = stack_demo
        seg = seg_result.segments[1]
        cc, wc = experiment.cost_config(), experiment.world_config()
        spec0 = formulate_initial(seg, demo, cc, wc)
        learned = init_policy(spec0, demo, seg, experiment.dmp_config())
        for w in learned.pose:
            w.w += 1.234   # stand-in for learning
        states = {}
        _, spec1 = reformulate(1, states, seg_result, demo, cc, wc,
                               prior=experiment.seg_prior())
        carried = init_policy(spec1, demo, seg, experiment.dmp_config(),
                              carry_from=learned)
        for a, b in zip(carried.pose, learned.pose):
            assert np.array_equal(a.w, b.w)

    def test_replay_reproduces_hand_trajectory(self, experiment, stack_demo,
                                               seg_result):
        demo, _ = stack_demo
        seg = seg_result.segments[0]
        wc = experiment.world_config()
        spec = formulate_initial(seg, demo, experiment.cost_config(), wc)
        policy = init_policy(spec, demo, seg, experiment.dmp_config())
        start = _world_at_frame(demo, seg.start, wc)
        log = run_policy(wc, start, policy, spec.duration)
        # compare executed hand path against the demonstrated segment
        demo_locs = np.array([demo.frames[k].hand.loc
                              for k in range(seg.start, seg.end + 1)])
        exec_locs = np.array([s.hand.loc for s in log.states[1:]])
        n = min(len(demo_locs), len(exec_locs))
        idx_d = np.linspace(0, len(demo_locs) - 1, n).astype(int)
        idx_e = np.linspace(0, len(exec_locs) - 1, n).astype(int)
        span = np.ptp(demo_locs, axis=0).max()
        rmse = np.sqrt(np.mean((demo_locs[idx_d] - exec_locs[idx_e]) ** 2))
        assert rmse / span < 0.02


class TestBeta:
    def _spec(self, experiment, stack_demo, seg_result, k=0):
        demo, _ = stack_demo
        return formulate_initial(seg_result.segments[k], demo,
                                 experiment.cost_config(),
                                 experiment.world_config())

    def test_at_target(self, experiment, stack_demo, seg_result):
        spec = self._spec(experiment, stack_demo, seg_result)
        assert beta(spec.s_T_obs, spec, 20.0) == 1

    def test_strict_at_threshold(self, experiment, stack_demo, seg_result):
        spec = self._spec(experiment, stack_demo, seg_result)
        s = spec.s_T_obs.copy()
        s[0] += 20.0 / spec.cost_weights.w_ter[0]   # cost exactly C
        assert beta(s, spec, 20.0) == 0

    def test_gross_miss_with_default_weights(self):
        # 1 m off in each position dim, default weights (10 per position dim)
        cw = CostConfig().weights_for(1, False)
        from skillpipe.mdp import MdpSpec
        spec = MdpSpec(Abstraction(frozenset({"hand"}), "b0"), False, cw,
                       np.array([0, 0, 0, 0, 0, 0, 1.0]), 1.0,
                       np.zeros(3), np.ones(3))
        s = np.array([1.0, 1.0, 1.0, 0, 0, 0, 1.0])
        assert beta(s, spec, 20.0) == 0


class TestEstimateSuccess:
    def test_perfect_policy_without_jitter(self, experiment, stack_demo,
                                           seg_result):
        demo, _ = stack_demo
        seg = seg_result.segments[0]
        wc, cc = experiment.world_config(), experiment.cost_config()
        spec = formulate_initial(seg, demo, cc, wc)
        policy = init_policy(spec, demo, seg, experiment.dmp_config())
        option = OptionRecord(policy, [], cc.termination_threshold, 0.0)
        start = _world_at_frame(demo, seg.start, wc)
        prob, states = estimate_success(option, spec, wc, start, n_eval=4,
                                        seed=0, pos_jitter=0.0,
                                        yaw_jitter_deg=0.0, cost_cfg=cc)
        assert prob == 1.0
        assert len(states) == 4

    def test_fraction_is_successes_over_n(self, experiment, stack_demo,
                                          seg_result):
        demo, _ = stack_demo
        seg = seg_result.segments[0]
        wc, cc = experiment.world_config(), experiment.cost_config()
        spec = formulate_initial(seg, demo, cc, wc)
        policy = init_policy(spec, demo, seg, experiment.dmp_config())
        option = OptionRecord(policy, [], cc.termination_threshold, 0.0)
        start = _world_at_frame(demo, seg.start, wc)
        prob, states = estimate_success(option, spec, wc, start, n_eval=10,
                                        seed=3, cost_cfg=cc)
        assert prob == len(states) / 10.0

    def test_pose_only_transport_fails(self, experiment, stack_demo,
                                       seg_result):
        demo, _ = stack_demo
        seg = seg_result.segments[1]
        wc, cc = experiment.world_config(), experiment.cost_config()
        spec = formulate_initial(seg, demo, cc, wc)
        policy = init_policy(spec, demo, seg, experiment.dmp_config())
        option = OptionRecord(policy, [], cc.termination_threshold, 0.0)
        start = _world_at_frame(demo, seg.start, wc)
        prob, _ = estimate_success(option, spec, wc, start, n_eval=10,
                                   seed=1, cost_cfg=cc)
        assert prob == 0.0

    def test_jitter_moves_blocks_only(self, experiment, stack_demo):
        demo, _ = stack_demo
        wc = experiment.world_config()
        base = _world_at_frame(demo, 0, wc)
        rng = np.random.default_rng(0)
        j = jittered_start(base, wc, rng)
        assert np.array_equal(j.hand.loc, base.hand.loc)
        for bid in base.blocks:
            delta = j.blocks[bid].loc - base.blocks[bid].loc
            assert np.all(np.abs(delta[:2]) <= 0.01 + 1e-12)
            assert delta[2] == 0.0


class TestReformulate:
    def test_first_pop_adds_gripper_to_selected_abstraction(
            self, experiment, stack_demo, seg_result):
        demo, _ = stack_demo
        cc, wc = experiment.cost_config(), experiment.world_config()
        states = {}
        lvl, spec = reformulate(1, states, seg_result, demo, cc, wc,
                                prior=experiment.seg_prior())
        assert lvl == 1
        assert spec.abstraction == seg_result.segments[1].abstraction
        assert spec.include_gripper_action

    def test_queue_order_and_uniqueness(self, experiment, stack_demo,
                                        seg_result):
        demo, _ = stack_demo
        cc = CostConfig(alpha_model=0.0)   # keep every candidate
        wc = experiment.world_config()
        states = {}
        seen = []
        while True:
            out = reformulate(1, states, seg_result, demo, cc, wc,
                              prior=experiment.seg_prior())
            if out is BACKTRACK:
                break
            lvl, spec = out
            assert lvl == 1
            seen.append((spec.abstraction, spec.include_gripper_action))
        # each (abstraction, gripper) pair at most once
        assert len(seen) == len(set(seen))
        # 4 candidates x 2 variants minus the already-tried initial one
        assert len(seen) == 7
        ranked = [q for q, _ in rank_candidates(
            demo, seg_result.segments[1].start, seg_result.segments[1].end,
            experiment.seg_prior(), alpha_model=0.0)]
        # gripper variant of candidate k comes before candidate k+1 pose-only
        assert seen[0] == (ranked[0], True)
        assert seen[1] == (ranked[1], False)
        assert seen[2] == (ranked[1], True)

    def test_backtrack_reenters_previous_segment(self, experiment, stack_demo,
                                                 seg_result):
        demo, _ = stack_demo
        cc = CostConfig(alpha_model=1.0)   # only the top candidate
        wc = experiment.world_config()
        states = {}
        out = reformulate(1, states, seg_result, demo, cc, wc,
                          prior=experiment.seg_prior())
        assert out is not BACKTRACK
        out = reformulate(1, states, seg_result, demo, cc, wc,
                          prior=experiment.seg_prior())
        assert out is BACKTRACK
        # the armed reform_prev makes the next call descend to segment 0
        out = reformulate(1, states, seg_result, demo, cc, wc,
                          prior=experiment.seg_prior())
        assert out is not BACKTRACK
        lvl, spec = out
        assert lvl == 0
        assert spec.abstraction == seg_result.segments[0].abstraction
        assert spec.include_gripper_action

    def test_backtrack_below_zero_fails(self, experiment, stack_demo,
                                        seg_result):
        demo, _ = stack_demo
        cc = CostConfig(alpha_model=1.0)
        wc = experiment.world_config()
        states = {}
        with pytest.raises(PipelineFailureError):
            for _ in range(20):
                out = reformulate(0, states, seg_result, demo, cc, wc,
                                  prior=experiment.seg_prior())


@pytest.fixture(scope="module")
def pipeline_run(experiment, stack_demo):
    demo, _ = stack_demo
    return run_pipeline(
        demo, experiment.world_config(), seg_prior=experiment.seg_prior(),
        cost_cfg=experiment.cost_config(),
        learn_cfg=experiment.learn_config(seed=0),
        dmp_cfg=experiment.dmp_config(), seed=0)


class TestPipeline:
    def test_alpha_gate(self, pipeline_run):
        options, specs, report = pipeline_run
        assert len(options) == 3
        for o in options:
            assert o.success_prob >= 0.8

    def test_narrative(self, pipeline_run):
        options, specs, report = pipeline_run
        segs = report["segments"]
        assert len(segs[0]["attempts"]) == 1
        assert segs[0]["attempts"][0]["success_prob"] >= 0.8
        assert segs[1]["attempts"][0]["success_prob"] == 0.0
        assert not segs[1]["attempts"][0]["formulation"]["gripper_action"]
        assert segs[1]["attempts"][1]["formulation"]["gripper_action"]
        assert segs[1]["attempts"][1]["success_prob"] >= 0.8
        assert len(segs[2]["attempts"]) == 1
        assert segs[2]["attempts"][0]["success_prob"] >= 0.8

    def test_skill_json_round_trip(self, pipeline_run, experiment):
        options, specs, report = pipeline_run
        for o, s in zip(options, specs):
            obj = skill_to_json_obj(o, s, "hand")
            o2, s2 = skill_from_json_obj(obj, "hand")
            assert np.array_equal(o2.policy.theta(), o.policy.theta())
            assert s2.abstraction == s.abstraction
            assert np.array_equal(s2.s_T_obs, s.s_T_obs)
            assert o2.success_prob == o.success_prob

    def test_initiation_states_recorded(self, pipeline_run):
        options, specs, report = pipeline_run
        for o, s in zip(options, specs):
            assert len(o.initiation_states) >= 8
            for st in o.initiation_states:
                assert st.shape == s.s_T_obs.shape
