import io

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from skillpipe.core import (Abstraction, Demonstration, InsufficientDataError,
                            InvalidPoseError, Pose, PublicState,
                            UnknownEntityError, abstract_state,
                            demonstration_to_text, finite_diff_accel,
                            load_demonstration, quat_from_axis_angle,
                            relative_pose, save_demonstration)
from conftest import random_pose

IDENT = np.array([0.0, 0.0, 0.0, 1.0])


def homogeneous(pose):
    T = np.eye(4)
    T[:3, :3] = Rotation.from_quat(pose.quat).as_matrix()
    T[:3, 3] = pose.loc
    return T


def oracle_relative(a, b):
    T = np.linalg.inv(homogeneous(b)) @ homogeneous(a)
    q = Rotation.from_matrix(T[:3, :3]).as_quat()
    if q[3] < 0:
        q = -q
    return np.concatenate([T[:3, 3], q])


class TestRelativePose:
    def test_identity_case(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            p = random_pose(rng)
            assert np.array_equal(relative_pose(p, p)[:3], np.zeros(3))
            assert np.allclose(relative_pose(p, p), [0, 0, 0, 0, 0, 0, 1],
                               atol=1e-15)

    def test_pure_translation(self):
        a = Pose(np.array([1.0, 2.0, 3.0]), IDENT)
        b = Pose(np.array([1.0, 0.0, 0.0]), IDENT)
        assert np.allclose(relative_pose(a, b), [0, 2, 3, 0, 0, 0, 1])

    def test_rotated_frame_example(self):
        a = Pose(np.array([1.0, 0.0, 0.0]), IDENT)
        b = Pose(np.zeros(3), quat_from_axis_angle([0, 0, 1], np.pi / 2))
        s45 = np.sin(np.pi / 4)
        got = relative_pose(a, b)
        assert np.allclose(got, [0, -1, 0, 0, 0, -s45, s45], atol=1e-12)

    def test_matches_homogeneous_matrix_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            a, b = random_pose(rng), random_pose(rng)
            assert np.allclose(relative_pose(a, b), oracle_relative(a, b),
                               atol=1e-9)

    def test_composition_recovers_original(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            a, b = random_pose(rng), random_pose(rng)
            rel = Pose.from_vec7(relative_pose(a, b))
            back = b.compose(rel)
            assert np.allclose(back.loc, a.loc, atol=1e-9)
            assert min(np.linalg.norm(back.quat - a.quat),
                       np.linalg.norm(back.quat + a.quat)) < 1e-9

    def test_sign_canonicalization(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            a, b = random_pose(rng), random_pose(rng)
            out = relative_pose(a, b)
            assert out[6] >= 0.0
            a_neg = Pose(a.loc, -a.quat)
            b_neg = Pose(b.loc, -b.quat)
            assert np.allclose(out, relative_pose(a_neg, b, ), atol=1e-12)
            assert np.allclose(out, relative_pose(a, b_neg), atol=1e-12)

    def test_rejects_bad_quaternion(self):
        with pytest.raises(InvalidPoseError):
            Pose(np.zeros(3), np.array([1.0, 1.0, 0.0, 0.0]))
        with pytest.raises(InvalidPoseError):
            Pose(np.array([np.nan, 0, 0]), IDENT)


def make_state(hand_pose, objects, hand_id="hand"):
    return PublicState(hand_id, hand_pose, objects)


class TestAbstractState:
    def test_hand_only_coincident(self):
        ref = Pose(np.array([0.2, 0.1, 0.0]), IDENT)
        s = make_state(ref, {"b0": ref})
        m = Abstraction(frozenset({"hand"}), "b0")
        assert np.allclose(abstract_state(s, m), [0, 0, 0, 0, 0, 0, 1])

    def test_ordering_hand_first_then_ascending(self):
        rng = np.random.default_rng(1)
        poses = {e: random_pose(rng) for e in ("hand", "b1", "b0", "ref")}
        s = make_state(poses["hand"], {"b1": poses["b1"], "b0": poses["b0"],
                                       "ref": poses["ref"]})
        m = Abstraction(frozenset({"hand", "b1", "b0"}), "ref")
        out = abstract_state(s, m)
        assert out.shape == (21,)
        assert np.allclose(out[:7], relative_pose(poses["hand"], poses["ref"]))
        assert np.allclose(out[7:14], relative_pose(poses["b0"], poses["ref"]))
        assert np.allclose(out[14:], relative_pose(poses["b1"], poses["ref"]))

    def test_insertion_order_irrelevant(self):
        rng = np.random.default_rng(2)
        poses = {e: random_pose(rng) for e in ("hand", "a", "b", "r")}
        s1 = make_state(poses["hand"], {"a": poses["a"], "b": poses["b"],
                                        "r": poses["r"]})
        s2 = make_state(poses["hand"], {"r": poses["r"], "b": poses["b"],
                                        "a": poses["a"]})
        m = Abstraction(frozenset({"hand", "a", "b"}), "r")
        assert np.array_equal(abstract_state(s1, m), abstract_state(s2, m))

    def test_matches_per_entity_oracle(self):
        rng = np.random.default_rng(3)
        poses = {e: random_pose(rng) for e in ("hand", "b0", "b1", "r")}
        s = make_state(poses["hand"], {k: poses[k] for k in ("b0", "b1", "r")})
        m = Abstraction(frozenset({"hand", "b0", "b1"}), "r")
        out = abstract_state(s, m)
        expected = np.concatenate([oracle_relative(poses[e], poses["r"])
                                   for e in ("hand", "b0", "b1")])
        assert np.allclose(out, expected, atol=1e-9)

    def test_missing_entity(self):
        s = make_state(Pose.identity(), {"b0": Pose.identity()})
        m = Abstraction(frozenset({"hand", "b9"}), "b0")
        with pytest.raises(UnknownEntityError):
            abstract_state(s, m)

    def test_reference_cannot_be_relevant(self):
        with pytest.raises(ValueError):
            Abstraction(frozenset({"hand", "b0"}), "b0")


class TestFiniteDiff:
    def test_constant_is_zero(self):
        traj = np.tile([1.0, -2.0], (10, 1))
        assert np.array_equal(finite_diff_accel(traj, 0.1), np.zeros((10, 2)))

    def test_quadratic_gravity(self):
        dt = 0.01
        t = np.arange(50) * dt
        traj = 0.5 * 9.81 * t**2
        acc = finite_diff_accel(traj, dt)
        assert np.allclose(acc[1:-1], 9.81, atol=1e-6)
        assert acc[0] == acc[1] and acc[-1] == acc[-2]

    def test_cubic_matches_analytic(self):
        rng = np.random.default_rng(4)
        c = rng.normal(size=4)
        dt = 1e-3
        t = np.arange(200) * dt
        traj = c[0] + c[1] * t + c[2] * t**2 + c[3] * t**3
        acc = finite_diff_accel(traj, dt)
        expected = 2 * c[2] + 6 * c[3] * t
        # central differences are exact for cubics up to rounding
        assert np.allclose(acc[1:-1], expected[1:-1], atol=1e-5)

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            finite_diff_accel(np.zeros((2, 3)), 0.1)


class TestDemonstrationFile:
    def _demo(self):
        rng = np.random.default_rng(5)
        frames = []
        for _ in range(4):
            frames.append(PublicState(
                "hand", random_pose(rng),
                {"b0": random_pose(rng), "b1": random_pose(rng)}))
        return Demonstration(frames, 1.0 / 30.0)

    def test_round_trip_bit_exact(self, tmp_path):
        demo = self._demo()
        p1 = tmp_path / "demo.csv"
        save_demonstration(demo, p1)
        loaded = load_demonstration(p1)
        p2 = tmp_path / "demo2.csv"
        save_demonstration(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert loaded.dt == demo.dt
        for f1, f2 in zip(demo.frames, loaded.frames):
            for e in f1.entity_ids:
                assert np.array_equal(f1.pose_of(e).to_vec7(),
                                      f2.pose_of(e).to_vec7())

    def test_header_format(self):
        text = demonstration_to_text(self._demo())
        lines = text.splitlines()
        assert lines[0].startswith("dt=")
        assert lines[1].split(",")[0] == "hand"
        assert len(lines) == 2 + 4

    def test_rejects_bad_header(self):
        with pytest.raises(ValueError):
            load_demonstration(io.StringIO("frames=3\nhand,b0\n"))

    def test_demo_invariants(self):
        with pytest.raises(InsufficientDataError):
            Demonstration([PublicState("h", Pose.identity(), {})], 0.1)
