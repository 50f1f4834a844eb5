"""Pose algebra, public states, demonstrations, and state abstraction.

Everything downstream (segmentation, policy learning, simulation) works on
the types defined here. Quaternions are stored as (qx, qy, qz, qw) with the
scalar part last; relative poses are sign-canonicalized so that qw >= 0,
which keeps componentwise terminal-cost differences well defined.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

QUAT_NORM_TOL = 1e-9


class SkillPipeError(Exception):
    """Base class for errors raised by this package."""


class InvalidPoseError(SkillPipeError):
    """Pose violates an invariant (non-unit quaternion, non-finite location)."""


class UnknownEntityError(SkillPipeError):
    """An entity id referenced by an abstraction is absent from the state."""


class InsufficientDataError(SkillPipeError):
    """Too few samples for the requested operation."""


# ---------------------------------------------------------------------------
# quaternion helpers (x, y, z, w storage, Hamilton product)
# ---------------------------------------------------------------------------

def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise InvalidPoseError("zero quaternion cannot be normalized")
    return q / n


def quat_multiply(q1, q2):
    """Hamilton product q1 * q2, both (qx, qy, qz, qw)."""
    v1, w1 = q1[:3], q1[3]
    v2, w2 = q2[:3], q2[3]
    v = w1 * v2 + w2 * v1 + np.cross(v1, v2)
    w = w1 * w2 - np.dot(v1, v2)
    return np.concatenate([v, [w]])


def quat_conjugate(q):
    return np.array([-q[0], -q[1], -q[2], q[3]])


def quat_rotate(q, v):
    """Rotate vector v by the rotation encoded in unit quaternion q."""
    qv = np.concatenate([np.asarray(v, dtype=float), [0.0]])
    return quat_multiply(quat_multiply(q, qv), quat_conjugate(q))[:3]


def quat_canonical(q):
    """Flip the sign of all four components when qw < 0 (double cover)."""
    if q[3] < 0.0:
        return -q
    return q


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([axis * np.sin(half), [np.cos(half)]])


def quat_angle_between(q1, q2):
    """Absolute rotation angle between two unit quaternions, in radians."""
    dot = abs(float(np.dot(q1, q2)))
    return 2.0 * np.arccos(min(dot, 1.0))


# ---------------------------------------------------------------------------
# core types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pose:
    """Rigid pose: 3-D location in meters plus a unit quaternion."""

    loc: np.ndarray
    quat: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.loc, dtype=float).reshape(3)
        quat = np.asarray(self.quat, dtype=float).reshape(4)
        if not np.all(np.isfinite(loc)):
            raise InvalidPoseError("non-finite location")
        n = np.linalg.norm(quat)
        if abs(n - 1.0) > 1e-6:
            raise InvalidPoseError(f"quaternion norm {n} too far from 1")
        if abs(n - 1.0) > QUAT_NORM_TOL:
            quat = quat / n
        object.__setattr__(self, "loc", loc)
        object.__setattr__(self, "quat", quat)

    @staticmethod
    def identity():
        return Pose(np.zeros(3), np.array([0.0, 0.0, 0.0, 1.0]))

    @staticmethod
    def from_vec7(v):
        v = np.asarray(v, dtype=float).reshape(7)
        return Pose(v[:3], v[3:])

    def to_vec7(self):
        return np.concatenate([self.loc, self.quat])

    def compose(self, other: "Pose") -> "Pose":
        """Pose of `other` mapped through this pose's frame into the world."""
        return Pose(self.loc + quat_rotate(self.quat, other.loc),
                    quat_multiply(self.quat, other.quat))


def relative_pose(a: Pose, b: Pose) -> np.ndarray:
    """Pose of `a` expressed in `b`'s frame, as a 7-vector.

    Location is R(b)^-1 (loc_a - loc_b); orientation is q_b^-1 * q_a with
    the sign canonicalized so qw >= 0.
    """
    for p in (a, b):
        if abs(np.linalg.norm(p.quat) - 1.0) > 1e-6:
            raise InvalidPoseError("non-unit quaternion")
    q_inv = quat_conjugate(b.quat)
    loc = quat_rotate(q_inv, a.loc - b.loc)
    quat = quat_canonical(quat_multiply(q_inv, a.quat))
    return np.concatenate([loc, quat])


@dataclass
class PublicState:
    """Externally observable poses: the hand plus every tracked object."""

    hand_id: str
    hand: Pose
    objects: dict[str, Pose]

    def __post_init__(self):
        if self.hand_id in self.objects:
            raise UnknownEntityError(
                f"hand id {self.hand_id!r} collides with an object id")

    def pose_of(self, entity_id: str) -> Pose:
        if entity_id == self.hand_id:
            return self.hand
        try:
            return self.objects[entity_id]
        except KeyError:
            raise UnknownEntityError(f"unknown entity {entity_id!r}") from None

    @property
    def entity_ids(self):
        return [self.hand_id] + list(self.objects.keys())


@dataclass
class Demonstration:
    """Frame-rate sequence of public states with a fixed sampling period."""

    frames: list[PublicState]
    dt: float

    def __post_init__(self):
        if len(self.frames) < 2:
            raise InsufficientDataError("a demonstration needs >= 2 frames")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        ids0 = set(self.frames[0].entity_ids)
        for k, f in enumerate(self.frames):
            if set(f.entity_ids) != ids0:
                raise UnknownEntityError(f"frame {k} has a different entity set")

    @property
    def hand_id(self):
        return self.frames[0].hand_id

    @property
    def object_ids(self):
        return list(self.frames[0].objects.keys())

    def __len__(self):
        return len(self.frames)

    def locations(self, entity_id: str) -> np.ndarray:
        """(T, 3) array of an entity's locations over all frames."""
        return np.array([f.pose_of(entity_id).loc for f in self.frames])


@dataclass(frozen=True)
class Abstraction:
    """Relevant-entity set plus the reference object whose frame is used.

    The hand is always relevant; the reference is an object, never the hand,
    and is not itself a member of the relevant set.
    """

    relevant: frozenset
    reference: str

    def __post_init__(self):
        object.__setattr__(self, "relevant", frozenset(self.relevant))
        if self.reference in self.relevant:
            raise ValueError("reference object cannot be in the relevant set")

    def ordered_entities(self, hand_id: str):
        """Hand first, remaining relevant ids in ascending order."""
        if hand_id not in self.relevant:
            raise ValueError("hand must be in the relevant set")
        rest = sorted(e for e in self.relevant if e != hand_id)
        return [hand_id] + rest

    def describe(self, hand_id: str) -> dict:
        return {"relevant": self.ordered_entities(hand_id),
                "reference": self.reference}


def abstract_state(state: PublicState, m: Abstraction) -> np.ndarray:
    """Concatenated relative poses of the relevant entities in the reference
    frame; 7 components per entity, hand first then object ids ascending."""
    ref = state.pose_of(m.reference)
    parts = [relative_pose(state.pose_of(e), ref)
             for e in m.ordered_entities(state.hand_id)]
    return np.concatenate(parts)


def finite_diff_accel(traj, dt: float) -> np.ndarray:
    """Central second differences along axis 0; endpoints copy the nearest
    interior value so the result has the same length as the input."""
    traj = np.asarray(traj, dtype=float)
    if traj.shape[0] < 3:
        raise InsufficientDataError("need >= 3 samples for accelerations")
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    acc = np.empty_like(traj)
    acc[1:-1] = (traj[:-2] - 2.0 * traj[1:-1] + traj[2:]) / dt**2
    acc[0] = acc[1]
    acc[-1] = acc[-2]
    return acc


def finite_diff_vel(traj, dt: float) -> np.ndarray:
    """Central first differences; one-sided at the endpoints."""
    traj = np.asarray(traj, dtype=float)
    if traj.shape[0] < 2:
        raise InsufficientDataError("need >= 2 samples for velocities")
    vel = np.empty_like(traj)
    vel[1:-1] = (traj[2:] - traj[:-2]) / (2.0 * dt)
    vel[0] = (traj[1] - traj[0]) / dt
    vel[-1] = (traj[-1] - traj[-2]) / dt
    return vel


# ---------------------------------------------------------------------------
# demonstration file format
# ---------------------------------------------------------------------------
# line 1: dt=<seconds>
# line 2: comma-separated entity ids, hand id first
# then one CSV line per frame: frame index, then x,y,z,qx,qy,qz,qw per entity
# in header order. Floats are written as shortest exact positional decimals,
# so save -> load -> save round-trips byte-identically.

def _fmt(x: float) -> str:
    return np.format_float_positional(x, unique=True, trim="0")


def save_demonstration(demo: Demonstration, path_or_file):
    if hasattr(path_or_file, "write"):
        _write_demo(demo, path_or_file)
    else:
        with open(path_or_file, "w") as fh:
            _write_demo(demo, fh)


def _write_demo(demo, fh):
    ids = demo.frames[0].entity_ids
    fh.write(f"dt={_fmt(demo.dt)}\n")
    fh.write(",".join(ids) + "\n")
    for k, frame in enumerate(demo.frames):
        cols = [str(k)]
        for e in ids:
            cols.extend(_fmt(v) for v in frame.pose_of(e).to_vec7())
        fh.write(",".join(cols) + "\n")


def load_demonstration(path_or_file) -> Demonstration:
    if hasattr(path_or_file, "read"):
        return _read_demo(path_or_file)
    with open(path_or_file) as fh:
        return _read_demo(fh)


def _read_demo(fh) -> Demonstration:
    header = fh.readline().strip()
    if not header.startswith("dt="):
        raise ValueError("demonstration file must start with 'dt=<seconds>'")
    dt = float(header[3:])
    ids = fh.readline().strip().split(",")
    if len(ids) < 2:
        raise ValueError("need a hand id and at least one object id")
    hand_id, object_ids = ids[0], ids[1:]
    frames = []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        vals = line.split(",")
        expected = 1 + 7 * len(ids)
        if len(vals) != expected:
            raise ValueError(f"expected {expected} columns, got {len(vals)}")
        nums = np.array([float(v) for v in vals[1:]])
        poses = [Pose.from_vec7(nums[7 * i:7 * i + 7]) for i in range(len(ids))]
        frames.append(PublicState(hand_id, poses[0],
                                  dict(zip(object_ids, poses[1:]))))
    return Demonstration(frames, dt)


def demonstration_to_text(demo: Demonstration) -> str:
    buf = io.StringIO()
    _write_demo(demo, buf)
    return buf.getvalue()
