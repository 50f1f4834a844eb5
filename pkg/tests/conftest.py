import numpy as np
import pytest

from skillpipe.config import StackExperiment
from skillpipe.core import Demonstration, Pose, PublicState


@pytest.fixture(scope="session")
def experiment():
    return StackExperiment()


@pytest.fixture(scope="session")
def stack_demo(experiment):
    demo, info = experiment.generate_demo()
    return demo, info


def random_pose(rng, loc_scale=1.0):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return Pose(rng.normal(scale=loc_scale, size=3), q)


def random_walk_demo(rng, n_frames, n_objects, step=0.02, hand_id="h"):
    """Independent random-walk trajectories for the hand and each object."""
    ids = [f"b{k}" for k in range(n_objects)]
    locs = {e: rng.normal(scale=0.3, size=3)
            for e in [hand_id] + ids}
    ident = np.array([0.0, 0.0, 0.0, 1.0])
    frames = []
    for _ in range(n_frames):
        for e in locs:
            locs[e] = locs[e] + rng.normal(scale=step, size=3)
        frames.append(PublicState(
            hand_id, Pose(locs[hand_id].copy(), ident),
            {i: Pose(locs[i].copy(), ident) for i in ids}))
    return Demonstration(frames, 1.0 / 30.0)
