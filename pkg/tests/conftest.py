import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

from posetrans.synthetic import SyntheticSpec, stick_figure, write_synthetic_dataset  # noqa: E402
from posetrans.types import NUM_JOINTS, Pose  # noqa: E402


def figure_pose(rng, archetype="stand", size=64, vis=None):
    joints = stick_figure(archetype, rng, size)
    return Pose(joints, np.full(NUM_JOINTS, 2) if vis is None else vis)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """120 stick figures with images and masks (80/25/15 across archetypes)."""
    root = tmp_path_factory.mktemp("small")
    write_synthetic_dataset(root, SyntheticSpec(n=120, proportions=(0.667, 0.208, 0.125), seed=5))
    return root
