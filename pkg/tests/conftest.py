import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from votecraft.geometry import RigidTransform
from votecraft.synth import SceneConfig


@pytest.fixture
def rng():
    """
    Return a seeded numpy random generator.
    """
    return np.random.default_rng(12345)


@pytest.fixture
def random_transform(rng):
    """
    Return a random rigid transform with a translation near one metre depth.
    """
    rotation = Rotation.random(random_state=rng).as_matrix()
    return RigidTransform(rotation, rng.uniform(-0.25, 0.25, 3) + np.array([0.0, 0.0, 1.0]))


@pytest.fixture
def consistent_rays(rng):
    """
    Return points, exact unit vectors towards a known keypoint, and that keypoint.
    """
    keypoint = np.array([0.1, -0.2, 0.9])
    points = keypoint + rng.uniform(-0.1, 0.1, (40, 3))
    vectors = keypoint - points
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    return points, vectors, keypoint


@pytest.fixture
def small_scene_config():
    """
    Return a small noise-free scene configuration.
    """
    return SceneConfig(seed=7, point_count=1000, keypoint_count=8, model_point_count=500)
