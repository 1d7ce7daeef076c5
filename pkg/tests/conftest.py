import numpy as np
import pytest

from evograsp.evaluator import EvalConfig, Grasp
from evograsp.geometry import Primitive, SdfScene
from evograsp.hand import WristPose, build_parametric_hand


@pytest.fixture(scope="session")
def toy_sphere():
    """Radius 5 cm, mu 0.8, densely sampled: the standard test object."""
    return SdfScene(
        [Primitive("sphere", [0, 0, 0], [1, 0, 0, 0], {"radius": 0.05}, 0.8)],
        name="toy-sphere", surface_density=20000.0,
    )


@pytest.fixture(scope="session")
def sparse_sphere():
    return SdfScene(
        [Primitive("sphere", [0, 0, 0], [1, 0, 0, 0], {"radius": 0.05}, 0.8)],
        name="sparse-sphere",
    )


@pytest.fixture(scope="session")
def hand():
    return build_parametric_hand()


@pytest.fixture(scope="session")
def eval_cfg():
    return EvalConfig()


@pytest.fixture(scope="session")
def stable_sphere_grasp():
    """Palm-down wrap of the toy sphere: all four fingers curl symmetrically
    onto the equatorial band. Survives the full disturbance protocol."""
    wrist = WristPose(np.array([0.0, 0.0, 0.105]), np.array([1.0, 0.0, 0.0, 0.0]))
    return Grasp(wrist, np.full(12, 0.75), np.zeros(12))
