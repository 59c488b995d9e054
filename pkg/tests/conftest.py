import os
import warnings

import hypothesis
import numpy as np
import pytest

from lib.exceptions import MaxItersExceeded
from polylab.geometry import HPolytope

np.seterr(all="warn")

hypothesis.settings.register_profile("default", max_examples=25, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile(
    "ci", max_examples=100, deadline=None, derandomize=True
)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(autouse=True)
def _quiet_ccp():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MaxItersExceeded)
        yield


@pytest.fixture
def cube3() -> HPolytope:
    return HPolytope.from_box(np.zeros(3), np.ones(3))


@pytest.fixture
def simplex4() -> HPolytope:
    d = 4
    A = np.vstack([-np.eye(d), np.ones((1, d))])
    b = np.concatenate([np.zeros(d), [-1.0]])
    return HPolytope(A, b)


def _random_polytope(rng: np.random.Generator, d: int, n: int) -> HPolytope:
    """Bounded polytope around the origin: n random tangent halfspaces."""
    U = rng.standard_normal((n, d))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    # a simplex-like frame keeps the result bounded for any draw
    frame = np.vstack([-np.eye(d), np.ones((1, d)) / np.sqrt(d)])
    A = np.vstack([U, frame])
    b = np.concatenate([-rng.uniform(0.5, 1.5, n), -3.0 * np.ones(d + 1)])
    return HPolytope(A, b)


@pytest.fixture(scope="session")
def random_polytope():
    return _random_polytope
