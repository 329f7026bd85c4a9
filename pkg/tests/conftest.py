import math

import numpy as np
import pytest

from flipgrasp.config import DomainRandomizationSpec, RunConfig
from flipgrasp.sim import EndEffectorState, HOME_POSE, ObjectState, Simulator, WorkspaceState, place_against_wall

BOX0 = (0.142, 0.091, 0.041)  # length, width, height (m)


@pytest.fixture
def sim():
    return Simulator()


@pytest.fixture
def cfg():
    return RunConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_state(obj: ObjectState) -> WorkspaceState:
    return WorkspaceState(obj, EndEffectorState(*HOME_POSE))


def flush_box(wall=1, axis=0, dims=BOX0, mass=0.209, mu=0.5, offset=0.0):
    return make_state(place_against_wall(dims, mass, mu, wall, axis, offset))


def centered_box(dims=BOX0, yaw=0.0, mass=0.209, mu=0.5):
    return make_state(ObjectState(0.224, 0.224, yaw, dims, mass, mu))


@pytest.fixture
def box0_spec():
    return DomainRandomizationSpec.fixed(*BOX0, mass=0.209)


def deg(x):
    return math.radians(x)
