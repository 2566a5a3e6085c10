import json
import math
from pathlib import Path

import numpy as np
import pytest

from oracles import capped_double_cone
from singular_yamabe.cone_geometry import Cone, ConeSpace, LinkSpec, SampledWarp, Spindle, YamabeConstants
from singular_yamabe.link_spectrum import round_sphere_link

DATA = Path(__file__).parent / "data"
SPACES = Path(__file__).parent.parent / "spaces"

RP3 = LinkSpec(3, math.pi**2, 6.0, ((0.0, 1), (8.0, 9), (24.0, 25)), name="RP3")


def spindle(n, rho, L=math.pi):
    return ConeSpace(YamabeConstants(n), round_sphere_link(n - 1), Spindle(rho, L))


def exact_cone(n, rho=1.0, L=1.0, link=None):
    return ConeSpace(YamabeConstants(n), link or round_sphere_link(n - 1), Cone(rho, L))


def einstein_double_cone():
    x, psi = capped_double_cone()
    return ConeSpace(YamabeConstants(4), RP3, SampledWarp(tuple(x), tuple(psi), 2.0))


@pytest.fixture(scope="session")
def golden():
    return json.loads((DATA / "golden.json").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
