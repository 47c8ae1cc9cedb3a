import numpy as np
import pytest

from lagrangian_lwr.fundamental_diagram import TriangularDiagram, mobile_century_diagram


@pytest.fixture
def diagram():
    return mobile_century_diagram()


@pytest.fixture
def small_diagram():
    # round numbers: k = 1.75 veh/s, s_star = 18 m, v_max = 31.5 m/s
    return TriangularDiagram(rho_max=0.5, rho_star=1 / 18, k=1.75)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
