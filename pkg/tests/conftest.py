"""
Shared fixtures: the default rate family, small tables and tight integrator controls.
"""
import numpy as np
import pytest

from bdlab.becker_doring import ClusterState
from bdlab.rates import equilibrium, partition_coeffs
from bdlab.schemas import IntegratorControls, RateParams


@pytest.fixture
def params():
    """alpha = 0, gamma = 1/2, z_s = 1, q = 1."""
    return RateParams()


@pytest.fixture
def table(params):
    return partition_coeffs(params, 64)


@pytest.fixture
def controls():
    return IntegratorControls(rtol=1e-10, atol=1e-16, dt_init=1e-4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def positive_state(params, table, rng):
    """Strictly positive perturbation of omega(z_s) on L = 64."""
    omega = equilibrium(table, params.z_s)
    return ClusterState(omega * np.exp(0.5 * rng.standard_normal(omega.size)))
