"""
Unit tests for the eps-rescaled functionals and the microscopic certificates.
"""
import math

import numpy as np
import pytest

from bdlab.becker_doring import ClusterState, dissipation_terms, energy_gradient, free_energy, integrate_bd
from bdlab.factory import make_initial
from bdlab.lsw import first_moment
from bdlab.rates import equilibrium, partition_coeffs, saturation_mass
from bdlab.rescaling import (
    curve_J_eps,
    discrete_continuity_residual,
    excess_mass_residual,
    lsi_bound,
    macroscopic_u_eps,
    monomer_excess,
    monomer_macro_inequality,
    project_mac,
    quasistationary_certificate,
    quasistationary_entropy,
    rescaled_action_dissipation,
    rescaled_energies,
    rescaled_flux_measures,
    sqrt_dissipation_lower_bound,
    time_scale,
)
from bdlab.schemas import InitialSpec, RateParams, RescaleParams


@pytest.fixture
def rescale():
    """eps = 0.1 with l0 = 2."""
    return RescaleParams(eps=0.1, x=0.45)


class TestProjection:
    """Test suite for project_mac and the scalar rescaled quantities."""

    def test_first_moment_matches_macroscopic_mass(self, positive_state):
        """Test that the first moment of nu^eps is sum_{l >= l0} l n_l."""
        ensemble = project_mac(positive_state, 0.1, 4)
        expected = float(np.dot(np.arange(4, 65), positive_state.n[3:]))
        assert first_moment(ensemble) == pytest.approx(expected, rel=1e-13)
        assert ensemble.lam[0] == pytest.approx(0.4)

    def test_bump_carries_excess_mass(self, params):
        """Test that the equilibrium+bump data projects to the requested excess mass."""
        spec = InitialSpec(excess_mass=2.0, eps=0.1)
        rescale = RescaleParams(eps=0.1, x=0.45)
        table = partition_coeffs(params, 40)
        state = make_initial(spec, params, table, seed=0, L=40, rescale=rescale)
        assert first_moment(project_mac(state, 0.1, rescale.l0)) == pytest.approx(2.0, abs=1e-10)

    def test_cutoff_outside_range_rejected(self, positive_state):
        """Test that l0 must lie in 2..L."""
        with pytest.raises(ValueError, match="outside"):
            project_mac(positive_state, 0.1, 1)

    def test_monomer_excess(self, params):
        """Test h^eps = (n_1 - z_s) / eps^gamma."""
        state = ClusterState([1.2, 0.1, 0.0])
        assert monomer_excess(params, state, 0.04) == pytest.approx(0.2 / 0.2)

    def test_clock(self, params):
        """Test eps^-(1 - alpha + gamma) = eps^-1.5 for the default family."""
        assert time_scale(params, 0.01) == pytest.approx(1000.0)


class TestMacroscopicSupersaturation:
    """Test suite for u^eps."""

    def test_single_macroscopic_cluster(self, params):
        """Test that one occupied size k = l0 + 1 gives u^eps = q (eps k)^-gamma."""
        n = np.zeros(20)
        n[0] = 1.0
        n[4] = 0.3
        state = ClusterState(n)
        assert macroscopic_u_eps(params, state, 0.1, 4) == pytest.approx(math.sqrt(2.0), rel=1e-13)

    def test_omitted_saturation_factor(self):
        """Test that dropping z_s from the numerator shifts u^eps by (z_s - 1)/eps^gamma."""
        params = RateParams(z_s=2.0)
        n = np.zeros(20)
        n[0] = 1.0
        n[4] = 0.3
        state = ClusterState(n)
        shift = macroscopic_u_eps(params, state, 0.1, 4, omit_z_s=True) - macroscopic_u_eps(params, state, 0.1, 4)
        assert shift == pytest.approx(1.0 / math.sqrt(0.1), rel=1e-12)

    def test_empty_macroscopic_range_rejected(self, params):
        """Test that u^eps is undefined without macroscopic clusters."""
        with pytest.raises(ValueError, match="no occupied macroscopic cluster"):
            macroscopic_u_eps(params, ClusterState([1.0, 0.5, 0.0, 0.0]), 0.1, 3)


class TestRescaledFunctionals:
    """Test suite for F^eps, A^eps, D^eps and the flux measures."""

    def test_energy_split_adds_up(self, params, table, positive_state, rescale):
        """Test F_mic + F_mac = z_s eps^-gamma F(n)."""
        split = rescaled_energies(params, table, positive_state, rescale)
        assert split.F_total == pytest.approx(split.scale * free_energy(table, positive_state), rel=1e-12)

    def test_action_equals_dissipation_at_gradient(self, params, table, positive_state, rescale):
        """Test A^eps(n, -DF) = D^eps(n)."""
        phi = -energy_gradient(table, positive_state).phi
        split = rescaled_action_dissipation(params, positive_state, phi, rescale)
        assert split.A == pytest.approx(split.D, rel=1e-12)
        assert split.D == pytest.approx(split.D_mic + split.D_mac)

    def test_flux_measures_coincide_at_gradient(self, params, table, positive_state):
        """Test mu^eps = mu_hat^eps for phi = -DF."""
        phi = -energy_gradient(table, positive_state).phi
        mu, mu_hat = rescaled_flux_measures(params, positive_state, phi, 0.1, 3)
        np.testing.assert_allclose(mu.lam, mu_hat.lam)
        scale = np.max(np.abs(mu_hat.weights))
        np.testing.assert_allclose(mu.weights, mu_hat.weights, rtol=0, atol=1e-10 * scale)

    def test_curve_J_eps_requires_rescaled_clock(self, params, controls):
        """Test that an unscaled curve is rejected and a rescaled one has J^eps ~ 0."""
        table = partition_coeffs(params, 16)
        n0 = np.zeros(16)
        n0[0] = 1.2
        plain = integrate_bd(params, table, ClusterState(n0), 0.1, controls)
        with pytest.raises(ValueError, match="curve clock"):
            curve_J_eps(params, table, plain, 0.25)
        fast = integrate_bd(params, table, ClusterState(n0), 0.1, controls, time_scale=time_scale(params, 0.25))
        J = curve_J_eps(params, table, fast, 0.25)
        assert abs(J.value) <= 1e-4 * J.scale


class TestQuasistationaryCertificate:
    """Test suite for the log-Sobolev bound and the microscopic certificate."""

    def test_lsi_hand_case(self, params, table):
        """Test l0 = 3: C_LSI = 480 omega_2/n_1 log((n_1 + omega_2)/omega_2)."""
        n1, n2 = 0.8, 0.3
        state = ClusterState([n1, n2, 0.1, 0.05])
        omega2 = n1 * n1 / (params.z_s + params.q * 2 ** -params.gamma)
        bound = lsi_bound(params, table, state, 3)
        expected = 480.0 * omega2 / n1 * math.log((n1 + omega2) / omega2)
        assert bound.c_lsi == pytest.approx(expected, rel=1e-12)
        factor = (n1 * n1 + 2.0 * (n1 + n2) * (n1 + omega2)) / (n1 * n1)
        assert bound.c_eed == pytest.approx(expected * factor, rel=1e-12)

    def test_lsi_needs_two_microscopic_sizes(self, params, table, positive_state):
        """Test that l0 < 3 is rejected."""
        with pytest.raises(ValueError, match="l0 >= 3"):
            lsi_bound(params, table, positive_state, 2)

    def test_certificate_trivial_for_monomer_range(self, params, table, positive_state):
        """Test that l0 = 2 gives H = 0 and a zero right-hand side."""
        H, rhs = quasistationary_certificate(params, table, positive_state, 2)
        assert H == pytest.approx(0.0, abs=1e-15)
        assert rhs == 0.0

    def test_certificate_holds(self, params, table, positive_state):
        """Test H_mic <= C_EED D_bar_mic on a perturbed equilibrium."""
        H, rhs = quasistationary_certificate(params, table, positive_state, 5)
        assert H >= 0
        assert H <= rhs + 1e-12

    def test_entropy_vanishes_on_quasistationary_profile(self, table):
        """Test H_mic(omega(n_1) | omega(n_1)) = 0, also for n_1 > z_s."""
        profile = np.exp(table.log_omega_formal(1.3, 6))
        state = ClusterState(np.concatenate((profile, [0.0, 0.0])))
        assert quasistationary_entropy(table, state, 7) == pytest.approx(0.0, abs=1e-14)

    def test_sqrt_bound_below_dissipation(self, params, positive_state):
        """Test that the square-root bound never exceeds the microscopic dissipation."""
        l0 = 6
        bound = sqrt_dissipation_lower_bound(params, positive_state, l0)
        D_mic = float(np.sum(dissipation_terms(params, positive_state)[:l0 - 1]))
        assert bound <= D_mic * (1 + 1e-12)

    def test_monomer_macro_inequality(self, params, positive_state):
        """Test (u - h) log((1 + u)/(1 + h)) <= D_mac / A(z_s)."""
        lhs, rhs = monomer_macro_inequality(params, positive_state, 4)
        assert 0 <= lhs <= rhs * (1 + 1e-12)


class TestMacroscopicDiagnostics:
    """Test suite for the continuity and excess-mass diagnostics."""

    def test_continuity_on_solver_curve(self, params, controls):
        """Test that solver output satisfies the rescaled continuity equation."""
        table = partition_coeffs(params, 32)
        n0 = 0.5 * equilibrium(table, params.z_s)
        n0[0] = 1.1
        curve = integrate_bd(params, table, ClusterState(n0), 0.05, controls, time_scale=time_scale(params, 0.25))
        assert discrete_continuity_residual(params, curve, 0.25, 3) <= 5e-2

    def test_excess_mass_residual_is_the_saturation_tail(self, params, table):
        """Test that omega(z_s) below l0 plus a bump leaves rho_s - sum_{l < l0} l omega_l."""
        rescale = RescaleParams(eps=0.05, x=0.45)
        spec = InitialSpec(excess_mass=1.0, eps=0.05)
        state = make_initial(spec, params, table, seed=0, L=64, rescale=rescale)
        omega2 = 1.0 / (1.0 + 2 ** -0.5)
        expected = saturation_mass(params) - (1.0 + 2.0 * omega2)
        assert excess_mass_residual(params, state, 0.05, rescale.l0) == pytest.approx(expected, rel=1e-10)
