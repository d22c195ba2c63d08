"""
Unit tests for rates, partition coefficients and saturation quantities.
"""
import math

import numpy as np
import pytest

from bdlab import rates
from bdlab.errors import ConvergenceError
from bdlab.rates import (
    BISECTION_MAX_ITER,
    asymptotic_log_scaled_Q,
    certified_saturation,
    coag_rate,
    compute_asymptotic_constants,
    detailed_balance_residual,
    equilibrium,
    expansion_table,
    exact_log_scaled_Q,
    frag_rate,
    mass_function,
    partition_coeffs,
    rate_arrays,
    saturation_mass,
    solve_fugacity,
)
from bdlab.schemas import RateParams


class TestRates:
    """Test suite for the rate family."""

    def test_coagulation_rate_is_power(self):
        """Test that a_l = l^alpha."""
        params = RateParams(alpha=0.5)
        assert coag_rate(params, 4) == pytest.approx(2.0)

    def test_fragmentation_rate(self, params):
        """Test that b_l = l^alpha (z_s + q l^-gamma)."""
        assert frag_rate(params, 4) == pytest.approx(1.5)

    def test_rate_arrays_are_aligned_on_edges(self, params):
        """Test that a[i] = a_{i+1} and b[i] = b_{i+2}."""
        a, b = rate_arrays(params, 5)
        assert a.shape == b.shape == (4,)
        np.testing.assert_allclose(a, 1.0)
        np.testing.assert_allclose(b, 1.0 + np.arange(2, 6) ** -0.5)


class TestPartitionCoefficients:
    """Test suite for the equilibrium table."""

    def test_first_coefficient_is_one(self, table):
        """Test that Q_1 = 1, so omega_1(z) = z."""
        assert table.log_Q[0] == 0.0
        assert equilibrium(table, 0.7)[0] == pytest.approx(0.7)

    @pytest.mark.parametrize("z", [0.2, 0.4, 0.6, 0.8, 1.0])
    def test_detailed_balance(self, params, z):
        """Test that a_l omega_1 omega_l = b_{l+1} omega_{l+1} to roundoff up to l = 10^4."""
        table = partition_coeffs(params, 10_000)
        assert detailed_balance_residual(table, z) <= 1e-12

    def test_fugacity_above_saturation_rejected(self, table):
        """Test that z > z_s is rejected."""
        with pytest.raises(ValueError, match="outside"):
            equilibrium(table, 1.5)

    def test_formal_profile_allows_large_fugacity(self, table):
        """Test that the quasistationary profile accepts n_1 > z_s."""
        assert np.all(np.isfinite(table.log_omega_formal(1.5, 5)))

    def test_length_beyond_table_rejected(self, table):
        """Test that a profile longer than the table is rejected."""
        with pytest.raises(ValueError, match="exceeds table length"):
            table.log_omega(1.0, 65)


class TestSaturation:
    """Test suite for the saturation mass and the fugacity solver."""

    def test_saturation_mass_is_certified(self, params):
        """Test that the certified truncation reproduces the mass function at z_s."""
        rho_s, L = certified_saturation(params)
        assert math.isfinite(rho_s) and rho_s > 1.0
        table = partition_coeffs(params, L)
        assert mass_function(table, params.z_s) == pytest.approx(rho_s, rel=1e-11)

    def test_saturation_mass_diverges_without_surface_tension(self):
        """Test that q = 0 raises ConvergenceError."""
        with pytest.raises(ConvergenceError, match="diverges"):
            saturation_mass(RateParams(q=0.0))

    def test_solve_fugacity(self, params):
        """Test that the solved fugacity reproduces a subcritical mass."""
        rho_s, L = certified_saturation(params)
        rho0 = 0.5 * rho_s
        z = solve_fugacity(params, rho0)
        assert 0 < z < params.z_s
        assert mass_function(partition_coeffs(params, L), z) == pytest.approx(rho0, rel=1e-9)

    def test_solve_fugacity_iteration_cap(self, params, monkeypatch):
        """Test that bisection runs under the 200-iteration cap."""
        calls = []
        bisect = rates.optimize.bisect

        def recording_bisect(f, a, b, **kwargs):
            calls.append(kwargs["maxiter"])
            return bisect(f, a, b, **kwargs)

        monkeypatch.setattr(rates.optimize, "bisect", recording_bisect)
        solve_fugacity(params, 0.5 * saturation_mass(params))
        assert calls == [BISECTION_MAX_ITER] and BISECTION_MAX_ITER == 200

    def test_solve_fugacity_at_saturation(self, params):
        """Test that rho0 = rho_s returns z_s."""
        assert solve_fugacity(params, saturation_mass(params)) == params.z_s

    def test_supercritical_mass_rejected(self, params):
        """Test that rho0 > rho_s has no equilibrium."""
        with pytest.raises(ValueError, match="exceeds the saturation mass"):
            solve_fugacity(params, 2.0 * saturation_mass(params))


class TestAsymptoticExpansion:
    """Test suite for the large-size expansion of the partition coefficients."""

    def test_constants_vanish_without_surface_tension(self):
        """Test that q = 0 gives C1 = F0 = 0."""
        consts = compute_asymptotic_constants(RateParams(q=0.0))
        assert consts.C1 == 0.0 and consts.F0 == 0.0

    def test_C1_stable_under_refinement(self, params):
        """Test that C1 at L and 4L agree within the remainder bound."""
        coarse = compute_asymptotic_constants(params, L_limit=100_000)
        fine = compute_asymptotic_constants(params, L_limit=400_000)
        assert abs(coarse.C1 - fine.C1) <= coarse.remainder_bound

    def test_insufficient_truncation_rejected(self, params):
        """Test that a remainder above tol raises ConvergenceError."""
        with pytest.raises(ConvergenceError, match="insufficient L_limit"):
            compute_asymptotic_constants(params, L_limit=100, tol=1e-3)

    def test_expansion_error_decreases(self, params):
        """Test that the relative error decreases and error * l^gamma stays bounded."""
        consts = compute_asymptotic_constants(params)
        rows = expansion_table(params, consts, [64, 256, 1024, 4096, 16384])
        errors = [row.relative_error for row in rows]
        assert all(b < a for a, b in zip(errors, errors[1:]))
        assert max(row.scaled_error for row in rows) < 1.0
        assert rows[0].decay_exponent is None
        assert all(row.decay_exponent > 0 for row in rows[1:])

    @pytest.mark.parametrize("gamma", [0.4, 0.5])
    def test_F0_uses_shifted_second_order_term(self, gamma):
        """Test that the prediction at l = 2 is -C1 - (c^2/2)(2^(1-2 gamma) - 1)/(1 - 2 gamma)."""
        params = RateParams(gamma=gamma, q=0.5)
        consts = compute_asymptotic_constants(params)
        c = params.surface_ratio
        kappa = 1.0 - 2.0 * gamma
        shifted = math.log(2.0) if gamma == 0.5 else math.expm1(kappa * math.log(2.0)) / kappa
        expected = -consts.C1 - 0.5 * c * c * shifted
        assert asymptotic_log_scaled_Q(params, consts, 2) == pytest.approx(expected, rel=1e-12, abs=1e-14)

    def test_exact_log_scaled_Q_at_two(self, params):
        """Test that log(2^alpha z_s Q_2) = -log(1 + q/(z_s 2^gamma))."""
        assert exact_log_scaled_Q(params, 2) == pytest.approx(-math.log1p(2 ** -0.5))
