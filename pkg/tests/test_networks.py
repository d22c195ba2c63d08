"""
Unit tests for reaction networks, their conservation laws and the modified chain.
"""
import math

import numpy as np
import pytest

from bdlab.becker_doring import ClusterState, bd_rhs, dissipation, free_energy
from bdlab.errors import DetailedBalanceError, NetworkFormatError
from bdlab.networks import (
    ReactionNetwork,
    build_becker_doring_network,
    build_smoluchowski,
    conservation_laws,
    load_network,
    modified_bd_dissipation,
    modified_bd_energy,
    modified_bd_residual,
    modified_bd_rhs,
    rn_dissipation,
    rn_free_energy,
    rn_gradient_residual,
    rn_rhs,
)
from bdlab.rates import equilibrium, partition_coeffs

BINDING = """
[species]
names = A, B, C

[omega]
A = 1.0
B = 2.0
C = 1.0

[reaction.bind]
reactants = A + B
products = C
k_plus = 1.0
k_minus = 2.0

[reaction.dimer]
reactants = 2 A
products = B
k_plus = 3.0
k_minus = 1.5
"""


@pytest.fixture
def network_file(tmp_path):
    path = tmp_path / "binding.ini"
    path.write_text(BINDING)
    return path


class TestBeckerDoringNetwork:
    """Test suite for the Becker–Döring chain written as a network."""

    @pytest.fixture
    def bd_net(self, params):
        table = partition_coeffs(params, 16)
        return table, build_becker_doring_network(params, table, 16)

    def test_matches_chain(self, params, bd_net, rng):
        """Test that rhs, energy and dissipation agree with the chain to roundoff."""
        table, net = bd_net
        omega = equilibrium(table, params.z_s)
        for _ in range(10):
            n = omega * np.exp(rng.standard_normal(16))
            state = ClusterState(n)
            rhs = bd_rhs(params, state)
            assert np.max(np.abs(rn_rhs(net, n) - rhs)) <= 1e-12 * (1.0 + np.max(np.abs(rhs)))
            assert rn_free_energy(net, n) == pytest.approx(free_energy(table, state), rel=1e-12)
            assert rn_dissipation(net, n) == pytest.approx(dissipation(params, state), rel=1e-10)

    def test_mass_is_the_only_conservation_law(self, bd_net):
        """Test that the conserved vectors are spanned by (1, 2, ..., L)."""
        _, net = bd_net
        laws = conservation_laws(net)
        assert laws.shape == (1, 16)
        np.testing.assert_array_equal(np.abs(laws[0]), np.arange(1, 17))

    def test_short_chain_rejected(self, params, table):
        """Test that L < 3 is rejected."""
        with pytest.raises(ValueError, match="L >= 3"):
            build_becker_doring_network(params, table, 2)


class TestReactionNetwork:
    """Test suite for generic networks."""

    def test_gradient_identity(self, network_file, rng):
        """Test rn_rhs(n) = -K(n) DF(n) on positive states."""
        net = load_network(network_file)
        for _ in range(10):
            n = net.omega * np.exp(rng.standard_normal(net.n_species))
            assert rn_gradient_residual(net, n) <= 1e-12

    def test_conservation_laws_are_integer(self, network_file):
        """Test a coprime integer basis of dimension N - rank(S)."""
        net = load_network(network_file)
        laws = conservation_laws(net)
        assert laws.shape == (1, 3)
        law = laws[0] * np.sign(laws[0][0])
        np.testing.assert_array_equal(law, [1.0, 2.0, 3.0])
        assert np.all(laws @ net.stoichiometry.T == 0)

    def test_conserved_along_rhs(self, network_file, rng):
        """Test s . rn_rhs(n) = 0."""
        net = load_network(network_file)
        laws = conservation_laws(net)
        n = net.omega * np.exp(rng.standard_normal(3))
        assert np.max(np.abs(laws @ rn_rhs(net, n))) <= 1e-12

    def test_equilibrium_has_zero_energy(self, network_file):
        """Test F(omega) = 0 and a stationary right-hand side."""
        net = load_network(network_file)
        assert rn_free_energy(net, net.omega) == pytest.approx(0.0, abs=1e-14)
        assert np.max(np.abs(rn_rhs(net, net.omega))) <= 1e-14

    def test_one_sided_zero_gives_infinite_dissipation(self, network_file):
        """Test that D = inf when a reaction has exactly one vanishing side."""
        net = load_network(network_file)
        assert rn_dissipation(net, np.array([1.0, 0.0, 1.0])) == math.inf

    def test_identical_sides_rejected(self):
        """Test that a reaction x -> x is rejected."""
        X = np.array([[1, 0]])
        with pytest.raises(ValueError, match="identical sides"):
            ReactionNetwork(("A", "B"), ("noop",), X, X.copy(), np.zeros(2), np.ones(1))

    def test_detailed_balance_violation(self):
        """Test that unbalanced rates raise DetailedBalanceError."""
        with pytest.raises(DetailedBalanceError, match="bind"):
            ReactionNetwork.from_rates(
                ["A", "B"], ["bind"], np.array([[2, 0]]), np.array([[0, 1]]),
                np.array([1.0, 1.0]), np.array([1.0]), np.array([2.0]),
            )


class TestSmoluchowski:
    """Test suite for the coagulation–fragmentation builder."""

    def test_constant_kernel(self):
        """Test a balanced constant kernel with omega_i = 2^-i."""
        N_max = 6
        omega = 0.5 ** np.arange(1, N_max + 1)
        a = np.ones((N_max, N_max))
        net = build_smoluchowski(a, np.ones((N_max, N_max)), omega, N_max)
        assert net.n_reactions == 9
        laws = conservation_laws(net)
        np.testing.assert_array_equal(np.abs(laws[0]), np.arange(1, N_max + 1))

    def test_pairs_merge_into_one_cluster(self):
        """Test that each reaction consumes C_i and C_j and produces one C_{i+j}."""
        N_max = 4
        omega = 0.5 ** np.arange(1, N_max + 1)
        net = build_smoluchowski(np.ones((N_max, N_max)), np.ones((N_max, N_max)), omega, N_max)
        assert net.reactions == ("coag1_1", "coag1_2", "coag1_3", "coag2_2")
        index = net.reactions.index("coag1_2")
        np.testing.assert_array_equal(net.X[index], [1, 1, 0, 0])
        np.testing.assert_array_equal(net.Y[index], [0, 0, 1, 0])
        np.testing.assert_array_equal(net.X[net.reactions.index("coag1_1")], [2, 0, 0, 0])

    def test_unbalanced_kernel_rejected(self):
        """Test that b_ij != a_ij omega_i omega_j / omega_{i+j} raises."""
        omega = 0.5 ** np.arange(1, 5)
        with pytest.raises(DetailedBalanceError):
            build_smoluchowski(np.ones((4, 4)), 2.0 * np.ones((4, 4)), omega, 4)

    def test_wrong_reference_length(self):
        """Test that omega must have N_max entries."""
        with pytest.raises(ValueError, match="N_max=4"):
            build_smoluchowski(np.ones((4, 4)), np.ones((4, 4)), np.ones(3), 4)


class TestLoadNetwork:
    """Test suite for the network file reader."""

    def test_parses_reactions(self, network_file):
        """Test species, coefficients and equilibrium fluxes."""
        net = load_network(network_file)
        assert net.species == ("A", "B", "C")
        assert net.reactions == ("bind", "dimer")
        np.testing.assert_array_equal(net.X, [[1, 1, 0], [2, 0, 0]])
        np.testing.assert_array_equal(net.Y, [[0, 0, 1], [0, 1, 0]])
        np.testing.assert_allclose(net.k, [2.0, 3.0])

    def test_missing_file(self, tmp_path):
        """Test that a missing file raises NetworkFormatError."""
        with pytest.raises(NetworkFormatError):
            load_network(tmp_path / "absent.ini")

    def test_unknown_species(self, tmp_path):
        """Test that a reaction naming an undeclared species is rejected."""
        path = tmp_path / "bad.ini"
        path.write_text(BINDING.replace("products = C", "products = D"))
        with pytest.raises(NetworkFormatError, match="unknown species 'D'"):
            load_network(path)

    def test_missing_omega(self, tmp_path):
        """Test that the [omega] section is required."""
        path = tmp_path / "bad.ini"
        path.write_text("[species]\nnames = A\n[reaction.r]\nreactants = A\nproducts = 0\nk_plus = 1\nk_minus = 1\n")
        with pytest.raises(NetworkFormatError, match=r"missing \[omega\]"):
            load_network(path)

    def test_missing_rate(self, tmp_path):
        """Test that every reaction needs both rate constants."""
        path = tmp_path / "bad.ini"
        path.write_text(BINDING.replace("k_minus = 1.5\n", ""))
        with pytest.raises(NetworkFormatError, match="k_minus"):
            load_network(path)

    def test_unbalanced_file(self, tmp_path):
        """Test that a file with unbalanced rates raises DetailedBalanceError."""
        path = tmp_path / "bad.ini"
        path.write_text(BINDING.replace("k_minus = 2.0", "k_minus = 5.0"))
        with pytest.raises(DetailedBalanceError, match="bind"):
            load_network(path)


class TestModifiedBeckerDoring:
    """Test suite for the total-number dependent chain."""

    @pytest.mark.parametrize("L", [8, 64])
    def test_gradient_identity(self, params, rng, L):
        """Test rhs = -K~ DF~ on positive states."""
        table = partition_coeffs(params, L)
        omega = equilibrium(table, params.z_s)
        for _ in range(10):
            n = omega * np.exp(rng.standard_normal(L))
            assert modified_bd_residual(params, table, n) <= 1e-10

    def test_mass_conserved(self, params, rng):
        """Test sum_l l dn_l/dt = 0."""
        n = np.exp(rng.standard_normal(8))
        rhs = modified_bd_rhs(params, n)
        assert abs(float(np.dot(np.arange(1, 9), rhs))) <= 1e-12 * (1.0 + np.max(np.abs(rhs)))

    def test_dissipation_nonnegative(self, params, rng):
        """Test D~ >= 0, also on states with zeros."""
        assert modified_bd_dissipation(params, np.exp(rng.standard_normal(8))) >= 0
        assert modified_bd_dissipation(params, np.array([1.0, 0.0, 0.0, 0.0])) >= 0

    def test_energy_needs_mass(self, table):
        """Test that F~ is undefined at N(n) = 0."""
        with pytest.raises(ValueError, match="N\\(n\\) > 0"):
            modified_bd_energy(table, np.zeros(4))
