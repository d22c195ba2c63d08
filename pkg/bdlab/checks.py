"""
Invariant suite behind ``bdlab check``.

Every check draws its states from one seeded generator and records the
worst residual against a fixed bound in an ``InvariantReport``.
"""
import logging

import numpy as np

from bdlab.becker_doring import (
    ClusterState,
    bd_rhs,
    dissipation,
    free_energy,
    gradient_flow_residual,
    log_mean,
    onsager_apply,
)
from bdlab.networks import (
    ReactionNetwork,
    build_becker_doring_network,
    conservation_laws,
    modified_bd_residual,
    rn_dissipation,
    rn_free_energy,
    rn_onsager_apply,
    rn_rhs,
)
from bdlab.rates import detailed_balance_residual, equilibrium, partition_coeffs
from bdlab.schemas import InvariantReport, RateParams

logger = logging.getLogger(__name__)

GRADIENT_SIZES = (8, 64, 256)
GRADIENT_STATES = 100
GRADIENT_TOL = 1e-10
BALANCE_L = 10_000
BALANCE_TOL = 1e-12
LOG_MEAN_TOL = 1e-14
EQUIVALENCE_L = 32
EQUIVALENCE_STATES = 50
EQUIVALENCE_TOL = 1e-12
CONSERVATION_NETWORKS = 10
CONSERVATION_TOL = 1e-12
PSD_TOL = 1e-12


def _relative(residual: np.ndarray, reference: np.ndarray) -> float:
    return float(np.max(np.abs(residual))) / (1.0 + float(np.max(np.abs(reference))))


def _positive_state(rng: np.random.Generator, omega: np.ndarray) -> np.ndarray:
    return omega * np.exp(rng.standard_normal(omega.size))


def check_gradient_identity(report: InvariantReport, params: RateParams, rng: np.random.Generator) -> None:
    """bd_rhs(n) = -K(n) DF(n) and phi.K(n)phi >= 0 on random positive states."""
    for L in GRADIENT_SIZES:
        table = partition_coeffs(params, L)
        omega = equilibrium(table, params.z_s)
        worst = 0.0
        psd = 0.0
        for _ in range(GRADIENT_STATES):
            state = ClusterState(_positive_state(rng, omega))
            rhs = bd_rhs(params, state)
            worst = max(worst, gradient_flow_residual(params, table, state) / (1.0 + float(np.max(np.abs(rhs)))))
            phi = rng.standard_normal(L)
            quadratic = float(np.dot(phi, onsager_apply(params, state, phi)))
            psd = max(psd, max(0.0, -quadratic) / float(np.dot(phi, phi)))
        report.certify(f"gradient_identity[L={L}]", worst, GRADIENT_TOL)
        report.certify(f"onsager_psd[L={L}]", psd, PSD_TOL)


def check_detailed_balance(report: InvariantReport, params: RateParams) -> None:
    table = partition_coeffs(params, BALANCE_L)
    for fraction in np.linspace(0.2, 1.0, 5):
        z = float(fraction * params.z_s)
        report.certify(f"detailed_balance[z={z:.3g}]", detailed_balance_residual(table, z), BALANCE_TOL)


def check_log_mean(report: InvariantReport, rng: np.random.Generator) -> None:
    """sqrt(ab) <= Lambda(a, b) <= (a + b)/2 on log-uniform pairs, including near-equal ones."""
    a = np.exp(rng.uniform(-18.0, 18.0, 1000))
    b = np.concatenate([np.exp(rng.uniform(-18.0, 18.0, 500)), a[500:] * (1.0 + rng.uniform(-1e-6, 1e-6, 500))])
    lam = np.asarray(log_mean(a, b), dtype=float)
    lower = np.maximum(np.sqrt(a * b) - lam, 0.0) / lam
    upper = np.maximum(lam - 0.5 * (a + b), 0.0) / lam
    report.certify("log_mean_bounds", float(max(np.max(lower), np.max(upper))), LOG_MEAN_TOL)


def check_network_equivalence(report: InvariantReport, params: RateParams, rng: np.random.Generator) -> None:
    """The Becker–Döring chain as a network reproduces rhs, energy, dissipation and K."""
    table = partition_coeffs(params, EQUIVALENCE_L)
    net = build_becker_doring_network(params, table, EQUIVALENCE_L)
    omega = net.omega
    worst = {"rhs": 0.0, "energy": 0.0, "dissipation": 0.0, "onsager": 0.0}
    for _ in range(EQUIVALENCE_STATES):
        n = _positive_state(rng, omega)
        state = ClusterState(n)
        reference = bd_rhs(params, state)
        worst["rhs"] = max(worst["rhs"], _relative(rn_rhs(net, n) - reference, reference))
        F = free_energy(table, state, params.z_s)
        worst["energy"] = max(worst["energy"], abs(rn_free_energy(net, n) - F) / (1.0 + abs(F)))
        D = dissipation(params, state)
        worst["dissipation"] = max(worst["dissipation"], abs(rn_dissipation(net, n) - D) / (1.0 + abs(D)))
        phi = rng.standard_normal(n.size)
        K_phi = onsager_apply(params, state, phi)
        worst["onsager"] = max(worst["onsager"], _relative(rn_onsager_apply(net, n, phi) - K_phi, K_phi))
    for name, value in worst.items():
        report.certify(f"network_equivalence_{name}", value, EQUIVALENCE_TOL)


def random_balanced_network(rng: np.random.Generator) -> ReactionNetwork:
    """Small random network whose backward rates are chosen to satisfy detailed balance."""
    N = int(rng.integers(3, 6))
    R = int(rng.integers(2, 5))
    X = rng.integers(0, 3, size=(R, N))
    Y = rng.integers(0, 3, size=(R, N))
    same = np.all(X == Y, axis=1)
    Y[same, 0] = X[same, 0] + 1
    omega = np.exp(rng.standard_normal(N))
    k_plus = rng.uniform(0.5, 2.0, R)
    k_minus = k_plus * np.exp((X - Y) @ np.log(omega))
    return ReactionNetwork.from_rates(
        [f"S{i}" for i in range(N)], [f"r{j}" for j in range(R)], X, Y, omega, k_plus, k_minus,
    )


def check_conservation(report: InvariantReport, rng: np.random.Generator) -> None:
    """s.rn_rhs(n) vanishes for every computed conservation law s."""
    worst = 0.0
    for _ in range(CONSERVATION_NETWORKS):
        net = random_balanced_network(rng)
        laws = conservation_laws(net)
        if laws.shape[0] == 0:
            continue
        n = _positive_state(rng, net.omega)
        rhs = rn_rhs(net, n)
        scale = 1.0 + float(np.max(np.abs(laws))) * float(np.sum(np.abs(rhs)))
        worst = max(worst, float(np.max(np.abs(laws @ rhs))) / scale)
    report.certify("conservation_laws", worst, CONSERVATION_TOL)


def check_modified_identity(report: InvariantReport, params: RateParams, rng: np.random.Generator) -> None:
    for L in (8, 64):
        table = partition_coeffs(params, L)
        omega = equilibrium(table, params.z_s)
        worst = max(
            modified_bd_residual(params, table, _positive_state(rng, omega)) for _ in range(GRADIENT_STATES)
        )
        report.certify(f"modified_gradient_identity[L={L}]", worst, GRADIENT_TOL)


def run_invariant_checks(seed: int = 0, params: RateParams = RateParams()) -> InvariantReport:
    """
    Run the whole invariant suite.

    Args:
        seed: Seed of the generator shared by all checks
        params: Rate family the cluster checks are run on

    Returns:
        The report; ``passed`` is False when any residual exceeds its bound
    """
    rng = np.random.default_rng(seed)
    report = InvariantReport()
    check_gradient_identity(report, params, rng)
    check_detailed_balance(report, params)
    check_log_mean(report, rng)
    check_network_equivalence(report, params, rng)
    check_conservation(report, rng)
    check_modified_identity(report, params, rng)
    logger.info("invariant checks done passed=%s failures=%d", report.passed, len(report.failures))
    return report
