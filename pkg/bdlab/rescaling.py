"""
The eps-rescaling from Becker–Döring states to macroscopic measures.

Cluster sizes l >= l0 are mapped to atoms at lambda = eps l with mass
n_l / eps; sizes below l0 form the microscopic part, whose distance from the
quasistationary profile omega(n_1) is monitored by the functionals here.
Energies, actions and dissipations are scaled by z_s eps^-gamma and
z_s eps^-(1 - alpha + 2 gamma); the rescaled clock runs eps^-(1 - alpha + gamma)
times faster.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from bdlab.becker_doring import (
    ClusterState,
    CovectorField,
    CurveRecord,
    JValue,
    action_terms,
    covector_increments,
    curve_J,
    dissipation_terms,
    edge_weights,
    fluxes,
    free_energy_terms,
    mass,
)
from bdlab.lsw import ParticleEnsemble, first_moment
from bdlab.rates import EquilibriumTable, rate_arrays, saturation_mass
from bdlab.schemas import RateParams, RescaleParams

logger = logging.getLogger(__name__)

LSI_PREFACTOR = 480.0


def time_scale(params: RateParams, eps: float) -> float:
    """Clock factor eps^-(1 - alpha + gamma) of the rescaled dynamics."""
    return eps ** (-params.time_exponent)


def energy_scale(params: RateParams, eps: float) -> float:
    return params.z_s * eps ** (-params.gamma)


def dissipation_scale(params: RateParams, eps: float) -> float:
    return params.z_s * eps ** (-params.dissipation_exponent)


def _check_split(state: ClusterState, l0: int) -> None:
    if not 2 <= l0 <= state.L:
        raise ValueError(f"cutoff l0={l0} outside 2..L={state.L}")


def project_mac(state: ClusterState, eps: float, l0: int) -> ParticleEnsemble:
    """
    Empirical measure nu^eps with atoms (eps l, n_l / eps) for occupied sizes l >= l0.

    The first moment of the result equals sum_{l >= l0} l n_l.
    """
    _check_split(state, l0)
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    sizes = state.sizes[l0 - 1:]
    n = state.n[l0 - 1:]
    occupied = n > 0
    return ParticleEnsemble(eps * sizes[occupied], n[occupied] / eps)


@dataclass(frozen=True)
class EnergySplit:
    """
    Rescaled free energy split at l0.

    Attributes:
        F_mic: z_s eps^-gamma times the relative entropy over sizes l < l0
        F_mac: The same over sizes l >= l0
        F_lsw_l0: q/(z_s (1 - gamma)) sum_{l >= l0} l^(1-gamma) n_l, unscaled
        scale: z_s eps^-gamma
    """
    F_mic: float
    F_mac: float
    F_lsw_l0: float
    scale: float

    @property
    def F_total(self) -> float:
        return self.F_mic + self.F_mac

    @property
    def lsw_ratio(self) -> float:
        """F_mac / (z_s eps^-gamma F_lsw_l0); tends to 1 for macroscopic profiles."""
        reference = self.scale * self.F_lsw_l0
        return math.nan if reference == 0 else self.F_mac / reference


def rescaled_energies(params: RateParams, table: EquilibriumTable, state: ClusterState,
                      rp: RescaleParams) -> EnergySplit:
    """Microscopic and macroscopic parts of F^eps(n) = z_s eps^-gamma F_{z_s}(n)."""
    l0 = rp.l0
    _check_split(state, l0)
    terms = free_energy_terms(table, state, params.z_s)
    scale = energy_scale(params, rp.eps)
    sizes = state.sizes[l0 - 1:]
    lsw = params.q / (params.z_s * (1.0 - params.gamma)) * float(np.dot(sizes ** (1.0 - params.gamma), state.n[l0 - 1:]))
    return EnergySplit(
        F_mic=scale * float(np.sum(terms[:l0 - 1])),
        F_mac=scale * float(np.sum(terms[l0 - 1:])),
        F_lsw_l0=lsw,
        scale=scale,
    )


def monomer_excess(params: RateParams, state: ClusterState, eps: float) -> float:
    """h^eps = (n_1 - z_s) / eps^gamma."""
    return (state.n[0] - params.z_s) / eps ** params.gamma


def macroscopic_u_eps(params: RateParams, state: ClusterState, eps: float, l0: int,
                      omit_z_s: bool = False) -> float:
    """
    Supersaturation of the macroscopic clusters.

    u^eps = sum_{l >= l0} (b_{l+1} n_{l+1} - z_s a_l n_l) / (eps^gamma sum_{l >= l0} a_l n_l),
    summed over the edges l0..L-1. ``omit_z_s`` drops the factor z_s
    from the numerator.

    Raises:
        ValueError: If no macroscopic cluster is occupied
    """
    _check_split(state, l0)
    a, b = rate_arrays(params, state.L)
    n = state.n
    growth = a[l0 - 1:] * n[l0 - 1:-1]
    shrink = b[l0 - 1:] * n[l0:]
    denominator = float(np.sum(growth))
    if denominator <= 0:
        raise ValueError(f"no occupied macroscopic cluster between l0={l0} and L-1={state.L - 1}")
    factor = 1.0 if omit_z_s else params.z_s
    return float(np.sum(shrink) - factor * denominator) / (eps ** params.gamma * denominator)


@dataclass(frozen=True)
class DissipationSplit:
    """Rescaled action and dissipation with the dissipation split at l0."""
    A: float
    D: float
    D_mic: float
    D_mac: float


def rescaled_action_dissipation(params: RateParams, state: ClusterState,
                                phi: Optional[Union[CovectorField, np.ndarray]],
                                rp: RescaleParams) -> DissipationSplit:
    """
    A^eps(n, phi) and D^eps(n) scaled by z_s eps^-(1 - alpha + 2 gamma).

    D_mic sums the edges l = 1..l0-1 and D_mac the edges l >= l0. Without a
    covector the action is evaluated at the solution covector, where it
    equals the dissipation.
    """
    l0 = rp.l0
    _check_split(state, l0)
    scale = dissipation_scale(params, rp.eps)
    terms = dissipation_terms(params, state)
    D_mic = scale * float(np.sum(terms[:l0 - 1]))
    D_mac = scale * float(np.sum(terms[l0 - 1:]))
    D = D_mic + D_mac
    A = D if phi is None else scale * float(np.sum(action_terms(params, state, phi)))
    return DissipationSplit(A=A, D=D, D_mic=D_mic, D_mac=D_mac)


def rescaled_covector(params: RateParams, phi: Union[CovectorField, np.ndarray], eps: float) -> np.ndarray:
    """Macroscopic velocity potential w^eps(eps l) = z_s eps^-gamma nabla_l phi on the edges."""
    return energy_scale(params, eps) * covector_increments(phi)


def quasistationary_entropy(table: EquilibriumTable, state: ClusterState, l0: int) -> float:
    """H_mic(n | omega(n_1)) = sum_{l < l0} omega_l(n_1) psi(n_l / omega_l(n_1))."""
    _check_split(state, l0)
    n1 = state.n[0]
    if n1 <= 0:
        raise ValueError("quasistationary profile needs n_1 > 0")
    log_omega = table.log_omega_formal(n1, l0 - 1)
    omega = np.exp(log_omega)
    n = state.n[:l0 - 1]
    positive = n > 0
    with np.errstate(divide="ignore"):
        log_n = np.log(np.where(positive, n, 1.0))
    terms = np.where(positive, n * (log_n - log_omega) - n + omega, omega)
    return float(np.sum(terms))


def sqrt_dissipation_lower_bound(params: RateParams, state: ClusterState, l0: int) -> float:
    """
    4 sum_{l < l0} (sqrt(a_l n_1 n_l) - sqrt(b_{l+1} n_{l+1}))^2.

    Equal to the bound 4 sum a_l n_1 omega_l (sqrt(n_l/omega_l) - sqrt(n_{l+1}/omega_{l+1}))^2
    at z = n_1 by detailed balance; never exceeds the microscopic dissipation.
    """
    _check_split(state, l0)
    a, b = rate_arrays(params, state.L)
    n = state.n
    edges = slice(0, l0 - 1)
    x = a[edges] * n[0] * n[:-1][edges]
    y = b[edges] * n[1:][edges]
    return 4.0 * float(np.sum((np.sqrt(x) - np.sqrt(y)) ** 2))


@dataclass(frozen=True)
class PinskerDiagnostics:
    """
    Monitored quantities of the Csiszar–Pinsker estimates.

    Attributes:
        weighted_l1_ratio: sum l^(1-gamma) |n_l - omega_l| / sqrt(F(n))
        excess_mass_residual: |sum_{l >= l0} l n_l - (rho - rho_s)|
        degenerate: True when F(n) = 0 and the ratio was set to 0
    """
    weighted_l1_ratio: float
    excess_mass_residual: float
    degenerate: bool = False


def csiszar_pinsker_diagnostics(table: EquilibriumTable, state: ClusterState, l0: int,
                                rho_s: Optional[float] = None) -> PinskerDiagnostics:
    params = table.params
    _check_split(state, l0)
    omega = np.exp(table.log_omega(params.z_s, state.L))
    F = float(np.sum(free_energy_terms(table, state, params.z_s)))
    weighted = float(np.dot(state.sizes ** (1.0 - params.gamma), np.abs(state.n - omega)))
    degenerate = F <= 0.0
    ratio = 0.0 if degenerate else weighted / math.sqrt(F)
    if degenerate and weighted > 0:
        logger.warning("Pinsker ratio with F(n)=0 but weighted l1 distance %.3e", weighted)
    rho_s = saturation_mass(params) if rho_s is None else rho_s
    macro = float(np.dot(state.sizes[l0 - 1:], state.n[l0 - 1:]))
    return PinskerDiagnostics(
        weighted_l1_ratio=ratio,
        excess_mass_residual=abs(macro - (mass(state) - rho_s)),
        degenerate=degenerate,
    )


@dataclass(frozen=True)
class LSIBound:
    """Certified upper bounds of the log-Sobolev and energy–dissipation constants."""
    c_lsi: float
    c_eed: float


def lsi_bound(params: RateParams, table: EquilibriumTable, state: ClusterState, l0: int) -> LSIBound:
    """
    C_LSI <= 480 sup_{1 < l < l0} W_l log(W_1/W_l) V_l at z = n_1, and the induced C_EED.

    W_l = sum_{j=l}^{l0-1} omega_j(z) and V_l = sum_{j<l} 1/(a_j omega_j(z)) are
    accumulated in log space. C_EED = C_LSI (n_1^2 + 2 sum_{l<l0} n_l sum_{l<l0} omega_l) / n_1^2.
    """
    _check_split(state, l0)
    if l0 < 3:
        raise ValueError(f"log-Sobolev bound needs l0 >= 3, got {l0}")
    n1 = float(state.n[0])
    if n1 <= 0:
        raise ValueError("log-Sobolev bound needs n_1 > 0")
    a, _ = rate_arrays(params, max(l0, 2))
    log_omega = table.log_omega_formal(n1, l0 - 1)
    log_W = np.logaddexp.accumulate(log_omega[::-1])[::-1]
    log_V = np.logaddexp.accumulate(-np.log(a[:l0 - 2]) - log_omega[:l0 - 2])
    # index k <-> l = k + 2 for l = 2..l0-1
    gap = log_W[0] - log_W[1:]
    products = np.exp(log_W[1:] + log_V) * gap
    c_lsi = LSI_PREFACTOR * float(np.max(products))
    micro_mass = float(np.sum(state.n[:l0 - 1]))
    micro_omega = float(np.exp(log_W[0]))
    c_eed = c_lsi * (n1 * n1 + 2.0 * micro_mass * micro_omega) / (n1 * n1)
    return LSIBound(c_lsi=c_lsi, c_eed=c_eed)


def quasistationary_certificate(params: RateParams, table: EquilibriumTable, state: ClusterState,
                                l0: int) -> Tuple[float, float]:
    """
    Both sides of H_mic(n | omega(n_1)) <= C_EED D_bar_mic(n).

    For l0 = 2 the microscopic range is the monomer alone and both sides vanish.
    """
    H = quasistationary_entropy(table, state, l0)
    if l0 < 3:
        return H, 0.0
    bound = lsi_bound(params, table, state, l0)
    return H, bound.c_eed * sqrt_dissipation_lower_bound(params, state, l0)


def monomer_macro_inequality(params: RateParams, state: ClusterState, l0: int) -> Tuple[float, float]:
    """
    Both sides of (u - h) log((1 + u)/(1 + h)) <= D_mac(n) / A(z_s).

    h = (n_1 - z_s)/z_s, A(z) = sum_{l >= l0} a_l z n_l, B = sum_{l >= l0} b_{l+1} n_{l+1}
    and u = (B - A(z_s))/A(z_s).
    """
    _check_split(state, l0)
    a, b = rate_arrays(params, state.L)
    n = state.n
    A = params.z_s * float(np.sum(a[l0 - 1:] * n[l0 - 1:-1]))
    if A <= 0:
        raise ValueError(f"no occupied macroscopic cluster between l0={l0} and L-1={state.L - 1}")
    B = float(np.sum(b[l0 - 1:] * n[l0:]))
    h = (n[0] - params.z_s) / params.z_s
    u = (B - A) / A
    lhs = (u - h) * (math.log1p(u) - math.log1p(h)) if n[0] > 0 and B > 0 else math.inf
    D_mac = float(np.sum(dissipation_terms(params, state)[l0 - 1:]))
    return lhs, D_mac / A


def excess_mass_residual(params: RateParams, state: ClusterState, eps: float, l0: int,
                         rho_s: Optional[float] = None) -> float:
    """|first moment of nu^eps - (rho - rho_s)|."""
    rho_s = saturation_mass(params) if rho_s is None else rho_s
    return abs(first_moment(project_mac(state, eps, l0)) - (mass(state) - rho_s))


@dataclass(frozen=True)
class FluxMeasure:
    """Signed atoms at lambda = eps l on the macroscopic edges l = l0..L-1."""
    lam: np.ndarray
    weights: np.ndarray


def rescaled_flux_measures(params: RateParams, state: ClusterState, phi: Union[CovectorField, np.ndarray],
                           eps: float, l0: int) -> Tuple[FluxMeasure, FluxMeasure]:
    """
    Flux measure of a covector and the dissipation flux measure.

    mu^eps carries eps^-(1 - alpha + gamma) w_l nabla_l phi and mu_hat^eps carries
    eps^-(1 - alpha + gamma) (a_l n_1 n_l - b_{l+1} n_{l+1}); they coincide for phi = -DF.
    """
    _check_split(state, l0)
    scale = time_scale(params, eps)
    lam = eps * np.arange(l0, state.L, dtype=float)
    weights = edge_weights(params, state)[l0 - 1:]
    increments = covector_increments(phi)[l0 - 1:]
    flux_phi = np.where(weights > 0, weights * np.nan_to_num(increments), 0.0)
    mu = FluxMeasure(lam=lam, weights=scale * flux_phi)
    mu_hat = FluxMeasure(lam=lam.copy(), weights=scale * fluxes(params, state)[l0 - 1:])
    return mu, mu_hat


def _continuity_rate(params: RateParams, state: ClusterState, eps: float, l0: int) -> np.ndarray:
    """-d^eps_lambda mu_hat at the atoms l = l0+1..L-1 (backward differences)."""
    _, mu_hat = rescaled_flux_measures(params, state, np.zeros(state.L), eps, l0)
    return -np.diff(mu_hat.weights) / eps


def discrete_continuity_residual(params: RateParams, curve: CurveRecord, eps: float, l0: int) -> float:
    """
    Relative residual of d/dt nu^eps + d^eps_lambda mu^eps = 0 between consecutive samples.

    The time derivative of the atom masses n_l/eps is a forward difference;
    the flux divergence is averaged over both ends (trapezoid). Only atoms
    l0 < l < L, whose incoming and outgoing edges are both macroscopic, enter.
    """
    worst = 0.0
    scale = 0.0
    rates = [_continuity_rate(params, curve.state(i), eps, l0) for i in range(curve.times.size)]
    for i in range(curve.times.size - 1):
        dt = curve.times[i + 1] - curve.times[i]
        change = (curve.states[i + 1, l0:-1] - curve.states[i, l0:-1]) / eps
        predicted = 0.5 * dt * (rates[i] + rates[i + 1])
        worst = max(worst, float(np.max(np.abs(change - predicted), initial=0.0)))
        scale = max(scale, float(np.max(np.abs(change), initial=0.0)))
    return 0.0 if scale == 0 else worst / scale


def curve_J_eps(params: RateParams, table: EquilibriumTable, curve: CurveRecord, eps: float,
                method: str = "trapezoid") -> JValue:
    """
    J^eps = F^eps(T) - F^eps(0) + 1/2 int D^eps dt + 1/2 int A^eps dt on the rescaled clock.

    The curve must be recorded on the rescaled clock (time_scale eps^-(1 - alpha + gamma));
    every term is then z_s eps^-gamma times its unscaled counterpart.
    """
    expected = time_scale(params, eps)
    if not math.isclose(curve.time_scale, expected, rel_tol=1e-12):
        raise ValueError(f"curve clock {curve.time_scale:.6g} does not match eps^-(1-alpha+gamma)={expected:.6g}")
    raw = curve_J(params, table, curve, params.z_s, method)
    s = energy_scale(params, eps)
    return JValue(
        value=s * raw.value, energy_change=s * raw.energy_change,
        dissipation_integral=s * raw.dissipation_integral, action_integral=s * raw.action_integral,
        quadrature_error=s * raw.quadrature_error,
    )
