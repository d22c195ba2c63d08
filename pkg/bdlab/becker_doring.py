"""
Truncated Becker–Döring dynamics and its entropic gradient structure.

Cluster densities are stored 0-based: ``n[i]`` is the density of size
``l = i + 1``. Edge quantities (fluxes, Onsager weights, covector
increments) live on the edges l = 1..L-1; the closure J_L = 0 removes the
edge leaving the largest cluster.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Protocol, Union

import numpy as np

from bdlab.errors import MaskedGradientError
from bdlab.integrators import DormandPrince54, IntegrationStats, quadrature
from bdlab.rates import EquilibriumTable, rate_arrays
from bdlab.schemas import IntegratorControls, RateParams

logger = logging.getLogger(__name__)

# relative gap below which the logarithmic mean switches to its Taylor series
NEAR_EQUAL_REL = 1e-8
TINY = np.finfo(float).tiny

FluxVector = np.ndarray


@dataclass(frozen=True)
class ClusterState:
    """Nonnegative cluster densities n_1..n_L with L >= 3."""
    n: np.ndarray

    def __post_init__(self):
        n = np.array(self.n, dtype=float)
        if n.ndim != 1 or n.size < 3:
            raise ValueError(f"cluster state needs a 1-d array with L >= 3, got shape {n.shape}")
        if not np.all(np.isfinite(n)):
            raise ValueError("cluster densities must be finite")
        if np.any(n < 0):
            raise ValueError(f"cluster densities must be nonnegative (min {n.min():.3e})")
        n.setflags(write=False)
        object.__setattr__(self, "n", n)

    @property
    def L(self) -> int:
        return int(self.n.size)

    @property
    def sizes(self) -> np.ndarray:
        return np.arange(1, self.L + 1, dtype=float)


@dataclass(frozen=True)
class CovectorField:
    """
    Covector phi_1..phi_L.

    ``mask`` marks entries that are undefined (the energy gradient at
    vanishing densities); they may only meet zero Onsager weights.
    """
    phi: np.ndarray
    mask: Optional[np.ndarray] = None


def mass(state: ClusterState) -> float:
    """Total mass sum_l l n_l."""
    return float(np.dot(state.sizes, state.n))


def truncation_metric(state: ClusterState) -> float:
    """L n_L, the mass density at the truncation boundary."""
    return float(state.L * state.n[-1])


def fluxes(params: RateParams, state: ClusterState) -> FluxVector:
    """Net fluxes J_l = a_l n_1 n_l - b_{l+1} n_{l+1} for l = 1..L-1."""
    a, b = rate_arrays(params, state.L)
    n = state.n
    return a * n[0] * n[:-1] - b * n[1:]


def spread_edges(values: np.ndarray, L: int) -> np.ndarray:
    """sum_l c_l (e^1 + e^l - e^{l+1}) for edge values c_1..c_{L-1}."""
    out = np.zeros(L)
    out[0] += values.sum()
    out[:-1] += values
    out[1:] -= values
    return out


def rhs_from_fluxes(J: np.ndarray, L: int) -> np.ndarray:
    """dn_l/dt = J_{l-1} - J_l for l >= 2 and dn_1/dt = -J_1 - sum_l J_l."""
    return -spread_edges(J, L)


def bd_rhs(params: RateParams, state: ClusterState, time_scale: float = 1.0) -> np.ndarray:
    """Right-hand side of the truncated system, optionally multiplied by a time scale."""
    return time_scale * rhs_from_fluxes(fluxes(params, state), state.L)


def log_mean(a: Union[float, np.ndarray], b: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """
    Logarithmic mean (a - b)/(log a - log b), extended by Lambda(a, a) = a and 0 on the boundary.

    Nearly equal arguments use m (1 - r^2/12 - r^4/180) with m = (a + b)/2, r = (a - b)/m.
    """
    a_arr, b_arr = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    if np.any(a_arr < 0) or np.any(b_arr < 0):
        raise ValueError("logarithmic mean needs nonnegative arguments")
    out = np.zeros(a_arr.shape)
    pos = (a_arr > 0) & (b_arr > 0)
    ap, bp = a_arr[pos], b_arr[pos]
    d = ap - bp
    m = 0.5 * (ap + bp)
    r = d / m
    near = np.abs(d) <= NEAR_EQUAL_REL * (ap + bp)
    with np.errstate(divide="ignore", invalid="ignore"):
        moderate = (ap <= 2.0 * bp) & (bp <= 2.0 * ap)
        log_ratio = np.where(moderate, np.log1p(d / bp), np.log(ap) - np.log(bp))
        generic = d / log_ratio
    out[pos] = np.where(near, m * (1.0 - r * r / 12.0 - r ** 4 / 180.0), generic)
    return float(out) if out.ndim == 0 else out


def edge_weights(params: RateParams, state: ClusterState) -> np.ndarray:
    """
    Onsager weights k^l Lambda(n_1 n_l/(omega_1 omega_l), n_{l+1}/omega_{l+1}).

    By detailed balance and one-homogeneity of Lambda this equals
    Lambda(a_l n_1 n_l, b_{l+1} n_{l+1}); no equilibrium enters.
    """
    a, b = rate_arrays(params, state.L)
    n = state.n
    return np.asarray(log_mean(a * n[0] * n[:-1], b * n[1:]), dtype=float)


def edge_weight(params: RateParams, state: ClusterState, l: int) -> float:
    if not 1 <= l <= state.L - 1:
        raise ValueError(f"edge index l={l} outside 1..{state.L - 1}")
    return float(edge_weights(params, state)[l - 1])


def covector_increments(phi: Union[CovectorField, np.ndarray]) -> np.ndarray:
    """Discrete gradient nabla_l phi = phi_{l+1} - phi_l - phi_1 on the edges (NaN where masked)."""
    values = phi.phi if isinstance(phi, CovectorField) else np.asarray(phi, dtype=float)
    if isinstance(phi, CovectorField) and phi.mask is not None:
        values = np.where(phi.mask, np.nan, values)
    return values[1:] - values[:-1] - values[0]


def _weighted_increments(weights: np.ndarray, phi: Union[CovectorField, np.ndarray]) -> np.ndarray:
    increments = covector_increments(phi)
    if increments.size != weights.size:
        raise ValueError(f"covector of length {increments.size + 1} does not match L={weights.size + 1}")
    undefined = ~np.isfinite(increments)
    if np.any(undefined & (weights > 0)):
        edge = int(np.argmax(undefined & (weights > 0))) + 1
        raise MaskedGradientError(f"masked covector entry read against nonzero weight at edge l={edge}")
    return np.where(undefined, 0.0, increments)


def onsager_apply(params: RateParams, state: ClusterState,
                  phi: Union[CovectorField, np.ndarray]) -> np.ndarray:
    """
    Apply the Onsager operator K(n) to a covector.

    K(n) phi = -sum_l w_l (nabla_l phi)(e^1 + e^l - e^{l+1}) with the
    positive semidefinite sign, so that dn/dt = K(n)(-DF(n)) on solutions.
    """
    weights = edge_weights(params, state)
    increments = _weighted_increments(weights, phi)
    return -spread_edges(weights * increments, state.L)


def free_energy_terms(table: EquilibriumTable, state: ClusterState, z: Optional[float] = None) -> np.ndarray:
    """Per-size contributions omega_l psi(n_l/omega_l), psi(a) = a log a - a + 1, psi(0) = 1."""
    z = table.z if z is None else z
    log_omega = table.log_omega(z, state.L)
    omega = np.exp(log_omega)
    n = state.n
    positive = n > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(positive, n * (np.log(np.where(positive, n, 1.0)) - log_omega) - (n - omega), omega)
    return terms


def free_energy(table: EquilibriumTable, state: ClusterState, z: Optional[float] = None) -> float:
    """Relative entropy F_z(n) = sum_l omega_l(z) psi(n_l/omega_l(z))."""
    return float(np.sum(free_energy_terms(table, state, z)))


def energy_gradient(table: EquilibriumTable, state: ClusterState, z: Optional[float] = None) -> CovectorField:
    """DF_l = log(n_l/omega_l(z)); entries with n_l = 0 are masked."""
    z = table.z if z is None else z
    log_omega = table.log_omega(z, state.L)
    zero = state.n == 0
    with np.errstate(divide="ignore"):
        phi = np.where(zero, np.nan, np.log(np.where(zero, 1.0, state.n)) - log_omega)
    return CovectorField(phi=phi, mask=zero if np.any(zero) else None)


def dissipation_terms(params: RateParams, state: ClusterState) -> np.ndarray:
    """(x - y)(log x - log y) per edge with x = a_l n_1 n_l, y = b_{l+1} n_{l+1}; inf when exactly one vanishes."""
    a, b = rate_arrays(params, state.L)
    n = state.n
    x = a * n[0] * n[:-1]
    y = b * n[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = (x - y) * (np.log(x) - np.log(y))
    terms = np.where((x == 0) & (y == 0), 0.0, terms)
    return np.where((x == 0) ^ (y == 0), math.inf, terms)


def dissipation(params: RateParams, state: ClusterState) -> float:
    """Dissipation D(n) = sum_l (x - y)(log x - log y); returns inf rather than NaN."""
    return float(np.sum(dissipation_terms(params, state)))


def action_terms(params: RateParams, state: ClusterState, phi: Union[CovectorField, np.ndarray]) -> np.ndarray:
    weights = edge_weights(params, state)
    increments = _weighted_increments(weights, phi)
    return weights * increments * increments


def action(params: RateParams, state: ClusterState, phi: Union[CovectorField, np.ndarray]) -> float:
    """Action A(n, phi) = sum_l w_l |nabla_l phi|^2."""
    return float(np.sum(action_terms(params, state, phi)))


def gradient_flow_residual(params: RateParams, table: EquilibriumTable, state: ClusterState,
                           z: Optional[float] = None) -> float:
    """max norm of bd_rhs(n) + K(n) DF(n); defined on strictly positive states."""
    if np.any(state.n <= 0):
        raise ValueError("gradient-flow residual needs a strictly positive state")
    gradient = energy_gradient(table, state, z)
    return float(np.max(np.abs(bd_rhs(params, state) + onsager_apply(params, state, gradient))))


def regularized_dissipation(params: RateParams, n: np.ndarray) -> float:
    """
    Dissipation with exact zeros lifted to the smallest normal float.

    Used along integrated curves, where underflowed densities ahead of a
    front would otherwise make every sample infinite.
    """
    log_n = np.log(np.maximum(n, TINY))
    a, b = rate_arrays(params, log_n.size)
    log_x = np.log(a) + log_n[0] + log_n[:-1]
    log_y = np.log(b) + log_n[1:]
    return float(np.sum((np.exp(log_x) - np.exp(log_y)) * (log_x - log_y)))


class GradientSystem(Protocol):
    """
    Interface of a density system the integrator can drive.

    ``rhs`` and ``dissipation`` are rates on the integration clock, so that
    dF/dt = -dissipation along solutions.
    """

    def rhs(self, n: np.ndarray) -> np.ndarray: ...

    def energy(self, n: np.ndarray) -> float: ...

    def dissipation(self, n: np.ndarray) -> float: ...


@dataclass(frozen=True)
class BeckerDoringSystem:
    """Truncated Becker–Döring system with energy F_z, optionally on a rescaled clock."""
    params: RateParams
    table: EquilibriumTable
    z: Optional[float] = None
    time_scale: float = 1.0

    def rhs(self, n: np.ndarray) -> np.ndarray:
        a, b = rate_arrays(self.params, n.size)
        J = a * n[0] * n[:-1] - b * n[1:]
        return self.time_scale * rhs_from_fluxes(J, n.size)

    def energy(self, n: np.ndarray) -> float:
        return free_energy(self.table, ClusterState(n), self.z)

    def dissipation(self, n: np.ndarray) -> float:
        return self.time_scale * regularized_dissipation(self.params, n)


@dataclass
class CurveRecord:
    """
    Sampled curve t -> n(t) with optional covectors and per-sample scalars.

    Attributes:
        times: Strictly increasing sample times
        states: Densities, one row per sample
        F: Energy at each sample
        D: Dissipation rate on the curve's clock at each sample
        dissipated: Error-controlled running integral of D (solver output only)
        covectors: Optional covector per sample; -DF is implied when absent
        time_scale: Clock factor s of dn/dt = s K(n) phi
        truncation_metric: max over all accepted steps of L n_L
        stats: Integrator statistics when produced by a solver
        sample_indices: Rows that correspond to requested sample times
    """
    times: np.ndarray
    states: np.ndarray
    F: np.ndarray
    D: np.ndarray
    dissipated: Optional[np.ndarray] = None
    covectors: Optional[np.ndarray] = None
    time_scale: float = 1.0
    truncation_metric: float = 0.0
    stats: Optional[IntegrationStats] = None
    sample_indices: List[int] = field(default_factory=list)

    def __post_init__(self):
        if self.times.ndim != 1 or self.states.shape[0] != self.times.size:
            raise ValueError("times and states must have one row per sample")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("sample times must be strictly increasing")

    def state(self, index: int) -> ClusterState:
        return ClusterState(self.states[index])

    def with_covectors(self, covectors: np.ndarray) -> "CurveRecord":
        """Same samples paired with other covectors (the dissipated integral is kept)."""
        if covectors.shape != self.states.shape:
            raise ValueError("one covector per sample is required")
        return replace(self, covectors=np.asarray(covectors, dtype=float))

    def at_samples(self) -> "CurveRecord":
        """Restriction to the requested sample times."""
        idx = self.sample_indices or list(range(self.times.size))
        return replace(
            self, times=self.times[idx], states=self.states[idx], F=self.F[idx], D=self.D[idx],
            dissipated=None if self.dissipated is None else self.dissipated[idx],
            covectors=None if self.covectors is None else self.covectors[idx],
            sample_indices=list(range(len(idx))),
        )


def integrate_system(system: GradientSystem, state0: Union[ClusterState, np.ndarray], T: float, controls: IntegratorControls,
                     sample_times: Optional[List[float]] = None) -> CurveRecord:
    """
    Integrate a gradient system on densities together with its dissipated energy.

    The running integral of the dissipation is carried as an extra
    error-controlled component, so the energy–dissipation balance is
    resolved by the step control itself. A step is accepted only if the
    local error is within tolerance, no density falls below
    -negativity_slack * eps (small negatives are clamped to 0), and the
    energy does not increase beyond ``energy_slack``.
    """
    if T <= 0:
        raise ValueError(f"final time must be positive, got {T}")
    n0 = state0.n if isinstance(state0, ClusterState) else np.asarray(state0, dtype=float)
    L = n0.size
    F0 = system.energy(n0)
    atol = np.full(L + 1, controls.atol)
    atol[-1] = controls.rtol * max(1.0, abs(F0))
    eps = np.finfo(float).eps
    energy_cache = {"y": n0.copy(), "F": F0}

    def rhs(y: np.ndarray) -> np.ndarray:
        n = y[:-1]
        return np.append(system.rhs(n), system.dissipation(np.maximum(n, 0.0)))

    def project(y: np.ndarray, y_new: np.ndarray) -> Optional[np.ndarray]:
        floor = -controls.negativity_slack * eps * max(1.0, float(np.max(np.abs(y[:-1]))))
        if float(np.min(y_new[:-1])) < floor:
            return None
        out = y_new.copy()
        out[:-1] = np.maximum(out[:-1], 0.0)
        return out

    def admissible(y: np.ndarray, y_new: np.ndarray) -> Optional[str]:
        if np.array_equal(energy_cache["y"], y[:-1]):
            F_old = energy_cache["F"]
        else:
            F_old = system.energy(y[:-1])
        F_new = system.energy(y_new[:-1])
        if F_new > F_old + controls.energy_slack * (1.0 + abs(F_old)):
            return "energy"
        energy_cache["y"], energy_cache["F"] = y_new[:-1].copy(), F_new
        return None

    times: List[float] = []
    rows: List[np.ndarray] = []
    samples: List[int] = []
    boundary = {"max": 0.0, "count": 0}

    def observer(t: float, y: np.ndarray, is_sample: bool) -> None:
        boundary["max"] = max(boundary["max"], L * float(y[L - 1]))
        boundary["count"] += 1
        if is_sample or (boundary["count"] - 1) % controls.sample_stride == 0:
            times.append(t)
            rows.append(y.copy())
            if is_sample:
                samples.append(len(times) - 1)

    solver = DormandPrince54(rhs, controls, atol=atol, project=project, admissible=admissible)
    stats = solver.integrate(np.append(n0, 0.0), T, observer, () if sample_times is None else sample_times)
    augmented = np.vstack(rows)
    states = augmented[:, :-1]
    F = np.array([system.energy(row) for row in states])
    D = np.array([system.dissipation(row) for row in states])
    logger.info(
        "integration done T=%.6g accepted=%d rejected=%d truncation_metric=%.3e",
        T, stats.accepted, stats.rejected, boundary["max"],
    )
    if boundary["max"] > 1e-8:
        logger.warning("truncation boundary carries mass L*n_L=%.3e; consider a larger L", boundary["max"])
    return CurveRecord(
        times=np.array(times), states=states, F=F, D=D, dissipated=augmented[:, -1].copy(),
        time_scale=getattr(system, "time_scale", 1.0), truncation_metric=boundary["max"],
        stats=stats, sample_indices=samples,
    )


def integrate_bd(params: RateParams, table: EquilibriumTable, state0: ClusterState, T: float,
                 controls: IntegratorControls, z: Optional[float] = None, time_scale: float = 1.0,
                 sample_times: Optional[List[float]] = None) -> CurveRecord:
    """
    Integrate the truncated Becker–Döring system from ``state0`` up to ``T``.

    Raises:
        StepSizeUnderflowError: If the step size underflows ``controls.dt_min``
    """
    if state0.L > table.L:
        raise ValueError(f"state length {state0.L} exceeds table length {table.L}")
    system = BeckerDoringSystem(params=params, table=table, z=z, time_scale=time_scale)
    return integrate_system(system, state0, T, controls, sample_times)


@dataclass(frozen=True)
class JValue:
    """J-functional of a sampled curve and its ingredients."""
    value: float
    energy_change: float
    dissipation_integral: float
    action_integral: float
    quadrature_error: float

    @property
    def scale(self) -> float:
        """|Delta F| + int D dt, the natural size of J."""
        return abs(self.energy_change) + self.dissipation_integral


def curve_action(params: RateParams, curve: CurveRecord) -> np.ndarray:
    """
    Per-sample action rate on the curve's clock.

    Without recorded covectors the curve is solver output paired with -DF,
    whose action equals its dissipation.
    """
    if curve.covectors is None:
        return curve.D
    raw = [
        float(np.sum(action_terms(params, ClusterState(n), phi)))
        for n, phi in zip(curve.states, curve.covectors)
    ]
    return curve.time_scale * np.array(raw)


def curve_J(params: RateParams, table: EquilibriumTable, curve: CurveRecord, z: Optional[float] = None,
            method: str = "trapezoid") -> JValue:
    """
    J = F(T) - F(0) + 1/2 int D dt + 1/2 int A dt.

    The dissipation integral comes from the error-controlled running
    integral when the curve carries one; the action integral is sampled.
    For solver output without covectors both integrals coincide.
    """
    F = np.array([free_energy(table, ClusterState(n), z) for n in curve.states])
    delta_F = float(F[-1] - F[0])
    if curve.dissipated is not None:
        int_D, err_D = float(curve.dissipated[-1] - curve.dissipated[0]), 0.0
    else:
        int_D, err_D = quadrature(curve.times, curve.D, method)
    if curve.covectors is None:
        int_A, err_A = int_D, err_D
    else:
        int_A, err_A = quadrature(curve.times, curve_action(params, curve), method)
    return JValue(
        value=delta_F + 0.5 * int_D + 0.5 * int_A, energy_change=delta_F,
        dissipation_integral=int_D, action_integral=int_A, quadrature_error=0.5 * (err_D + err_A),
    )


def energy_dissipation_residual(curve: CurveRecord, method: str = "trapezoid") -> float:
    """F(T) - F(0) + int D dt along a recorded curve."""
    if curve.dissipated is not None:
        int_D = float(curve.dissipated[-1] - curve.dissipated[0])
    else:
        int_D, _ = quadrature(curve.times, curve.D, method)
    return float(curve.F[-1] - curve.F[0] + int_D)
