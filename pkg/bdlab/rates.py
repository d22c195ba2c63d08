"""
Rate functions, partition coefficients and the equilibrium family.

Partition coefficients Q_l and equilibria omega_l(z) = z^l Q_l are kept in
log space throughout; they underflow long before the truncation lengths used
by the solvers.
"""
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy import integrate, optimize, special

from bdlab.errors import ConvergenceError
from bdlab.schemas import RateParams

logger = logging.getLogger(__name__)

ArrayLike = Union[int, float, np.ndarray]

# gamma == 1/2 switches the second-order term of the expansion to log l
GAMMA_LOG_BRANCH = 0.5
SATURATION_START_L = 64
MAX_SATURATION_L = 2 ** 22
BISECTION_MAX_ITER = 200


def _as_output(values: np.ndarray) -> Union[float, np.ndarray]:
    return float(values) if values.ndim == 0 else values


def coag_rate(params: RateParams, l: ArrayLike) -> Union[float, np.ndarray]:
    """Coagulation rate a_l = l^alpha for l >= 1."""
    sizes = np.asarray(l, dtype=float)
    if np.any(sizes < 1):
        raise ValueError(f"coagulation rate needs l >= 1, got {l}")
    return _as_output(sizes ** params.alpha)


def frag_rate(params: RateParams, l: ArrayLike) -> Union[float, np.ndarray]:
    """Fragmentation rate b_l = l^alpha (z_s + q l^-gamma) for l >= 2."""
    sizes = np.asarray(l, dtype=float)
    if np.any(sizes < 2):
        raise ValueError(f"fragmentation rate is defined for l >= 2, got {l}")
    return _as_output(sizes ** params.alpha * (params.z_s + params.q * sizes ** (-params.gamma)))


def log_frag_rate(params: RateParams, sizes: np.ndarray) -> np.ndarray:
    """log b_l written as alpha log l + log z_s + log1p(q/(z_s l^gamma))."""
    sizes = np.asarray(sizes, dtype=float)
    return (
        params.alpha * np.log(sizes)
        + math.log(params.z_s)
        + np.log1p(params.surface_ratio * sizes ** (-params.gamma))
    )


@lru_cache(maxsize=64)
def rate_arrays(params: RateParams, L: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Edge rates of a chain truncated at L.

    Returns:
        (a, b) with a[i] = a_{i+1} and b[i] = b_{i+2} for the edges l = 1..L-1.
        Both arrays are read-only.
    """
    if L < 2:
        raise ValueError(f"truncation length must be >= 2, got {L}")
    edges = np.arange(1, L, dtype=float)
    a = edges ** params.alpha
    b = (edges + 1.0) ** params.alpha * (params.z_s + params.q * (edges + 1.0) ** (-params.gamma))
    a.setflags(write=False)
    b.setflags(write=False)
    return a, b


@dataclass(frozen=True)
class EquilibriumTable:
    """
    Log partition coefficients log Q_1..log Q_L together with their rates.

    Attributes:
        params: Rate family the table was built from
        log_Q: log Q_l at index l - 1 (log Q_1 = 0)
        z: Reference fugacity of the table, the saturation value z_s
    """
    params: RateParams
    log_Q: np.ndarray
    z: float

    @property
    def L(self) -> int:
        return int(self.log_Q.size)

    @property
    def sizes(self) -> np.ndarray:
        return np.arange(1, self.L + 1, dtype=float)

    def log_omega(self, z: Optional[float] = None, L: Optional[int] = None) -> np.ndarray:
        """log omega_l(z) for l = 1..L; z must lie in (0, z_s]."""
        z = self.z if z is None else z
        check_fugacity(self.params, z)
        return self.log_omega_formal(z, L)

    def log_omega_formal(self, z: float, L: Optional[int] = None) -> np.ndarray:
        """
        log(z^l Q_l) without the saturation check.

        Used for the quasistationary profiles omega(n_1), where n_1 may exceed z_s.
        """
        if z <= 0:
            raise ValueError(f"fugacity must be positive, got {z}")
        L = self.L if L is None else L
        if L > self.L:
            raise ValueError(f"requested L={L} exceeds table length {self.L}")
        return self.sizes[:L] * math.log(z) + self.log_Q[:L]


def check_fugacity(params: RateParams, z: float) -> None:
    if not (0.0 < z <= params.z_s):
        raise ValueError(f"fugacity z={z} outside (0, z_s={params.z_s}]")


def partition_coeffs(params: RateParams, L: int) -> EquilibriumTable:
    """
    Build log Q_l = sum_{j<l} (log a_j - log b_{j+1}) for l = 1..L.

    The table's reference fugacity is z_s.
    """
    if L < 1:
        raise ValueError(f"truncation length must be >= 1, got {L}")
    j = np.arange(1, L, dtype=float)
    increments = params.alpha * np.log(j) - log_frag_rate(params, j + 1.0)
    log_Q = np.concatenate(([0.0], np.cumsum(increments)))
    if not np.all(np.isfinite(log_Q)):
        raise ConvergenceError(f"non-finite partition coefficient below L={L}")
    log_Q.setflags(write=False)
    return EquilibriumTable(params=params, log_Q=log_Q, z=params.z_s)


def equilibrium(table: EquilibriumTable, z: float, L: Optional[int] = None) -> np.ndarray:
    """Equilibrium densities omega_l(z) = z^l Q_l for l = 1..L."""
    return np.exp(table.log_omega(z, L))


def detailed_balance_residual(table: EquilibriumTable, z: float) -> float:
    """
    max_l |a_l omega_1 omega_l - b_{l+1} omega_{l+1}| relative to max_l omega_l.

    Both sides are formed in log space; the result is pure roundoff.
    """
    log_omega = table.log_omega(z)
    sizes = table.sizes
    lhs = table.params.alpha * np.log(sizes[:-1]) + log_omega[0] + log_omega[:-1]
    rhs = log_frag_rate(table.params, sizes[1:]) + log_omega[1:]
    log_scale = float(np.max(log_omega))
    top = np.maximum(lhs, rhs) - log_scale
    residual = np.exp(top) * -np.expm1(-np.abs(lhs - rhs))
    return float(np.max(residual)) if residual.size else 0.0


def mass_function(table: EquilibriumTable, z: float) -> float:
    """Truncated mass sum_{l<=L} l omega_l(z)."""
    log_omega = table.log_omega_formal(z)
    return float(np.exp(special.logsumexp(np.log(table.sizes) + log_omega)))


def _log_scaled_partial(params: RateParams, L: int) -> np.ndarray:
    """S_l = log(l^alpha z_s^(l-1) Q_l) for l = 1..L."""
    j = np.arange(2, L + 1, dtype=float)
    return np.concatenate(([0.0], -np.cumsum(np.log1p(params.surface_ratio * j ** (-params.gamma)))))


@lru_cache(maxsize=32)
def certified_saturation(params: RateParams, rel_tol: float = 1e-12,
                         max_L: int = MAX_SATURATION_L) -> Tuple[float, int]:
    """
    Saturation mass rho_s = sum_l l z_s^l Q_l with a certified tail.

    The terms are z_s l^(1-alpha) exp(S_l). Beyond L, S decays at least like
    -beta ((l+1)^(1-gamma) - (L+1)^(1-gamma)) with beta = (q/z_s)/((1 + q/(z_s L^gamma))(1-gamma)),
    so the tail is bounded by an upper incomplete gamma function. L doubles until
    that bound drops below ``rel_tol`` times the partial sum.

    Returns:
        (rho_s, L) with L the certified truncation length.
    """
    if params.q == 0:
        raise ConvergenceError("saturation mass diverges for q = 0")
    c = params.surface_ratio
    g = params.gamma
    s = (2.0 - params.alpha) / (1.0 - g)
    L = SATURATION_START_L
    while L <= max_L:
        sizes = np.arange(1, L + 1, dtype=float)
        scaled = _log_scaled_partial(params, L)
        log_partial = float(special.logsumexp(math.log(params.z_s) + (1.0 - params.alpha) * np.log(sizes) + scaled))
        beta = c / ((1.0 + c * L ** (-g)) * (1.0 - g))
        y0 = beta * (L + 1.0) ** (1.0 - g)
        if y0 > 2.0 * (s - 1.0):
            log_tail = (
                math.log(params.z_s) + scaled[-1] - math.log(1.0 - g) - s * math.log(beta)
                + (s - 1.0) * math.log(y0) - math.log1p(-(s - 1.0) / y0)
            )
            if log_tail - log_partial <= math.log(rel_tol):
                logger.debug("saturation mass certified L=%d rho_s=%.15g", L, math.exp(log_partial))
                return math.exp(log_partial), L
        L *= 2
    raise ConvergenceError(f"saturation mass tail not certified below L={max_L} (q/z_s={c:.3g})")


def saturation_mass(params: RateParams, rel_tol: float = 1e-12) -> float:
    """Saturation mass rho_s to relative accuracy ``rel_tol``."""
    return certified_saturation(params, rel_tol)[0]


def solve_fugacity(params: RateParams, rho0: float, tol: Optional[float] = None,
                   table: Optional[EquilibriumTable] = None) -> float:
    """
    Fugacity z with sum_l l omega_l(z) = rho0 for 0 < rho0 <= rho_s.

    Bisection on the strictly increasing mass map; returns z_s when rho0 is
    within ``tol`` (default 1e-10 rho_s) of the saturation mass. With a
    ``table`` the mass map and rho_s are those of its truncation.
    """
    if not rho0 > 0:
        raise ValueError(f"mass must be positive, got {rho0}")
    if table is None:
        rho_s, L = certified_saturation(params)
        table = partition_coeffs(params, L)
    else:
        rho_s = mass_function(table, params.z_s)
    tol = 1e-10 * rho_s if tol is None else tol
    if rho0 > rho_s + tol:
        raise ValueError(f"rho0={rho0} exceeds the saturation mass rho_s={rho_s}: no equilibrium")
    if rho_s - rho0 <= tol:
        return params.z_s

    def excess(z: float) -> float:
        return mass_function(table, z) - rho0

    lo = min(rho0, params.z_s) * 1e-3
    while excess(lo) >= 0:
        lo *= 1e-3
    z = optimize.bisect(excess, lo, params.z_s, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                         maxiter=BISECTION_MAX_ITER)
    if abs(excess(z)) > tol:
        raise ConvergenceError(f"bisection for rho0={rho0} stopped at residual {excess(z):.3e}")
    return float(z)


@dataclass(frozen=True)
class AsymptoticConstants:
    """
    Constants of the large-l expansion of log(l^alpha z_s^(l-1) Q_l).

    Attributes:
        C1: Euler-type constant lim (sum - integral) of log1p(q/(z_s x^gamma))
        F0: Constant term of the expansion
        remainder_bound: Bound on the neglected tail of C1
        L_limit: Truncation used for C1
    """
    C1: float
    F0: float
    remainder_bound: float
    L_limit: int


def _shifted_power(params: RateParams, sizes: ArrayLike) -> Union[float, np.ndarray]:
    """(l^(1-2 gamma) - 1)/(1 - 2 gamma), or log l on the gamma = 1/2 branch."""
    logs = np.log(np.asarray(sizes, dtype=float))
    if params.gamma == GAMMA_LOG_BRANCH:
        return logs
    kappa = 1.0 - 2.0 * params.gamma
    return np.expm1(kappa * logs) / kappa


def compute_asymptotic_constants(params: RateParams, L_limit: int = 10 ** 6,
                                 tol: float = 1e-2) -> AsymptoticConstants:
    """
    Compute C1 and F0 of the expansion of the log-scaled partition coefficients.

    C1 is the partial difference sum_{j=2}^{L} f(j) - int_2^L f with
    f(x) = log1p(q/(z_s x^gamma)); the neglected tail is below f(L) <= q/(z_s L^gamma).
    F0 makes the expansion exact to second order at l = 2.
    """
    c = params.surface_ratio
    g = params.gamma
    if c == 0:
        return AsymptoticConstants(C1=0.0, F0=0.0, remainder_bound=0.0, L_limit=L_limit)
    remainder = c / L_limit ** g
    if remainder > tol:
        raise ConvergenceError(
            f"insufficient L_limit={L_limit}: remainder bound {remainder:.3e} exceeds tol={tol:.3e}"
        )
    j = np.arange(2, L_limit + 1, dtype=float)
    discrete = math.fsum(np.log1p(c * j ** (-g)))
    edges = np.geomspace(2.0, float(L_limit), num=max(2, int(math.ceil(math.log2(L_limit / 2.0))) + 1))
    continuous = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        piece, _ = integrate.quad(lambda x: math.log1p(c * x ** (-g)), lo, hi, epsabs=0.0, epsrel=1e-13, limit=200)
        continuous += piece
    C1 = discrete - continuous
    F0 = c * 2.0 ** (1.0 - g) / (1.0 - g) - 0.5 * c * c * float(_shifted_power(params, 2.0)) - C1
    logger.debug("asymptotic constants C1=%.12g F0=%.12g L_limit=%d", C1, F0, L_limit)
    return AsymptoticConstants(C1=C1, F0=F0, remainder_bound=remainder, L_limit=L_limit)


def asymptotic_log_scaled_Q(params: RateParams, consts: AsymptoticConstants,
                            l: ArrayLike) -> Union[float, np.ndarray]:
    """Second-order prediction F0 - c l^(1-g)/(1-g) + (c^2/2) (l^(1-2g) - 1)/(1-2g), c = q/z_s."""
    sizes = np.asarray(l, dtype=float)
    if np.any(sizes < 2):
        raise ValueError(f"expansion is defined for l >= 2, got {l}")
    c = params.surface_ratio
    g = params.gamma
    values = consts.F0 - c * sizes ** (1.0 - g) / (1.0 - g) + 0.5 * c * c * _shifted_power(params, sizes)
    return _as_output(np.asarray(values, dtype=float))


def exact_log_scaled_Q(params: RateParams, l: ArrayLike) -> Union[float, np.ndarray]:
    """Exact log(l^alpha z_s^(l-1) Q_l) = -sum_{j=2}^{l} log1p(q/(z_s j^gamma))."""
    sizes = np.asarray(l, dtype=np.int64)
    if np.any(sizes < 1):
        raise ValueError(f"sizes must be >= 1, got {l}")
    partial = _log_scaled_partial(params, int(np.max(sizes)))
    return _as_output(partial[sizes - 1])


@dataclass(frozen=True)
class ExpansionRow:
    l: int
    exact: float
    predicted: float
    relative_error: float
    scaled_error: float
    decay_exponent: Optional[float]


def expansion_table(params: RateParams, consts: AsymptoticConstants,
                    ls: List[int]) -> List[ExpansionRow]:
    """
    Compare exact and predicted log-scaled coefficients on increasing sizes.

    ``decay_exponent`` is the empirical slope -d log(error)/d log l against the
    previous row; the first row has none.
    """
    sizes = sorted(int(l) for l in ls)
    exact = np.atleast_1d(exact_log_scaled_Q(params, np.array(sizes)))
    predicted = np.atleast_1d(asymptotic_log_scaled_Q(params, consts, np.array(sizes, dtype=float)))
    rows: List[ExpansionRow] = []
    previous: Optional[Tuple[int, float]] = None
    for l, ex, pr in zip(sizes, exact, predicted):
        rel = abs(pr - ex) / abs(ex) if ex != 0 else abs(pr - ex)
        slope = None
        if previous is not None and previous[1] > 0 and rel > 0:
            slope = -math.log(rel / previous[1]) / math.log(l / previous[0])
        rows.append(ExpansionRow(
            l=l, exact=float(ex), predicted=float(pr), relative_error=float(rel),
            scaled_error=float(rel * l ** params.gamma), decay_exponent=slope,
        ))
        previous = (l, rel)
    return rows
