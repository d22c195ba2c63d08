"""
Particle method for the mean-field LSW equation.

An ensemble of weighted atoms nu = sum_i m_i delta_{lambda_i} moves along
d lambda_i/dt = lambda_i^alpha (u(nu) - q lambda_i^-gamma), where the
supersaturation u(nu) is re-evaluated at every Runge–Kutta stage so that
the first moment is conserved. Atoms that shrink below ``lambda_min`` are
retired; their residual mass is reported as vanished.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import stats

from bdlab.integrators import DormandPrince54, IntegrationStats, quadrature
from bdlab.schemas import IntegratorControls, LSWParams

logger = logging.getLogger(__name__)

ENSEMBLE_COLUMNS = ["lambda", "mass"]
DICTIONARY_VERSION = "hat-log-v1"


@dataclass(frozen=True)
class ParticleEnsemble:
    """
    Weighted atoms (lambda_i, m_i); ``alive`` marks atoms that have not been retired.
    """
    lam: np.ndarray
    mass: np.ndarray
    alive: Optional[np.ndarray] = None

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float)
        mass = np.array(self.mass, dtype=float)
        if lam.ndim != 1 or lam.shape != mass.shape:
            raise ValueError("lam and mass must be 1-d arrays of equal length")
        alive = np.ones(lam.size, dtype=bool) if self.alive is None else np.array(self.alive, dtype=bool)
        if alive.shape != lam.shape:
            raise ValueError("alive mask must match the ensemble size")
        if not np.all(np.isfinite(lam)) or not np.all(np.isfinite(mass)):
            raise ValueError("particle sizes and masses must be finite")
        if np.any(lam[alive] <= 0) or np.any(mass < 0):
            raise ValueError("live particles need lambda > 0 and nonnegative mass")
        for array in (lam, mass, alive):
            array.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "alive", alive)

    @property
    def size(self) -> int:
        return int(np.count_nonzero(self.alive))

    def live(self) -> "ParticleEnsemble":
        """Ensemble restricted to the live atoms."""
        return ParticleEnsemble(self.lam[self.alive], self.mass[self.alive])


def moment(ensemble: ParticleEnsemble, kappa: float) -> float:
    """Live moment sum_i m_i lambda_i^kappa."""
    lam = ensemble.lam[ensemble.alive]
    return float(np.dot(ensemble.mass[ensemble.alive], lam ** kappa))


def first_moment(ensemble: ParticleEnsemble) -> float:
    return moment(ensemble, 1.0)


def tail_moment(ensemble: ParticleEnsemble, R: float) -> float:
    """Mass carried by atoms above R, sum_{lambda_i > R} m_i lambda_i."""
    lam = ensemble.lam[ensemble.alive]
    keep = lam > R
    return float(np.dot(ensemble.mass[ensemble.alive][keep], lam[keep]))


def mean_field_u(params: LSWParams, ensemble: ParticleEnsemble) -> float:
    """u(nu) = q sum m lambda^(alpha-gamma) / sum m lambda^alpha."""
    if ensemble.size == 0:
        raise ValueError("empty ensemble: mean-field supersaturation undefined")
    denominator = moment(ensemble, params.alpha)
    if denominator <= 0:
        raise ValueError("ensemble carries no mass")
    return params.q * moment(ensemble, params.alpha - params.gamma) / denominator


def particle_velocities(params: LSWParams, ensemble: ParticleEnsemble, u: float) -> np.ndarray:
    """v_i = lambda_i^alpha (u - q lambda_i^-gamma); retired atoms do not move."""
    lam = ensemble.lam
    v = np.zeros(lam.size)
    live = ensemble.alive
    v[live] = lam[live] ** params.alpha * (u - params.q * lam[live] ** (-params.gamma))
    return v


def lsw_energy(params: LSWParams, ensemble: ParticleEnsemble) -> float:
    """E(nu) = q/(1 - gamma) sum m lambda^(1-gamma)."""
    return params.q / (1.0 - params.gamma) * moment(ensemble, 1.0 - params.gamma)


def lsw_dissipation_at(params: LSWParams, ensemble: ParticleEnsemble, c: float) -> float:
    """D(nu, c) = sum m lambda^alpha (c - q lambda^-gamma)^2, minimized at c = u(nu)."""
    lam = ensemble.lam[ensemble.alive]
    m = ensemble.mass[ensemble.alive]
    return float(np.sum(m * lam ** params.alpha * (c - params.q * lam ** (-params.gamma)) ** 2))


def lsw_dissipation(params: LSWParams, ensemble: ParticleEnsemble) -> float:
    """D(nu) = D(nu, u(nu)); zero for an empty ensemble."""
    if ensemble.size == 0:
        return 0.0
    return lsw_dissipation_at(params, ensemble, mean_field_u(params, ensemble))


def lsw_action(params: LSWParams, ensemble: ParticleEnsemble, w: np.ndarray) -> float:
    """A(nu, w) = sum m lambda^alpha w^2 over live atoms."""
    w = np.asarray(w, dtype=float)
    if w.shape != ensemble.lam.shape:
        raise ValueError("one velocity potential value per atom is required")
    live = ensemble.alive
    return float(np.sum(ensemble.mass[live] * ensemble.lam[live] ** params.alpha * w[live] ** 2))


def solution_potential(params: LSWParams, ensemble: ParticleEnsemble) -> np.ndarray:
    """w = u(nu) - q lambda^-gamma, the velocity potential of the LSW flow (0 on retired atoms)."""
    w = np.zeros(ensemble.lam.size)
    if ensemble.size == 0:
        return w
    live = ensemble.alive
    w[live] = mean_field_u(params, ensemble) - params.q * ensemble.lam[live] ** (-params.gamma)
    return w


@dataclass
class LSWCurveRecord:
    """
    Sampled LSW trajectory.

    Attributes:
        times: Sample times
        ensembles: Ensemble at each sample
        E, D, u: Energy, dissipation and supersaturation per sample
        dissipated: Error-controlled running integral of D
        potentials: Optional velocity potential per sample; the solution potential is implied when absent
        vanished_mass: First moment removed by retirement
        vanished_energy: Energy of the retired atoms at retirement
        vanished_trace: Cumulative vanished mass at each row
        retired: Number of retired atoms
    """
    times: np.ndarray
    ensembles: List[ParticleEnsemble]
    E: np.ndarray
    D: np.ndarray
    u: np.ndarray
    dissipated: Optional[np.ndarray] = None
    potentials: Optional[List[np.ndarray]] = None
    vanished_mass: float = 0.0
    vanished_energy: float = 0.0
    vanished_trace: Optional[np.ndarray] = None
    retired: int = 0
    stats: Optional[IntegrationStats] = None
    sample_indices: List[int] = field(default_factory=list)

    def with_potentials(self, potentials: List[np.ndarray]) -> "LSWCurveRecord":
        if len(potentials) != len(self.ensembles):
            raise ValueError("one potential per sample is required")
        return replace(self, potentials=[np.asarray(w, dtype=float) for w in potentials])

    def at_samples(self) -> "LSWCurveRecord":
        idx = self.sample_indices or list(range(self.times.size))
        return replace(
            self, times=self.times[idx], ensembles=[self.ensembles[i] for i in idx],
            E=self.E[idx], D=self.D[idx], u=self.u[idx],
            dissipated=None if self.dissipated is None else self.dissipated[idx],
            vanished_trace=None if self.vanished_trace is None else self.vanished_trace[idx],
            potentials=None if self.potentials is None else [self.potentials[i] for i in idx],
            sample_indices=list(range(len(idx))),
        )


def integrate_lsw(params: LSWParams, ensemble0: ParticleEnsemble, T: float, controls: IntegratorControls,
                  lambda_min: Optional[float] = None, sample_times: Optional[Sequence[float]] = None) -> LSWCurveRecord:
    """
    Integrate the particle ODE with per-stage supersaturation.

    Steps are limited so that no live atom moves by more than
    ``controls.max_relative_move`` of its size and rejected when the energy
    increases. After each accepted step atoms at or below ``lambda_min``
    (default ``controls.lambda_min_rel`` times the initial mean size) are
    retired.
    """
    if T <= 0:
        raise ValueError(f"final time must be positive, got {T}")
    if ensemble0.size == 0:
        raise ValueError("empty ensemble")
    live0 = ensemble0.live()
    if lambda_min is None:
        lambda_min = controls.lambda_min_rel * float(np.average(live0.lam, weights=None))
    mass = ensemble0.mass
    alive = ensemble0.alive.copy()
    bookkeeping = {"vanished": 0.0, "vanished_energy": 0.0, "retired": 0}
    n = mass.size
    E0 = lsw_energy(params, ensemble0)

    def ensemble_of(lam: np.ndarray) -> ParticleEnsemble:
        return ParticleEnsemble(np.where(alive, lam, np.maximum(lam, 0.0)), mass, alive)

    def rhs(y: np.ndarray) -> np.ndarray:
        lam = y[:-1]
        live = alive & (lam > 0)
        out = np.zeros(n + 1)
        if not np.any(live):
            return out
        with np.errstate(invalid="ignore", divide="ignore"):
            lam_live = lam[live]
            m_live = mass[live]
            u = params.q * np.dot(m_live, lam_live ** (params.alpha - params.gamma)) / np.dot(m_live, lam_live ** params.alpha)
            w = u - params.q * lam_live ** (-params.gamma)
            out[:-1][live] = lam_live ** params.alpha * w
            out[-1] = np.sum(m_live * lam_live ** params.alpha * w * w)
        if np.any(alive & (lam <= 0)):
            out[:-1][alive & (lam <= 0)] = np.nan
        return out

    def step_limit(y: np.ndarray) -> float:
        v = rhs(y)[:-1][alive]
        speed = np.abs(v) / y[:-1][alive]
        fastest = float(np.max(speed)) if speed.size else 0.0
        return math.inf if fastest == 0 else controls.max_relative_move / fastest

    def admissible(y: np.ndarray, y_new: np.ndarray) -> Optional[str]:
        old, new = y[:-1][alive], y_new[:-1][alive]
        if np.any(new <= 0):
            return "negative size"
        if np.any(np.abs(new - old) > 2.0 * controls.max_relative_move * old):
            return "relative move"
        E_old = lsw_energy(params, ensemble_of(y[:-1]))
        E_new = lsw_energy(params, ensemble_of(y_new[:-1]))
        if E_new > E_old + controls.energy_slack * (1.0 + abs(E_old)):
            return "energy"
        return None

    def post_step(t: float, y: np.ndarray) -> np.ndarray:
        lam = y[:-1]
        retire = alive & (lam <= lambda_min)
        if np.any(retire):
            gone = float(np.dot(mass[retire], lam[retire]))
            bookkeeping["vanished"] += gone
            bookkeeping["vanished_energy"] += params.q / (1.0 - params.gamma) * float(
                np.dot(mass[retire], lam[retire] ** (1.0 - params.gamma))
            )
            bookkeeping["retired"] += int(np.count_nonzero(retire))
            alive[retire] = False
            logger.warning(
                "retired particles t=%.6g count=%d vanished_mass=%.3e lambda_min=%.3e",
                t, int(np.count_nonzero(retire)), gone, lambda_min,
            )
        return y

    times: List[float] = []
    ensembles: List[ParticleEnsemble] = []
    dissipated: List[float] = []
    vanished: List[float] = []
    samples: List[int] = []
    counter = {"calls": 0}

    def observer(t: float, y: np.ndarray, is_sample: bool) -> None:
        counter["calls"] += 1
        if is_sample or (counter["calls"] - 1) % controls.sample_stride == 0:
            times.append(t)
            ensembles.append(ensemble_of(y[:-1].copy()))
            dissipated.append(float(y[-1]))
            vanished.append(bookkeeping["vanished"])
            if is_sample:
                samples.append(len(times) - 1)

    atol = np.full(n + 1, controls.atol)
    atol[-1] = controls.rtol * max(1.0, abs(E0))
    solver = DormandPrince54(rhs, controls, atol=atol, admissible=admissible, step_limit=step_limit, post_step=post_step)
    result_stats = solver.integrate(np.append(ensemble0.lam, 0.0), T, observer, () if sample_times is None else sample_times)
    E = np.array([lsw_energy(params, ens) for ens in ensembles])
    D = np.array([lsw_dissipation(params, ens) for ens in ensembles])
    u = np.array([mean_field_u(params, ens) if ens.size else math.nan for ens in ensembles])
    logger.info(
        "lsw integration done T=%.6g accepted=%d retired=%d vanished_mass=%.3e",
        T, result_stats.accepted, bookkeeping["retired"], bookkeeping["vanished"],
    )
    return LSWCurveRecord(
        times=np.array(times), ensembles=ensembles, E=E, D=D, u=u, dissipated=np.array(dissipated),
        vanished_trace=np.array(vanished),
        vanished_mass=bookkeeping["vanished"], vanished_energy=bookkeeping["vanished_energy"],
        retired=bookkeeping["retired"],
        stats=result_stats, sample_indices=samples,
    )


@dataclass(frozen=True)
class LSWJValue:
    value: float
    energy_change: float
    dissipation_integral: float
    action_integral: float

    @property
    def scale(self) -> float:
        return abs(self.energy_change) + self.dissipation_integral


def lsw_curve_J(params: LSWParams, curve: LSWCurveRecord, method: str = "trapezoid") -> LSWJValue:
    """
    J = E(T) - E(0) + 1/2 int D dt + 1/2 int A dt on a sampled LSW curve.

    Retired atoms are counted with their energy at retirement removed.
    """
    if curve.dissipated is not None:
        int_D = float(curve.dissipated[-1] - curve.dissipated[0])
    else:
        int_D, _ = quadrature(curve.times, curve.D, method)
    if curve.potentials is None:
        int_A = int_D
    else:
        A = np.array([lsw_action(params, ens, w) for ens, w in zip(curve.ensembles, curve.potentials)])
        int_A, _ = quadrature(curve.times, A, method)
    delta_E = float(curve.E[-1] - curve.E[0]) + curve.vanished_energy
    return LSWJValue(
        value=delta_E + 0.5 * int_D + 0.5 * int_A, energy_change=delta_E,
        dissipation_integral=int_D, action_integral=int_A,
    )


class MeasureDictionary:
    """
    Finite family of bounded Lipschitz test functions on (0, inf).

    Hat functions centred on a log-spaced grid, each reaching its
    neighbours' centres, plus the truncations min(lambda, R).
    """

    def __init__(self, lo: float = 0.05, hi: float = 5.0, hats: int = 25,
                 truncations: Sequence[float] = (0.5, 1.0, 2.0, 4.0)):
        if not 0 < lo < hi or hats < 2:
            raise ValueError("dictionary needs 0 < lo < hi and at least two hats")
        self.version = DICTIONARY_VERSION
        self.centers = np.geomspace(lo, hi, hats)
        left = np.concatenate(([self.centers[0] - (self.centers[1] - self.centers[0])], self.centers[:-1]))
        right = np.concatenate((self.centers[1:], [self.centers[-1] + (self.centers[-1] - self.centers[-2])]))
        self.left = np.maximum(left, 0.0)
        self.right = right
        self.truncations = np.asarray(truncations, dtype=float)

    @property
    def lipschitz(self) -> float:
        """Largest Lipschitz constant in the family."""
        widths = np.minimum(self.centers - self.left, self.right - self.centers)
        return float(max(1.0, np.max(1.0 / widths)))

    def evaluate(self, lam: np.ndarray) -> np.ndarray:
        """Matrix of test-function values, one row per function and one column per point."""
        lam = np.asarray(lam, dtype=float)[None, :]
        c = self.centers[:, None]
        rising = (lam - self.left[:, None]) / (c - self.left[:, None])
        falling = (self.right[:, None] - lam) / (self.right[:, None] - c)
        hats = np.clip(np.minimum(rising, falling), 0.0, 1.0)
        caps = np.minimum(lam, self.truncations[:, None])
        return np.vstack((hats, caps))

    def integrate(self, ensemble: ParticleEnsemble) -> np.ndarray:
        live = ensemble.alive
        if not np.any(live):
            return np.zeros(self.centers.size + self.truncations.size)
        return self.evaluate(ensemble.lam[live]) @ ensemble.mass[live]


DEFAULT_DICTIONARY = MeasureDictionary()


def measure_distance(nu_a: ParticleEnsemble, nu_b: ParticleEnsemble,
                     dictionary: Optional[MeasureDictionary] = None) -> float:
    """sup over the dictionary of |int zeta d nu_a - int zeta d nu_b|."""
    dictionary = DEFAULT_DICTIONARY if dictionary is None else dictionary
    return float(np.max(np.abs(dictionary.integrate(nu_a) - dictionary.integrate(nu_b))))


def wasserstein_1(nu_a: ParticleEnsemble, nu_b: ParticleEnsemble) -> float:
    """1-Wasserstein distance between the mass-normalised live ensembles."""
    a, b = nu_a.live(), nu_b.live()
    if a.size == 0 or b.size == 0:
        raise ValueError("empty ensemble")
    return float(stats.wasserstein_distance(a.lam, b.lam, u_weights=a.mass, v_weights=b.mass))


def log_uniform_ensemble(n: int, lo: float, hi: float, excess_mass: float,
                         rng: np.random.Generator) -> ParticleEnsemble:
    """n equal-mass atoms with log-uniform sizes in [lo, hi], scaled to first moment ``excess_mass``."""
    if n < 1 or not 0 < lo < hi:
        raise ValueError("log-uniform ensemble needs n >= 1 and 0 < lo < hi")
    lam = np.sort(np.exp(rng.uniform(math.log(lo), math.log(hi), size=n)))
    m = np.full(n, excess_mass / float(np.sum(lam)))
    return ParticleEnsemble(lam, m)


def profile_ensemble(profile: Callable[[np.ndarray], np.ndarray], lo: float, hi: float, n: int,
                     excess_mass: float) -> ParticleEnsemble:
    """Midpoint discretisation of a density profile on [lo, hi], scaled to first moment ``excess_mass``."""
    edges = np.linspace(lo, hi, n + 1)
    lam = 0.5 * (edges[1:] + edges[:-1])
    weights = profile(lam) * (hi - lo) / n
    keep = weights > 0
    lam, weights = lam[keep], weights[keep]
    weights = weights * excess_mass / float(np.dot(weights, lam))
    return ParticleEnsemble(lam, weights)


def write_ensemble_csv(ensemble: ParticleEnsemble, path: Union[str, Path]) -> Path:
    path = Path(path)
    live = ensemble.live()
    frame = pd.DataFrame({"lambda": live.lam, "mass": live.mass}, columns=ENSEMBLE_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def read_ensemble_csv(path: Union[str, Path]) -> ParticleEnsemble:
    frame = pd.read_csv(path)
    missing = set(ENSEMBLE_COLUMNS) - set(frame.columns)
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    return ParticleEnsemble(frame["lambda"].to_numpy(dtype=float), frame["mass"].to_numpy(dtype=float))
