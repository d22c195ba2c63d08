"""
Pydantic schemas for parameter records, experiment configuration and run summaries.
"""
import logging
import math
from enum import Enum
from pathlib import Path
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

logger = logging.getLogger(__name__)


class Scenario(str, Enum):
    """Enumeration of the experiment scenarios."""
    BD_RELAX = "bd-relax"
    BD_RESCALED = "bd-rescaled"
    LSW = "lsw"
    CONVERGE = "converge"
    QUASISTAT = "quasistat"
    NETWORK = "network"

    @property
    def uses_ladder(self) -> bool:
        return self in (Scenario.BD_RESCALED, Scenario.CONVERGE, Scenario.QUASISTAT)


class InitialFamily(str, Enum):
    """Enumeration of the named initial-condition families."""
    EQUILIBRIUM_BUMP = "equilibrium+bump"
    PURE_MONOMER = "pure-monomer"
    LOG_UNIFORM_PARTICLES = "log-uniform-particles"
    BD_PROJECTED = "bd-projected"


class RateParams(BaseModel):
    """
    Becker–Döring rate family a_l = l^alpha, b_l = l^alpha (z_s + q l^-gamma).

    ``q = 0`` is accepted as the degenerate family without surface tension;
    operations that need a finite saturation mass reject it.
    """
    model_config = ConfigDict(
        frozen=True,
        json_schema_extra={"example": {"alpha": 0.0, "gamma": 0.5, "z_s": 1.0, "q": 1.0}},
    )

    alpha: float = Field(0.0, ge=0.0, lt=1.0, description="Growth exponent in [0, 1)")
    gamma: float = Field(0.5, gt=0.0, lt=1.0, description="Surface-tension exponent in (0, 1)")
    z_s: float = Field(1.0, gt=0.0, description="Saturation fugacity")
    q: float = Field(1.0, ge=0.0, description="Surface-tension amplitude")

    @field_validator("alpha", "gamma", "z_s", "q")
    @classmethod
    def finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("rate parameters must be finite")
        return value

    @property
    def surface_ratio(self) -> float:
        """q / z_s, the constant of the log-scaled partition coefficients."""
        return self.q / self.z_s

    @property
    def time_exponent(self) -> float:
        """1 - alpha + gamma, the exponent of the coarsening time scale."""
        return 1.0 - self.alpha + self.gamma

    @property
    def dissipation_exponent(self) -> float:
        """1 - alpha + 2 gamma, the exponent of the rescaled action and dissipation."""
        return 1.0 - self.alpha + 2.0 * self.gamma


class RescaleParams(BaseModel):
    """Scale separation eps and splitting exponent x with l0 = floor(eps^-x)."""
    model_config = ConfigDict(frozen=True, json_schema_extra={"example": {"eps": 0.05, "x": 0.45}})

    eps: float = Field(..., gt=0.0, lt=1.0, description="Scale parameter")
    x: float = Field(0.3, gt=0.0, lt=0.5, description="Micro/macro splitting exponent")

    @property
    def l0(self) -> int:
        # the relative guard absorbs rounding of exact integer powers
        return math.floor(self.eps ** (-self.x) * (1.0 + 1e-12))

    @model_validator(mode="after")
    def validate_split(self):
        """Ensure the microscopic range {1, ..., l0 - 1} is nonempty."""
        if self.l0 < 2:
            raise ValueError(
                f"l0 = floor(eps^-x) = {self.l0} < 2 for eps={self.eps}, x={self.x}"
            )
        return self


class RescaleLadder(BaseModel):
    """Strictly decreasing list of eps values sharing one splitting exponent."""
    model_config = ConfigDict(frozen=True)

    eps: List[float] = Field(default_factory=lambda: [0.2, 0.1, 0.05], min_length=1)
    x: float = Field(0.45, gt=0.0, lt=0.5)
    truncation_factor: float = Field(
        4.0, gt=1.0, description="L >= truncation_factor * bump_hi / eps for each rung"
    )

    @model_validator(mode="after")
    def validate_ladder(self):
        """Ladder must be strictly decreasing and every rung must have l0 >= 2."""
        if any(b >= a for a, b in zip(self.eps, self.eps[1:])):
            raise ValueError("eps ladder must be strictly decreasing")
        for eps in self.eps:
            RescaleParams(eps=eps, x=self.x)
        return self

    def rung(self, eps: float) -> RescaleParams:
        return RescaleParams(eps=eps, x=self.x)

    def rungs(self) -> List[RescaleParams]:
        return [self.rung(eps) for eps in self.eps]


class LSWParams(BaseModel):
    """Parameters of the mean-field LSW equation."""
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(0.0, ge=0.0, lt=1.0)
    gamma: float = Field(0.5, gt=0.0, lt=1.0)
    q: float = Field(1.0, gt=0.0)
    excess_mass: float = Field(1.0, gt=0.0, description="First moment carried by the ensemble")

    @model_validator(mode="after")
    def warn_moment_range(self):
        """Flag parameters outside the range where the macroscopic moment bound is proven."""
        if self.alpha < 1.0 - 3.0 * self.gamma:
            logger.warning(
                "alpha=%.3g < 1 - 3 gamma=%.3g: moment bounds of the limit are not guaranteed",
                self.alpha, 1.0 - 3.0 * self.gamma,
            )
        return self

    @classmethod
    def from_rates(cls, rates: RateParams, excess_mass: float) -> "LSWParams":
        return cls(alpha=rates.alpha, gamma=rates.gamma, q=rates.q, excess_mass=excess_mass)


class IntegratorControls(BaseModel):
    """Controls of the embedded Runge–Kutta integrators."""
    model_config = ConfigDict(frozen=True)

    rtol: float = Field(1e-8, gt=0.0, lt=1.0, description="Relative local error tolerance")
    atol: float = Field(1e-14, ge=0.0, description="Absolute floor of the error scale")
    dt_init: float = Field(1e-3, gt=0.0)
    dt_min: float = Field(1e-14, gt=0.0)
    dt_max: Optional[float] = Field(None, gt=0.0)
    max_steps: int = Field(2_000_000, gt=0)
    sample_stride: int = Field(1, ge=1, description="Record every k-th accepted step")
    energy_slack: float = Field(1e-10, ge=0.0, description="Allowed relative energy increase per step")
    negativity_slack: float = Field(10.0, ge=0.0, description="Allowed negativity in units of machine eps")
    max_relative_move: float = Field(0.1, gt=0.0, le=1.0, description="LSW: bound on |dlambda|/lambda per step")
    lambda_min_rel: float = Field(1e-6, gt=0.0, lt=1.0, description="LSW: retirement size relative to initial mean")
    quadrature: Literal["trapezoid", "simpson"] = Field("trapezoid", description="Rule for sampled time integrals")

    @model_validator(mode="after")
    def validate_steps(self):
        if self.dt_min > self.dt_init:
            raise ValueError("dt_min must not exceed dt_init")
        if self.dt_max is not None and self.dt_max < self.dt_min:
            raise ValueError("dt_max must not be smaller than dt_min")
        return self


class CertificationBounds(BaseModel):
    """Thresholds above which a run fails certification."""
    model_config = ConfigDict(frozen=True)

    mass_drift: float = Field(1e-8, gt=0.0)
    energy_dissipation_abs: float = Field(1e-6, gt=0.0)
    energy_dissipation_rel: float = Field(1e-3, gt=0.0)
    j_rel: float = Field(1e-4, gt=0.0)
    first_moment_drift: float = Field(1e-8, gt=0.0)
    conservation: float = Field(1e-10, gt=0.0)
    equilibrium_distance: float = Field(
        1e-6, gt=0.0, description="Bound on sum_l l |n_l(T) - omega_l(z(rho0))| for subcritical relaxation"
    )


class InitialSpec(BaseModel):
    """Named initial-condition family with its shape parameters."""
    model_config = ConfigDict(frozen=True)

    family: InitialFamily = InitialFamily.EQUILIBRIUM_BUMP
    rho0: Optional[float] = Field(None, gt=0.0, description="Total mass for pure-monomer data")
    excess_mass: float = Field(1.0, gt=0.0, description="First moment of the macroscopic bump")
    bump_lo: float = Field(0.5, gt=0.0)
    bump_hi: float = Field(1.5, gt=0.0)
    eps: float = Field(0.05, gt=0.0, lt=1.0, description="Scale of the bump outside ladder scenarios")
    particles: int = Field(400, ge=1, description="Ensemble size for particle families")
    lambda_lo: float = Field(0.2, gt=0.0)
    lambda_hi: float = Field(2.0, gt=0.0)

    @model_validator(mode="after")
    def validate_ranges(self):
        if self.bump_hi <= self.bump_lo:
            raise ValueError("bump_hi must exceed bump_lo")
        if self.lambda_hi <= self.lambda_lo:
            raise ValueError("lambda_hi must exceed lambda_lo")
        return self


class LSWSettings(BaseModel):
    """Particle-method settings shared by the lsw and converge scenarios."""
    model_config = ConfigDict(frozen=True)

    reference: Literal["projected", "continuum"] = Field(
        "projected", description="Start of the converge reference: projected ladder-top state or continuum bump"
    )
    reference_particles: int = Field(4000, ge=10, description="Atoms of the continuum reference ensemble")
    dictionary_lo: float = Field(0.05, gt=0.0, description="Smallest hat centre of the distance dictionary")
    dictionary_hi: float = Field(5.0, gt=0.0)
    dictionary_hats: int = Field(25, ge=2)

    @model_validator(mode="after")
    def validate_dictionary(self):
        if self.dictionary_hi <= self.dictionary_lo:
            raise ValueError("dictionary_hi must exceed dictionary_lo")
        return self


class NetworkSpec(BaseModel):
    """Source of the reaction network for the network scenario."""
    model_config = ConfigDict(frozen=True)

    path: Optional[Path] = Field(None, description="Network description file; BD network when absent")


class ExperimentConfig(BaseModel):
    """
    Complete description of one experiment.

    Validated once on load; every run derived from it is reproducible from
    the config echo written next to its outputs.
    """
    model_config = ConfigDict(
        frozen=True,
        json_schema_extra={
            "example": {
                "scenario": "quasistat",
                "seed": 7,
                "L": 64,
                "T": 1.0,
                "rates": {"alpha": 0.0, "gamma": 0.5, "z_s": 1.0, "q": 1.0},
                "rescaling": {"eps": [0.2, 0.1, 0.05], "x": 0.45},
            }
        },
    )

    scenario: Scenario = Scenario.BD_RELAX
    seed: int = Field(0, ge=0)
    L: int = Field(512, ge=3, description="Truncation length (lower bound on rescaled runs)")
    T: float = Field(10.0, gt=0.0, description="Final time (rescaled clock on ladder scenarios)")
    samples: int = Field(20, ge=2, description="Shared sample times on ladder scenarios")
    workers: int = Field(1, ge=1, description="Concurrent eps-ladder runs")
    rates: RateParams = Field(default_factory=RateParams)
    rescaling: RescaleLadder = Field(default_factory=RescaleLadder)
    initial: InitialSpec = Field(default_factory=InitialSpec)
    lsw: LSWSettings = Field(default_factory=LSWSettings)
    integrator: IntegratorControls = Field(default_factory=IntegratorControls)
    bounds: CertificationBounds = Field(default_factory=CertificationBounds)
    network: NetworkSpec = Field(default_factory=NetworkSpec)
    out_dir: Path = Field(Path("results"), description="Directory for run artifacts")
    u_eps_omit_z_s: bool = Field(
        False, description="Use the literal a_l n_l form of the macroscopic supersaturation"
    )

    @model_validator(mode="after")
    def validate_families(self):
        """Particle families only make sense for the LSW scenario."""
        particle = {InitialFamily.LOG_UNIFORM_PARTICLES, InitialFamily.BD_PROJECTED}
        if self.scenario == Scenario.LSW:
            if self.initial.family not in particle:
                raise ValueError(f"scenario lsw needs a particle family, got {self.initial.family.value}")
        elif self.initial.family in particle:
            raise ValueError(
                f"family {self.initial.family.value} builds particles; scenario {self.scenario.value} needs clusters"
            )
        if self.scenario.uses_ladder and self.initial.family != InitialFamily.EQUILIBRIUM_BUMP:
            raise ValueError(f"scenario {self.scenario.value} needs the equilibrium+bump family")
        return self

    def canonical_json(self) -> str:
        """Canonical JSON used for the config hash and the config echo."""
        return self.model_dump_json(exclude={"out_dir"})


class ConvergenceRow(BaseModel):
    """One row of the per-eps convergence table."""
    eps: float
    t: float
    distance: Optional[float] = None
    energy_eps: Optional[float] = None
    energy_limit: Optional[float] = None
    energy_gap: Optional[float] = None
    action_eps: Optional[float] = None
    action_limit: Optional[float] = None
    dissipation_eps: Optional[float] = None
    dissipation_limit: Optional[float] = None


class RunSummary(BaseModel):
    """
    Scalars, flags and tables of one scenario run.

    ``scalars`` values are finite floats or ``None``; a ``None`` value is
    always accompanied by an entry in ``flags`` naming why it is missing.
    """
    scenario: Scenario
    passed: bool = True
    scalars: Dict[str, Optional[float]] = Field(default_factory=dict)
    flags: Dict[str, str] = Field(default_factory=dict)
    failures: List[str] = Field(default_factory=list)
    per_eps: Dict[str, Dict[str, Optional[float]]] = Field(default_factory=dict)
    convergence: List[ConvergenceRow] = Field(default_factory=list)
    trends: Dict[str, bool] = Field(default_factory=dict)
    artifacts: List[str] = Field(default_factory=list)

    def record(self, name: str, value: Optional[float], reason: str = "non-finite") -> None:
        """Store a scalar, flagging missing or non-finite values instead of writing NaN."""
        if value is None or not math.isfinite(value):
            self.scalars[name] = None
            self.flags[name] = reason if value is None else f"{reason}: {value}"
        else:
            self.scalars[name] = float(value)

    def certify(self, name: str, residual: float, bound: float) -> bool:
        """Record a certification residual and mark the run failed when it exceeds ``bound``."""
        self.record(name, residual)
        ok = math.isfinite(residual) and residual <= bound
        if not ok:
            self.passed = False
            self.failures.append(name)
            logger.warning("certification failed name=%s residual=%.3e bound=%.3e", name, residual, bound)
        return ok


class InvariantReport(BaseModel):
    """Residuals of the invariant suite run by the ``check`` command."""
    passed: bool = True
    residuals: Dict[str, float] = Field(default_factory=dict)
    bounds: Dict[str, float] = Field(default_factory=dict)
    failures: List[str] = Field(default_factory=list)

    def certify(self, name: str, residual: float, bound: float) -> bool:
        self.residuals[name] = float(residual)
        self.bounds[name] = float(bound)
        ok = math.isfinite(residual) and residual <= bound
        if not ok:
            self.passed = False
            self.failures.append(name)
            logger.warning("invariant failed name=%s residual=%.3e bound=%.3e", name, residual, bound)
        return ok
