"""
Factory for the named initial-condition families.

Every family turns an ``InitialContext`` into either a ``ClusterState`` or
a ``ParticleEnsemble``; the factory maps family names to their builders.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Type, Union

import numpy as np

from bdlab.becker_doring import ClusterState
from bdlab.lsw import ParticleEnsemble, log_uniform_ensemble, profile_ensemble
from bdlab.rates import EquilibriumTable, equilibrium
from bdlab.rescaling import project_mac
from bdlab.schemas import InitialFamily, InitialSpec, RateParams, RescaleParams

logger = logging.getLogger(__name__)

InitialData = Union[ClusterState, ParticleEnsemble]
DEFAULT_SPLIT_EXPONENT = 0.45


def bump_profile(lo: float, hi: float) -> Callable[[np.ndarray], np.ndarray]:
    """Smooth compactly supported density g(lambda) = (lambda - lo)^2 (hi - lambda)^2 on [lo, hi]."""

    def g(lam: np.ndarray) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        inside = (lam > lo) & (lam < hi)
        return np.where(inside, (lam - lo) ** 2 * (hi - lam) ** 2, 0.0)

    return g


@dataclass(frozen=True)
class InitialContext:
    """
    Everything a family may need.

    Attributes:
        params: Rate family
        table: Partition coefficients, at least L long for cluster families
        spec: Shape parameters of the family
        L: Truncation length of cluster states
        rescale: Scale eps and cutoff l0 of the bump families
        rng: Seeded generator
    """
    params: RateParams
    table: EquilibriumTable
    spec: InitialSpec
    L: int
    rescale: RescaleParams
    rng: np.random.Generator


class InitialCondition(ABC):
    """Abstract base class for initial-condition families."""

    @abstractmethod
    def build(self, ctx: InitialContext) -> InitialData:
        """
        Construct the initial data.

        Args:
            ctx: Parameters, truncation and generator

        Returns:
            A cluster state or a particle ensemble
        """


class EquilibriumBumpCondition(InitialCondition):
    """omega(z_s) below l0 plus a smooth bump carrying the excess mass at scale 1/eps."""

    def build(self, ctx: InitialContext) -> ClusterState:
        spec, eps, l0 = ctx.spec, ctx.rescale.eps, ctx.rescale.l0
        if spec.bump_lo / eps < l0:
            raise ValueError(
                f"bump starts at size {spec.bump_lo / eps:.3g} below the cutoff l0={l0}; lower x or raise bump_lo"
            )
        if spec.bump_hi / eps >= ctx.L:
            raise ValueError(f"bump reaches size {spec.bump_hi / eps:.3g} beyond L={ctx.L}")
        n = np.zeros(ctx.L)
        n[:l0 - 1] = equilibrium(ctx.table, ctx.params.z_s, l0 - 1)
        sizes = np.arange(l0, ctx.L + 1, dtype=float)
        shape = eps * eps * bump_profile(spec.bump_lo, spec.bump_hi)(eps * sizes)
        moment = float(np.dot(sizes, shape))
        if moment <= 0:
            raise ValueError("bump has no lattice point inside its support; decrease eps")
        n[l0 - 1:] = shape * (spec.excess_mass / moment)
        return ClusterState(n)


class PureMonomerCondition(InitialCondition):
    """All mass rho0 in monomers."""

    def build(self, ctx: InitialContext) -> ClusterState:
        if ctx.spec.rho0 is None:
            raise ValueError("pure-monomer family needs rho0")
        n = np.zeros(ctx.L)
        n[0] = ctx.spec.rho0
        return ClusterState(n)


class LogUniformParticlesCondition(InitialCondition):
    """Equal-mass atoms with log-uniform sizes."""

    def build(self, ctx: InitialContext) -> ParticleEnsemble:
        spec = ctx.spec
        return log_uniform_ensemble(spec.particles, spec.lambda_lo, spec.lambda_hi, spec.excess_mass, ctx.rng)


class BDProjectedCondition(InitialCondition):
    """Macroscopic projection of the equilibrium+bump cluster state."""

    def build(self, ctx: InitialContext) -> ParticleEnsemble:
        state = EquilibriumBumpCondition().build(ctx)
        return project_mac(state, ctx.rescale.eps, ctx.rescale.l0)


class InitialConditionFactory:
    """
    Factory class for initial-condition families.

    Uses a registry mapping family names to their implementations.
    """

    _families: Dict[InitialFamily, Type[InitialCondition]] = {
        InitialFamily.EQUILIBRIUM_BUMP: EquilibriumBumpCondition,
        InitialFamily.PURE_MONOMER: PureMonomerCondition,
        InitialFamily.LOG_UNIFORM_PARTICLES: LogUniformParticlesCondition,
        InitialFamily.BD_PROJECTED: BDProjectedCondition,
    }

    @classmethod
    def create_family(cls, family: Union[str, InitialFamily]) -> InitialCondition:
        """
        Create a family instance from its name.

        Raises:
            ValueError: If the family is not supported
        """
        try:
            key = InitialFamily(family)
        except ValueError:
            key = None
        family_class = cls._families.get(key) if key is not None else None
        if family_class is None:
            raise ValueError(
                f"Unsupported initial family: {family}. "
                f"Supported families: {', '.join(cls.get_supported_families())}"
            )
        return family_class()

    @classmethod
    def get_supported_families(cls) -> list[str]:
        return [family.value for family in cls._families]


def make_initial(spec: InitialSpec, params: RateParams, table: EquilibriumTable, seed: int, L: int,
                 rescale: Optional[RescaleParams] = None) -> InitialData:
    """
    Build deterministic initial data for a named family.

    Args:
        spec: Family name and shape parameters
        params: Rate family
        table: Partition coefficients covering L
        seed: Seed of the generator used by random families
        L: Truncation length of cluster states
        rescale: Scale and cutoff; defaults to eps = spec.eps with the ladder exponent

    Returns:
        A ClusterState or ParticleEnsemble
    """
    rescale = rescale or RescaleParams(eps=spec.eps, x=DEFAULT_SPLIT_EXPONENT)
    ctx = InitialContext(
        params=params, table=table, spec=spec, L=L, rescale=rescale, rng=np.random.default_rng(seed),
    )
    data = InitialConditionFactory.create_family(spec.family).build(ctx)
    logger.debug("initial data family=%s seed=%d eps=%.3g l0=%d", spec.family.value, seed, rescale.eps, rescale.l0)
    return data


def lsw_reference_ensemble(spec: InitialSpec, particles: int = 4000) -> ParticleEnsemble:
    """Fine midpoint discretisation of the continuum bump carrying the excess mass."""
    return profile_ensemble(bump_profile(spec.bump_lo, spec.bump_hi), spec.bump_lo, spec.bump_hi,
                            particles, spec.excess_mass)
