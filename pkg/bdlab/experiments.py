"""
Scenario runners.

Each scenario turns a validated ``ExperimentConfig`` into a ``RunSummary``
plus the frames and snapshots written by ``emit_outputs``. Runs over an
eps ladder are independent and may execute concurrently; their results
are always collected in ladder order.
"""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from bdlab.becker_doring import (
    ClusterState,
    CovectorField,
    CurveRecord,
    bd_rhs,
    curve_J,
    energy_dissipation_residual,
    energy_gradient,
    integrate_bd,
    integrate_system,
    mass,
)
from bdlab.database import get_session
from bdlab.factory import lsw_reference_ensemble, make_initial
from bdlab.integrators import cumulative_quadrature, quadrature
from bdlab.lsw import (
    LSWCurveRecord,
    MeasureDictionary,
    ParticleEnsemble,
    first_moment,
    integrate_lsw,
    lsw_action,
    lsw_curve_J,
    lsw_dissipation,
    lsw_energy,
    measure_distance,
    solution_potential,
)
from bdlab.models import ConvergenceRecord, RunRecord
from bdlab.networks import (
    ModifiedBeckerDoringSystem,
    NetworkSystem,
    ReactionNetwork,
    build_becker_doring_network,
    conservation_laws,
    load_network,
    modified_bd_energy,
    modified_bd_residual,
    rn_gradient_residual,
    rn_rhs,
    EXACT_NULL_SPACE_LIMIT,
)
from bdlab.output import config_hash, emit_outputs, time_series_frame
from bdlab.rates import (
    EquilibriumTable,
    equilibrium,
    mass_function,
    partition_coeffs,
    saturation_mass,
    solve_fugacity,
)
from bdlab.rescaling import (
    csiszar_pinsker_diagnostics,
    curve_J_eps,
    discrete_continuity_residual,
    energy_scale,
    macroscopic_u_eps,
    monomer_excess,
    monomer_macro_inequality,
    project_mac,
    quasistationary_certificate,
    rescaled_action_dissipation,
    rescaled_energies,
    time_scale,
)
from bdlab.schemas import (
    ConvergenceRow,
    ExperimentConfig,
    LSWParams,
    RescaleParams,
    RunSummary,
    Scenario,
)

logger = logging.getLogger(__name__)

GRADIENT_TOL = 1e-10
EQUIVALENCE_TOL = 1e-12
CERTIFICATE_TOL = 1e-12
BD_NETWORK_MAX_L = 64


@dataclass
class ScenarioOutput:
    """Frames and snapshots produced by a scenario, keyed by file stem."""
    series: Dict[str, pd.DataFrame] = field(default_factory=dict)
    snapshots: Dict[str, Union[ClusterState, ParticleEnsemble]] = field(default_factory=dict)
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)


@dataclass
class RescaledRun:
    """One rung of the eps ladder integrated on the rescaled clock."""
    rescale: RescaleParams
    table: EquilibriumTable
    state0: ClusterState
    curve: CurveRecord

    @property
    def eps(self) -> float:
        return self.rescale.eps

    @property
    def key(self) -> str:
        return f"{self.eps:g}"


def sample_times(config: ExperimentConfig) -> np.ndarray:
    """Shared sample times 0 = t_0 < ... < t_{samples-1} = T."""
    return np.linspace(0.0, config.T, config.samples)


def ladder_length(config: ExperimentConfig, eps: float) -> int:
    """Truncation length of a rung: the config L, enlarged until the bump fits with room to spread."""
    needed = math.ceil(config.rescaling.truncation_factor * config.initial.bump_hi / eps)
    return max(config.L, needed)


def lsw_params(config: ExperimentConfig) -> Optional[LSWParams]:
    """LSW parameters of the macroscopic limit; None without surface tension."""
    if config.rates.q == 0:
        return None
    return LSWParams.from_rates(config.rates, config.initial.excess_mass)


def run_rescaled(config: ExperimentConfig, eps: float) -> RescaledRun:
    """Integrate one rung of the ladder on the clock eps^-(1 - alpha + gamma)."""
    params = config.rates
    rescale = config.rescaling.rung(eps)
    L = ladder_length(config, eps)
    table = partition_coeffs(params, L)
    state0 = make_initial(config.initial, params, table, config.seed, L, rescale)
    logger.info("rescaled run eps=%g l0=%d L=%d T=%g", eps, rescale.l0, L, config.T)
    curve = integrate_bd(
        params, table, state0, config.T, config.integrator, z=params.z_s,
        time_scale=time_scale(params, eps), sample_times=list(sample_times(config)[1:]),
    )
    return RescaledRun(rescale=rescale, table=table, state0=state0, curve=curve)


def run_ladder(config: ExperimentConfig) -> List[RescaledRun]:
    """Run every rung; results are returned in ladder order regardless of completion order."""
    eps_values = list(config.rescaling.eps)
    if config.workers == 1 or len(eps_values) == 1:
        return [run_rescaled(config, eps) for eps in eps_values]
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(lambda eps: run_rescaled(config, eps), eps_values))


def _finite_values(values: Dict[str, float]) -> Dict[str, Optional[float]]:
    return {name: (float(v) if math.isfinite(v) else None) for name, v in values.items()}


def _max_increase(values: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    return max(0.0, float(np.max(np.diff(values)))) / (1.0 + float(np.max(np.abs(values))))


def certify_bd_curve(summary: RunSummary, config: ExperimentConfig, table: EquilibriumTable,
                     curve: CurveRecord, suffix: str = "", eps: Optional[float] = None) -> None:
    """Mass drift, energy–dissipation balance, J and monotone energy of a solver curve."""
    bounds = config.bounds
    masses = curve.states @ np.arange(1, curve.states.shape[1] + 1)
    drift = float(np.max(np.abs(masses - masses[0]))) / masses[0]
    summary.certify(f"mass_drift{suffix}", drift, bounds.mass_drift)
    delta_F = float(curve.F[-1] - curve.F[0])
    ed = abs(energy_dissipation_residual(curve, config.integrator.quadrature))
    summary.certify(
        f"energy_dissipation{suffix}", ed,
        max(bounds.energy_dissipation_abs, bounds.energy_dissipation_rel * abs(delta_F)),
    )
    if eps is None:
        J = curve_J(config.rates, table, curve, config.rates.z_s, config.integrator.quadrature)
    else:
        J = curve_J_eps(config.rates, table, curve, eps, config.integrator.quadrature)
    summary.certify(f"J{suffix}", abs(J.value), bounds.j_rel * max(J.scale, np.finfo(float).tiny))
    summary.certify(f"energy_monotone{suffix}", _max_increase(curve.F), config.integrator.energy_slack)
    summary.record(f"truncation_metric{suffix}", curve.truncation_metric)


def rescaled_series(config: ExperimentConfig, run: RescaledRun) -> pd.DataFrame:
    """Per-sample rescaled energies, dissipations and supersaturations of one rung."""
    params = config.rates
    limit = lsw_params(config)
    sampled = run.curve.at_samples()
    l0 = run.rescale.l0
    s = energy_scale(params, run.eps)
    columns: Dict[str, List[float]] = {name: [] for name in (
        "mass", "F_mic_eps", "F_mac_eps", "D_eps", "D_mic_eps", "D_mac_eps",
        "h_eps", "u_eps", "E_lsw", "D_lsw",
    )}
    for n in sampled.states:
        state = ClusterState(n)
        energies = rescaled_energies(params, run.table, state, run.rescale)
        dissipations = rescaled_action_dissipation(params, state, None, run.rescale)
        columns["mass"].append(mass(state))
        columns["F_mic_eps"].append(energies.F_mic)
        columns["F_mac_eps"].append(energies.F_mac)
        columns["D_eps"].append(dissipations.D)
        columns["D_mic_eps"].append(dissipations.D_mic)
        columns["D_mac_eps"].append(dissipations.D_mac)
        columns["h_eps"].append(monomer_excess(params, state, run.eps))
        try:
            u = macroscopic_u_eps(params, state, run.eps, l0, config.u_eps_omit_z_s)
        except ValueError:
            u = math.nan
        columns["u_eps"].append(u)
        ensemble = project_mac(state, run.eps, l0)
        if limit is not None and ensemble.size:
            columns["E_lsw"].append(lsw_energy(limit, ensemble))
            columns["D_lsw"].append(lsw_dissipation(limit, ensemble))
        else:
            columns["E_lsw"].append(math.nan)
            columns["D_lsw"].append(math.nan)
    J_partial = s * (sampled.F - sampled.F[0] + sampled.dissipated - sampled.dissipated[0])
    return time_series_frame({"t": sampled.times, "F": sampled.F, "J_partial": J_partial, **columns})


def equilibrium_distance(table: EquilibriumTable, state: ClusterState, z: float) -> float:
    """Mass-weighted l1 distance sum_l l |n_l - omega_l(z)| over the truncation."""
    omega = equilibrium(table, z, state.L)
    return float(np.arange(1, state.L + 1) @ np.abs(state.n - omega))


def certify_equilibrium(summary: RunSummary, config: ExperimentConfig, table: EquilibriumTable,
                        final: ClusterState, rho0: float) -> None:
    """Certify relaxation to the equilibrium of the truncated system carrying mass rho0."""
    params = config.rates
    held = mass_function(table, params.z_s)
    if rho0 > held:
        summary.record("equilibrium_distance", None,
                       f"L={table.L} holds mass {held:.6g} < rho0 at z_s: truncation too short")
        return
    z = solve_fugacity(params, rho0, table=table)
    summary.record("fugacity", z)
    summary.certify("equilibrium_distance", equilibrium_distance(table, final, z),
                    config.bounds.equilibrium_distance)


def _bd_relax(config: ExperimentConfig, summary: RunSummary) -> ScenarioOutput:
    params = config.rates
    table = partition_coeffs(params, config.L)
    rescale = RescaleParams(eps=config.initial.eps, x=config.rescaling.x)
    state0 = make_initial(config.initial, params, table, config.seed, config.L, rescale)
    curve = integrate_bd(params, table, state0, config.T, config.integrator, z=params.z_s,
                         sample_times=list(sample_times(config)[1:]))
    certify_bd_curve(summary, config, table, curve)
    rho0 = mass(state0)
    summary.record("rho0", rho0)
    summary.record("delta_F", float(curve.F[-1] - curve.F[0]))
    summary.record("dissipation_integral", float(curve.dissipated[-1]))
    final = curve.state(-1)
    if params.q > 0:
        rho_s = saturation_mass(params)
        summary.record("rho_s", rho_s)
        if rho0 < rho_s:
            certify_equilibrium(summary, config, table, final, rho0)
        else:
            summary.record("equilibrium_distance", None, "supercritical mass: no equilibrium with this mass")
    else:
        summary.record("equilibrium_distance", None, "q = 0: saturation mass is infinite")
    sampled = curve.at_samples()
    series = time_series_frame({
        "t": sampled.times,
        "mass": sampled.states @ np.arange(1, config.L + 1),
        "F": sampled.F,
        "J_partial": sampled.F - sampled.F[0] + sampled.dissipated - sampled.dissipated[0],
    })
    return ScenarioOutput(series={"timeseries": series}, snapshots={"initial": state0, "final": final})


def _bd_rescaled(config: ExperimentConfig, summary: RunSummary) -> ScenarioOutput:
    output = ScenarioOutput()
    for run in run_ladder(config):
        suffix = f"[eps={run.key}]"
        certify_bd_curve(summary, config, run.table, run.curve, suffix, eps=run.eps)
        frame = rescaled_series(config, run)
        output.series[f"timeseries_eps{run.key}"] = frame
        output.snapshots[f"final_eps{run.key}"] = run.curve.state(-1)
        sampled = run.curve.at_samples()
        final = sampled.state(-1)
        energies = rescaled_energies(config.rates, run.table, final, run.rescale)
        summary.per_eps[run.key] = _finite_values({
            "l0": float(run.rescale.l0),
            "L": float(run.state0.L),
            "F_eps_final": energies.F_total,
            "lsw_ratio_final": energies.lsw_ratio,
            "continuity_residual": discrete_continuity_residual(config.rates, sampled, run.eps, run.rescale.l0),
            "accepted_steps": float(run.curve.stats.accepted),
        })
    return output


def _lsw(config: ExperimentConfig, summary: RunSummary) -> ScenarioOutput:
    params = config.rates
    if params.q == 0:
        raise ValueError("the LSW scenario needs q > 0")
    eps = config.initial.eps
    L = ladder_length(config, eps)
    table = partition_coeffs(params, L)
    ensemble0 = make_initial(config.initial, params, table, config.seed, L,
                             RescaleParams(eps=eps, x=config.rescaling.x))
    M0 = first_moment(ensemble0)
    limit = LSWParams.from_rates(params, M0)
    curve = integrate_lsw(limit, ensemble0, config.T, config.integrator,
                          sample_times=list(sample_times(config)[1:]))
    certify_lsw_curve(summary, config, limit, curve, M0)
    sampled = curve.at_samples()
    series = time_series_frame({
        "t": sampled.times,
        "mass": [first_moment(ens) + v for ens, v in zip(sampled.ensembles, sampled.vanished_trace)],
        "u_eps": sampled.u,
        "E_lsw": sampled.E,
        "D_lsw": sampled.D,
        "J_partial": sampled.E - sampled.E[0] + sampled.dissipated - sampled.dissipated[0],
    })
    return ScenarioOutput(series={"timeseries": series},
                          snapshots={"initial": ensemble0, "final": sampled.ensembles[-1]})


def certify_lsw_curve(summary: RunSummary, config: ExperimentConfig, limit: LSWParams,
                      curve: LSWCurveRecord, M0: float, suffix: str = "") -> None:
    """First-moment drift (retired mass added back), energy–dissipation balance and J."""
    bounds = config.bounds
    moments = np.array([first_moment(ens) for ens in curve.ensembles]) + curve.vanished_trace
    summary.certify(f"first_moment_drift{suffix}", float(np.max(np.abs(moments - M0))) / M0,
                    bounds.first_moment_drift)
    J = lsw_curve_J(limit, curve, config.integrator.quadrature)
    ed = abs(J.energy_change + J.dissipation_integral)
    summary.certify(
        f"energy_dissipation{suffix}", ed,
        max(bounds.energy_dissipation_abs, bounds.energy_dissipation_rel * abs(J.energy_change)),
    )
    summary.certify(f"J{suffix}", abs(J.value), bounds.j_rel * max(J.scale, np.finfo(float).tiny))
    summary.record(f"vanished_mass{suffix}", curve.vanished_mass)
    summary.record(f"retired{suffix}", float(curve.retired))
    summary.record(f"u_final{suffix}", float(curve.u[-1]))


def _trend_index(times: np.ndarray, target: float) -> int:
    return int(np.argmin(np.abs(times - target)))


def _strictly_decreasing(values: List[float]) -> bool:
    return all(v is not None and math.isfinite(v) for v in values) and all(b < a for a, b in zip(values, values[1:]))


def reference_ensemble(config: ExperimentConfig, top: RescaledRun) -> ParticleEnsemble:
    """LSW start of the converge scenario: the ladder-top initial state projected, or the continuum bump."""
    if config.lsw.reference == "continuum":
        return lsw_reference_ensemble(config.initial, config.lsw.reference_particles)
    return project_mac(top.state0, top.eps, top.rescale.l0)


def rescaled_action_rates(config: ExperimentConfig, run: RescaledRun, sampled: CurveRecord) -> np.ndarray:
    """A^eps(n, -DF(n)) at every sample of a rung."""
    rates = np.empty(sampled.times.size)
    for i in range(sampled.times.size):
        state = sampled.state(i)
        gradient = energy_gradient(run.table, state, config.rates.z_s)
        phi = CovectorField(phi=-gradient.phi, mask=gradient.mask)
        rates[i] = rescaled_action_dissipation(config.rates, state, phi, run.rescale).A
    return rates


def lsw_action_rates(limit: LSWParams, reference: LSWCurveRecord) -> np.ndarray:
    """A(nu, w) at the solution potential w for every sample of the reference."""
    return np.array([lsw_action(limit, ens, solution_potential(limit, ens)) for ens in reference.ensembles])


def _converge(config: ExperimentConfig, summary: RunSummary) -> ScenarioOutput:
    params = config.rates
    if lsw_params(config) is None:
        raise ValueError("the converge scenario needs q > 0")
    output = ScenarioOutput()
    runs = run_ladder(config)
    reference0 = reference_ensemble(config, runs[0])
    M0 = first_moment(reference0)
    limit = LSWParams.from_rates(params, M0)
    reference = integrate_lsw(limit, reference0, config.T, config.integrator,
                              sample_times=list(sample_times(config)[1:]))
    certify_lsw_curve(summary, config, limit, reference, M0, "[reference]")
    reference = reference.at_samples()
    summary.record("reference_first_moment", M0)
    dictionary = MeasureDictionary(config.lsw.dictionary_lo, config.lsw.dictionary_hi, config.lsw.dictionary_hats)
    limit_actions = cumulative_quadrature(reference.times, lsw_action_rates(limit, reference))
    output.series["timeseries_reference"] = time_series_frame({
        "t": reference.times, "u_eps": reference.u, "E_lsw": reference.E, "D_lsw": reference.D,
    })
    output.snapshots["reference_initial"] = reference0
    for run in runs:
        certify_bd_curve(summary, config, run.table, run.curve, f"[eps={run.key}]", eps=run.eps)
        output.series[f"timeseries_eps{run.key}"] = rescaled_series(config, run)
        sampled = run.curve.at_samples()
        if sampled.times.size != reference.times.size:
            raise ValueError(f"eps={run.key}: sample grid differs from the reference grid")
        s = energy_scale(params, run.eps)
        actions = cumulative_quadrature(sampled.times, rescaled_action_rates(config, run, sampled))
        for i, t in enumerate(sampled.times):
            ensemble = project_mac(sampled.state(i), run.eps, run.rescale.l0)
            F_eps = s * float(sampled.F[i])
            summary.convergence.append(ConvergenceRow(
                eps=run.eps, t=float(t),
                distance=measure_distance(ensemble, reference.ensembles[i], dictionary),
                energy_eps=F_eps, energy_limit=float(reference.E[i]),
                energy_gap=F_eps - lsw_energy(limit, ensemble) if ensemble.size else None,
                action_eps=float(actions[i]), action_limit=float(limit_actions[i]),
                dissipation_eps=s * float(sampled.dissipated[i] - sampled.dissipated[0]),
                dissipation_limit=float(reference.dissipated[i] - reference.dissipated[0]),
            ))
    table = pd.DataFrame([row.model_dump() for row in summary.convergence])
    output.tables["convergence"] = table
    times = reference.times
    for label, target in (("half", 0.5 * config.T), ("final", config.T)):
        index = _trend_index(times, target)
        at_t = table[np.isclose(table["t"], times[index])].sort_values("eps", ascending=False)
        summary.trends[f"distance_decreasing_{label}"] = _strictly_decreasing(list(at_t["distance"]))
        summary.trends[f"energy_gap_decreasing_{label}"] = _strictly_decreasing(list(at_t["energy_gap"]))
    return output


def _quasistat(config: ExperimentConfig, summary: RunSummary) -> ScenarioOutput:
    params = config.rates
    output = ScenarioOutput()
    gaps: List[float] = []
    mean_micro: List[float] = []
    rho_s = saturation_mass(params) if params.q > 0 else None
    for run in run_ladder(config):
        suffix = f"[eps={run.key}]"
        certify_bd_curve(summary, config, run.table, run.curve, suffix, eps=run.eps)
        output.series[f"timeseries_eps{run.key}"] = rescaled_series(config, run)
        curve = run.curve
        l0 = run.rescale.l0
        h = np.empty(curve.times.size)
        u = np.empty(curve.times.size)
        micro = np.empty(curve.times.size)
        violation = 0.0
        margin = math.inf
        for i in range(curve.times.size):
            state = curve.state(i)
            h[i] = monomer_excess(params, state, run.eps)
            try:
                u[i] = macroscopic_u_eps(params, state, run.eps, l0, config.u_eps_omit_z_s)
            except ValueError:
                u[i] = math.nan
            micro[i] = rescaled_energies(params, run.table, state, run.rescale).F_mic
            H, bound = quasistationary_certificate(params, run.table, state, l0)
            violation = max(violation, max(0.0, H - bound) / (1.0 + H))
            lhs, rhs = monomer_macro_inequality(params, state, l0)
            margin = min(margin, rhs - lhs)
        summary.certify(f"quasistationary_bound{suffix}", violation, CERTIFICATE_TOL)
        gap, _ = quadrature(curve.times, (h - u) ** 2, config.integrator.quadrature)
        micro_integral, _ = quadrature(curve.times, micro, config.integrator.quadrature)
        gaps.append(gap)
        mean_micro.append(micro_integral / config.T)
        entry = {
            "l0": float(l0),
            "h_minus_u_sq_integral": gap,
            "F_mic_time_average": micro_integral / config.T,
            "monomer_macro_margin": margin,
        }
        if rho_s is not None:
            diagnostics = csiszar_pinsker_diagnostics(run.table, curve.state(-1), l0, rho_s)
            entry["pinsker_weighted_l1_ratio"] = diagnostics.weighted_l1_ratio
            entry["excess_mass_residual"] = diagnostics.excess_mass_residual
        summary.per_eps[run.key] = _finite_values(entry)
    summary.trends["h_minus_u_decreasing"] = _strictly_decreasing(gaps)
    summary.trends["F_mic_decreasing"] = _strictly_decreasing(mean_micro)
    return output


def network_initial_state(omega: np.ndarray, seed: int) -> np.ndarray:
    """Strictly positive perturbation omega exp(xi / 2) of the reference state."""
    rng = np.random.default_rng(seed)
    return omega * np.exp(0.5 * rng.standard_normal(omega.size))


def _network(config: ExperimentConfig, summary: RunSummary) -> ScenarioOutput:
    params = config.rates
    table: Optional[EquilibriumTable] = None
    if config.network.path is not None:
        net: ReactionNetwork = load_network(config.network.path)
    else:
        L = min(config.L, BD_NETWORK_MAX_L)
        table = partition_coeffs(params, L)
        net = build_becker_doring_network(params, table, L)
    n0 = network_initial_state(net.omega, config.seed)
    summary.certify("gradient_identity", rn_gradient_residual(net, n0), GRADIENT_TOL)
    curve = integrate_system(NetworkSystem(net), n0, config.T, config.integrator,
                             sample_times=list(sample_times(config)[1:]))
    if net.n_species <= EXACT_NULL_SPACE_LIMIT:
        laws = conservation_laws(net)
        summary.record("conservation_laws", float(laws.shape[0]))
        if laws.shape[0]:
            drift = np.abs((curve.states - n0) @ laws.T) / (1.0 + np.abs(laws @ n0))
            summary.certify("conservation_drift", float(np.max(drift)), config.bounds.conservation)
    else:
        summary.record("conservation_laws", None, f"more than {EXACT_NULL_SPACE_LIMIT} species")
    delta_F = float(curve.F[-1] - curve.F[0])
    summary.certify(
        "energy_dissipation", abs(energy_dissipation_residual(curve, config.integrator.quadrature)),
        max(config.bounds.energy_dissipation_abs, config.bounds.energy_dissipation_rel * abs(delta_F)),
    )
    summary.certify("energy_monotone", _max_increase(curve.F), config.integrator.energy_slack)
    summary.record("delta_F", delta_F)
    output = ScenarioOutput()
    sampled = curve.at_samples()
    output.series["timeseries"] = time_series_frame({
        "t": sampled.times, "F": sampled.F,
        "J_partial": sampled.F - sampled.F[0] + sampled.dissipated - sampled.dissipated[0],
    })
    output.tables["species_final"] = pd.DataFrame({"species": list(net.species), "n": sampled.states[-1]})
    if table is not None:
        state0 = ClusterState(n0)
        reference = bd_rhs(params, state0)
        equivalence = float(np.max(np.abs(rn_rhs(net, n0) - reference))) / (1.0 + float(np.max(np.abs(reference))))
        summary.certify("bd_equivalence", equivalence, EQUIVALENCE_TOL)
        _modified_network(config, summary, output, table, n0)
    return output


def _modified_network(config: ExperimentConfig, summary: RunSummary, output: ScenarioOutput,
                      table: EquilibriumTable, n0: np.ndarray) -> None:
    params = config.rates
    summary.certify("modified_gradient_identity", modified_bd_residual(params, table, n0), GRADIENT_TOL)
    curve = integrate_system(ModifiedBeckerDoringSystem(params, table), n0, config.T, config.integrator,
                             sample_times=list(sample_times(config)[1:]))
    masses = curve.states @ np.arange(1, n0.size + 1)
    summary.certify("modified_mass_drift", float(np.max(np.abs(masses - masses[0]))) / masses[0],
                    config.bounds.mass_drift)
    summary.certify("modified_energy_monotone", _max_increase(curve.F), config.integrator.energy_slack)
    summary.record("modified_delta_F", float(curve.F[-1] - curve.F[0]))
    summary.record("modified_F_final", modified_bd_energy(table, curve.states[-1]))
    sampled = curve.at_samples()
    output.series["timeseries_modified"] = time_series_frame({
        "t": sampled.times, "mass": sampled.states @ np.arange(1, n0.size + 1), "F": sampled.F,
        "J_partial": sampled.F - sampled.F[0] + sampled.dissipated - sampled.dissipated[0],
    })


SCENARIOS: Dict[Scenario, Callable[[ExperimentConfig, RunSummary], ScenarioOutput]] = {
    Scenario.BD_RELAX: _bd_relax,
    Scenario.BD_RESCALED: _bd_rescaled,
    Scenario.LSW: _lsw,
    Scenario.CONVERGE: _converge,
    Scenario.QUASISTAT: _quasistat,
    Scenario.NETWORK: _network,
}


def record_run(config: ExperimentConfig, summary: RunSummary) -> None:
    """Append the run and its convergence rows to the ledger."""
    sessions = get_session(config.out_dir)
    session = next(sessions)
    try:
        run = RunRecord(
            scenario=config.scenario.value, config_hash=config_hash(config), seed=config.seed,
            passed=summary.passed, scalars=summary.scalars,
        )
        session.add(run)
        session.flush()
        for row in summary.convergence:
            session.add(ConvergenceRecord(
                run_id=run.id, eps=row.eps, t=row.t, distance=row.distance, energy_gap=row.energy_gap,
                action_integral=row.action_eps, dissipation_integral=row.dissipation_eps,
            ))
        session.commit()
    except Exception:
        session.rollback()
        raise
    finally:
        sessions.close()


def run_scenario(config: ExperimentConfig, ledger: bool = True) -> RunSummary:
    """
    Run the configured scenario, write its artifacts and append it to the ledger.

    Returns:
        The run summary; ``passed`` is False when any certification failed

    Raises:
        StepSizeUnderflowError: If an integration cannot proceed
        ValueError: If the config cannot be realised (e.g. a bump beyond L)
    """
    start = time.perf_counter()
    summary = RunSummary(scenario=config.scenario)
    logger.info("scenario start name=%s seed=%d hash=%s", config.scenario.value, config.seed, config_hash(config)[:12])
    try:
        output = SCENARIOS[config.scenario](config, summary)
    except Exception:
        logger.error("scenario failed name=%s seed=%d", config.scenario.value, config.seed)
        raise
    wall_time = time.perf_counter() - start
    directory = emit_outputs(summary, config, output.series, output.snapshots, output.tables, wall_time)
    if ledger:
        record_run(config, summary)
    logger.info(
        "scenario done name=%s passed=%s failures=%d dir=%s wall=%.2fs",
        config.scenario.value, summary.passed, len(summary.failures), directory, wall_time,
    )
    return summary
