"""
Integration tests for the scenarios, the invariant suite and the command line.
"""
import json

import pandas as pd
import pytest

from bdlab.becker_doring import ClusterState
from bdlab.checks import random_balanced_network, run_invariant_checks
from bdlab.database import get_session
from bdlab.experiments import (
    equilibrium_distance,
    ladder_length,
    run_ladder,
    run_scenario,
    sample_times,
)
from bdlab.factory import make_initial
from bdlab.lsw import first_moment
from bdlab.main import EXIT_CONFIG, EXIT_OK, main
from bdlab.models import RunRecord
from bdlab.output import run_directory
from bdlab.rates import equilibrium, partition_coeffs
from bdlab.rescaling import project_mac
from bdlab.schemas import ConvergenceRow, ExperimentConfig

SMALL = {"L": 32, "T": 1.0, "samples": 5, "integrator": {"rtol": 1e-10, "atol": 1e-16, "dt_init": 1e-4}}
RELAXED = {**SMALL, "L": 12, "T": 400.0, "initial": {"family": "pure-monomer", "rho0": 1.0}}
LADDER = {**SMALL, "L": 16, "T": 0.2, "samples": 3, "rescaling": {"eps": [0.2, 0.1], "x": 0.49}}


@pytest.fixture(autouse=True)
def no_env_out_dir(monkeypatch):
    monkeypatch.delenv("BDLAB_OUT_DIR", raising=False)


class TestHelpers:
    """Test suite for the sample grid and ladder truncation."""

    def test_sample_times(self):
        """Test the shared uniform grid on [0, T]."""
        config = ExperimentConfig(T=2.0, samples=5)
        assert list(sample_times(config)) == [0.0, 0.5, 1.0, 1.5, 2.0]

    def test_ladder_length(self):
        """Test L = max(config.L, ceil(truncation_factor bump_hi / eps))."""
        assert ladder_length(ExperimentConfig(L=16), 0.25) == 24
        assert ladder_length(ExperimentConfig(L=512), 0.25) == 512

    def test_equilibrium_distance(self, params):
        """Test that the distance vanishes at omega(z) and weights deviations by size."""
        table = partition_coeffs(params, 8)
        omega = equilibrium(table, 0.5)
        assert equilibrium_distance(table, ClusterState(omega), 0.5) == 0.0
        perturbed = omega.copy()
        perturbed[2] += 0.1
        assert equilibrium_distance(table, ClusterState(perturbed), 0.5) == pytest.approx(0.3)


@pytest.mark.slow
class TestScenarios:
    """Test suite for complete scenario runs on small truncations."""

    def test_bd_relax(self, tmp_path):
        """Test that a long subcritical relaxation reaches equilibrium and is recorded."""
        config = ExperimentConfig.model_validate({**RELAXED, "out_dir": tmp_path})
        summary = run_scenario(config)
        assert summary.passed, summary.failures
        assert summary.scalars["equilibrium_distance"] <= 1e-6
        assert 0 < summary.scalars["fugacity"] < config.rates.z_s
        directory = run_directory(config)
        assert (directory / "summary.json").exists()
        frame = pd.read_csv(directory / "timeseries.csv")
        assert len(frame) == 5
        session = next(get_session(tmp_path))
        try:
            assert session.query(RunRecord).count() == 1
        finally:
            session.close()

    def test_short_relaxation_fails_equilibrium(self, tmp_path):
        """Test that a run stopped far from equilibrium fails certification."""
        config = ExperimentConfig.model_validate({
            **RELAXED, "L": 32, "T": 0.05, "out_dir": tmp_path,
        })
        summary = run_scenario(config, ledger=False)
        assert not summary.passed
        assert "equilibrium_distance" in summary.failures
        assert summary.scalars["equilibrium_distance"] > 1e-6

    def test_network_scenario(self, tmp_path):
        """Test the Becker–Döring network with its modified variant."""
        config = ExperimentConfig.model_validate({**SMALL, "scenario": "network", "out_dir": tmp_path})
        summary = run_scenario(config, ledger=False)
        assert summary.scalars["gradient_identity"] <= 1e-10
        assert summary.scalars["bd_equivalence"] <= 1e-12
        assert summary.scalars["conservation_laws"] == 1.0
        assert summary.scalars["modified_gradient_identity"] <= 1e-10

    def test_lsw_scenario(self, tmp_path):
        """Test a particle run from a log-uniform ensemble."""
        config = ExperimentConfig.model_validate({
            **SMALL, "scenario": "lsw", "out_dir": tmp_path,
            "initial": {"family": "log-uniform-particles", "particles": 40},
        })
        summary = run_scenario(config, ledger=False)
        assert summary.scalars["first_moment_drift"] <= 1e-8

    def test_outputs_are_reproducible(self, tmp_path):
        """Test that two runs of one config write identical numeric files."""
        config = ExperimentConfig.model_validate({
            **SMALL, "out_dir": tmp_path, "initial": {"family": "pure-monomer", "rho0": 1.5},
        })
        run_scenario(config, ledger=False)
        first = (run_directory(config) / "timeseries.csv").read_text()
        run_scenario(config, ledger=False)
        assert (run_directory(config) / "timeseries.csv").read_text() == first


@pytest.mark.slow
class TestLadderScenarios:
    """Test suite for eps-ladder scenarios on a two-rung ladder with l0 = 2 and 3."""

    @staticmethod
    def ladder_config(tmp_path, scenario, **overrides):
        return ExperimentConfig.model_validate({**LADDER, "scenario": scenario, "out_dir": tmp_path, **overrides})

    def test_run_ladder_keeps_ladder_order(self, tmp_path):
        """Test that concurrent rungs come back in ladder order with their cutoffs."""
        runs = run_ladder(self.ladder_config(tmp_path, "bd-rescaled", workers=2))
        assert [run.eps for run in runs] == [0.2, 0.1]
        assert [run.rescale.l0 for run in runs] == [2, 3]
        assert [run.state0.L for run in runs] == [30, 60]
        assert all(run.curve.times[-1] == pytest.approx(0.2) for run in runs)

    def test_bd_rescaled(self, tmp_path):
        """Test per-eps diagnostics and one time series per rung."""
        config = self.ladder_config(tmp_path, "bd-rescaled")
        summary = run_scenario(config, ledger=False)
        assert summary.passed, summary.failures
        assert set(summary.per_eps) == {"0.2", "0.1"}
        assert summary.per_eps["0.1"]["l0"] == 3.0
        directory = run_directory(config)
        assert (directory / "timeseries_eps0.2.csv").exists()
        assert (directory / "timeseries_eps0.1.csv").exists()

    def test_converge(self, tmp_path):
        """Test the convergence table, its trends and the action columns."""
        config = self.ladder_config(tmp_path, "converge")
        summary = run_scenario(config, ledger=False)
        assert not [name for name in summary.failures if "[eps=" in name], summary.failures
        table = pd.read_csv(run_directory(config) / "convergence.csv")
        assert list(table.columns) == list(ConvergenceRow.model_fields)
        assert len(table) == 6
        assert sorted(set(table["eps"])) == [0.1, 0.2]
        assert set(summary.trends) == {
            "distance_decreasing_half", "distance_decreasing_final",
            "energy_gap_decreasing_half", "energy_gap_decreasing_final",
        }
        start = table[table["t"] == 0.0]
        assert (start["action_eps"] == 0.0).all() and (start["action_limit"] == 0.0).all()
        end = table[table["t"] == table["t"].max()]
        assert (end["action_eps"] > 0).all() and (end["action_limit"] > 0).all()

    def test_converge_starts_from_projected_ladder_top(self, tmp_path):
        """Test that the LSW reference starts from the projected eps = 0.2 initial state."""
        config = self.ladder_config(tmp_path, "converge")
        summary = run_scenario(config, ledger=False)
        rung = config.rescaling.rung(0.2)
        L = ladder_length(config, 0.2)
        state0 = make_initial(config.initial, config.rates, partition_coeffs(config.rates, L), config.seed, L, rung)
        expected = first_moment(project_mac(state0, 0.2, rung.l0))
        assert summary.scalars["reference_first_moment"] == pytest.approx(expected, rel=1e-12)

    def test_converge_continuum_reference(self, tmp_path):
        """Test that the opt-in continuum reference carries the bump's excess mass."""
        config = self.ladder_config(tmp_path, "converge", lsw={"reference": "continuum", "reference_particles": 50})
        summary = run_scenario(config, ledger=False)
        assert summary.scalars["reference_first_moment"] == pytest.approx(config.initial.excess_mass, rel=1e-9)

    def test_quasistat(self, tmp_path):
        """Test per-eps quasistationary diagnostics and both trends."""
        summary = run_scenario(self.ladder_config(tmp_path, "quasistat"), ledger=False)
        assert set(summary.per_eps) == {"0.2", "0.1"}
        assert "h_minus_u_sq_integral" in summary.per_eps["0.1"]
        assert summary.scalars["quasistationary_bound[eps=0.2]"] <= 1e-12
        assert "quasistationary_bound[eps=0.1]" in summary.scalars
        assert set(summary.trends) == {"h_minus_u_decreasing", "F_mic_decreasing"}
        assert not [name for name in summary.failures if not name.startswith("quasistationary_bound")]


@pytest.mark.slow
class TestInvariantSuite:
    """Test suite for the invariant checks."""

    def test_all_invariants_hold(self):
        """Test that the default rate family passes every invariant."""
        report = run_invariant_checks(seed=0)
        assert report.passed, report.failures
        assert {"log_mean_bounds", "conservation_laws", "gradient_identity[L=256]"} <= set(report.residuals)

    def test_random_network_is_balanced(self, rng):
        """Test that generated networks pass the detailed-balance check."""
        for _ in range(5):
            net = random_balanced_network(rng)
            assert net.n_species >= 3


class TestCommandLine:
    """Test suite for the bdlab command."""

    def test_invalid_config_exits_2(self, tmp_path):
        """Test that a value outside its range gives exit status 2."""
        path = tmp_path / "bad.ini"
        path.write_text("[rates]\ngamma = 2.0\n")
        assert main(["simulate", "--config", str(path), "--out", str(tmp_path), "--quiet"]) == EXIT_CONFIG

    def test_unknown_key_exits_2(self, tmp_path):
        """Test that an unknown key gives exit status 2."""
        path = tmp_path / "bad.ini"
        path.write_text("[experiment]\ncolour = blue\n")
        assert main(["simulate", "--config", str(path), "--quiet"]) == EXIT_CONFIG

    def test_missing_config_file_exits_2(self, tmp_path):
        """Test that an unreadable config file gives exit status 2."""
        assert main(["simulate", "--config", str(tmp_path / "absent.ini"), "--quiet"]) == EXIT_CONFIG

    def test_sweep_needs_ladder_scenario(self, tmp_path):
        """Test that sweeping a non-ladder scenario is a configuration error."""
        assert main(["sweep", "--out", str(tmp_path), "--quiet"]) == EXIT_CONFIG

    def test_expand_ql_rejects_bad_sizes(self, tmp_path):
        """Test that malformed --sizes gives exit status 2."""
        assert main(["expand-ql", "--out", str(tmp_path), "--sizes", "a,b", "--quiet"]) == EXIT_CONFIG

    @pytest.mark.slow
    def test_expand_ql_writes_table(self, tmp_path):
        """Test that expand-ql writes one row per size with the constants."""
        code = main(["expand-ql", "--out", str(tmp_path), "--sizes", "64,256", "--L-limit", "100000", "--quiet"])
        assert code == EXIT_OK
        frame = pd.read_csv(tmp_path / "expansion.csv")
        assert list(frame["l"]) == [64, 256]
        assert {"C1", "F0", "relative_error"} <= set(frame.columns)

    @pytest.mark.slow
    def test_check_writes_report(self, tmp_path):
        """Test that check writes check.json and exits 0."""
        assert main(["check", "--out", str(tmp_path), "--seed", "1", "--quiet"]) == EXIT_OK
        report = json.loads((tmp_path / "check.json").read_text())
        assert report["passed"] is True
