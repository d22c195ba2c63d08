"""
Unit tests for experiment-file parsing and overrides.
"""
from pathlib import Path

import pytest
from pydantic import ValidationError

from bdlab.schemas import Scenario
from bdlab.settings import apply_overrides, load_config, parse_config

EXPERIMENT = """
[experiment]
scenario = quasistat
seed = 7
L = 64
T = 0.5
samples = 5

[rates]
alpha = 0.0
gamma = 0.5
q = 1.0

[rescaling]
eps = 0.2, 0.1
x = 0.45

[integrator]
rtol = 1e-9
"""


class TestParseConfig:
    """Test suite for parse_config."""

    def test_valid_file(self):
        """Test that sections map onto the nested models."""
        config = parse_config(EXPERIMENT)
        assert config.scenario == Scenario.QUASISTAT
        assert config.seed == 7 and config.L == 64 and config.samples == 5
        assert config.rescaling.eps == [0.2, 0.1]
        assert config.integrator.rtol == 1e-9

    def test_missing_keys_take_defaults(self):
        """Test that an empty file gives the default config."""
        config = parse_config("")
        assert config.scenario == Scenario.BD_RELAX
        assert config.rates.q == 1.0

    def test_unknown_section(self):
        """Test that an unknown section raises ValueError."""
        with pytest.raises(ValueError, match=r"unknown section \[plot\]"):
            parse_config("[plot]\ncolor = red\n")

    def test_unknown_key(self):
        """Test that an unknown key raises ValueError naming the section."""
        with pytest.raises(ValueError, match=r"unknown key 'beta' in \[rates\]"):
            parse_config("[rates]\nbeta = 1.0\n")

    def test_out_of_range_value(self):
        """Test that a value outside its range raises ValidationError."""
        with pytest.raises(ValidationError) as exc_info:
            parse_config("[rates]\ngamma = 1.5\n")
        assert "gamma" in str(exc_info.value)

    def test_malformed_text(self):
        """Test that INI syntax errors surface as ValueError."""
        with pytest.raises(ValueError):
            parse_config("no section header\n")


class TestOverrides:
    """Test suite for load_config and apply_overrides."""

    def test_load_config_with_overrides(self, tmp_path, monkeypatch):
        """Test that the --out and --seed overrides win over the file."""
        monkeypatch.delenv("BDLAB_OUT_DIR", raising=False)
        path = tmp_path / "run.ini"
        path.write_text(EXPERIMENT)
        config = load_config(path, out_dir=tmp_path / "out", seed=3)
        assert config.out_dir == tmp_path / "out"
        assert config.seed == 3

    def test_environment_out_dir(self, tmp_path, monkeypatch):
        """Test that BDLAB_OUT_DIR replaces the file's output directory."""
        monkeypatch.setenv("BDLAB_OUT_DIR", str(tmp_path / "env"))
        config = apply_overrides(parse_config(EXPERIMENT))
        assert config.out_dir == tmp_path / "env"

    def test_argument_beats_environment(self, tmp_path, monkeypatch):
        """Test that an explicit out_dir wins over BDLAB_OUT_DIR."""
        monkeypatch.setenv("BDLAB_OUT_DIR", str(tmp_path / "env"))
        config = apply_overrides(parse_config(EXPERIMENT), out_dir=tmp_path / "arg")
        assert config.out_dir == Path(tmp_path / "arg")

    def test_no_overrides(self, monkeypatch):
        """Test that the config is returned unchanged without overrides."""
        monkeypatch.delenv("BDLAB_OUT_DIR", raising=False)
        monkeypatch.chdir(Path(__file__).parent)
        config = parse_config(EXPERIMENT)
        assert apply_overrides(config) is config
