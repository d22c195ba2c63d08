"""
Process settings and experiment-file loading.

Experiment files are INI text with one section per parameter group; the
only value read from the environment is the output directory override
``BDLAB_OUT_DIR`` (also from a ``.env`` file).
"""
import configparser
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import BaseModel
from pydantic_settings import BaseSettings, SettingsConfigDict

from bdlab.schemas import (
    CertificationBounds,
    ExperimentConfig,
    InitialSpec,
    IntegratorControls,
    LSWSettings,
    NetworkSpec,
    RateParams,
    RescaleLadder,
)

logger = logging.getLogger(__name__)

EXPERIMENT_KEYS = {"scenario", "seed", "L", "T", "samples", "workers", "out_dir", "u_eps_omit_z_s"}
SECTIONS: Dict[str, type[BaseModel]] = {
    "rates": RateParams,
    "rescaling": RescaleLadder,
    "initial": InitialSpec,
    "lsw": LSWSettings,
    "integrator": IntegratorControls,
    "bounds": CertificationBounds,
    "network": NetworkSpec,
}
LIST_KEYS = {("rescaling", "eps")}


class Settings(BaseSettings):
    """Settings loaded from the environment."""
    out_dir: Optional[Path] = None

    model_config = SettingsConfigDict(env_prefix="BDLAB_", env_file=".env", extra="ignore")


def _section_values(parser: configparser.ConfigParser, section: str, allowed: set[str]) -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    for key, raw in parser.items(section):
        if key not in allowed:
            raise ValueError(f"unknown key {key!r} in [{section}]; allowed: {', '.join(sorted(allowed))}")
        if (section, key) in LIST_KEYS:
            values[key] = [item.strip() for item in raw.split(",") if item.strip()]
        else:
            values[key] = raw.strip()
    return values


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    """
    Validate INI text into an ExperimentConfig.

    Missing keys take the model defaults; unknown sections or keys raise ValueError.

    Raises:
        ValueError: On unknown sections or keys
        pydantic.ValidationError: On values outside their documented ranges
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ValueError(f"{source}: {exc}") from exc
    data: Dict[str, Any] = {}
    for section in parser.sections():
        if section == "experiment":
            data.update(_section_values(parser, section, EXPERIMENT_KEYS))
        elif section in SECTIONS:
            data[section] = _section_values(parser, section, set(SECTIONS[section].model_fields))
        else:
            raise ValueError(f"{source}: unknown section [{section}]")
    return ExperimentConfig.model_validate(data)


def load_config(path: Union[str, Path], out_dir: Optional[Path] = None,
                seed: Optional[int] = None) -> ExperimentConfig:
    """
    Read an experiment file and apply overrides.

    The output directory resolves as ``out_dir`` argument, then
    ``BDLAB_OUT_DIR``, then the file's value.
    """
    path = Path(path)
    config = parse_config(path.read_text(encoding="utf-8"), source=str(path))
    return apply_overrides(config, out_dir=out_dir, seed=seed)


def apply_overrides(config: ExperimentConfig, out_dir: Optional[Path] = None,
                    seed: Optional[int] = None) -> ExperimentConfig:
    updates: Dict[str, Any] = {}
    env_dir = Settings().out_dir
    if out_dir is not None:
        updates["out_dir"] = Path(out_dir)
    elif env_dir is not None:
        updates["out_dir"] = env_dir
    if seed is not None:
        updates["seed"] = seed
    if not updates:
        return config
    logger.debug("config overrides %s", updates)
    return ExperimentConfig.model_validate({**config.model_dump(), **updates})
