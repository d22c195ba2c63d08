"""
Artifact writers: time series, snapshots and the run summary.

Numeric outputs are a function of the config alone; the ``timestamp`` object
of the summary is the only field that differs between identical runs.
"""
import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np
import pandas as pd

from bdlab import __version__
from bdlab.becker_doring import ClusterState
from bdlab.lsw import ParticleEnsemble, write_ensemble_csv
from bdlab.schemas import ExperimentConfig, InvariantReport, RunSummary

logger = logging.getLogger(__name__)

TIME_SERIES_COLUMNS = [
    "t", "mass", "F", "F_mic_eps", "F_mac_eps", "D_eps", "D_mic_eps", "D_mac_eps",
    "h_eps", "u_eps", "E_lsw", "D_lsw", "J_partial",
]
FLOAT_FORMAT = "%.17g"


def config_hash(config: ExperimentConfig) -> str:
    """SHA-256 of the canonical config JSON."""
    return hashlib.sha256(config.canonical_json().encode("utf-8")).hexdigest()


def run_directory(config: ExperimentConfig) -> Path:
    """Per-run directory ``<out_dir>/<scenario>-<hash prefix>``."""
    return Path(config.out_dir) / f"{config.scenario.value}-{config_hash(config)[:12]}"


def time_series_frame(columns: Mapping[str, Any]) -> pd.DataFrame:
    """
    Frame with the fixed column schema; absent columns are left blank.

    Raises:
        ValueError: On a column outside the schema
    """
    unknown = set(columns) - set(TIME_SERIES_COLUMNS)
    if unknown:
        raise ValueError(f"unknown time-series columns {sorted(unknown)}")
    frame = pd.DataFrame({name: np.asarray(values, dtype=float) for name, values in columns.items()})
    return frame.reindex(columns=TIME_SERIES_COLUMNS)


def _write(path: Path, writer) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        writer(path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def write_time_series(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    frame = frame.reindex(columns=TIME_SERIES_COLUMNS)
    return _write(Path(path), lambda p: frame.to_csv(p, index=False, float_format=FLOAT_FORMAT, na_rep=""))


def write_snapshot(data: Union[ClusterState, ParticleEnsemble], path: Union[str, Path]) -> Path:
    """Cluster states as (l, n) rows, ensembles as (lambda, mass) rows."""
    path = Path(path)
    if isinstance(data, ParticleEnsemble):
        return _write(path, lambda p: write_ensemble_csv(data, p))
    frame = pd.DataFrame({"l": np.arange(1, data.L + 1), "n": data.n})
    return _write(path, lambda p: frame.to_csv(p, index=False, float_format=FLOAT_FORMAT))


def summary_document(summary: RunSummary, config: ExperimentConfig,
                     wall_time: Optional[float] = None) -> Dict[str, Any]:
    return {
        "config": json.loads(config.canonical_json()),
        "config_hash": config_hash(config),
        "version": __version__,
        "summary": summary.model_dump(mode="json"),
        "timestamp": {
            "utc": datetime.now(timezone.utc).isoformat(),
            "wall_time_s": wall_time,
        },
    }


def write_summary(summary: RunSummary, config: ExperimentConfig, path: Union[str, Path],
                  wall_time: Optional[float] = None) -> Path:
    text = json.dumps(summary_document(summary, config, wall_time), sort_keys=True, indent=2)
    return _write(Path(path), lambda p: p.write_text(text + "\n", encoding="utf-8"))


def write_report(report: InvariantReport, path: Union[str, Path]) -> Path:
    text = json.dumps(report.model_dump(mode="json"), sort_keys=True, indent=2)
    return _write(Path(path), lambda p: p.write_text(text + "\n", encoding="utf-8"))


def emit_outputs(summary: RunSummary, config: ExperimentConfig, series: Mapping[str, pd.DataFrame],
                 snapshots: Mapping[str, Union[ClusterState, ParticleEnsemble]],
                 tables: Optional[Mapping[str, pd.DataFrame]] = None,
                 wall_time: Optional[float] = None) -> Path:
    """
    Write every artifact of a run into its run directory.

    Args:
        summary: Scalars and tables; its ``artifacts`` list is filled here
        config: Config echoed into the summary
        series: Time-series frames by file stem
        snapshots: States or ensembles by file stem
        tables: Further CSV tables by file stem
        wall_time: Elapsed seconds, stored under ``timestamp``

    Returns:
        The run directory
    """
    directory = run_directory(config)
    written = []
    for stem, frame in series.items():
        written.append(write_time_series(frame, directory / f"{stem}.csv"))
    for stem, data in snapshots.items():
        written.append(write_snapshot(data, directory / f"{stem}.csv"))
    for stem, frame in (tables or {}).items():
        written.append(_write(directory / f"{stem}.csv",
                              lambda p, f=frame: f.to_csv(p, index=False, float_format=FLOAT_FORMAT, na_rep="")))
    summary.artifacts = sorted(path.name for path in written) + ["summary.json"]
    write_summary(summary, config, directory / "summary.json", wall_time)
    logger.info("outputs written dir=%s files=%d", directory, len(summary.artifacts))
    return directory
