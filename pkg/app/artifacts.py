from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any

from app.errors import ConfigurationError
from app.schemas import ConvergenceReport, RunManifest, StudyFile

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

logger = logging.getLogger("nonsticky.artifacts")

MANIFEST_NAME = "manifest.json"
RESULTS_NAME = "results.csv"
SUMMARY_NAME = "summary.json"
RESULT_COLUMNS = ("level", "statistic", "ci_low", "ci_high", "n_paths", "p_value", "eps", "arm", "wall_time")


def config_hash(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def read_config(path: Path) -> tuple[StudyFile, str]:
    """Parse a TOML study file; the hash covers the exact bytes on disk."""
    raw = path.read_bytes()
    try:
        document = tomllib.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigurationError(f"{path}: not a valid TOML file: {exc}") from exc
    return StudyFile.model_validate(document), config_hash(raw)


def prepare_out_dir(out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    probe = out_dir / ".write-probe"
    probe.write_text("", encoding="utf-8")
    probe.unlink()
    return out_dir


def write_manifest(out_dir: Path, manifest: RunManifest) -> Path:
    target = out_dir / MANIFEST_NAME
    target.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.debug("manifest written (%s)", manifest.status)
    return target


def _cell(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_results(out_dir: Path, report: ConvergenceReport) -> Path:
    target = out_dir / RESULTS_NAME
    with target.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for row in report.rows:
            data = row.model_dump()
            writer.writerow([_cell(data[column]) for column in RESULT_COLUMNS])
    return target


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {key: _json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(item) for item in value]
    return value


def write_summary(out_dir: Path, report: ConvergenceReport) -> Path:
    """Non-finite numbers (an undefined slope, say) are written as null."""
    target = out_dir / SUMMARY_NAME
    summary = _json_safe(report.summary())
    target.write_text(json.dumps(summary, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")
    return target
