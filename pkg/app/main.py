from __future__ import annotations

import io
import logging
import time
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator

import click
from pydantic import ValidationError

from app import __version__
from app.artifacts import (
    prepare_out_dir,
    read_config,
    write_manifest,
    write_results,
    write_summary,
)
from app.brownian import generate_lattice
from app.coefficients import classify_coefficient
from app.config import settings
from app.em_engine import simulate_path, write_path_csv
from app.errors import ConfigurationError, LabError, PreconditionError
from app.schemas import RunManifest, StudyFile, StudySection
from app.studies import StudyConfig, run_study
from app.workers import BlockRunner

logger = logging.getLogger("nonsticky")


def configure_logging(level: str = settings.log_level) -> None:
    for stale in list(logger.handlers):
        logger.removeHandler(stale)
    handler = logging.StreamHandler()
    formatter = logging.Formatter("[NonSticky] %(asctime)s %(levelname)s %(message)s")
    handler.setFormatter(formatter)
    logger.addHandler(handler)
    logger.setLevel(level)


@contextmanager
def usage_errors() -> Iterator[None]:
    """Turn bad configs and unusable paths into click usage errors (exit code 2)."""
    try:
        yield
    except (ConfigurationError, PreconditionError, ValidationError) as exc:
        raise click.UsageError(str(exc)) from exc
    except OSError as exc:
        raise click.UsageError(f"{exc.filename or ''}: {exc.strerror or exc}") from exc


@contextmanager
def lab_failures(exit_code: int) -> Iterator[None]:
    """Report numerical failures (quadrature, non-finite sigma or state) as a clean CLI error."""
    try:
        yield
    except LabError as exc:
        failure = click.ClickException(str(exc))
        failure.exit_code = exit_code
        raise failure from exc


def _load(config_path: Path) -> tuple[StudyFile, str]:
    with usage_errors():
        return read_config(config_path)


@click.group()
@click.option(
    "--log-level",
    type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
    default=None,
    help="Override NONSTICKY_LOG_LEVEL.",
)
def cli(log_level: str | None) -> None:
    """Monte Carlo lab for the non-sticky Euler-Maruyama scheme."""
    configure_logging((log_level or settings.log_level).upper())


@cli.command()
@click.argument("config_path", type=click.Path(path_type=Path, dir_okay=False))
def classify(config_path: Path) -> None:
    """Print the integrability table of 1/sigma^2 at every zero of sigma."""
    study_file, _ = _load(config_path)
    # exit code 1 is reserved for a failed integrability check
    with lab_failures(2), usage_errors():
        coefficient = study_file.coefficient.build()
        verdict = classify_coefficient(coefficient)

    click.echo(f"zero set: {list(verdict.zero_set)}")
    for level in verdict.levels:
        click.echo(f"z = {level.z!r}")
        click.echo(f"  {'eps':>10}  {'integral':>14}")
        for eps, value in level.integral_values:
            click.echo(f"  {eps:>10.1e}  {value:>14.6e}")
        click.echo(f"  classification: {level.classification.value}")
    click.echo(f"non-integrable set: {list(verdict.non_integrable_set)}")
    click.echo(f"uniqueness in law: {verdict.uniqueness_in_law}")
    click.echo(f"non-sticky solution selects the law: {verdict.non_sticky_selects_law}")
    click.echo(f"integrability assumption holds: {verdict.assumption_holds}")
    if not verdict.assumption_holds:
        raise SystemExit(1)


def _finalize(manifest: RunManifest, out_dir: Path, status: str, started: float, outputs: dict[str, str]) -> None:
    manifest.status = status
    manifest.finished_at = datetime.now(timezone.utc)
    manifest.wall_time = time.perf_counter() - started
    manifest.outputs.update(outputs)
    write_manifest(out_dir, manifest)


@cli.command()
@click.argument("config_path", type=click.Path(path_type=Path, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the study seed.")
@click.option("--workers", type=int, default=None, help="Worker processes (default NONSTICKY_WORKERS).")
@click.option("--out-dir", type=click.Path(path_type=Path, file_okay=False), default=Path("out"), show_default=True)
def run(config_path: Path, seed: int | None, workers: int | None, out_dir: Path) -> None:
    """Run a convergence study and write manifest.json, results.csv and summary.json."""
    study_file, digest = _load(config_path)
    workers = workers if workers is not None else settings.workers
    if workers < 1:
        raise click.UsageError("--workers must be at least 1")
    with lab_failures(1), usage_errors():
        if study_file.study is None:
            raise ConfigurationError(f"{config_path}: config has no [study] section")
        study = study_file.study
        if seed is not None:
            study = StudySection.model_validate({**study.model_dump(), "seed": seed})
        config = StudyConfig(study_file.build_problem(), study, digest)
        prepare_out_dir(out_dir)
        started = time.perf_counter()
        manifest = RunManifest(
            config_path=str(config_path),
            config_hash=digest,
            seed=study.seed,
            workers=workers,
            started_at=datetime.now(timezone.utc),
            code_version=__version__,
        )
        write_manifest(out_dir, manifest)

    try:
        with usage_errors(), BlockRunner(workers) as runner:
            report = run_study(config, runner)
    except LabError as exc:
        _finalize(manifest, out_dir, "failed", started, {})
        raise click.ClickException(str(exc)) from exc
    except click.UsageError:
        _finalize(manifest, out_dir, "failed", started, {})
        raise

    outputs = {
        "results": str(write_results(out_dir, report)),
        "summary": str(write_summary(out_dir, report)),
    }
    _finalize(manifest, out_dir, "passed" if report.verdict else "failed", started, outputs)
    if not report.ci_reliable:
        logger.warning("fewer than 30 paths per estimate; confidence intervals are unreliable")
    click.echo(f"{config.kind.value}: {'pass' if report.verdict else 'fail'} ({out_dir})")
    if not report.verdict:
        raise SystemExit(1)


@cli.command("dump-path")
@click.argument("config_path", type=click.Path(path_type=Path, dir_okay=False))
@click.option("--level", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--path-index", type=int, default=0, show_default=True)
@click.option("--no-shift", is_flag=True, help="Start exactly at x0 even when x0 is a zero of sigma.")
def dump_path(config_path: Path, level: int, seed: int, path_index: int, no_shift: bool) -> None:
    """Write one Euler-Maruyama path as t,x CSV to stdout."""
    study_file, _ = _load(config_path)
    with lab_failures(1), usage_errors():
        problem = study_file.build_problem()
        lattice = generate_lattice(seed, path_index, level, problem.horizon)
        path = simulate_path(problem, lattice, shift=not no_shift)
    buffer = io.StringIO()
    write_path_csv(path, buffer)
    click.echo(buffer.getvalue(), nl=False)


if __name__ == "__main__":
    cli()
