"""Convergence experiments for the Euler-Maruyama scheme and their verdicts.

No convergence rate is asserted anywhere: the scheme is known to converge for
alpha < 1/2 without a rate, so verdicts only ask for monotone decrease, oracle
agreement, or the occupation exponent.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from functools import partial
from typing import Callable, Sequence

import numpy as np
from scipy.stats import kstwobign

from app import __version__
from app.coefficients import CoefficientKind, inverse_square_integral
from app.em_engine import SdeProblem, fold_block, simulate_coupled_block
from app.errors import ConfigurationError, PreconditionError
from app.estimators import (
    MIN_RELIABLE_SAMPLES,
    EstimatorKind,
    MomentAccumulator,
    OccupationObserver,
    PNormEstimate,
    block_sup_differences,
    build_profile,
    exact_hits,
    merge_all,
)
from app.oracles import BesqParams, besq_exact_samples, cev_nonsticky_exact_abs_samples, g_transform
from app.schemas import ConvergenceReport, Provenance, ReportRow, StudyKind, StudySection
from app.workers import BlockRunner, path_blocks

logger = logging.getLogger("nonsticky.studies")

# Oracle draws use stream indices far above any path index.
ORACLE_STREAM_BASE = 2**63
SELF_TEST_LEVEL = 0.05


@dataclass(frozen=True)
class StudyConfig:
    problem: SdeProblem
    study: StudySection
    config_hash: str = ""

    @property
    def kind(self) -> StudyKind:
        return self.study.kind

    @property
    def levels(self) -> list[int]:
        return self.study.levels

    @property
    def n_paths(self) -> int:
        return self.study.n_paths

    @property
    def seed(self) -> int:
        return self.study.seed


def two_sample_ks(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sample KS distance and its asymptotic Kolmogorov p-value."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise PreconditionError("both samples must be nonempty")
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / a.size
    cdf_b = np.searchsorted(b, pooled, side="right") / b.size
    distance = float(np.max(np.abs(cdf_a - cdf_b)))
    effective = a.size * b.size / (a.size + b.size)
    p_value = float(kstwobign.sf(math.sqrt(effective) * distance))
    return distance, min(p_value, 1.0)


def ks_self_test(
    alpha: float,
    x0: float,
    t: float,
    n_samples: int,
    repeats: int,
    seed: int,
) -> float:
    """Fraction of oracle-vs-oracle KS tests rejecting at the 5% level."""
    rejections = 0
    for repeat in range(repeats):
        a = cev_nonsticky_exact_abs_samples(alpha, x0, t, seed, 2 * repeat, n_samples)
        b = cev_nonsticky_exact_abs_samples(alpha, x0, t, seed, 2 * repeat + 1, n_samples)
        _, p_value = two_sample_ks(g_transform(a, alpha), g_transform(b, alpha))
        rejections += p_value < SELF_TEST_LEVEL
    return rejections / repeats


def weak_ks_verdict(statistics: Sequence[float], final_p: float, slack: float, threshold: float) -> bool:
    monotone = all(b <= a * (1.0 + slack) for a, b in zip(statistics, statistics[1:]))
    return monotone and final_p > threshold


def strong_verdict(estimates: Sequence[PNormEstimate]) -> bool:
    """The last two steps must decrease with disjoint confidence intervals."""
    if len(estimates) < 3 or not all(e.reliable for e in estimates):
        return False
    return all(estimates[i].ci_high < estimates[i - 1].ci_low for i in (-2, -1))


def occupation_verdict(slope: float, target: float, tolerance: float) -> bool:
    return math.isfinite(slope) and abs(slope - target) <= tolerance


def _fit_slope(eps: Sequence[float], values: Sequence[float]) -> float:
    x = np.log(np.asarray(eps, dtype=np.float64))
    y = np.asarray(values, dtype=np.float64)
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        return math.nan
    return float(np.polyfit(x, np.log(y), 1)[0])


def _report(
    config: StudyConfig,
    rows: list[ReportRow],
    verdict: bool,
    ci_reliable: bool,
    details: dict,
) -> ConvergenceReport:
    report = ConvergenceReport(
        study=config.kind,
        rows=sorted(rows, key=lambda row: (row.level, row.eps or 0.0, row.arm or "")),
        verdict=verdict,
        ci_reliable=ci_reliable,
        details=details,
        provenance=Provenance(seed=config.seed, config_hash=config.config_hash, code_version=__version__),
    )
    logger.info("%s study finished: verdict=%s", config.kind.value, "pass" if verdict else "fail")
    return report


def _terminal_block(problem: SdeProblem, seed: int, level: int, shift: bool, block: range) -> np.ndarray:
    return fold_block(problem, seed, block, level, shift=shift)


def _coupled_block(
    problem: SdeProblem,
    seed: int,
    levels: tuple[int, ...],
    finest: int,
    p: float,
    absolute: bool,
    block: range,
) -> MomentAccumulator:
    paths = simulate_coupled_block(problem, seed, block, sorted({*levels, finest}))
    fine = paths[finest]
    sups = np.column_stack([block_sup_differences(paths[level], fine, absolute=absolute) for level in levels])
    return MomentAccumulator.from_samples(sups**p)


class _HitCounter:
    def __init__(self, zero_set: Sequence[float]) -> None:
        self.zero_set = zero_set
        self.hits = 0

    def __call__(self, offset: int, left: np.ndarray) -> None:
        self.hits += exact_hits(left, self.zero_set)


def _occupation_block(
    problem: SdeProblem,
    seed: int,
    level: int,
    z: float,
    eps_ladder: tuple[float, ...],
    kind: EstimatorKind,
    block: range,
) -> tuple[MomentAccumulator, int]:
    occupation = OccupationObserver(len(block), z, eps_ladder, kind, problem.horizon / (1 << level))
    hits = _HitCounter(problem.coefficient.zero_set)

    def observe(offset: int, left: np.ndarray) -> None:
        occupation(offset, left)
        hits(offset, left)

    terminal = fold_block(problem, seed, block, level, observe)
    return occupation.moments(), hits.hits + exact_hits(terminal, problem.coefficient.zero_set)


class _ConstancyObserver:
    def __init__(self, value: float) -> None:
        self.value = value
        self.constant = True

    def __call__(self, offset: int, left: np.ndarray) -> None:
        self.constant = self.constant and bool(np.all(left == self.value))


def _trap_block(problem: SdeProblem, seed: int, level: int, shift: bool, block: range) -> tuple[np.ndarray, bool]:
    observer = _ConstancyObserver(problem.x0)
    terminal = fold_block(problem, seed, block, level, observer, shift=shift)
    return terminal, observer.constant and bool(np.all(terminal == problem.x0))


def run_weak_ks(config: StudyConfig, runner: BlockRunner) -> ConvergenceReport:
    problem = config.problem
    coefficient = problem.coefficient
    if not coefficient.is_power_law or not coefficient.alpha < 0.5:
        raise ConfigurationError("weak KS study needs a power-law coefficient with alpha in (0, 1/2)")
    alpha = coefficient.alpha
    oracle_params = BesqParams.from_cev(alpha, problem.x0, problem.horizon)
    rows: list[ReportRow] = []
    statistics: list[float] = []
    p_values: list[float] = []
    for level in config.levels:
        started = time.perf_counter()
        blocks = path_blocks(config.n_paths, level)
        terminal = np.concatenate(runner.map(partial(_terminal_block, problem, config.seed, level, True), blocks))
        oracle = besq_exact_samples(oracle_params, config.seed, ORACLE_STREAM_BASE + level, config.n_paths)
        distance, p_value = two_sample_ks(g_transform(terminal, alpha), oracle)
        logger.info("level %s: KS distance %.5f, p-value %.4f", level, distance, p_value)
        statistics.append(distance)
        p_values.append(p_value)
        rows.append(
            ReportRow(
                level=level,
                statistic=distance,
                p_value=p_value,
                n_paths=config.n_paths,
                wall_time=time.perf_counter() - started,
            )
        )
    verdict = weak_ks_verdict(
        statistics,
        p_values[-1],
        config.study.monotone_slack,
        config.study.ks_p_threshold,
    )
    details = {
        "oracle_dimension": oracle_params.delta,
        "oracle_start": oracle_params.y0,
        "monotonicity_checked": len(statistics) > 1,
    }
    return _report(config, rows, verdict, config.n_paths >= MIN_RELIABLE_SAMPLES, details)


def run_strong_cauchy(config: StudyConfig, runner: BlockRunner, *, absolute: bool = False) -> ConvergenceReport:
    levels = config.levels
    if len(levels) < 3:
        raise ConfigurationError("strong study needs at least three levels")
    finest = config.study.finest_level if config.study.finest_level is not None else levels[-1]
    if finest < levels[-1]:
        raise ConfigurationError(f"finest level {finest} is below the ladder's top level {levels[-1]}")
    p = config.study.p
    started = time.perf_counter()
    blocks = path_blocks(config.n_paths, finest)
    work = partial(_coupled_block, config.problem, config.seed, tuple(levels), finest, p, absolute)
    moments = merge_all(runner.map(work, blocks))
    elapsed = time.perf_counter() - started
    estimates = [
        PNormEstimate.from_moments(p, MomentAccumulator(moments.count, moments.total[i], moments.total_sq[i]))
        for i in range(len(levels))
    ]
    rows = [
        ReportRow(
            level=level,
            statistic=estimate.value,
            ci_low=estimate.ci_low,
            ci_high=estimate.ci_high,
            n_paths=estimate.n_paths,
            wall_time=elapsed,
        )
        for level, estimate in zip(levels, estimates)
    ]
    for row in rows:
        logger.info("level %s: error %.6g [%.6g, %.6g]", row.level, row.statistic, row.ci_low, row.ci_high)
    details = {"finest_level": finest, "p": p, "absolute": absolute}
    reliable = all(estimate.reliable for estimate in estimates)
    return _report(config, rows, strong_verdict(estimates), reliable, details)


def run_abs_strong_cauchy(config: StudyConfig, runner: BlockRunner) -> ConvergenceReport:
    if config.problem.coefficient.kind is not CoefficientKind.ODD_POWER_LAW:
        logger.warning("abs strong study is meant for odd coefficients, got %s", config.problem.coefficient.kind.value)
    return run_strong_cauchy(config, runner, absolute=True)


def _occupation_moments(
    config: StudyConfig,
    runner: BlockRunner,
    level: int,
    eps_ladder: tuple[float, ...],
) -> tuple[MomentAccumulator, int]:
    work = partial(
        _occupation_block,
        config.problem,
        config.seed,
        level,
        config.study.z,
        eps_ladder,
        config.study.estimator,
    )
    results = runner.map(work, path_blocks(config.n_paths, level))
    return merge_all(m for m, _ in results), sum(hits for _, hits in results)


def run_occupation_scaling(config: StudyConfig, runner: BlockRunner) -> ConvergenceReport:
    problem = config.problem
    study = config.study
    level = config.levels[-1]
    eps_ladder = tuple(study.eps_ladder)
    integrals = [inverse_square_integral(problem.coefficient, study.z, eps) for eps in eps_ladder]
    if any(math.isinf(value) for value in integrals):
        raise ConfigurationError(f"1/sigma^2 is not integrable near z={study.z}; occupation scaling is undefined")
    resolution = math.sqrt(1 << level)
    admitted = [
        (eps, value)
        for eps, value in zip(eps_ladder, integrals)
        if value >= study.dominance_factor * (2.0 / eps) / resolution
    ]
    if len(admitted) < 2:
        raise ConfigurationError(
            f"fewer than two eps values pass the dominance filter at level {level}; raise the level"
        )

    started = time.perf_counter()
    moments, hits = _occupation_moments(config, runner, level, eps_ladder)
    elapsed = time.perf_counter() - started
    profile = build_profile(study.z, eps_ladder, study.estimator, moments, 1 << level)
    estimates = {entry.eps: entry for entry in profile.entries}
    admitted_eps = [eps for eps, _ in admitted]
    slope = _fit_slope(admitted_eps, [estimates[eps].estimate for eps in admitted_eps])
    target = _fit_slope(admitted_eps, [value for _, value in admitted])
    rows = [
        ReportRow(
            level=level,
            eps=entry.eps,
            statistic=entry.estimate,
            ci_low=entry.estimate - 1.96 * entry.stderr,
            ci_high=entry.estimate + 1.96 * entry.stderr,
            n_paths=profile.n_paths,
            wall_time=elapsed,
        )
        for entry in profile.entries
    ]

    details: dict = {
        "slope": slope,
        "target_slope": target,
        "admitted_eps": admitted_eps,
        "exact_zero_hits": hits,
    }
    coarse_level = config.levels[0] if len(config.levels) > 1 else level - 2
    if coarse_level >= 0 and coarse_level != level:
        probe = (admitted_eps[-1],)
        started = time.perf_counter()
        coarse_moments, coarse_hits = _occupation_moments(config, runner, coarse_level, probe)
        coarse = build_profile(study.z, probe, study.estimator, coarse_moments, 1 << coarse_level).entries[0]
        rows.append(
            ReportRow(
                level=coarse_level,
                eps=coarse.eps,
                statistic=coarse.estimate,
                ci_low=coarse.estimate - 1.96 * coarse.stderr,
                ci_high=coarse.estimate + 1.96 * coarse.stderr,
                n_paths=config.n_paths,
                wall_time=time.perf_counter() - started,
            )
        )
        details["n_dependence"] = {
            "eps": coarse.eps,
            "coarse_level": coarse_level,
            "coarse_estimate": coarse.estimate,
            "fine_level": level,
            "fine_estimate": estimates[coarse.eps].estimate,
            "difference": estimates[coarse.eps].estimate - coarse.estimate,
        }
        details["exact_zero_hits"] = hits + coarse_hits
    logger.info("occupation slope %.4f against target %.4f", slope, target)
    verdict = occupation_verdict(slope, target, study.slope_tolerance) and details["exact_zero_hits"] == 0
    return _report(config, rows, verdict, config.n_paths >= MIN_RELIABLE_SAMPLES, details)


def run_trap_control(config: StudyConfig, runner: BlockRunner) -> ConvergenceReport:
    problem = config.problem
    if not problem.coefficient.is_zero(problem.x0):
        raise ConfigurationError(f"trap control needs x0 in the zero set, got x0={problem.x0!r}")
    level = config.levels[-1]
    blocks = path_blocks(config.n_paths, level)
    rows: list[ReportRow] = []

    started = time.perf_counter()
    trapped = runner.map(partial(_trap_block, problem, config.seed, level, False), blocks)
    terminal = np.concatenate([values for values, _ in trapped]) - problem.x0
    all_constant = all(constant for _, constant in trapped)
    trapped_variance = float(np.var(terminal, ddof=1))
    rows.append(
        ReportRow(
            level=level,
            arm="no_shift",
            statistic=trapped_variance,
            ci_low=trapped_variance,
            ci_high=trapped_variance,
            n_paths=config.n_paths,
            wall_time=time.perf_counter() - started,
        )
    )

    started = time.perf_counter()
    shifted = np.concatenate(runner.map(partial(_terminal_block, problem, config.seed, level, True), blocks))
    n = shifted.size
    squared = (shifted - shifted.mean()) ** 2
    moments = MomentAccumulator.from_samples(squared)
    scale = n / (n - 1)
    variance = float(moments.mean) * scale
    half_width = 1.96 * float(moments.stderr) * scale
    rows.append(
        ReportRow(
            level=level,
            arm="shift",
            statistic=variance,
            ci_low=variance - half_width,
            ci_high=variance + half_width,
            n_paths=n,
            wall_time=time.perf_counter() - started,
        )
    )

    no_shift_holds = all_constant and trapped_variance == 0.0
    shift_holds = variance - half_width > 0.0
    details = {"no_shift_constant": no_shift_holds, "shift_ci_excludes_zero": shift_holds}
    return _report(config, rows, no_shift_holds and shift_holds, n >= MIN_RELIABLE_SAMPLES, details)


STUDY_RUNNERS: dict[StudyKind, Callable[[StudyConfig, BlockRunner], ConvergenceReport]] = {
    StudyKind.WEAK_KS: run_weak_ks,
    StudyKind.STRONG_CAUCHY: run_strong_cauchy,
    StudyKind.ABS_STRONG_CAUCHY: run_abs_strong_cauchy,
    StudyKind.OCCUPATION_SCALING: run_occupation_scaling,
    StudyKind.TRAP_CONTROL: run_trap_control,
}


def run_study(config: StudyConfig, runner: BlockRunner) -> ConvergenceReport:
    logger.info("Running %s study on levels %s with %s paths", config.kind.value, config.levels, config.n_paths)
    return STUDY_RUNNERS[config.kind](config, runner)
