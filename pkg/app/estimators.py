"""Path functionals and Monte Carlo aggregation.

All time integrals use the left-endpoint rule on the scheme grid, matching the
scheme's own sigma(X_{eta_n(s)}) structure. Aggregates are carried as mergeable
(count, sum, sum of squares) triples so blocks can be reduced in a fixed order.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from app.coefficients import CoefficientSpec, sigma_array
from app.em_engine import GridPath
from app.errors import PreconditionError

logger = logging.getLogger("nonsticky.estimators")

MIN_RELIABLE_SAMPLES = 30
Z_95 = 1.959963984540054


class EstimatorKind(str, Enum):
    INDICATOR = "indicator"
    TENT = "tent"


@dataclass(frozen=True)
class MomentAccumulator:
    count: int = 0
    total: float | np.ndarray = 0.0
    total_sq: float | np.ndarray = 0.0

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> MomentAccumulator:
        samples = np.asarray(samples, dtype=np.float64)
        return cls(int(samples.shape[0]), samples.sum(axis=0), (samples * samples).sum(axis=0))

    def merge(self, other: MomentAccumulator) -> MomentAccumulator:
        return MomentAccumulator(
            self.count + other.count,
            self.total + other.total,
            self.total_sq + other.total_sq,
        )

    @property
    def mean(self) -> float | np.ndarray:
        return self.total / self.count

    @property
    def variance(self) -> float | np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.total) if isinstance(self.total, np.ndarray) else 0.0
        raw = (self.total_sq - self.total * self.total / self.count) / (self.count - 1)
        return np.maximum(raw, 0.0)

    @property
    def stderr(self) -> float | np.ndarray:
        return np.sqrt(self.variance / self.count)


def merge_all(accumulators: Iterable[MomentAccumulator]) -> MomentAccumulator:
    merged = MomentAccumulator()
    for accumulator in accumulators:
        merged = merged.merge(accumulator)
    return merged


@dataclass(frozen=True)
class PNormEstimate:
    p: float
    value: float
    half_width: float
    n_paths: int
    reliable: bool

    @property
    def ci_low(self) -> float:
        return max(self.value**self.p - self.half_width, 0.0) ** (1.0 / self.p)

    @property
    def ci_high(self) -> float:
        return (self.value**self.p + self.half_width) ** (1.0 / self.p)

    @classmethod
    def from_moments(cls, p: float, moments: MomentAccumulator) -> PNormEstimate:
        if moments.count < 1:
            raise PreconditionError("p-norm needs at least one sample")
        mean = float(moments.mean)
        half_width = Z_95 * float(moments.stderr)
        reliable = moments.count >= MIN_RELIABLE_SAMPLES
        if not reliable:
            logger.warning("p-norm CI from %s samples is unreliable", moments.count)
        return cls(p, mean ** (1.0 / p), half_width, moments.count, reliable)


def p_norm_aggregate(samples: Iterable[float], p: float) -> PNormEstimate:
    if p < 1:
        raise PreconditionError(f"p must be at least 1, got {p!r}")
    values = np.fromiter(samples, dtype=np.float64)
    if values.size == 0:
        raise PreconditionError("p-norm needs at least one sample")
    if np.any(values < 0):
        raise PreconditionError("p-norm samples must be nonnegative")
    return PNormEstimate.from_moments(p, MomentAccumulator.from_samples(values**p))


def occupation_weights(values: np.ndarray, z: float, eps: float, kind: EstimatorKind) -> np.ndarray:
    distance = np.abs(np.asarray(values, dtype=np.float64) - z)
    if kind is EstimatorKind.INDICATOR:
        return (distance < eps).astype(np.float64)
    # tent: 1 at z, slope 1/eps, zero outside (z - eps, z + eps)
    return np.maximum(0.0, 1.0 - distance / eps)


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise PreconditionError(f"eps must be positive, got {eps!r}")


def occupation_near(
    path: GridPath,
    z: float,
    eps: float,
    kind: EstimatorKind = EstimatorKind.INDICATOR,
) -> float:
    _check_eps(eps)
    return path.dt * float(occupation_weights(path.values[:-1], z, eps, kind).sum())


def local_time_estimate(path: GridPath, coefficient: CoefficientSpec, y: float, eps: float) -> float:
    """(1/2eps) * int 1{|X - y| < eps} sigma(X)^2 ds, the discretized local time at y."""
    _check_eps(eps)
    left = path.values[:-1]
    sigma_sq = sigma_array(coefficient, left) ** 2
    inside = np.abs(left - y) < eps
    return path.dt * float(np.sum(sigma_sq, where=inside)) / (2.0 * eps)


def exact_hits(values: np.ndarray, zero_set: Sequence[float]) -> int:
    if not zero_set:
        return 0
    return int(np.isin(values, zero_set).sum())


def _aligned(path_a: GridPath, path_b: GridPath) -> tuple[np.ndarray, np.ndarray]:
    if path_a.horizon != path_b.horizon:
        raise PreconditionError("paths must share the horizon")
    coarse, fine = sorted((path_a, path_b), key=lambda path: path.level)
    stride = 1 << (fine.level - coarse.level)
    fine_values = fine.values[::stride]
    if fine_values.shape != coarse.values.shape:
        raise PreconditionError("path grids do not nest")
    return coarse.values, fine_values


def sup_difference(path_a: GridPath, path_b: GridPath) -> float:
    a, b = _aligned(path_a, path_b)
    return float(np.max(np.abs(a - b)))


def abs_sup_difference(path_a: GridPath, path_b: GridPath) -> float:
    a, b = _aligned(path_a, path_b)
    return float(np.max(np.abs(np.abs(a) - np.abs(b))))


def block_sup_differences(coarse: np.ndarray, fine: np.ndarray, *, absolute: bool = False) -> np.ndarray:
    """Row-wise sup differences between two dense blocks on nested grids."""
    stride, remainder = divmod(fine.shape[1] - 1, coarse.shape[1] - 1) if coarse.shape[1] > 1 else (1, 0)
    if remainder or coarse.shape[0] != fine.shape[0]:
        raise PreconditionError("blocks do not nest")
    a, b = coarse, fine[:, ::stride]
    if absolute:
        a, b = np.abs(a), np.abs(b)
    return np.max(np.abs(a - b), axis=1)


def sup_moment(values: np.ndarray, p: float = 2.0) -> np.ndarray:
    return np.max(np.abs(np.atleast_2d(values)), axis=1) ** p


def increment_exponent(
    values: np.ndarray,
    horizon: float,
    lag_steps: Sequence[int],
) -> tuple[float, np.ndarray]:
    """Fit the exponent of the L2 increment norm against the lag."""
    values = np.atleast_2d(values)
    dt = horizon / (values.shape[1] - 1)
    norms = np.empty(len(lag_steps))
    for i, lag in enumerate(lag_steps):
        increments = values[:, lag:] - values[:, :-lag]
        norms[i] = math.sqrt(float(np.mean(increments * increments)))
    lags = np.asarray(lag_steps, dtype=np.float64) * dt
    slope = float(np.polyfit(np.log(lags), np.log(norms), 1)[0])
    return slope, norms


@dataclass(frozen=True)
class OccupationEntry:
    eps: float
    estimate: float
    stderr: float


@dataclass(frozen=True)
class OccupationProfile:
    z: float
    entries: tuple[OccupationEntry, ...]
    n_steps: int
    n_paths: int
    kind: EstimatorKind


class OccupationObserver:
    """Chunk observer accumulating per-path occupation times for a ladder of widths."""

    def __init__(
        self,
        n_paths: int,
        z: float,
        eps_ladder: Sequence[float],
        kind: EstimatorKind,
        dt: float,
    ) -> None:
        for eps in eps_ladder:
            _check_eps(eps)
        self.z = z
        self.eps_ladder = tuple(eps_ladder)
        self.kind = kind
        self.dt = dt
        self.totals = np.zeros((n_paths, len(self.eps_ladder)))

    def __call__(self, offset: int, left: np.ndarray) -> None:
        for j, eps in enumerate(self.eps_ladder):
            self.totals[:, j] += self.dt * occupation_weights(left, self.z, eps, self.kind).sum(axis=1)

    def moments(self) -> MomentAccumulator:
        return MomentAccumulator.from_samples(self.totals)


def build_profile(
    z: float,
    eps_ladder: Sequence[float],
    kind: EstimatorKind,
    moments: MomentAccumulator,
    n_steps: int,
) -> OccupationProfile:
    means = np.atleast_1d(moments.mean)
    errors = np.atleast_1d(moments.stderr)
    entries = tuple(
        OccupationEntry(float(eps), float(mean), float(err))
        for eps, mean, err in zip(eps_ladder, means, errors)
    )
    return OccupationProfile(z, entries, n_steps, moments.count, kind)


def occupation_profile(
    values: np.ndarray,
    horizon: float,
    z: float,
    eps_ladder: Sequence[float],
    kind: EstimatorKind = EstimatorKind.TENT,
) -> OccupationProfile:
    values = np.atleast_2d(values)
    n_steps = values.shape[1] - 1
    observer = OccupationObserver(values.shape[0], z, eps_ladder, kind, horizon / n_steps)
    observer(0, values[:, :-1])
    return build_profile(z, eps_ladder, kind, observer.moments(), n_steps)


@dataclass(frozen=True)
class LocalTimeProfile:
    y_grid: tuple[float, ...]
    means: tuple[float, ...]
    stderrs: tuple[float, ...]

    @property
    def sup(self) -> float:
        return max(self.means)


def local_time_profile(
    values: np.ndarray,
    coefficient: CoefficientSpec,
    horizon: float,
    y_grid: Sequence[float],
    eps: float,
) -> LocalTimeProfile:
    """Mean local-time estimates over a y-grid; the sup tracks the bound's constant empirically."""
    _check_eps(eps)
    values = np.atleast_2d(values)
    left = values[:, :-1]
    dt = horizon / left.shape[1]
    sigma_sq = sigma_array(coefficient, left) ** 2
    per_path = np.empty((values.shape[0], len(y_grid)))
    for j, y in enumerate(y_grid):
        inside = np.abs(left - y) < eps
        per_path[:, j] = dt * np.sum(sigma_sq, axis=1, where=inside) / (2.0 * eps)
    moments = MomentAccumulator.from_samples(per_path)
    return LocalTimeProfile(
        tuple(float(y) for y in y_grid),
        tuple(float(m) for m in np.atleast_1d(moments.mean)),
        tuple(float(s) for s in np.atleast_1d(moments.stderr)),
    )
