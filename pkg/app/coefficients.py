"""Diffusion coefficients, their zero sets and the integrability of 1/sigma^2 near a level."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from scipy import integrate

from app.errors import (
    CoefficientEvaluationError,
    ConfigurationError,
    PreconditionError,
    QuadratureError,
)

logger = logging.getLogger("nonsticky.coefficients")

DEFAULT_EPS_LADDER: tuple[float, ...] = tuple(10.0**-k for k in range(1, 7))
DIVERGENCE_RUN = 5
RATIO_SLACK = 1e-9
TAIL_TOLERANCE = 1e-13
MAX_REFINEMENTS = 200
VANISHING_RATIO = 0.5
QUAD_LIMIT = 200
RESOLUTION_ULPS = 1024


class CoefficientKind(str, Enum):
    POWER_LAW = "power_law"
    ODD_POWER_LAW = "odd_power_law"
    CUSTOM = "custom"


class LevelClass(str, Enum):
    VANISHES = "vanishes_as_eps_to_zero"
    FINITE_NON_VANISHING = "finite_non_vanishing"
    DIVERGENT = "divergent"


@dataclass(frozen=True)
class ConstantSigma:
    """Picklable constant coefficient; accepts scalars and arrays."""

    value: float

    def __call__(self, x: Any) -> Any:
        if isinstance(x, np.ndarray):
            return np.full(x.shape, self.value, dtype=np.float64)
        return float(self.value)


@dataclass(frozen=True)
class CoefficientSpec:
    kind: CoefficientKind
    zero_set: tuple[float, ...]
    linear_growth_constant: float
    alpha: float | None = None
    function: Callable[[Any], Any] | None = field(default=None, compare=False)
    vectorized: bool = False
    continuity_attested: bool = False

    def __post_init__(self) -> None:
        if self.kind in (CoefficientKind.POWER_LAW, CoefficientKind.ODD_POWER_LAW):
            if self.alpha is None or not 0.0 < self.alpha < 1.0:
                raise ConfigurationError(f"{self.kind.value} needs alpha in (0, 1), got {self.alpha!r}")
            if self.zero_set != (0.0,):
                raise ConfigurationError("power-law coefficients vanish exactly at 0")
        elif not callable(self.function):
            raise ConfigurationError("custom coefficient needs a callable function")
        if any(not math.isfinite(z) for z in self.zero_set):
            raise ConfigurationError("zero set members must be finite")
        if any(b <= a for a, b in zip(self.zero_set, self.zero_set[1:])):
            raise ConfigurationError("zero set must be sorted and duplicate-free")
        if not (math.isfinite(self.linear_growth_constant) and self.linear_growth_constant > 0):
            raise ConfigurationError("linear growth constant must be a positive finite number")

    @property
    def is_power_law(self) -> bool:
        return self.kind is not CoefficientKind.CUSTOM

    def is_zero(self, x: float) -> bool:
        return x in self.zero_set

    def __call__(self, x: float) -> float:
        return evaluate_sigma(self, x)


def power_law(alpha: float) -> CoefficientSpec:
    return CoefficientSpec(CoefficientKind.POWER_LAW, (0.0,), 1.0, alpha=alpha)


def odd_power_law(alpha: float) -> CoefficientSpec:
    return CoefficientSpec(CoefficientKind.ODD_POWER_LAW, (0.0,), 1.0, alpha=alpha)


def custom(
    function: Callable[[Any], Any],
    zero_set: Iterable[float] = (),
    linear_growth_constant: float = 1.0,
    *,
    vectorized: bool = False,
    continuity_attested: bool = False,
) -> CoefficientSpec:
    return CoefficientSpec(
        CoefficientKind.CUSTOM,
        tuple(float(z) for z in zero_set),
        linear_growth_constant,
        function=function,
        vectorized=vectorized,
        continuity_attested=continuity_attested,
    )


def constant(value: float) -> CoefficientSpec:
    if value == 0 or not math.isfinite(value):
        raise ConfigurationError("constant coefficient must be finite and non-zero")
    return custom(
        ConstantSigma(float(value)),
        (),
        abs(float(value)),
        vectorized=True,
        continuity_attested=True,
    )


def evaluate_sigma(spec: CoefficientSpec, x: float) -> float:
    x = float(x)
    if spec.kind is CoefficientKind.POWER_LAW:
        return abs(x) ** spec.alpha
    if spec.kind is CoefficientKind.ODD_POWER_LAW:
        magnitude = abs(x) ** spec.alpha
        return -magnitude if x < 0 else magnitude
    if spec.is_zero(x):
        return 0.0
    value = float(spec.function(x))
    if not math.isfinite(value):
        raise CoefficientEvaluationError(x, value)
    return value


def sigma_array(spec: CoefficientSpec, values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if spec.kind is CoefficientKind.POWER_LAW:
        return np.abs(values) ** spec.alpha
    if spec.kind is CoefficientKind.ODD_POWER_LAW:
        return np.copysign(np.abs(values) ** spec.alpha, values)
    if spec.vectorized:
        out = np.broadcast_to(np.asarray(spec.function(values), dtype=np.float64), values.shape).copy()
        if spec.zero_set:
            out[np.isin(values, spec.zero_set)] = 0.0
    else:
        zeros = set(spec.zero_set)
        out = np.fromiter(
            (0.0 if v in zeros else float(spec.function(v)) for v in values.ravel().tolist()),
            dtype=np.float64,
            count=values.size,
        ).reshape(values.shape)
    bad = ~np.isfinite(out)
    if bad.any():
        raise CoefficientEvaluationError(float(values[bad][0]), float(out[bad][0]))
    return out


def check_linear_growth(spec: CoefficientSpec, samples: Sequence[float] | None = None) -> bool:
    xs = np.linspace(-10.0, 10.0, 2001) if samples is None else np.asarray(samples, dtype=np.float64)
    bound = spec.linear_growth_constant * (1.0 + np.abs(xs))
    return bool(np.all(np.abs(sigma_array(spec, xs)) <= bound * (1.0 + 1e-12)))


def _inverse_square(spec: CoefficientSpec) -> Callable[[float], float]:
    def integrand(x: float) -> float:
        s = evaluate_sigma(spec, x)
        if s == 0.0:
            return math.inf
        return 1.0 / (s * s)

    return integrand


def _quad(f: Callable[[float], float], a: float, b: float) -> float:
    result = integrate.quad(f, a, b, full_output=1, limit=QUAD_LIMIT)
    if len(result) > 3:
        raise QuadratureError(f"quadrature on [{a!r}, {b!r}] did not converge: {result[3]}", result[1])
    return float(result[0])


def _singular_side(f: Callable[[float], float], anchor: float, width: float, direction: float) -> float:
    """Integrate f over the side of a zero, halving the distance to it shell by shell.

    Shells that refuse to shrink for DIVERGENCE_RUN consecutive halvings mark a
    non-integrable singularity; a geometric tail closes a convergent series.
    """
    total = 0.0
    previous: float | None = None
    ratio = 0.0
    stalled = 0
    h = width
    for _ in range(MAX_REFINEMENTS):
        inner = h / 2.0
        if inner <= RESOLUTION_ULPS * math.ulp(anchor):
            break
        lo, hi = sorted((anchor + direction * inner, anchor + direction * h))
        shell = _quad(f, lo, hi)
        total += shell
        if previous is not None and previous > 0.0:
            ratio = shell / previous
            if ratio >= 1.0 - RATIO_SLACK:
                stalled += 1
                if stalled >= DIVERGENCE_RUN:
                    return math.inf
            else:
                stalled = 0
        previous = shell
        h = inner
        if stalled == 0 and 0.0 < ratio < 1.0 and shell <= TAIL_TOLERANCE * total:
            break
    if previous is None or ratio == 0.0:
        return total
    if ratio >= 1.0:
        return math.inf
    return total + previous * ratio / (1.0 - ratio)


def inverse_square_integral(spec: CoefficientSpec, z: float, eps: float) -> float:
    """Return the integral of sigma(z + y)^-2 over |y| <= eps, or +inf when it diverges."""
    if not eps > 0:
        raise PreconditionError(f"eps must be positive, got {eps!r}")
    if spec.is_power_law and z == 0.0:
        exponent = 1.0 - 2.0 * spec.alpha
        if exponent <= 0.0:
            return math.inf
        return 2.0 * eps**exponent / exponent

    f = _inverse_square(spec)
    a, b = z - eps, z + eps
    singular = [zeta for zeta in spec.zero_set if a <= zeta <= b]
    points = sorted({a, b, *singular})
    total = 0.0
    for left, right in zip(points, points[1:]):
        left_singular = left in singular
        right_singular = right in singular
        if not (left_singular or right_singular):
            total += _quad(f, left, right)
            continue
        if left_singular and right_singular:
            middle = 0.5 * (left + right)
            total += _singular_side(f, left, middle - left, 1.0)
            total += _singular_side(f, right, right - middle, -1.0)
        elif left_singular:
            total += _singular_side(f, left, right - left, 1.0)
        else:
            total += _singular_side(f, right, right - left, -1.0)
        if math.isinf(total):
            return math.inf
    return total


@dataclass(frozen=True)
class IntegrabilityVerdict:
    z: float
    integral_values: tuple[tuple[float, float], ...]
    classification: LevelClass

    @property
    def satisfies_assumption(self) -> bool:
        return self.classification is LevelClass.VANISHES


def classify_level(
    spec: CoefficientSpec,
    z: float,
    ladder: Sequence[float] = DEFAULT_EPS_LADDER,
) -> IntegrabilityVerdict:
    epsilons = sorted((float(e) for e in ladder), reverse=True)
    if not epsilons:
        raise PreconditionError("eps ladder must not be empty")
    values = tuple((eps, inverse_square_integral(spec, z, eps)) for eps in epsilons)
    if any(math.isinf(value) for _, value in values):
        classification = LevelClass.DIVERGENT
    elif values[-1][1] <= VANISHING_RATIO * values[0][1]:
        classification = LevelClass.VANISHES
    else:
        classification = LevelClass.FINITE_NON_VANISHING
    logger.debug("level %r classified %s", z, classification.value)
    return IntegrabilityVerdict(z=z, integral_values=values, classification=classification)


@dataclass(frozen=True)
class CoefficientVerdict:
    zero_set: tuple[float, ...]
    levels: tuple[IntegrabilityVerdict, ...]

    @property
    def non_integrable_set(self) -> tuple[float, ...]:
        """The detected Engelbert-Schmidt set I(sigma)."""
        return tuple(v.z for v in self.levels if v.classification is LevelClass.DIVERGENT)

    @property
    def uniqueness_in_law(self) -> bool:
        return self.non_integrable_set == self.zero_set

    @property
    def non_sticky_selects_law(self) -> bool:
        return bool(self.zero_set) and not self.non_integrable_set

    @property
    def assumption_holds(self) -> bool:
        return all(v.satisfies_assumption for v in self.levels)


def classify_coefficient(
    spec: CoefficientSpec,
    ladder: Sequence[float] = DEFAULT_EPS_LADDER,
) -> CoefficientVerdict:
    levels = tuple(classify_level(spec, z, ladder) for z in spec.zero_set)
    return CoefficientVerdict(zero_set=spec.zero_set, levels=levels)
