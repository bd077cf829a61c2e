"""Exact reference law for |X_t| of the non-sticky CEV equation dX = |X|^alpha dW.

For alpha in (0, 1/2) the process Y = g(X) with g(x) = |x|^(2(1-alpha)) / (1-alpha)^2
is a squared Bessel process of dimension delta = (1 - 2 alpha) / (1 - alpha) started
at g(x0). Its marginal is a Poisson mixture of Gammas, which is sampled exactly here.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy import special, stats

from app.brownian import keyed_generator
from app.errors import ConfigurationError, PreconditionError

logger = logging.getLogger("nonsticky.oracles")

RngKey = tuple[int, int]


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 0.5:
        raise ConfigurationError(f"the squared Bessel oracle needs alpha in (0, 1/2), got {alpha!r}")


def _as_output(result: np.ndarray, source: Any) -> Any:
    return float(result) if np.ndim(source) == 0 else result


def g_transform(x: Any, alpha: float) -> Any:
    _check_alpha(alpha)
    values = np.abs(np.asarray(x, dtype=np.float64)) ** (2.0 * (1.0 - alpha)) / (1.0 - alpha) ** 2
    return _as_output(values, x)


def g_inverse(y: Any, alpha: float) -> Any:
    _check_alpha(alpha)
    values = np.asarray(y, dtype=np.float64)
    if np.any(values < 0):
        raise PreconditionError("g_inverse is defined on y >= 0 only")
    result = (1.0 - alpha) ** (1.0 / (1.0 - alpha)) * values ** (1.0 / (2.0 * (1.0 - alpha)))
    return _as_output(result, y)


def besq_dimension(alpha: float) -> float:
    _check_alpha(alpha)
    return (1.0 - 2.0 * alpha) / (1.0 - alpha)


@dataclass(frozen=True)
class BesqParams:
    delta: float
    y0: float
    t: float

    def __post_init__(self) -> None:
        if not self.delta > 0:
            raise ConfigurationError(f"dimension must be positive, got {self.delta!r}")
        if not self.y0 >= 0:
            raise ConfigurationError(f"start value must be nonnegative, got {self.y0!r}")
        if not self.t > 0:
            raise ConfigurationError(f"time must be positive, got {self.t!r}")

    @classmethod
    def from_cev(cls, alpha: float, x0: float, t: float) -> BesqParams:
        return cls(besq_dimension(alpha), g_transform(x0, alpha), t)

    @property
    def mean(self) -> float:
        return self.y0 + self.delta * self.t

    @property
    def variance(self) -> float:
        return 4.0 * self.y0 * self.t + 2.0 * self.delta * self.t**2


def besq_exact_samples(params: BesqParams, seed: int, stream: int, size: int) -> np.ndarray:
    """Draw Y_t = 2t * Gamma(delta/2 + N) with N ~ Poisson(y0 / 2t)."""
    rng = keyed_generator(seed, stream)
    counts = rng.poisson(params.y0 / (2.0 * params.t), size)
    shape = params.delta / 2.0 + counts
    small = shape < 1.0
    # shape < 1: Gamma(a) = Gamma(a + 1) * U^(1/a)
    draws = rng.standard_gamma(np.where(small, shape + 1.0, shape))
    uniforms = 1.0 - rng.random(size)
    draws = np.where(small, draws * uniforms ** (1.0 / shape), draws)
    return 2.0 * params.t * draws


def besq_exact_sample(params: BesqParams, rng_key: RngKey) -> float:
    seed, stream = rng_key
    return float(besq_exact_samples(params, seed, stream, 1)[0])


def cev_nonsticky_exact_abs_samples(
    alpha: float,
    x0: float,
    t: float,
    seed: int,
    stream: int,
    size: int,
) -> np.ndarray:
    params = BesqParams.from_cev(alpha, x0, t)
    return g_inverse(besq_exact_samples(params, seed, stream, size), alpha)


def cev_nonsticky_exact_abs_sample(alpha: float, x0: float, t: float, rng_key: RngKey) -> float:
    seed, stream = rng_key
    return float(cev_nonsticky_exact_abs_samples(alpha, x0, t, seed, stream, 1)[0])


def besq_density(y: Any, params: BesqParams) -> Any:
    """Transition density of BESQ(delta) from y0 to y after time t."""
    values = np.asarray(y, dtype=np.float64)
    if params.y0 == 0.0:
        density = stats.gamma.pdf(values, a=params.delta / 2.0, scale=2.0 * params.t)
        return _as_output(np.asarray(density), y)
    nu = params.delta / 2.0 - 1.0
    t = params.t
    with np.errstate(divide="ignore", invalid="ignore"):
        argument = np.sqrt(params.y0 * values) / t
        log_density = (
            -math.log(2.0 * t)
            + 0.5 * nu * np.log(values / params.y0)
            - (values + params.y0) / (2.0 * t)
            + argument
        )
        density = np.exp(log_density) * special.ive(nu, argument)
    density = np.where(values > 0, density, 0.0)
    return _as_output(density, y)
