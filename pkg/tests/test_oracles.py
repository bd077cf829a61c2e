import math

import numpy as np
import pytest
from scipy import integrate, stats

from app.errors import ConfigurationError, PreconditionError
from app.oracles import (
    BesqParams,
    besq_density,
    besq_dimension,
    besq_exact_sample,
    besq_exact_samples,
    cev_nonsticky_exact_abs_sample,
    cev_nonsticky_exact_abs_samples,
    g_inverse,
    g_transform,
)


@pytest.mark.parametrize("alpha", [0.1, 0.25, 0.4])
def test_g_round_trip(alpha):
    x = np.array([0.0, 1e-6, 0.3, 1.0, 7.5])
    np.testing.assert_allclose(g_inverse(g_transform(x, alpha), alpha), x, rtol=1e-12, atol=0)
    assert g_transform(-2.0, alpha) == g_transform(2.0, alpha)
    assert isinstance(g_transform(1.0, alpha), float)


def test_oracle_needs_alpha_below_one_half():
    for alpha in (0.0, 0.5, 0.7):
        with pytest.raises(ConfigurationError):
            besq_dimension(alpha)
        with pytest.raises(ConfigurationError):
            g_transform(1.0, alpha)
    with pytest.raises(PreconditionError):
        g_inverse(-1.0, 0.25)


def test_dimension_and_start():
    assert besq_dimension(0.25) == pytest.approx(2.0 / 3.0)
    params = BesqParams.from_cev(0.25, 1.0, 1.0)
    assert params.delta == pytest.approx(2.0 / 3.0)
    assert params.y0 == pytest.approx(1.0 / 0.5625)


@pytest.mark.parametrize("delta", [0.4, 1.0, 2.5])
@pytest.mark.parametrize("y0", [0.0, 0.5, 3.0])
@pytest.mark.parametrize("t", [0.5, 2.0])
def test_sampler_mean_identity(delta, y0, t):
    params = BesqParams(delta, y0, t)
    samples = besq_exact_samples(params, 11, 0, 100_000)
    stderr = samples.std(ddof=1) / math.sqrt(samples.size)
    assert abs(samples.mean() - params.mean) < 4 * stderr
    assert np.all(samples >= 0.0)


def integrate_on_half_line(f) -> float:
    # the density has an integrable singularity at 0 when delta < 2
    return integrate.quad(f, 0.0, 1.0, limit=200)[0] + integrate.quad(f, 1.0, np.inf, limit=200)[0]


def test_sampler_variance_matches_density():
    params = BesqParams(2.0 / 3.0, 1.5, 1.0)
    first = integrate_on_half_line(lambda y: y * besq_density(y, params))
    second = integrate_on_half_line(lambda y: y * y * besq_density(y, params))
    assert first == pytest.approx(params.mean, rel=1e-6)
    assert second - first**2 == pytest.approx(params.variance, rel=1e-5)
    samples = besq_exact_samples(params, 3, 1, 200_000)
    assert samples.var(ddof=1) == pytest.approx(params.variance, rel=0.03)


@pytest.mark.parametrize("y0", [0.0, 0.8])
def test_density_integrates_to_one(y0):
    params = BesqParams(0.5, y0, 1.0)
    total = integrate_on_half_line(lambda y: besq_density(y, params))
    assert total == pytest.approx(1.0, rel=1e-6)


def test_density_is_a_scaled_noncentral_chi_square():
    params = BesqParams(1.2, 0.7, 2.0)
    reference = stats.ncx2(df=params.delta, nc=params.y0 / params.t, scale=params.t)
    grid = np.array([0.05, 0.5, 1.0, 3.0, 10.0])
    np.testing.assert_allclose(besq_density(grid, params), reference.pdf(grid), rtol=1e-6)


def test_samples_follow_the_noncentral_chi_square_law():
    params = BesqParams(1.2, 0.7, 1.0)
    samples = besq_exact_samples(params, 5, 2, 5000)
    reference = stats.ncx2(df=params.delta, nc=params.y0 / params.t, scale=params.t)
    assert stats.kstest(samples, reference.cdf).pvalue > 0.01


def test_draws_are_keyed_and_reproducible():
    params = BesqParams(0.5, 1.0, 1.0)
    a = besq_exact_samples(params, 9, 4, 16)
    np.testing.assert_array_equal(a, besq_exact_samples(params, 9, 4, 16))
    assert not np.array_equal(a, besq_exact_samples(params, 9, 5, 16))
    assert besq_exact_sample(params, (9, 4)) == besq_exact_samples(params, 9, 4, 1)[0]


def test_cev_samples_are_nonnegative_and_transform_back():
    samples = cev_nonsticky_exact_abs_samples(0.25, 0.0, 1.0, 2, 0, 1000)
    assert np.all(samples >= 0.0)
    params = BesqParams.from_cev(0.25, 0.0, 1.0)
    np.testing.assert_allclose(g_transform(samples, 0.25), besq_exact_samples(params, 2, 0, 1000), rtol=1e-12)
    single = cev_nonsticky_exact_abs_samples(0.25, 0.0, 1.0, 2, 0, 1)
    assert cev_nonsticky_exact_abs_sample(0.25, 0.0, 1.0, (2, 0)) == single[0]


def test_params_validation():
    with pytest.raises(ConfigurationError):
        BesqParams(0.0, 1.0, 1.0)
    with pytest.raises(ConfigurationError):
        BesqParams(1.0, -1.0, 1.0)
    with pytest.raises(ConfigurationError):
        BesqParams(1.0, 1.0, 0.0)


def test_cev_law_depends_on_the_magnitude_of_the_start_only():
    positive = cev_nonsticky_exact_abs_samples(0.25, 1.0, 1.0, 6, 0, 4000)
    np.testing.assert_array_equal(positive, cev_nonsticky_exact_abs_samples(0.25, -1.0, 1.0, 6, 0, 4000))
    negative = cev_nonsticky_exact_abs_samples(0.25, -1.0, 1.0, 6, 1, 4000)
    assert stats.ks_2samp(positive, negative).pvalue > 0.01


def test_cev_samples_concentrate_at_the_start_for_short_times():
    samples = cev_nonsticky_exact_abs_samples(0.25, 1.5, 1e-4, 8, 0, 10_000)
    assert abs(samples.mean() - 1.5) < 0.02


def test_cev_samples_from_zero_are_strictly_positive():
    samples = cev_nonsticky_exact_abs_samples(0.25, 0.0, 1.0, 10, 0, 10_000)
    assert np.all(samples > 0.0)
