import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from rabc import distributions as dist
from rabc.distributions import JointPrior, RandomStream
from rabc.errors import ConfigurationError, DomainError


def test_stream_same_path_is_bit_identical():
    a = RandomStream(7, (1, 2)).gen.random(50)
    b = RandomStream(7, (1, 2)).gen.random(50)
    assert np.array_equal(a, b)


def test_child_paths_differ():
    s = RandomStream(7)
    assert not np.array_equal(s.child(0).gen.random(10), s.child(1).gen.random(10))
    assert s.child(1, 2).path == (1, 2)


def test_bad_seed_rejected():
    with pytest.raises(ConfigurationError):
        RandomStream(-1)


def test_spike_slab_zero_fraction():
    draws = dist.spike_slab(0.5, 0.125).sample(RandomStream(1).gen, 100_000)
    assert abs(np.mean(draws == 0.0) - 0.5) < 0.01


def test_uniform_support():
    draws = dist.uniform(0, 10).sample(RandomStream(2).gen, 10_000)
    assert draws.min() >= 0 and draws.max() <= 10


def test_laplace_moments():
    draws = dist.laplace(0, 0.125).sample(RandomStream(3).gen, 100_000)
    assert abs(draws.mean()) < 0.01
    assert abs(draws.var() / (2 * 0.125**2) - 1) < 0.10


def test_log_density_examples():
    assert dist.log_density(dist.laplace(0, 0.125), 0.0) == (pytest.approx(math.log(4.0)), False)
    assert dist.log_density(dist.spike_slab(0.5, 0.125), 0.0) == (pytest.approx(math.log(0.5)), True)
    value, atom = dist.log_density(dist.spike_slab(0.5, 0.125), 0.1)
    assert not atom
    assert value == pytest.approx(math.log(0.5) + math.log(4.0) - 0.8)
    assert dist.log_density(dist.uniform(0, 10), 11.0)[0] == -np.inf


def test_gaussian_logpdf_matches_scipy():
    x = np.linspace(-4, 6, 11)
    np.testing.assert_allclose(dist.gaussian(1.0, 4.0).logpdf(x), stats.norm(1.0, 2.0).logpdf(x), rtol=1e-12)


def test_exponential_scale_and_rate_agree():
    a = dist.exponential(scale=0.5)
    b = dist.exponential(rate=2.0)
    assert a == b
    assert a.expectation() == 0.5
    assert a.logpdf(-1.0) == -np.inf
    with pytest.raises(ConfigurationError):
        dist.exponential(scale=1.0, rate=1.0)


@pytest.mark.parametrize(
    "prior, lo, hi",
    [
        (dist.uniform(-1, 3), -1, 3),
        (dist.gaussian(2.0, 0.5), 2 - 6 * math.sqrt(0.5), 2 + 6 * math.sqrt(0.5)),
        (dist.laplace(0.5, 0.2), 0.5 - 0.2 * 19, 0.5 + 0.2 * 19),
        (dist.exponential(scale=0.5), 0, 0.5 * 19),
    ],
)
def test_density_integrates_to_one(prior, lo, hi):
    val, _ = integrate.quad(lambda x: math.exp(prior.logpdf(x)), lo, hi, points=[lo / 2 + hi / 2], limit=200)
    assert abs(val - 1) < 1e-6


def test_spike_slab_mass_is_atom_plus_slab():
    prior = dist.spike_slab(0.3, 0.2)
    slab, _ = integrate.quad(lambda x: math.exp(prior.logpdf(x)), -4, 4, points=[0.0], limit=200)
    assert abs(slab + 0.3 - 1) < 1e-6


def test_laplace_sampler_matches_density():
    prior = dist.laplace(0, 0.125)
    draws = prior.sample(RandomStream(4).gen, 1_000_000)
    edges = np.linspace(-0.6, 0.6, 25)
    counts, _ = np.histogram(draws, edges)
    cdf = stats.laplace(0, 0.125).cdf
    expected = len(draws) * np.diff(cdf(edges))
    chi2 = np.sum((counts - expected) ** 2 / expected)
    assert stats.chi2.sf(chi2, len(counts) - 1) > 0.001


@pytest.mark.parametrize("kwargs", [dict(lo=1, hi=0), dict(lo=0, hi=0)])
def test_uniform_bounds_validated(kwargs):
    with pytest.raises(ConfigurationError):
        dist.uniform(**kwargs)


def test_spike_slab_p_validated():
    with pytest.raises(ConfigurationError):
        dist.spike_slab(1.0, 0.1)


def test_alpha_two_is_gaussian_with_variance_two():
    x = dist.sample_alpha_stable(2.0, 0.0, RandomStream(5), 100_000)
    assert abs(x.var() / 2.0 - 1) < 0.05


def test_alpha_stable_tail_ordering():
    heavy = dist.sample_alpha_stable(1.2, 0.0, RandomStream(6), 100_000)
    light = dist.sample_alpha_stable(1.8, 0.0, RandomStream(6), 100_000)
    assert np.quantile(heavy, 0.999) > np.quantile(light, 0.999)


def test_alpha_stable_symmetric_median():
    x = dist.sample_alpha_stable(1.5, 0.0, RandomStream(8), 100_000)
    assert abs(np.median(x)) < 0.02


def test_alpha_stable_matches_scipy_quantiles():
    # scipy's levy_stable uses the same S1 parameterisation with scale 1
    x = dist.sample_alpha_stable(1.5, 0.0, RandomStream(9), 200_000)
    ref = stats.levy_stable(1.5, 0.0).ppf([0.1, 0.25, 0.75, 0.9])
    np.testing.assert_allclose(np.quantile(x, [0.1, 0.25, 0.75, 0.9]), ref, atol=0.03)


def test_alpha_stable_range_checked():
    with pytest.raises(ConfigurationError):
        dist.sample_alpha_stable(1.0, 0.0, 0)
    with pytest.raises(ConfigurationError):
        dist.sample_alpha_stable(1.5, 1.5, 0)


@pytest.mark.parametrize("nu, n", [(1e6, 100_000), (5.0, 1_000_000)])
def test_standardized_t_unit_variance(nu, n):
    x = dist.sample_standardized_t(nu, RandomStream(10), n)
    assert abs(x.var() - 1) < 0.03


def test_standardized_t_symmetric():
    x = np.sort(dist.sample_standardized_t(3.0, RandomStream(11), 200_000))
    cut = len(x) // 1000
    assert abs(stats.skew(x[cut:-cut])) < 0.1


def test_standardized_t_needs_nu_above_two():
    with pytest.raises(ConfigurationError):
        dist.sample_standardized_t(2.0, 0)


def test_normal_quantile_values():
    assert dist.normal_quantile(0.5) == 0.0
    assert dist.normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-9)
    assert dist.normal_quantile(0.25) == pytest.approx(-0.6744897501960817, abs=1e-9)
    with pytest.raises(DomainError):
        dist.normal_quantile(1.0)


@given(st.floats(1e-6, 1 - 1e-6))
def test_normal_quantile_inverts_cdf(q):
    assert stats.norm.cdf(dist.normal_quantile(q)) == pytest.approx(q, rel=1e-9, abs=1e-15)


@given(st.integers(0, 2**63), st.lists(st.integers(0, 1000), max_size=3))
@settings(max_examples=25, deadline=None)
def test_stream_is_deterministic(seed, path):
    a = RandomStream(seed, tuple(path)).gen.standard_normal(5)
    b = RandomStream(seed, tuple(path)).gen.standard_normal(5)
    assert np.array_equal(a, b)


def _in_triangle(theta):
    return np.abs(theta[:, 1]) < 1 - np.abs(theta[:, 0]) * 0.5


def test_joint_prior_constraint_and_density():
    prior = JointPrior((dist.uniform(-2, 2), dist.uniform(-1, 1)), names=("x", "y"), constraint=_in_triangle)
    draws = prior.sample(5000, 3)
    assert draws.shape == (5000, 2)
    assert _in_triangle(draws).all()
    lp = prior.log_density(np.array([[0.0, 0.0], [1.9, 0.9]]))
    assert lp[0] == pytest.approx(-math.log(8.0))
    assert lp[1] == -np.inf


def test_joint_prior_names_checked():
    with pytest.raises(ConfigurationError):
        JointPrior((dist.uniform(0, 1),), names=("a", "b"))


def test_as_stream_accepts_generators_and_ints():
    assert dist.as_stream(4) == RandomStream(4)
    s = dist.as_stream(np.random.default_rng(0))
    assert isinstance(s, RandomStream)
    with pytest.raises(TypeError):
        dist.as_generator("seed")
