import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from rabc import summaries as S
from rabc.distributions import RandomStream, normal_quantile, sample_standardized_t
from rabc.errors import ConfigurationError, DegenerateSummaryError, DomainError
from rabc.summaries import AuxGarchParams, Partition


def simulate_aux_garch(beta, n, seed, burn=500):
    """Plain loop simulator of the auxiliary model, used as an independent oracle."""
    b1, b2, b3, nu = beta
    eps = sample_standardized_t(nu, seed, n + burn)
    x = b1 / (1 - b3)
    r = np.empty(n + burn)
    for t in range(n + burn):
        r[t] = x * eps[t]
        x = b1 + b2 * abs(r[t]) + b3 * x
    return r[burn:]


@pytest.fixture(scope="module")
def garch_data():
    y = simulate_aux_garch((0.05, 0.10, 0.85, 8.0), 100_000, 1)
    return y, S.fit_garch_aux(y)


def test_mean_variance_examples():
    np.testing.assert_array_equal(S.mean_variance_summary([3.0, 3.0, 3.0]), [3.0, 0.0])
    np.testing.assert_array_equal(S.mean_variance_summary([0.0, 2.0]), [1.0, 2.0])
    np.testing.assert_array_equal(S.mean_variance_summary([1.0, 2.0, 3.0]), [2.0, 1.0])
    with pytest.raises(DomainError):
        S.mean_variance_summary([1.0])


def test_autocovariance_examples():
    np.testing.assert_array_equal(S.autocovariance_summary(np.zeros(5)), [0, 0, 0])
    np.testing.assert_allclose(S.autocovariance_summary([1, 1, 1, 1]), [1, 0.75, 0.5])
    np.testing.assert_allclose(S.autocovariance_summary([1, -1, 1, -1]), [1, -0.75, 0.5])
    with pytest.raises(DomainError):
        S.autocovariance_summary([1, 2])


@given(arrays(float, st.integers(3, 40), elements=st.floats(-100, 100)))
def test_lag_zero_is_uncentered_second_moment(z):
    assert S.autocovariance_summary(z)[0] == pytest.approx(np.mean(z * z), rel=1e-12, abs=1e-300)


def test_batch_matches_single():
    z = RandomStream(2).gen.standard_normal((5, 30))
    for m in (S.MEAN_VAR, S.AUTOCOV, S.ROBUST_GK):
        batch = m(z)
        for i in range(5):
            np.testing.assert_allclose(batch[i], m(z[i]), rtol=1e-14)


def test_robust_symmetric_sample():
    z = RandomStream(3).gen.standard_normal(501)
    s = S.robust_gk_summary(np.concatenate([z, -z]))
    assert abs(s[0]) < 1e-12
    assert abs(s[2]) < 1e-12


@given(st.floats(0.1, 10), st.floats(-50, 50))
@settings(max_examples=30)
def test_robust_affine_equivariance(c, d):
    z = RandomStream(4).gen.standard_normal(200)
    a = S.robust_gk_summary(z)
    b = S.robust_gk_summary(c * z + d)
    np.testing.assert_allclose(b, [c * a[0] + d, c * a[1], a[2], a[3]], rtol=1e-9, atol=1e-9)


def test_robust_normal_kurtosis_matches_quantile_oracle():
    z = normal_quantile(np.array([0.125, 0.375, 0.625, 0.875, 0.75]))
    oracle = (z[3] - z[2] + z[1] - z[0]) / (2 * z[4])
    assert oracle == pytest.approx(1.2331, abs=1e-4)
    s = S.robust_gk_summary(RandomStream(5).gen.standard_normal(1_000_000))
    assert abs(s[3] - oracle) < 0.02


def test_robust_degenerate_and_short():
    with pytest.raises(DegenerateSummaryError):
        S.robust_gk_summary(np.ones(20))
    with pytest.raises(DomainError):
        S.robust_gk_summary(np.arange(7.0))
    assert np.isnan(S.ROBUST_GK(np.ones((2, 20)))).all()


def test_robust_uses_linear_interpolation():
    z = np.arange(9.0)
    # quantile positions 1 + 8q are integers here: L1=2, L2=4, L3=6, octiles 1,3,5,7
    np.testing.assert_allclose(S.robust_gk_summary(z), [4.0, 4.0, 0.0, 1.0])


def test_garch_params_validated():
    with pytest.raises(ConfigurationError):
        AuxGarchParams(0.1, 0.5, 0.6, 5)
    with pytest.raises(ConfigurationError):
        AuxGarchParams(0.1, 0.1, 0.1, 2.0)


def test_garch_loglik_constant_scale():
    y = RandomStream(6).gen.standard_normal(300)
    b1, nu = 0.7, 6.0
    sd = math.sqrt(nu / (nu - 2))
    t_std = lambda e: stats.t.logpdf(e * sd, nu) + math.log(sd)  # noqa: E731
    x1 = np.mean(np.abs(y))
    expected = t_std(y[0] / x1) - math.log(x1) + np.sum(t_std(y[1:] / b1) - math.log(b1))
    assert S.garch_loglik(AuxGarchParams(b1, 0.0, 0.0, nu), y) == pytest.approx(expected, rel=1e-12)


def test_garch_loglik_scale_family():
    y = simulate_aux_garch((0.05, 0.1, 0.85, 8.0), 1000, 7)
    a = S.garch_loglik((0.05, 0.1, 0.85, 8.0), y)
    b = S.garch_loglik((0.10, 0.1, 0.85, 8.0), 2 * y)
    assert a - b == pytest.approx(len(y) * math.log(2), rel=1e-10)


def test_garch_loglik_outlier_is_finite():
    y = RandomStream(8).gen.standard_normal(500) * 0.01
    y[250] = 50.0
    assert np.isfinite(S.garch_loglik((0.001, 0.1, 0.8, 3.0), y))


def test_garch_loglik_invalid_region():
    assert S.garch_loglik((0.05, 0.1, 0.85, 1.5), np.ones(60)) == -np.inf


def test_garch_fit_recovers_truth(garch_data):
    y, fit = garch_data
    beta = fit.as_array()
    n = len(y)
    h = 1e-4 * np.maximum(1.0, np.abs(beta))
    hess = np.empty((4, 4))
    for i in range(4):
        up, dn = beta.copy(), beta.copy()
        up[i] += h[i]
        dn[i] -= h[i]
        hess[:, i] = n * (S.garch_score_summary(y, up) - S.garch_score_summary(y, dn)) / (2 * h[i])
    se = np.sqrt(np.diag(np.linalg.inv(-0.5 * (hess + hess.T))))
    assert np.all(np.abs(beta - [0.05, 0.10, 0.85, 8.0]) < 3 * se)


def test_garch_fit_is_maximiser(garch_data):
    y, fit = garch_data
    best = S.garch_loglik(fit, y)
    gen = RandomStream(9).gen
    for _ in range(100):
        b2, b3 = gen.dirichlet([1, 1, 1])[:2]
        cand = (gen.uniform(0.001, 1.0), b2, b3, gen.uniform(2.1, 50))
        assert S.garch_loglik(cand, y) <= best


def test_garch_score_zero_at_observed(garch_data):
    y, fit = garch_data
    assert np.linalg.norm(S.garch_score_summary(y, fit)) < 10 * S.OPTIMIZER_TOL


def test_garch_fit_start_order_invariant():
    y = simulate_aux_garch((0.05, 0.10, 0.85, 8.0), 3000, 10)
    level = np.mean(np.abs(y))
    starts = [(level * (1 - 0.8 * b2 - b3), b2, b3, nu) for b2, b3, nu in S._GARCH_STARTS]
    a = S.fit_garch_aux(y, starts).as_array()
    b = S.fit_garch_aux(y, starts[::-1]).as_array()
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_garch_fit_needs_fifty_points():
    with pytest.raises(DomainError):
        S.fit_garch_aux(np.ones(49))


def test_score_richardson_consistency(garch_data):
    _, fit = garch_data
    z = simulate_aux_garch(tuple(fit.as_array()), 5000, 11)
    s1 = S.garch_score_summary(z, fit, 1e-4)
    s2 = S.garch_score_summary(z, fit, 5e-5)
    assert np.all(np.abs(s2 - s1) <= 1e-4 * np.abs(s1))


def test_score_unbiased_at_truth():
    beta = (0.05, 0.10, 0.85, 8.0)
    scores = np.array([S.garch_score_summary(simulate_aux_garch(beta, 2000, 100 + i), beta) for i in range(200)])
    se = scores.std(axis=0, ddof=1) / math.sqrt(len(scores))
    assert np.all(np.abs(scores.mean(axis=0)) < 3 * se)


def test_default_partitions():
    eta = np.array([10.0, 20.0, 30.0, 40.0])
    psi, phi = S.apply_partition(eta[:3], Partition.from_labels(S.AUTOCOV.labels, ["eta2"], ["eta0", "eta1"]))
    np.testing.assert_array_equal(psi, [30.0])
    np.testing.assert_array_equal(phi, [10.0, 20.0])
    psi, phi = S.apply_partition(eta, Partition.from_labels(S.ROBUST_GK.labels, ["S3"], ["S1", "S2", "S4"]))
    np.testing.assert_array_equal(psi, [30.0])
    np.testing.assert_array_equal(phi, [10.0, 20.0, 40.0])
    psi, phi = S.apply_partition(eta, Partition((0,), (1, 2, 3)))
    np.testing.assert_array_equal(psi, [10.0])


def test_partition_errors_name_partition():
    with pytest.raises(ConfigurationError, match="partition"):
        Partition.from_labels(("a", "b"), ["c"])
    with pytest.raises(ConfigurationError, match="partition"):
        Partition((0,), (0,))
    with pytest.raises(ConfigurationError, match="partition"):
        Partition((0,), (1,)).validate(3)
    with pytest.raises(ConfigurationError):
        S.apply_partition(np.ones(2), Partition((0,), (2,)))


@given(st.permutations(range(5)), st.integers(1, 5))
def test_partition_roundtrip(order, k):
    part = Partition(tuple(order[:k]), tuple(order[k:]))
    eta = np.arange(5.0) * 1.5 - 2
    psi, phi = S.apply_partition(eta, part)
    np.testing.assert_array_equal(S.merge_partition(psi, phi, part), eta)


def test_build_summary_map():
    assert S.build_summary_map("autocov") is S.AUTOCOV
    with pytest.raises(ConfigurationError):
        S.build_summary_map("garch-score")
    with pytest.raises(ConfigurationError):
        S.build_summary_map("nope")
