import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jointmarket.scenario import bundled_reference_case
from jointmarket.uncertainty import (
    build_time_slice,
    build_uncertainty,
    chebyshev_z,
    moments_from_sigma,
    psd_sqrt,
    sample_error,
)


def reference_moments(sigma):
    """High-precision moments of min(X, 0), X ~ N(0, sigma^2), by quadrature."""
    mpmath.mp.dps = 30
    s = mpmath.mpf(sigma)
    pdf = lambda x: mpmath.exp(-x**2 / (2 * s**2)) / (s * mpmath.sqrt(2 * mpmath.pi))
    # the negative half on its own (conditional on x < 0)
    m1 = 2 * mpmath.quad(lambda x: x * pdf(x), [-mpmath.inf, 0])
    m2 = 2 * mpmath.quad(lambda x: x**2 * pdf(x), [-mpmath.inf, 0])
    mu, delta = -m1, mpmath.sqrt(m2 - m1**2)
    mixed_mean = m1 / 2
    mixed_var = m2 / 2 - mixed_mean**2
    return float(mu), float(delta), float(mixed_mean), float(mixed_var)


def test_sigma_ten_matches_quadrature():
    m = moments_from_sigma(10.0)
    mu, delta, mean, var = reference_moments(10.0)
    assert m.delta == pytest.approx(delta, rel=1e-12)
    assert m.mu == pytest.approx(mu, rel=1e-12)
    assert m.mean == pytest.approx(mean, rel=1e-12)
    assert m.variance == pytest.approx(var, rel=1e-12)
    # rounded figures quoted for the reference plant
    assert (round(m.delta, 4), round(m.mu, 4), round(m.mean, 4), round(m.variance, 3)) == \
        (6.0281, 7.9788, -3.9894, 34.085)


def test_sigma_zero_is_deterministic():
    m = moments_from_sigma(0.0)
    assert (m.mu, m.delta, m.mean, m.variance) == (0.0, 0.0, -0.0, 0.0)
    assert np.all(sample_error(m, 3, size=100) == 0.0)


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        moments_from_sigma(-1.0)


@given(st.floats(min_value=1e-3, max_value=1e4))
def test_moment_identities(sigma):
    m = moments_from_sigma(sigma)
    assert m.mean == pytest.approx(-m.mu / 2)
    assert m.variance == pytest.approx(m.delta**2 / 2 + m.mu**2 / 4)
    assert m.mean < 0 < m.variance < sigma**2
    assert m.sigma == pytest.approx(sigma)


def test_sampler_zero_atom_and_mean():
    m = moments_from_sigma(10.0)
    x = sample_error(m, 7, size=1_000_000)
    assert np.all(x <= 0)
    assert abs(np.mean(x == 0) - 0.5) <= 0.002
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - m.mean) <= 3 * se


def test_sampler_variance_within_three_standard_errors():
    m = moments_from_sigma(10.0)
    x = sample_error(m, 11, size=1_000_000)
    d = x - x.mean()
    var = np.mean(d**2)
    se = math.sqrt((np.mean(d**4) - var**2) / x.size)
    assert abs(var - m.variance) <= 3 * se


def test_sampler_is_reproducible():
    m = moments_from_sigma(4.0)
    np.testing.assert_array_equal(sample_error(m, 5, size=50), sample_error(m, 5, size=50))


def test_time_slice_diagonal():
    ts = build_time_slice([moments_from_sigma(10.0), moments_from_sigma(5.0)])
    np.testing.assert_allclose(np.diag(ts.Sigma), [34.085, 8.52], atol=5e-3)
    assert ts.Sigma[0, 1] == 0.0
    assert np.all(ts.M < 0)


def test_time_slice_single_and_zero_variance():
    ts = build_time_slice([moments_from_sigma(3.0)])
    assert ts.M.shape == (1,) and ts.Sigma.shape == (1, 1)
    ts = build_time_slice([moments_from_sigma(0.0), moments_from_sigma(5.0)])
    assert np.all(ts.Sigma[0] == 0) and np.all(ts.Sigma[:, 0] == 0)


@settings(max_examples=50)
@given(st.lists(st.floats(min_value=0.0, max_value=100.0), min_size=1, max_size=5), st.integers(0, 2**32 - 1))
def test_time_slice_psd(sigmas, seed):
    ts = build_time_slice([moments_from_sigma(s) for s in sigmas])
    x = np.random.default_rng(seed).normal(size=(20, len(sigmas)))
    assert np.all(np.einsum("ni,ij,nj->n", x, ts.Sigma, x) >= -1e-9)


def test_correlated_slice_and_root():
    corr = np.array([[1.0, 0.5], [0.5, 1.0]])
    ts = build_time_slice([moments_from_sigma(10.0), moments_from_sigma(5.0)], corr)
    root = psd_sqrt(ts.Sigma)
    np.testing.assert_allclose(root @ root, ts.Sigma, atol=1e-9)
    np.testing.assert_allclose(root, root.T)


def test_psd_sqrt_rejects_indefinite():
    with pytest.raises(ValueError):
        psd_sqrt(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        psd_sqrt(np.array([[1.0, 0.0], [1.0, 1.0]]))


def test_chebyshev_factor():
    assert chebyshev_z(0.05) == pytest.approx(math.sqrt(19))
    assert chebyshev_z(0.5) == 1.0
    with pytest.raises(ValueError):
        chebyshev_z(0.0)


def test_model_sampler_matches_moments():
    unc = build_uncertainty(bundled_reference_case())
    w = unc.sample(200_000, 3)
    assert w.shape == (200_000, 24, 2)
    t = 12
    emp = w[:, t, :]
    se = emp.std(axis=0, ddof=1) / math.sqrt(emp.shape[0])
    assert np.all(np.abs(emp.mean(axis=0) - unc.M(t)) <= 3 * se + 1e-12)
    # night hours carry no error
    assert np.all(w[:, 0, :] == 0)
