"""Closed-form KL and entropy identities for the Gaussian helpers."""

import numpy as np
import pytest
from scipy import stats

from npactive.errors import NumericalError, ValidationError
from npactive.gaussian import LOG_2PI, GaussianDiag, gaussian_entropy, kl_diag_gaussian


def test_unit_shift_kl_is_exactly_half():
    q = GaussianDiag(mean=np.array([1.0]), std=np.array([1.0]))
    p = GaussianDiag(mean=np.array([0.0]), std=np.array([1.0]))
    assert abs(kl_diag_gaussian(q, p) - 0.5) < 1e-10


def test_standard_bivariate_entropy_closed_form():
    assert abs(gaussian_entropy(np.eye(2)) - (1.0 + LOG_2PI)) < 1e-10


def test_diag_entropy_matches_full_covariance_path():
    std = np.array([0.3, 1.7, 2.4])
    g = GaussianDiag(mean=np.zeros(3), std=std)
    assert g.entropy() == pytest.approx(gaussian_entropy(np.diag(std**2)), abs=1e-12)


def test_kl_nonnegative_and_zero_on_self():
    rng = np.random.default_rng(0)
    for _ in range(50):
        q = GaussianDiag(mean=rng.standard_normal(4), std=rng.uniform(0.2, 3.0, 4))
        p = GaussianDiag(mean=rng.standard_normal(4), std=rng.uniform(0.2, 3.0, 4))
        assert kl_diag_gaussian(q, p) >= 0.0
        assert kl_diag_gaussian(q, q) == pytest.approx(0.0, abs=1e-12)


def test_kl_sums_over_coordinates():
    q = GaussianDiag(mean=np.array([1.0, 1.0]), std=np.array([1.0, 1.0]))
    p = GaussianDiag(mean=np.zeros(2), std=np.ones(2))
    assert kl_diag_gaussian(q, p) == pytest.approx(1.0, abs=1e-12)


def test_log_prob_matches_scipy():
    g = GaussianDiag(mean=np.array([0.5, -1.0]), std=np.array([1.5, 0.4]))
    x = np.array([[0.0, 0.0], [1.0, -2.0], [3.0, 1.0]])
    expected = stats.norm.logpdf(x, loc=g.mean, scale=g.std).sum(axis=1)
    np.testing.assert_allclose(g.log_prob(x), expected, rtol=1e-12)
    assert g.log_prob(x[0]) == pytest.approx(expected[0], rel=1e-12)


def test_sampling_moments_and_shape():
    g = GaussianDiag(mean=np.array([2.0, -3.0]), std=np.array([0.5, 2.0]))
    draws = g.sample(200_000, np.random.default_rng(1))
    assert draws.shape == (200_000, 2)
    np.testing.assert_allclose(draws.mean(axis=0), g.mean, atol=0.02)
    np.testing.assert_allclose(draws.std(axis=0), g.std, rtol=0.02)


def test_entropy_of_sampled_gaussian_matches_formula():
    cov = np.array([[2.0, 0.6], [0.6, 1.0]])
    chol = np.linalg.cholesky(cov)
    draws = np.random.default_rng(2).standard_normal((100_000, 2)) @ chol.T
    sample_cov = np.cov(draws.T)
    assert gaussian_entropy(sample_cov) == pytest.approx(gaussian_entropy(cov), abs=0.02)


def test_gaussian_diag_validation():
    with pytest.raises(ValidationError):
        GaussianDiag(mean=np.zeros(2), std=np.ones(3))
    with pytest.raises(ValidationError):
        GaussianDiag(mean=np.zeros((2, 2)), std=np.ones((2, 2)))
    with pytest.raises(ValidationError):
        GaussianDiag(mean=np.zeros(2), std=np.array([1.0, 0.0]))
    with pytest.raises(NumericalError):
        GaussianDiag(mean=np.array([np.nan]), std=np.ones(1))


def test_mismatched_kl_dims_rejected():
    q = GaussianDiag(mean=np.zeros(2), std=np.ones(2))
    p = GaussianDiag(mean=np.zeros(3), std=np.ones(3))
    with pytest.raises(ValidationError):
        kl_diag_gaussian(q, p)


def test_entropy_requires_positive_definite():
    with pytest.raises(NumericalError):
        gaussian_entropy(np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValidationError):
        gaussian_entropy(np.ones((2, 3)))
