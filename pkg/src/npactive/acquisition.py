"""Acquisition scorers for choosing which scenario to simulate next.

All scorers work in normalized units and return an ``AcquisitionScore``.
``mean_std`` and ``max_entropy`` are statistics of predictive samples;
``latent_information_gain`` and ``eig_nested_mc`` are Monte Carlo
information estimates that consume the surrogate directly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, logsumexp
from scipy.spatial import cKDTree

from .errors import NumericalError, ValidationError
from .gaussian import LOG_2PI, gaussian_entropy

_RANDOM_SALT = 0x5EED


@dataclass(frozen=True)
class AcquisitionScore:
    name: str
    score: float
    stderr: float | None = None
    n_z_samples: int | None = None
    n_x_samples: int | None = None
    scenario_id: int | None = None


def _check_samples(samples, min_rows=2):
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ValidationError(f"samples must be 2-D (n, features), got {samples.shape}")
    if samples.shape[0] < min_rows:
        raise ValidationError(f"need at least {min_rows} samples, got {samples.shape[0]}")
    if not np.all(np.isfinite(samples)):
        raise ValidationError("samples contain non-finite values")
    return samples


def mean_std(samples) -> AcquisitionScore:
    """Average over features of the per-feature sample std (ddof=1)."""
    samples = _check_samples(samples)
    value = float(samples.std(axis=0, ddof=1).mean())
    return AcquisitionScore(
        name="mean-std", score=value, n_x_samples=samples.shape[0]
    )


def max_entropy(samples, ridge=1e-6) -> AcquisitionScore:
    """Entropy of a Gaussian fit to the samples' covariance.

    ridge is added to the diagonal so rank-deficient covariances (fewer
    samples than features) stay decomposable; pass 0.0 to disable.
    """
    samples = _check_samples(samples)
    if ridge < 0.0:
        raise ValidationError("ridge must be >= 0")
    cov = np.atleast_2d(np.cov(samples, rowvar=False, ddof=1))
    if ridge > 0.0:
        cov = cov + ridge * np.eye(cov.shape[0])
    value = gaussian_entropy(cov)
    return AcquisitionScore(
        name="max-entropy", score=value, n_x_samples=samples.shape[0]
    )


def _kl_rows_vs_prior(means, stds, prior):
    """KL(N(means_j, stds_j) || prior) per row, clamped at zero."""
    log_ratio = np.log(prior.std)[None, :] - np.log(stds)
    quad = (stds**2 + (means - prior.mean[None, :]) ** 2) / (2.0 * prior.std[None, :] ** 2)
    per_row = np.sum(log_ratio + quad - 0.5, axis=1)
    return np.maximum(per_row, 0.0)


def latent_information_gain(
    theta, surrogate, rng, n_x_samples=30, n_z_samples=30
) -> AcquisitionScore:
    """Expected KL between the updated and current latent posteriors.

    Draws predictive outcomes x-hat at theta (observation noise included),
    re-encodes the context plus each imagined pair, and averages the KL of
    the updated posterior against the current one.
    """
    if n_x_samples < 1:
        raise ValidationError("n_x_samples must be >= 1")
    xhat, _, _ = surrogate.sample_predictive_norm(
        theta, n_x_samples, rng, n_z=n_z_samples
    )
    means, stds = surrogate.posterior_with_samples(theta, xhat)
    kls = _kl_rows_vs_prior(means, stds, surrogate.prior())
    stderr = (
        float(kls.std(ddof=1) / np.sqrt(n_x_samples)) if n_x_samples >= 2 else None
    )
    return AcquisitionScore(
        name="lig",
        score=float(kls.mean()),
        stderr=stderr,
        n_z_samples=n_z_samples,
        n_x_samples=n_x_samples,
    )


def eig_nested_mc(theta, surrogate, rng, n_outer=1000, n_inner=1000) -> AcquisitionScore:
    """Nested Monte Carlo estimate of the expected information gain.

    Outer loop: x-hat_n ~ p(x | z_n, theta) with z_n from the latent prior.
    Inner marginal: log p(x-hat_n | theta) ~= logsumexp_m log p(x-hat_n | z_m)
    - log M over an independent inner latent sample. The average of
    log p(x-hat_n | z_n) - log marginal estimates the mutual information
    between x and z at theta.
    """
    if n_outer < 2 or n_inner < 1:
        raise ValidationError("need n_outer >= 2 and n_inner >= 1")
    prior = surrogate.prior()
    z_out = prior.sample(n_outer, rng)
    mu_out, sigma = surrogate.decode_norm(z_out, theta)
    xhat = mu_out + sigma[None, :] * rng.standard_normal(mu_out.shape)
    z_in = prior.sample(n_inner, rng)
    mu_in, _ = surrogate.decode_norm(z_in, theta)

    # log N(x | mu, sigma) via the expanded square so the (N, M) matrix of
    # cross likelihoods is one matmul instead of an (N, M, F) intermediate
    xt = xhat / sigma[None, :]
    ot = mu_out / sigma[None, :]
    it = mu_in / sigma[None, :]
    const = -0.5 * xhat.shape[1] * LOG_2PI - float(np.sum(np.log(sigma)))
    ll_self = -0.5 * np.sum((xt - ot) ** 2, axis=1) + const
    sq_x = np.sum(xt * xt, axis=1)
    sq_in = np.sum(it * it, axis=1)
    cross = -0.5 * (sq_x[:, None] + sq_in[None, :] - 2.0 * (xt @ it.T)) + const
    log_marginal = logsumexp(cross, axis=1) - np.log(n_inner)
    terms = ll_self - log_marginal
    return AcquisitionScore(
        name="eig-nested-mc",
        score=float(terms.mean()),
        stderr=float(terms.std(ddof=1) / np.sqrt(n_outer)),
        n_z_samples=n_inner,
        n_x_samples=n_outer,
    )


def random_score(seed, round_idx, scenario_id) -> AcquisitionScore:
    """Uniform score keyed by (seed, round, scenario), independent of call order."""
    seq = np.random.SeedSequence([_RANDOM_SALT, int(seed), int(round_idx), int(scenario_id)])
    value = float(np.random.default_rng(seq).random())
    return AcquisitionScore(name="random", score=value, scenario_id=int(scenario_id))


def knn_entropy(samples, k=3) -> float:
    """Kozachenko-Leonenko differential entropy estimate in nats.

    H-hat = -digamma(k) + digamma(n) + log c_d + (d/n) sum_i log rho_i,
    where rho_i is the distance from sample i to its k-th nearest
    neighbour and c_d is the unit-ball volume in d dimensions.
    """
    samples = _check_samples(samples)
    n, d = samples.shape
    if k < 1 or k >= n:
        raise ValidationError(f"need 1 <= k < n, got k={k}, n={n}")
    tree = cKDTree(samples)
    # k+1 because the nearest hit of each point is itself
    dists, _ = tree.query(samples, k=k + 1)
    rho = dists[:, k]
    if np.any(rho == 0.0):
        raise NumericalError(
            "duplicate samples give zero neighbour distance; entropy undefined"
        )
    log_c_d = (d / 2.0) * np.log(np.pi) - gammaln(d / 2.0 + 1.0)
    return float(
        -digamma(k) + digamma(n) + log_c_d + d * np.mean(np.log(rho))
    )
