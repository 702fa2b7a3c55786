"""Diagonal Gaussians and their closed-form information quantities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, ValidationError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GaussianDiag:
    """A diagonal Gaussian over a flat vector of independent coordinates."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.shape != std.shape or mean.ndim != 1:
            raise ValidationError(
                f"GaussianDiag needs matching 1-D mean/std, got {mean.shape} and {std.shape}"
            )
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std))):
            raise NumericalError("GaussianDiag given non-finite parameters")
        if np.any(std <= 0.0):
            raise ValidationError("GaussianDiag std must be strictly positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def dim(self):
        return self.mean.shape[0]

    def sample(self, n, rng):
        """n independent draws, shape (n, dim)."""
        eps = rng.standard_normal((n, self.dim))
        return self.mean[None, :] + self.std[None, :] * eps

    def log_prob(self, x):
        """Row-wise log density for x of shape (n, dim) or (dim,)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        z = (x - self.mean[None, :]) / self.std[None, :]
        out = -0.5 * np.sum(z * z, axis=1) - np.sum(np.log(self.std)) - 0.5 * self.dim * LOG_2PI
        return out if out.shape[0] > 1 else out[0]

    def entropy(self):
        return float(np.sum(np.log(self.std)) + 0.5 * self.dim * (1.0 + LOG_2PI))


def kl_diag_gaussian(q: GaussianDiag, p: GaussianDiag) -> float:
    """KL(q || p) between diagonal Gaussians, summed over coordinates."""
    if q.dim != p.dim:
        raise ValidationError(f"KL dimensions differ: {q.dim} vs {p.dim}")
    ratio = q.std / p.std
    delta = (q.mean - p.mean) / p.std
    return float(np.sum(-np.log(ratio) + 0.5 * (ratio * ratio + delta * delta) - 0.5))


def gaussian_entropy(cov: np.ndarray) -> float:
    """Differential entropy of a full-covariance Gaussian via Cholesky."""
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValidationError(f"covariance must be square, got shape {cov.shape}")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"covariance is not positive definite: {exc}") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    d = cov.shape[0]
    return 0.5 * logdet + 0.5 * d * (1.0 + LOG_2PI)
