"""Neural-process surrogate with one global latent variable.

The encoder maps each (theta, x) pair to a feature vector, averages the
features over the pair set (in a canonical order, so the result is exactly
permutation invariant), and reads a diagonal Gaussian over the latent from
the average. The decoder maps (z, theta) to per-feature means; observation
noise is a learned per-feature std, floored to keep likelihoods finite.

Everything here works in normalized units; raw-unit conversions live in
``Normalization`` and are applied by the surrogate wrapper.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .errors import ValidationError
from .gaussian import LOG_2PI, GaussianDiag


@dataclass(frozen=True)
class Normalization:
    """Per-feature standardization stats, refit on whatever set is current."""

    theta_loc: np.ndarray
    theta_scale: np.ndarray
    x_loc: np.ndarray
    x_scale: np.ndarray

    @staticmethod
    def fit(thetas, xs):
        thetas = np.asarray(thetas, dtype=np.float64)
        xs = np.asarray(xs, dtype=np.float64)
        if thetas.ndim != 2 or xs.ndim != 2 or thetas.shape[0] != xs.shape[0]:
            raise ValidationError(
                f"normalization expects matching 2-D arrays, got {thetas.shape}, {xs.shape}"
            )
        if thetas.shape[0] == 0:
            raise ValidationError("cannot fit normalization on an empty set")
        return Normalization(
            theta_loc=thetas.mean(axis=0),
            theta_scale=_safe_scale(thetas.std(axis=0)),
            x_loc=xs.mean(axis=0),
            x_scale=_safe_scale(xs.std(axis=0)),
        )

    def norm_theta(self, thetas):
        return (np.asarray(thetas, dtype=np.float64) - self.theta_loc) / self.theta_scale

    def norm_x(self, xs):
        return (np.asarray(xs, dtype=np.float64) - self.x_loc) / self.x_scale

    def denorm_x_mean(self, xs):
        return np.asarray(xs, dtype=np.float64) * self.x_scale + self.x_loc

    def denorm_x_std(self, stds):
        return np.asarray(stds, dtype=np.float64) * self.x_scale

    def to_payload(self):
        return {
            "theta_loc": self.theta_loc.tolist(),
            "theta_scale": self.theta_scale.tolist(),
            "x_loc": self.x_loc.tolist(),
            "x_scale": self.x_scale.tolist(),
        }

    @staticmethod
    def from_payload(payload):
        return Normalization(
            theta_loc=np.array(payload["theta_loc"], dtype=np.float64),
            theta_scale=np.array(payload["theta_scale"], dtype=np.float64),
            x_loc=np.array(payload["x_loc"], dtype=np.float64),
            x_scale=np.array(payload["x_scale"], dtype=np.float64),
        )


def _safe_scale(std):
    # constant features carry no signal; unit scale keeps them inert and
    # the round trip exact
    std = np.asarray(std, dtype=np.float64).copy()
    std[std < 1e-8] = 1.0
    return std


@dataclass(frozen=True)
class NpArchitecture:
    theta_dim: int
    x_dim: int
    r_dim: int = 128
    z_dim: int = 32
    encoder_widths: tuple = (128, 128)
    decoder_widths: tuple = (128, 128)
    std_floor: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "encoder_widths", tuple(self.encoder_widths))
        object.__setattr__(self, "decoder_widths", tuple(self.decoder_widths))
        for field in ("theta_dim", "x_dim", "r_dim", "z_dim"):
            if getattr(self, field) < 1:
                raise ValidationError(f"{field} must be >= 1")
        if self.std_floor <= 0.0:
            raise ValidationError("std_floor must be positive")

    def to_payload(self):
        return {
            "theta_dim": self.theta_dim,
            "x_dim": self.x_dim,
            "r_dim": self.r_dim,
            "z_dim": self.z_dim,
            "encoder_widths": list(self.encoder_widths),
            "decoder_widths": list(self.decoder_widths),
            "std_floor": self.std_floor,
        }

    @staticmethod
    def from_payload(payload):
        return NpArchitecture(
            theta_dim=payload["theta_dim"],
            x_dim=payload["x_dim"],
            r_dim=payload["r_dim"],
            z_dim=payload["z_dim"],
            encoder_widths=tuple(payload["encoder_widths"]),
            decoder_widths=tuple(payload["decoder_widths"]),
            std_floor=payload["std_floor"],
        )


def _np_softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _check_rows(arr, dim, what):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValidationError(f"{what} must have shape (n, {dim}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{what} contains non-finite values")
    return arr


class NeuralProcess:
    """Global-latent model over flat feature vectors."""

    kind = "global"

    def __init__(self, arch: NpArchitecture, seed: int):
        self.arch = arch
        rng = np.random.default_rng(seed)
        enc_dims = (arch.theta_dim + arch.x_dim, *arch.encoder_widths, arch.r_dim)
        self.encoder = nn.MLP(enc_dims, rng, "encoder")
        self.head_mean = nn.Linear(arch.r_dim, arch.z_dim, rng, "latent_mean")
        self.head_raw_std = nn.Linear(arch.r_dim, arch.z_dim, rng, "latent_std")
        dec_dims = (arch.z_dim + arch.theta_dim, *arch.decoder_widths, arch.x_dim)
        self.decoder = nn.MLP(dec_dims, rng, "decoder")
        # softplus(0.5413) ~= 1.0: start with unit observation noise
        self.raw_obs_std = ad.parameter(
            np.full(arch.x_dim, 0.5413), "obs_std.raw"
        )

    @property
    def latent_dim(self):
        return self.arch.z_dim

    def params(self):
        tensors = (
            self.encoder.params()
            + self.head_mean.params()
            + self.head_raw_std.params()
            + self.decoder.params()
            + [self.raw_obs_std]
        )
        return {p.name: p for p in tensors}

    # -- encoder ---------------------------------------------------------

    def encode(self, thetas, xs):
        """Posterior over z given a pair set; returns (mean, std) 1-D tensors."""
        thetas = _check_rows(thetas, self.arch.theta_dim, "thetas")
        xs = _check_rows(xs, self.arch.x_dim, "xs")
        if thetas.shape[0] != xs.shape[0]:
            raise ValidationError("thetas and xs row counts differ")
        if thetas.shape[0] == 0:
            raise ValidationError("cannot encode an empty pair set")
        pairs = ad.constant(np.concatenate([thetas, xs], axis=1))
        r = self.encoder(pairs)
        rbar = ad.reshape(ad.mean_rows_canonical(r), (1, self.arch.r_dim))
        mean = self.head_mean(rbar)[0]
        raw = self.head_raw_std(rbar)[0]
        return mean, nn.positive_std(raw, self.arch.std_floor)

    def encode_dist(self, thetas, xs) -> GaussianDiag:
        mean, std = self.encode(thetas, xs)
        return GaussianDiag(mean=mean.data.copy(), std=std.data.copy())

    def encode_groups(self, thetas, xs):
        """Vectorized encode over G same-sized pair sets (numpy fast path).

        thetas: (G, g, theta_dim), xs: (G, g, x_dim). Returns mean/std arrays
        of shape (G, z_dim). Reproduces encode() exactly for each group.
        """
        thetas = np.asarray(thetas, dtype=np.float64)
        xs = np.asarray(xs, dtype=np.float64)
        g_count, g_size = thetas.shape[0], thetas.shape[1]
        flat = np.concatenate(
            [thetas.reshape(g_count * g_size, -1), xs.reshape(g_count * g_size, -1)],
            axis=1,
        )
        r = self.encoder(ad.constant(flat)).data.reshape(g_count, g_size, self.arch.r_dim)
        rbar = np.empty((g_count, self.arch.r_dim))
        for k in range(g_count):
            block = r[k]
            order = np.lexsort(block.T[::-1])
            rbar[k] = block[order].mean(axis=0)
        means = rbar @ self.head_mean.w.data + self.head_mean.b.data
        raws = rbar @ self.head_raw_std.w.data + self.head_raw_std.b.data
        stds = _np_softplus(raws) + self.arch.std_floor
        return means, stds

    # -- decoder ---------------------------------------------------------

    def decode_rows(self, z_rows, theta_rows):
        """Decoder means for row-aligned (z, theta) pairs; (m, x_dim) tensor."""
        if not isinstance(z_rows, ad.Tensor):
            z_rows = ad.constant(np.asarray(z_rows, dtype=np.float64))
        theta_rows = ad.constant(
            _check_rows(theta_rows, self.arch.theta_dim, "theta_rows")
        )
        return self.decoder(ad.concat([z_rows, theta_rows], axis=1))

    def decode_tiled(self, z, thetas):
        """Decoder means for one latent sample against many thetas.

        z is a 1-D (z_dim,) tensor (gradients flow through the tiling).
        """
        thetas = _check_rows(thetas, self.arch.theta_dim, "thetas")
        tiled = ad.add_bias(ad.constant(np.zeros((thetas.shape[0], self.arch.z_dim))), z)
        return self.decoder(ad.concat([tiled, ad.constant(thetas)], axis=1))

    def obs_std(self):
        return nn.positive_std(self.raw_obs_std, self.arch.std_floor)

    def log_obs_std(self):
        return ad.log(self.obs_std())

    def decode_np(self, z_samples, theta):
        """Numpy path: decoder means for (n, z_dim) samples at a single theta."""
        z_samples = _check_rows(z_samples, self.arch.z_dim, "z_samples")
        theta_rows = np.broadcast_to(
            np.asarray(theta, dtype=np.float64), (z_samples.shape[0], self.arch.theta_dim)
        )
        return self.decode_rows(z_samples, theta_rows).data

    def obs_std_np(self):
        return self.obs_std().data


# -- tape-level loss pieces (shared with the spatiotemporal model) --------


def gaussian_nll_rows(mu, x_const, log_sigma):
    """Average over rows of the negative Gaussian log likelihood.

    mu: (n, F) tensor; x_const: (n, F) constant tensor; log_sigma: (F,) tensor.
    """
    diff = x_const - mu
    standardized = ad.mul_bias(diff, ad.exp(ad.neg(log_sigma)))
    quad = ad.mean_(ad.sum_(standardized * standardized, axis=1))
    n_features = mu.data.shape[1]
    return 0.5 * quad + ad.sum_(log_sigma) + 0.5 * n_features * LOG_2PI


def kl_tape(mean_q, std_q, mean_p, std_p):
    """Closed-form KL(q || p) between diagonal Gaussians, clamped at zero."""
    lq = ad.log(std_q)
    lp = ad.log(std_p)
    ratio2 = ad.exp(2.0 * (lq - lp))
    delta = (mean_q - mean_p) * ad.exp(ad.neg(lp))
    per_dim = (lp - lq) + 0.5 * (ratio2 + delta * delta) - 0.5
    return ad.relu(ad.sum_(per_dim))


def elbo_loss(model, thetas, xs, ctx_idx, noise):
    """Negative ELBO for a pair set with the given context subset.

    thetas/xs are normalized arrays covering the full target set (the
    context rows are targets too). noise: (n_z, z_dim) standard-normal
    draws, one latent sample per row. Returns (loss tensor, parts dict).
    """
    ctx_idx = np.asarray(ctx_idx, dtype=np.intp)
    if ctx_idx.size == 0:
        raise ValidationError("ELBO needs a nonempty context subset")
    n_total = np.asarray(xs).shape[0]
    if np.any(ctx_idx < 0) or np.any(ctx_idx >= n_total):
        raise ValidationError("context indices out of range")
    noise = np.asarray(noise, dtype=np.float64)
    if noise.ndim != 2 or noise.shape[1] != model.latent_dim:
        raise ValidationError(
            f"noise must be (n_z, {model.latent_dim}), got {noise.shape}"
        )
    mean_all, std_all = model.encode(thetas, xs)
    mean_ctx, std_ctx = model.encode(
        np.asarray(thetas)[ctx_idx], np.asarray(xs)[ctx_idx]
    )
    kl = kl_tape(mean_all, std_all, mean_ctx, std_ctx)
    log_sigma = model.log_obs_std()
    x_const = ad.constant(np.asarray(xs, dtype=np.float64))
    nll_terms = []
    for eta in noise:
        z = mean_all + std_all * ad.constant(eta)
        mu = model.decode_tiled(z, thetas)
        nll_terms.append(gaussian_nll_rows(mu, x_const, log_sigma))
    nll = nll_terms[0]
    for term in nll_terms[1:]:
        nll = nll + term
    if len(nll_terms) > 1:
        nll = nll * (1.0 / len(nll_terms))
    loss = nll + kl * (1.0 / n_total)
    return loss, {"nll": float(nll.data), "kl": float(kl.data)}
