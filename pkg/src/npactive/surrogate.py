"""Surrogate wrapper: a latent-variable model plus normalization and context.

The wrapped model works purely in normalized units. This layer owns the
raw-unit boundary (standardize in, destandardize out), tracks the context
set that conditions the latent prior, and provides the training loop with
validation-based early stopping.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import IntegrityError, ValidationError
from .gaussian import GaussianDiag
from .neural_process import (
    Normalization,
    NpArchitecture,
    NeuralProcess,
    elbo_loss,
)
from .simulators import MobilityGraph
from .spatiotemporal import SpatiotemporalArchitecture, SpatiotemporalNeuralProcess

SURROGATE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class PredictiveSummary:
    """Predictive draws and their first two moments, feature-shaped."""

    samples: np.ndarray  # (n, *feature_shape), observation noise included
    mean: np.ndarray  # (*feature_shape,), average of decoded means
    std: np.ndarray  # (*feature_shape,), latent spread + observation noise


class TrainedSurrogate:
    """Model + normalization + context set, in raw data units."""

    def __init__(self, model, normalization, feature_shape, training_steps=0):
        self.model = model
        self.normalization = normalization
        self.feature_shape = tuple(feature_shape)
        self.training_steps = int(training_steps)
        self._ctx_thetas = None
        self._ctx_xs = None
        self._ctx_thetas_norm = None
        self._ctx_xs_norm = None
        self._prior_cache = None

    @property
    def x_dim(self):
        return int(np.prod(self.feature_shape))

    @property
    def context_size(self):
        return 0 if self._ctx_thetas is None else self._ctx_thetas.shape[0]

    def set_normalization(self, normalization: Normalization):
        self.normalization = normalization
        self._refresh_context_cache()

    def set_context(self, thetas, xs):
        """Fix the pair set that conditions the latent prior (raw units)."""
        thetas = np.asarray(thetas, dtype=np.float64)
        if thetas.shape[0] == 0:
            raise ValidationError("context set must be nonempty")
        xs = np.asarray(xs, dtype=np.float64).reshape(thetas.shape[0], -1)
        if xs.shape[1] != self.x_dim:
            raise ValidationError(
                f"context xs have {xs.shape[1]} features, expected {self.x_dim}"
            )
        self._ctx_thetas = thetas
        self._ctx_xs = xs
        self._refresh_context_cache()

    def _refresh_context_cache(self):
        self._prior_cache = None
        if self._ctx_thetas is None:
            self._ctx_thetas_norm = None
            self._ctx_xs_norm = None
        else:
            self._ctx_thetas_norm = self.normalization.norm_theta(self._ctx_thetas)
            self._ctx_xs_norm = self.normalization.norm_x(self._ctx_xs)

    def _require_context(self):
        if self._ctx_thetas is None:
            raise ValidationError("surrogate has no context set; call set_context first")

    def prior(self) -> GaussianDiag:
        """q(z | context), in normalized latent space."""
        self._require_context()
        if self._prior_cache is None:
            self._prior_cache = self.model.encode_dist(
                self._ctx_thetas_norm, self._ctx_xs_norm
            )
        return self._prior_cache

    def posterior(self, thetas, xs) -> GaussianDiag:
        """Encode an arbitrary raw-unit pair set."""
        thetas = np.asarray(thetas, dtype=np.float64)
        if thetas.shape[0] == 0:
            raise ValidationError("cannot encode an empty pair set")
        xs = np.asarray(xs, dtype=np.float64).reshape(thetas.shape[0], -1)
        return self.model.encode_dist(
            self.normalization.norm_theta(thetas), self.normalization.norm_x(xs)
        )

    def posterior_with_samples(self, theta, xhat_norm):
        """Posterior q(z | context + (theta, xhat_j)) for each normalized draw.

        xhat_norm: (n, x_dim) in normalized units. Returns (means, stds)
        arrays of shape (n, latent_dim).
        """
        self._require_context()
        xhat_norm = np.asarray(xhat_norm, dtype=np.float64)
        if xhat_norm.ndim != 2 or xhat_norm.shape[1] != self.x_dim:
            raise ValidationError(
                f"xhat_norm must be (n, {self.x_dim}), got {xhat_norm.shape}"
            )
        theta_norm = self.normalization.norm_theta(
            np.asarray(theta, dtype=np.float64)[None, :]
        )[0]
        n = xhat_norm.shape[0]
        m = self._ctx_thetas_norm.shape[0]
        p = self._ctx_thetas_norm.shape[1]
        thetas_g = np.empty((n, m + 1, p))
        thetas_g[:, :m] = self._ctx_thetas_norm[None, :, :]
        thetas_g[:, m] = theta_norm
        xs_g = np.empty((n, m + 1, self.x_dim))
        xs_g[:, :m] = self._ctx_xs_norm[None, :, :]
        xs_g[:, m] = xhat_norm
        if hasattr(self.model, "encode_groups"):
            return self.model.encode_groups(thetas_g, xs_g)
        means = np.empty((n, self.model.latent_dim))
        stds = np.empty((n, self.model.latent_dim))
        for j in range(n):
            dist = self.model.encode_dist(thetas_g[j], xs_g[j])
            means[j] = dist.mean
            stds[j] = dist.std
        return means, stds

    def decode_norm(self, z_samples, theta):
        """Decoder means and observation std for a raw-unit theta (normalized out)."""
        theta_norm = self.normalization.norm_theta(
            np.asarray(theta, dtype=np.float64)[None, :]
        )[0]
        mu = self.model.decode_np(np.asarray(z_samples, dtype=np.float64), theta_norm)
        return mu, self.model.obs_std_np()

    def sample_predictive_norm(self, theta, n, rng, n_z=None):
        """Draw normalized predictive samples (with observation noise).

        Latents come from a pool of n_z prior draws (default: n). Returns
        (xhat (n, x_dim), mu (n, x_dim), z (n, latent_dim)).
        """
        if n < 1:
            raise ValidationError("need at least one predictive sample")
        n_z = n if n_z is None else n_z
        if n_z < 1:
            raise ValidationError("need at least one latent sample")
        pool = self.prior().sample(n_z, rng)
        z = pool[np.arange(n) % n_z]
        mu, sigma = self.decode_norm(z, theta)
        xhat = mu + sigma[None, :] * rng.standard_normal(mu.shape)
        return xhat, mu, z

    def predict(self, theta, n_samples, rng, denormalize=True) -> PredictiveSummary:
        """Predictive summary at theta from n_samples latent draws.

        mean averages the decoded means; std combines their spread (ddof=1)
        with the observation noise; samples include observation noise.
        """
        if n_samples < 2:
            raise ValidationError("predictive std needs n_samples >= 2")
        z = self.prior().sample(n_samples, rng)
        mu, sigma = self.decode_norm(z, theta)
        samples = mu + sigma[None, :] * rng.standard_normal(mu.shape)
        mean = mu.mean(axis=0)
        std = np.sqrt(mu.var(axis=0, ddof=1) + sigma**2)
        if denormalize:
            samples = self.normalization.denorm_x_mean(samples)
            mean = self.normalization.denorm_x_mean(mean)
            std = self.normalization.denorm_x_std(std)
        shape = self.feature_shape
        return PredictiveSummary(
            samples=samples.reshape((n_samples, *shape)),
            mean=mean.reshape(shape),
            std=std.reshape(shape),
        )

    # -- persistence -----------------------------------------------------

    def to_payload(self):
        self._require_context()
        payload = {
            "version": SURROGATE_FORMAT_VERSION,
            "kind": self.model.kind,
            "architecture": self.model.arch.to_payload(),
            "params": ad.params_to_payload(self.model.params()),
            "normalization": self.normalization.to_payload(),
            "context": {
                "thetas": self._ctx_thetas.tolist(),
                "xs": self._ctx_xs.tolist(),
            },
            "feature_shape": list(self.feature_shape),
            "training_steps": self.training_steps,
        }
        if self.model.kind == "spatiotemporal":
            payload["graph_weights"] = self.model.graph.weights.tolist()
        payload["sha256"] = _payload_digest(payload)
        return payload

    @staticmethod
    def from_payload(payload):
        if not isinstance(payload, dict) or "version" not in payload:
            raise IntegrityError("surrogate payload is missing a version field")
        if payload["version"] != SURROGATE_FORMAT_VERSION:
            raise IntegrityError(
                f"surrogate format version {payload['version']} is not supported"
            )
        recorded = payload.get("sha256")
        if recorded is None or _payload_digest(payload) != recorded:
            raise IntegrityError("surrogate payload failed its integrity check")
        kind = payload["kind"]
        if kind == "global":
            arch = NpArchitecture.from_payload(payload["architecture"])
            model = NeuralProcess(arch, seed=0)
        elif kind == "spatiotemporal":
            arch = SpatiotemporalArchitecture.from_payload(payload["architecture"])
            graph = MobilityGraph(np.array(payload["graph_weights"], dtype=np.float64))
            model = SpatiotemporalNeuralProcess(arch, graph, seed=0)
        else:
            raise IntegrityError(f"unknown surrogate kind {kind!r}")
        arrays = ad.payload_to_arrays(payload["params"])
        params = model.params()
        if set(arrays) != set(params):
            raise IntegrityError("surrogate parameter names do not match architecture")
        for name, arr in arrays.items():
            if params[name].data.shape != arr.shape:
                raise IntegrityError(f"parameter {name} has unexpected shape {arr.shape}")
            params[name].data = arr
        surrogate = TrainedSurrogate(
            model=model,
            normalization=Normalization.from_payload(payload["normalization"]),
            feature_shape=tuple(payload["feature_shape"]),
            training_steps=payload["training_steps"],
        )
        surrogate.set_context(
            np.array(payload["context"]["thetas"], dtype=np.float64),
            np.array(payload["context"]["xs"], dtype=np.float64),
        )
        return surrogate

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_payload(), fh)

    @staticmethod
    def load(path):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IntegrityError(f"surrogate file {path} is not valid JSON: {exc}") from exc
        return TrainedSurrogate.from_payload(payload)


def _payload_digest(payload):
    body = {k: v for k, v in payload.items() if k != "sha256"}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# -- training ------------------------------------------------------------


@dataclass
class TrainSettings:
    steps: int = 200
    lr: float = 1e-3
    context_fraction: float = 0.1
    n_z: int = 1
    patience: int = 50
    batch_size: int = 0  # 0 = full batch
    min_delta: float = 0.0


@dataclass
class TrainReport:
    steps_run: int
    best_val_loss: float
    final_train_loss: float
    val_history: list = field(default_factory=list)


def validation_loss(surrogate, val_thetas, val_xs):
    """Average negative predictive log likelihood of held-out pairs.

    Deterministic: decodes at the prior mean instead of sampling, so early
    stopping never reacts to Monte Carlo noise.
    """
    val_thetas = np.asarray(val_thetas, dtype=np.float64)
    val_xs = np.asarray(val_xs, dtype=np.float64).reshape(val_thetas.shape[0], -1)
    norm = surrogate.normalization
    thetas_n = norm.norm_theta(val_thetas)
    xs_n = norm.norm_x(val_xs)
    z_mean = surrogate.prior().mean
    model = surrogate.model
    mu = _decode_rows_np(model, z_mean, thetas_n)
    sigma = model.obs_std_np()
    resid = (xs_n - mu) / sigma[None, :]
    per_pair = 0.5 * np.sum(resid * resid, axis=1) + np.sum(np.log(sigma)) \
        + 0.5 * mu.shape[1] * np.log(2.0 * np.pi)
    return float(per_pair.mean())


def _decode_rows_np(model, z_vec, thetas_n):
    z_rows = np.broadcast_to(z_vec, (thetas_n.shape[0], z_vec.shape[0])).copy()
    if hasattr(model, "decode_rows"):
        return model.decode_rows(z_rows, thetas_n).data
    # spatiotemporal decode is per-theta; batch over rows
    out = np.empty((thetas_n.shape[0], model.arch.x_dim))
    for i, theta in enumerate(thetas_n):
        out[i] = model.decode_np(z_vec[None, :], theta)[0]
    return out


def train_surrogate(
    surrogate,
    train_thetas,
    train_xs,
    val_thetas,
    val_xs,
    settings: TrainSettings,
    rng,
):
    """Fit the wrapped model by stochastic ELBO descent with early stopping.

    Raw-unit inputs; normalization must already be set on the surrogate.
    The context conditioning the prior during validation is the training
    set itself. Restores the best-validation parameters before returning.
    """
    train_thetas = np.asarray(train_thetas, dtype=np.float64)
    if train_thetas.shape[0] < 2:
        raise ValidationError("training needs at least two pairs")
    train_xs = np.asarray(train_xs, dtype=np.float64).reshape(train_thetas.shape[0], -1)
    norm = surrogate.normalization
    thetas_n = norm.norm_theta(train_thetas)
    xs_n = norm.norm_x(train_xs)
    model = surrogate.model
    params = model.params()
    optimizer = ad.Adam(params.values(), lr=settings.lr)
    surrogate.set_context(train_thetas, train_xs)

    n_total = thetas_n.shape[0]
    best_val = validation_loss(surrogate, val_thetas, val_xs)
    best_params = {k: p.data.copy() for k, p in params.items()}
    bad_steps = 0
    report = TrainReport(steps_run=0, best_val_loss=best_val, final_train_loss=np.nan)
    report.val_history.append(best_val)

    for step in range(settings.steps):
        if settings.batch_size and settings.batch_size < n_total:
            batch_idx = rng.choice(n_total, size=settings.batch_size, replace=False)
        else:
            batch_idx = np.arange(n_total)
        b = batch_idx.shape[0]
        ctx_size = max(1, int(round(settings.context_fraction * b)))
        ctx_idx = rng.choice(b, size=min(ctx_size, b), replace=False)
        noise = rng.standard_normal((settings.n_z, model.latent_dim))
        with ad.Tape() as tape:
            loss, _ = elbo_loss(model, thetas_n[batch_idx], xs_n[batch_idx], ctx_idx, noise)
        optimizer.zero_grad()
        tape.backward(loss)
        optimizer.step()
        report.steps_run = step + 1
        report.final_train_loss = float(loss.data)
        surrogate.training_steps += 1
        surrogate._prior_cache = None

        val = validation_loss(surrogate, val_thetas, val_xs)
        report.val_history.append(val)
        if val < best_val - settings.min_delta:
            best_val = val
            best_params = {k: p.data.copy() for k, p in params.items()}
            bad_steps = 0
        else:
            bad_steps += 1
            if bad_steps >= settings.patience:
                break

    for name, p in params.items():
        p.data = best_params[name].copy()
    surrogate._prior_cache = None
    report.best_val_loss = best_val
    return report
