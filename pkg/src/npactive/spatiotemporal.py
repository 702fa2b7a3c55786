"""Neural-process surrogate with a per-timestep latent process over a node graph.

The encoder runs a graph-diffusion GRU over the per-node observation
sequence (theta appended to every node's input), aggregates the hidden
state across the pair set at every step, and reads one diagonal Gaussian
per step. Because the recurrence only moves forward, the step-t posterior
depends on observations up to t only. The decoder is a second
graph-diffusion GRU driven by (z_t, theta) with its own hidden state.

Latents are exposed flattened to (horizon * z_dim,) so that the global
and spatiotemporal models share one interface: a flat diagonal Gaussian,
a flat decode, and the same ELBO assembly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .errors import ValidationError
from .gaussian import GaussianDiag
from .simulators import MobilityGraph


@dataclass(frozen=True)
class SpatiotemporalArchitecture:
    theta_dim: int
    horizon: int
    nodes: int
    channels: int
    hidden_dim: int = 64
    z_dim: int = 32
    diffusion_order: int = 2
    std_floor: float = 1e-3

    def __post_init__(self):
        for field in ("theta_dim", "horizon", "nodes", "channels", "hidden_dim", "z_dim"):
            if getattr(self, field) < 1:
                raise ValidationError(f"{field} must be >= 1")
        if self.diffusion_order < 0:
            raise ValidationError("diffusion_order must be >= 0")
        if self.std_floor <= 0.0:
            raise ValidationError("std_floor must be positive")

    @property
    def x_dim(self):
        return self.horizon * self.nodes * self.channels

    def to_payload(self):
        return {
            "theta_dim": self.theta_dim,
            "horizon": self.horizon,
            "nodes": self.nodes,
            "channels": self.channels,
            "hidden_dim": self.hidden_dim,
            "z_dim": self.z_dim,
            "diffusion_order": self.diffusion_order,
            "std_floor": self.std_floor,
        }

    @staticmethod
    def from_payload(payload):
        return SpatiotemporalArchitecture(**payload)


class SpatiotemporalNeuralProcess:
    """Latent-process model over (horizon, nodes, channels) trajectories."""

    kind = "spatiotemporal"

    def __init__(self, arch: SpatiotemporalArchitecture, graph: MobilityGraph, seed: int):
        if graph.nodes != arch.nodes:
            raise ValidationError(
                f"graph has {graph.nodes} nodes but architecture declares {arch.nodes}"
            )
        self.arch = arch
        self.graph = graph
        supports = graph.diffusion_supports(arch.diffusion_order)
        rng = np.random.default_rng(seed)
        self.enc_cell = nn.DiffusionGRUCell(
            arch.channels + arch.theta_dim, arch.hidden_dim, supports, rng, "enc_cell"
        )
        agg_dim = arch.nodes * arch.hidden_dim
        self.head_mean = nn.Linear(agg_dim, arch.z_dim, rng, "latent_mean")
        self.head_raw_std = nn.Linear(agg_dim, arch.z_dim, rng, "latent_std")
        self.dec_cell = nn.DiffusionGRUCell(
            arch.z_dim + arch.theta_dim, arch.hidden_dim, supports, rng, "dec_cell"
        )
        self.dec_head = nn.Linear(arch.hidden_dim, arch.channels, rng, "dec_head")
        self.raw_obs_std = ad.parameter(
            np.full(arch.nodes * arch.channels, 0.5413), "obs_std.raw"
        )

    @property
    def latent_dim(self):
        """Flattened latent size: one z per step."""
        return self.arch.horizon * self.arch.z_dim

    def params(self):
        tensors = (
            self.enc_cell.params()
            + self.head_mean.params()
            + self.head_raw_std.params()
            + self.dec_cell.params()
            + self.dec_head.params()
            + [self.raw_obs_std]
        )
        return {p.name: p for p in tensors}

    def _check_inputs(self, thetas, xs):
        thetas = np.asarray(thetas, dtype=np.float64)
        xs = np.asarray(xs, dtype=np.float64)
        a = self.arch
        if thetas.ndim != 2 or thetas.shape[1] != a.theta_dim:
            raise ValidationError(f"thetas must be (n, {a.theta_dim}), got {thetas.shape}")
        if xs.ndim != 2 or xs.shape[1] != a.x_dim:
            raise ValidationError(
                f"xs must be flat (n, {a.x_dim}) in (t, node, channel) order, got {xs.shape}"
            )
        if thetas.shape[0] != xs.shape[0] or thetas.shape[0] == 0:
            raise ValidationError("thetas and xs must be nonempty with matching rows")
        if not (np.all(np.isfinite(thetas)) and np.all(np.isfinite(xs))):
            raise ValidationError("encoder inputs contain non-finite values")
        return thetas, xs

    # -- encoder ---------------------------------------------------------

    def encode(self, thetas, xs):
        """Per-step posterior over z_{1:T}, flattened to 1-D tensors.

        xs rows are trajectories flattened from (horizon, nodes, channels).
        """
        thetas, xs = self._check_inputs(thetas, xs)
        a = self.arch
        b = thetas.shape[0]
        seq = xs.reshape(b, a.horizon, a.nodes, a.channels)
        theta_rows = np.repeat(thetas, a.nodes, axis=0)
        h = ad.constant(np.zeros((b * a.nodes, a.hidden_dim)))
        per_step = []
        for t in range(a.horizon):
            x_t = seq[:, t].reshape(b * a.nodes, a.channels)
            inp = ad.constant(np.concatenate([x_t, theta_rows], axis=1))
            h = self.enc_cell(inp, h)
            flat = ad.reshape(h, (b, a.nodes * a.hidden_dim))
            agg = ad.mean_rows_canonical(flat)
            per_step.append(ad.reshape(agg, (1, a.nodes * a.hidden_dim)))
        stacked = ad.concat(per_step, axis=0)
        means = self.head_mean(stacked)
        raws = self.head_raw_std(stacked)
        mean_flat = ad.reshape(means, (a.horizon * a.z_dim,))
        std_flat = nn.positive_std(ad.reshape(raws, (a.horizon * a.z_dim,)), a.std_floor)
        return mean_flat, std_flat

    def encode_dist(self, thetas, xs) -> GaussianDiag:
        mean, std = self.encode(thetas, xs)
        return GaussianDiag(mean=mean.data.copy(), std=std.data.copy())

    # -- decoder ---------------------------------------------------------

    def decode_tiled(self, z_flat, thetas):
        """Decode one flat latent sample against a theta batch.

        z_flat: 1-D (horizon * z_dim,) tensor. Returns an (n, x_dim) tensor
        of per-feature means in (t, node, channel) order.
        """
        thetas = np.asarray(thetas, dtype=np.float64)
        a = self.arch
        b = thetas.shape[0]
        theta_rows = ad.constant(np.repeat(thetas, a.nodes, axis=0))
        zeros = ad.constant(np.zeros((b * a.nodes, a.z_dim)))
        h = ad.constant(np.zeros((b * a.nodes, a.hidden_dim)))
        blocks = []
        for t in range(a.horizon):
            z_t = z_flat[t * a.z_dim : (t + 1) * a.z_dim]
            tiled = ad.add_bias(zeros, z_t)
            inp = ad.concat([tiled, theta_rows], axis=1)
            h = self.dec_cell(inp, h)
            mu_t = self.dec_head(h)
            blocks.append(ad.reshape(mu_t, (b, a.nodes * a.channels)))
        return ad.concat(blocks, axis=1)

    def obs_std(self):
        """Per-(node, channel) std tiled across steps, (x_dim,) tensor."""
        step = nn.positive_std(self.raw_obs_std, self.arch.std_floor)
        return ad.concat([step] * self.arch.horizon, axis=0)

    def log_obs_std(self):
        step = ad.log(nn.positive_std(self.raw_obs_std, self.arch.std_floor))
        return ad.concat([step] * self.arch.horizon, axis=0)

    def decode_np(self, z_samples, theta):
        """Numpy path: decode (n, horizon*z_dim) samples at a single theta."""
        z_samples = np.asarray(z_samples, dtype=np.float64)
        a = self.arch
        if z_samples.ndim != 2 or z_samples.shape[1] != self.latent_dim:
            raise ValidationError(
                f"z_samples must be (n, {self.latent_dim}), got {z_samples.shape}"
            )
        n = z_samples.shape[0]
        theta_rows = ad.constant(
            np.broadcast_to(
                np.asarray(theta, dtype=np.float64), (n * a.nodes, a.theta_dim)
            ).copy()
        )
        h = ad.constant(np.zeros((n * a.nodes, a.hidden_dim)))
        blocks = []
        for t in range(a.horizon):
            z_t = np.repeat(z_samples[:, t * a.z_dim : (t + 1) * a.z_dim], a.nodes, axis=0)
            inp = ad.concat([ad.constant(z_t), theta_rows], axis=1)
            h = self.dec_cell(inp, h)
            mu_t = self.dec_head(h)
            blocks.append(mu_t.data.reshape(n, a.nodes * a.channels))
        return np.concatenate(blocks, axis=1)

    def obs_std_np(self):
        return self.obs_std().data
