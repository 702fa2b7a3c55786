"""Small neural-net building blocks on top of the autodiff tensors."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ValidationError


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Linear:
    def __init__(self, in_dim, out_dim, rng, name):
        self.w = ad.parameter(glorot(rng, in_dim, out_dim), f"{name}.w")
        self.b = ad.parameter(np.zeros(out_dim), f"{name}.b")

    def __call__(self, x):
        return ad.add_bias(ad.matmul(x, self.w), self.b)

    def params(self):
        return [self.w, self.b]


class MLP:
    """Linear stack with tanh between layers and a linear output."""

    def __init__(self, dims, rng, name):
        if len(dims) < 2:
            raise ValidationError("MLP needs at least input and output dims")
        self.layers = [
            Linear(d_in, d_out, rng, f"{name}.{k}")
            for k, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:]))
        ]

    def __call__(self, x):
        for layer in self.layers[:-1]:
            x = ad.tanh(layer(x))
        return self.layers[-1](x)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]


class GRUCell:
    """Standard GRU cell with fused input+state weights per gate."""

    def __init__(self, in_dim, hidden_dim, rng, name):
        self.hidden_dim = hidden_dim
        joint = in_dim + hidden_dim
        self.w_reset = ad.parameter(glorot(rng, joint, hidden_dim), f"{name}.reset.w")
        self.b_reset = ad.parameter(np.zeros(hidden_dim), f"{name}.reset.b")
        self.w_update = ad.parameter(glorot(rng, joint, hidden_dim), f"{name}.update.w")
        self.b_update = ad.parameter(np.zeros(hidden_dim), f"{name}.update.b")
        self.w_cand = ad.parameter(glorot(rng, joint, hidden_dim), f"{name}.cand.w")
        self.b_cand = ad.parameter(np.zeros(hidden_dim), f"{name}.cand.b")

    def __call__(self, x, h):
        xh = ad.concat([x, h], axis=1)
        reset = ad.sigmoid(ad.add_bias(ad.matmul(xh, self.w_reset), self.b_reset))
        update = ad.sigmoid(ad.add_bias(ad.matmul(xh, self.w_update), self.b_update))
        xrh = ad.concat([x, reset * h], axis=1)
        cand = ad.tanh(ad.add_bias(ad.matmul(xrh, self.w_cand), self.b_cand))
        return update * h + (1.0 - update) * cand

    def params(self):
        return [
            self.w_reset, self.b_reset,
            self.w_update, self.b_update,
            self.w_cand, self.b_cand,
        ]


class DiffusionGRUCell:
    """GRU cell whose gate maps diffuse features over a node graph.

    Rows of x and h stack nodes within batch entries ((b, d) -> row b*D+d).
    Each gate computes sum_k node_mix(concat(x, h), supports[k]) @ W_k + bias,
    where supports are powers of the row-normalized mixing matrix. Order 0
    skips the mix entirely, so with supports=[I] the cell reproduces a plain
    GRUCell with the same (fused) weights bit for bit.
    """

    def __init__(self, in_dim, hidden_dim, supports, rng, name):
        self.hidden_dim = hidden_dim
        self.supports = [np.asarray(s, dtype=np.float64) for s in supports]
        if not self.supports:
            raise ValidationError("DiffusionGRUCell needs at least the order-0 support")
        joint = in_dim + hidden_dim
        norder = len(self.supports)
        self.w_reset = [
            ad.parameter(glorot(rng, joint, hidden_dim), f"{name}.reset.w{k}")
            for k in range(norder)
        ]
        self.b_reset = ad.parameter(np.zeros(hidden_dim), f"{name}.reset.b")
        self.w_update = [
            ad.parameter(glorot(rng, joint, hidden_dim), f"{name}.update.w{k}")
            for k in range(norder)
        ]
        self.b_update = ad.parameter(np.zeros(hidden_dim), f"{name}.update.b")
        self.w_cand = [
            ad.parameter(glorot(rng, joint, hidden_dim), f"{name}.cand.w{k}")
            for k in range(norder)
        ]
        self.b_cand = ad.parameter(np.zeros(hidden_dim), f"{name}.cand.b")

    def _gate(self, xh, weights, bias):
        total = ad.matmul(xh, weights[0])
        for support, w in zip(self.supports[1:], weights[1:]):
            total = total + ad.matmul(ad.node_mix(xh, support), w)
        return ad.add_bias(total, bias)

    def __call__(self, x, h):
        xh = ad.concat([x, h], axis=1)
        reset = ad.sigmoid(self._gate(xh, self.w_reset, self.b_reset))
        update = ad.sigmoid(self._gate(xh, self.w_update, self.b_update))
        xrh = ad.concat([x, reset * h], axis=1)
        cand = ad.tanh(self._gate(xrh, self.w_cand, self.b_cand))
        return update * h + (1.0 - update) * cand

    def params(self):
        return (
            self.w_reset + [self.b_reset]
            + self.w_update + [self.b_update]
            + self.w_cand + [self.b_cand]
        )


def positive_std(raw, floor):
    """softplus(raw) + floor, elementwise; keeps learned stds strictly positive."""
    return ad.softplus(raw) + float(floor)
