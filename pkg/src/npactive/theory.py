"""Error-scaling bench for greedy vs random sequential design.

A Bayesian linear model with a random feature map: observations
X = <phi, z*> + eps with phi = Psi theta / ||Psi theta||. The greedy policy
queries the direction of V's smallest eigenvalue (the maximum-variance
design); the random policy draws theta ~ N(0, I). The experiment measures
how the posterior-mean error ||z_hat - z*|| grows with dimension at a
matched round budget, where greedy should gain roughly one power of d.
"""
from __future__ import annotations

import numpy as np
from scipy.stats import spearmanr

from .errors import NumericalError, ValidationError


class LinearBanditState:
    """Posterior state: V = m I + sum phi phi^T, b = sum X phi."""

    def __init__(self, psi, z_star, sigma, m=1.0):
        psi = np.asarray(psi, dtype=np.float64)
        z_star = np.asarray(z_star, dtype=np.float64)
        if psi.ndim != 2 or psi.shape[0] != psi.shape[1]:
            raise ValidationError(f"psi must be square, got {psi.shape}")
        if z_star.shape != (psi.shape[0],):
            raise ValidationError("z_star dimension does not match psi")
        if m <= 0.0:
            raise ValidationError("prior scale m must be positive")
        if sigma < 0.0:
            raise ValidationError("noise scale must be >= 0")
        self.d = psi.shape[0]
        self.psi = psi
        self.z_star = z_star
        self.sigma = float(sigma)
        self.m = float(m)
        self.V = m * np.eye(self.d)
        self.b = np.zeros(self.d)
        self.k = 0

    def feature(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        raw = self.psi @ theta
        norm = np.linalg.norm(raw)
        if norm == 0.0:
            raise ValidationError("theta maps to the zero feature")
        return raw / norm

    def z_hat(self):
        try:
            return np.linalg.solve(self.V, self.b)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"posterior solve failed: {exc}") from exc

    def error(self):
        return float(np.linalg.norm(self.z_hat() - self.z_star))

    def observe(self, theta, eps):
        """One query: X = <phi, z*> + eps; rank-one update of (V, b)."""
        phi = self.feature(theta)
        x = float(phi @ self.z_star) + float(eps)
        self.V += np.outer(phi, phi)
        self.b += x * phi
        self.k += 1
        return self

    def sample_posterior(self, n, rng):
        """Draws z = z_hat + sigma V^{-1} eta with eta ~ N(0, I)."""
        eta = rng.standard_normal((n, self.d))
        try:
            shift = np.linalg.solve(self.V, eta.T).T
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"posterior solve failed: {exc}") from exc
        return self.z_hat()[None, :] + self.sigma * shift


def select_greedy(state: LinearBanditState, candidates=None):
    """Maximum-predictive-variance design.

    Exact mode (candidates None): the eigenvector of V with the smallest
    eigenvalue, pulled back through psi so that feature(theta) reproduces
    it. Candidate mode: argmax over the rows of ``candidates`` of
    phi^T V^{-2} phi (ties broken by lowest index).
    """
    if candidates is None:
        try:
            eigvals, eigvecs = np.linalg.eigh(state.V)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"eigendecomposition failed: {exc}") from exc
        direction = eigvecs[:, 0]
        try:
            theta = np.linalg.solve(state.psi, direction)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"psi is singular: {exc}") from exc
        return theta / np.linalg.norm(theta)
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.ndim != 2 or candidates.shape[1] != state.d:
        raise ValidationError(f"candidates must be (n, {state.d})")
    if candidates.shape[0] == 0:
        raise ValidationError("candidate set is empty")
    best_idx = 0
    best_val = -np.inf
    for i, theta in enumerate(candidates):
        phi = state.feature(theta)
        half = np.linalg.solve(state.V, phi)
        val = float(half @ half)  # phi^T V^{-2} phi
        if val > best_val:
            best_val = val
            best_idx = i
    return candidates[best_idx]


def select_random(state: LinearBanditState, rng):
    """theta ~ N(0, I_d); feature normalization happens at observe time."""
    return rng.standard_normal(state.d)


def run_policy(policy, psi, z_star, sigma, m, noise, rng_select=None, record_at=()):
    """Run one policy for len(noise) rounds on fixed (psi, z*, noise).

    Returns (final state, {k: error at k} for requested checkpoints).
    """
    if policy not in ("greedy", "random"):
        raise ValidationError(f"unknown policy {policy!r}")
    state = LinearBanditState(psi, z_star, sigma, m)
    record_at = set(int(k) for k in record_at)
    errors = {}
    for eps in noise:
        if policy == "greedy":
            theta = select_greedy(state)
        else:
            theta = select_random(state, rng_select)
        state.observe(theta, eps)
        if state.k in record_at:
            errors[state.k] = state.error()
    return state, errors


def _unit_sphere(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def scaling_experiment(dims, rounds_per_dim=40, sigma=0.5, m=1.0, replicates=50, seed=0):
    """Final-round errors for both policies over a dimension sweep.

    Each (d, replicate) pair draws one shared environment (psi, z*, and
    the noise sequence), runs both policies on it for k = rounds_per_dim*d
    rounds, and records the terminal error. Returns a list of row dicts
    with keys policy, d, k, replicate, error.
    """
    if replicates < 1:
        raise ValidationError("replicates must be >= 1")
    if rounds_per_dim < 1:
        raise ValidationError("rounds_per_dim must be >= 1")
    rows = []
    for d in dims:
        d = int(d)
        if d < 1:
            raise ValidationError("dimensions must be >= 1")
        k = rounds_per_dim * d
        for rep in range(replicates):
            env_rng = np.random.default_rng(
                np.random.SeedSequence([int(seed), 101, d, rep])
            )
            psi = env_rng.standard_normal((d, d))
            z_star = _unit_sphere(env_rng, d)
            noise = sigma * env_rng.standard_normal(k)
            select_rng = np.random.default_rng(
                np.random.SeedSequence([int(seed), 202, d, rep])
            )
            for policy in ("greedy", "random"):
                state, _ = run_policy(
                    policy, psi, z_star, sigma, m, noise,
                    rng_select=select_rng if policy == "random" else None,
                )
                rows.append(
                    {
                        "policy": policy,
                        "d": d,
                        "k": k,
                        "replicate": rep,
                        "error": state.error(),
                    }
                )
    return rows


def mean_errors_by_dim(rows, policy):
    """d -> mean terminal error for one policy."""
    per_d = {}
    for row in rows:
        if row["policy"] == policy:
            per_d.setdefault(row["d"], []).append(row["error"])
    return {d: float(np.mean(v)) for d, v in sorted(per_d.items())}


def fit_dimension_slope(rows, policy):
    """Slope of log mean-error against log d."""
    means = mean_errors_by_dim(rows, policy)
    if len(means) < 2:
        raise ValidationError("need at least two dimensions to fit a slope")
    log_d = np.log(np.array(list(means.keys()), dtype=np.float64))
    log_e = np.log(np.array(list(means.values()), dtype=np.float64))
    return float(np.polyfit(log_d, log_e, 1)[0])


def error_ratio_spearman(rows):
    """Spearman correlation between d and the random/greedy error ratio.

    The ratio is computed per (d, replicate) on the shared environment,
    then correlated against d across all replicates.
    """
    greedy = {}
    random_ = {}
    for row in rows:
        key = (row["d"], row["replicate"])
        if row["policy"] == "greedy":
            greedy[key] = row["error"]
        else:
            random_[key] = row["error"]
    dims = []
    ratios = []
    for key in sorted(greedy):
        if key in random_:
            dims.append(key[0])
            ratios.append(random_[key] / greedy[key])
    rho = spearmanr(dims, ratios).statistic
    return float(rho)
