"""Independent reference implementations used to check the package.

Everything here is deliberately written from first principles with plain
numpy (no imports from the package's numeric internals beyond the Tensor
plumbing needed to drive gradients), so a bug in the package cannot hide
inside its own oracle.
"""
import numpy as np

from npactive import autodiff as ad
from npactive.gaussian import GaussianDiag


# -- finite-difference gradient checking -------------------------------------


def relative_error(a, b):
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


def numeric_gradient(f, arrays, index, h=1e-5):
    """Central differences of scalar f(list-of-arrays) w.r.t. arrays[index]."""
    base = [np.array(a, dtype=np.float64) for a in arrays]
    grad = np.zeros_like(base[index])
    flat = grad.reshape(-1)
    for j in range(flat.size):
        plus = [a.copy() for a in base]
        minus = [a.copy() for a in base]
        plus[index].reshape(-1)[j] += h
        minus[index].reshape(-1)[j] -= h
        flat[j] = (f(plus) - f(minus)) / (2.0 * h)
    return grad


def gradcheck(build, arrays, h=1e-5, rtol=1e-4):
    """Compare tape gradients of a scalar graph against central differences.

    build(tensors) -> scalar Tensor, given one Tensor per input array.
    Returns the worst relative error seen (also asserts it is <= rtol).
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    params = [ad.parameter(a.copy(), f"p{i}") for i, a in enumerate(arrays)]
    with ad.Tape() as tape:
        loss = build(params)
    tape.backward(loss)

    def f(values):
        # outside a tape, ops run forward-only; nothing is recorded
        for p, v in zip(params, values):
            p.data = np.array(v, dtype=np.float64)
        return float(build(params).data)

    worst = 0.0
    for i in range(len(arrays)):
        numeric = numeric_gradient(f, arrays, i, h=h)
        analytic = params[i].grad
        assert analytic is not None, f"no gradient reached input {i}"
        err = relative_error(analytic, numeric).max()
        worst = max(worst, float(err))
    # restore original values (f() mutates them)
    for p, a in zip(params, arrays):
        p.data = a
    assert worst <= rtol, f"gradient mismatch: worst relative error {worst:.3e}"
    return worst


# -- deterministic mean-field epidemic recursion ------------------------------


def mean_field_seir(beta, epsilon, mu, population, e0, i0, horizon):
    """Deterministic daily-update compartment recursion.

    Uses the same per-day event probabilities as the stochastic simulator's
    definition (p = 1 - exp(-rate)) but propagates expected counts as
    floats with synchronous updates. This is the discrete-time mean-field
    limit of the chain-binomial process, which a continuous-time ODE does
    not match at daily step sizes for fast epidemics.
    """
    s = float(population - e0 - i0)
    e = float(e0)
    i = float(i0)
    r = 0.0
    p_ei = -np.expm1(-epsilon)
    p_ir = -np.expm1(-mu)
    series = np.empty(horizon)
    for t in range(horizon):
        p_se = -np.expm1(-beta * i / population)
        d_se = s * p_se
        d_ei = e * p_ei
        d_ir = i * p_ir
        s -= d_se
        e += d_se - d_ei
        i += d_ei - d_ir
        r += d_ir
        series[t] = i
    return series


def rk4_seir(beta, epsilon, mu, population, e0, i0, horizon, steps_per_day=20):
    """Classical 4th-order Runge-Kutta on the continuous-time SEIR ODE.

    Kept as a reference for documenting how far the continuous-time limit
    sits from the daily-update process at these rates: the two disagree by
    design, not by bug.
    """
    def deriv(y):
        s, e, i, r = y
        new_inf = beta * s * i / population
        return np.array([-new_inf, new_inf - epsilon * e, epsilon * e - mu * i, mu * i])

    y = np.array([population - e0 - i0, e0, i0, 0.0], dtype=np.float64)
    h = 1.0 / steps_per_day
    series = np.empty(horizon)
    for day in range(horizon):
        for _ in range(steps_per_day):
            k1 = deriv(y)
            k2 = deriv(y + 0.5 * h * k1)
            k3 = deriv(y + 0.5 * h * k2)
            k4 = deriv(y + h * k3)
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        series[day] = y[2]
    return series


# -- conjugate linear-Gaussian micro-model ------------------------------------


class ConjugateGaussianModel:
    """Identity-decoder Gaussian model with an exact posterior.

    Latent z ~ N(mean0, std_z^2), observation x = z + N(0, std_x^2)
    componentwise. Implements the handful of methods the information-gain
    estimators call on a surrogate, with every distribution exact, so the
    estimators can be validated against the closed-form mutual information
    I(x; z) = sum_d 0.5 * ln(1 + std_z_d^2 / std_x_d^2).
    """

    def __init__(self, prior_mean, prior_std, obs_std):
        self.prior_mean = np.asarray(prior_mean, dtype=np.float64)
        self.prior_std = np.broadcast_to(
            np.asarray(prior_std, dtype=np.float64), self.prior_mean.shape
        ).copy()
        self.obs_std = np.broadcast_to(
            np.asarray(obs_std, dtype=np.float64), self.prior_mean.shape
        ).copy()

    def prior(self):
        return GaussianDiag(mean=self.prior_mean, std=self.prior_std)

    def decode_norm(self, z_samples, theta):
        return np.asarray(z_samples, dtype=np.float64), self.obs_std

    def sample_predictive_norm(self, theta, n, rng, n_z=None):
        n_z = n if n_z is None else n_z
        pool = self.prior().sample(n_z, rng)
        z = pool[np.arange(n) % n_z]
        xhat = z + self.obs_std[None, :] * rng.standard_normal(z.shape)
        return xhat, z, z

    def posterior_with_samples(self, theta, xhat):
        xhat = np.asarray(xhat, dtype=np.float64)
        prec = 1.0 / self.prior_std**2 + 1.0 / self.obs_std**2
        var = 1.0 / prec
        means = var[None, :] * (
            self.prior_mean[None, :] / self.prior_std[None, :] ** 2
            + xhat / self.obs_std[None, :] ** 2
        )
        stds = np.broadcast_to(np.sqrt(var), xhat.shape).copy()
        return means, stds

    def analytic_mi(self):
        return float(np.sum(0.5 * np.log1p(self.prior_std**2 / self.obs_std**2)))


# -- closed-form distribution facts -------------------------------------------


def diag_gaussian_kl(mean_q, std_q, mean_p, std_p):
    """KL(N_q || N_p) for diagonal Gaussians, straight from the formula."""
    mean_q, std_q = np.asarray(mean_q, float), np.asarray(std_q, float)
    mean_p, std_p = np.asarray(mean_p, float), np.asarray(std_p, float)
    return float(
        np.sum(
            np.log(std_p / std_q)
            + (std_q**2 + (mean_q - mean_p) ** 2) / (2.0 * std_p**2)
            - 0.5
        )
    )


def gaussian_entropy_exact(cov):
    """0.5 ln det(2 pi e Sigma) via slogdet."""
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    d = cov.shape[0]
    sign, logdet = np.linalg.slogdet(cov)
    assert sign > 0
    return float(0.5 * logdet + 0.5 * d * (1.0 + np.log(2.0 * np.pi)))


# -- randomized op graphs for gradient checks ---------------------------------


def random_composite_case(seed):
    """A seeded random DAG of tape primitives with domain-safe wrappers.

    Returns (build, arrays) in the shape gradcheck expects. Every input
    array is guaranteed to receive gradient through an anchor term, and
    ops with restricted domains (log, div, relu) are fed through maps
    that keep them away from singular points so central differences stay
    trustworthy.
    """
    import npactive.autodiff as ad

    rng = np.random.default_rng(seed)
    s = int(rng.integers(2, 5))
    n_mats = int(rng.integers(2, 4))
    arrays = [rng.uniform(-1.4, 1.4, size=(s, s)) for _ in range(n_mats)]
    arrays.append(rng.uniform(-1.0, 1.0, size=s))
    mix = rng.uniform(0.1, 1.0, size=(s, s))
    mix = mix / mix.sum(axis=1, keepdims=True)
    ops = rng.integers(0, 12, size=int(rng.integers(6, 11)))
    picks = rng.integers(0, 10_000, size=(len(ops), 2))

    def build(params):
        bias = params[-1]
        nodes = list(params[:-1])
        for op, (i, j) in zip(ops, picks):
            a = nodes[i % len(nodes)]
            b = nodes[j % len(nodes)]
            if op == 0:
                nodes.append(a + b)
            elif op == 1:
                nodes.append(a - b)
            elif op == 2:
                nodes.append(a * b)
            elif op == 3:
                nodes.append(a / (ad.softplus(b) + 0.7))
            elif op == 4:
                nodes.append(a @ b)
            elif op == 5:
                nodes.append(ad.tanh(a) + ad.neg(b))
            elif op == 6:
                nodes.append(ad.sigmoid(a) * ad.exp(ad.tanh(b)))
            elif op == 7:
                nodes.append(ad.log(ad.softplus(a) + 0.5))
            elif op == 8:
                nodes.append(ad.relu(ad.tanh(a) + 1.5))
            elif op == 9:
                nodes.append(ad.add_bias(a, bias))
            elif op == 10:
                nodes.append(ad.mul_bias(a, ad.tanh(bias) + 1.2))
            else:
                halves = ad.concat([a[:1], a[1:]], axis=0)
                nodes.append(ad.reshape(halves, (s * s,)).mean() * b)
        tail = nodes[-1]
        pooled = ad.mean_rows_canonical(ad.node_mix(tail, mix))
        scalar = ad.mean_(pooled) + 0.1 * ad.mean_(ad.sum_(nodes[-2] * tail, axis=1))
        flats = [ad.reshape(p, (p.data.size,)) for p in params]
        anchor = ad.mean_(ad.concat(flats, axis=0))
        return scalar + 0.05 * anchor

    return build, arrays
