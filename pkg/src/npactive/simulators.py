"""Stochastic SEIR simulators: single population and graph-coupled metapopulation.

Transitions are binomial draws with exponential one-day hazards
(p = 1 - exp(-rate)), applied synchronously from the start-of-day state:

    dSE ~ Binomial(S, 1 - exp(-lambda))     lambda = beta * I / N  (single node)
    dEI ~ Binomial(E, 1 - exp(-epsilon))
    dIR ~ Binomial(I, 1 - exp(-mu))

In the metapopulation variant the force of infection couples nodes through
a row-normalized mixing matrix M: lambda_d = beta * sum_j M[d, j] * I_j / N_j.
Every simulation is a pure function of (scenario, graph, seed).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

COMPARTMENTS = ("S", "E", "I", "R")
TRANSITIONS = ("SE", "EI", "IR")


@dataclass(frozen=True)
class Scenario:
    """Simulator parameters for one run family.

    beta, epsilon, mu are per-day hazard rates. population is per node.
    For multi-node scenarios, node_seeds lists (E0, I0) per node; by default
    only node 0 is seeded with (e0, i0).
    """

    beta: float
    epsilon: float
    mu: float = 1.0
    horizon: int = 100
    population: int = 100_000
    e0: int = 2000
    i0: int = 2000
    nodes: int = 1
    node_seeds: tuple = None

    def __post_init__(self):
        if not np.isfinite(self.beta) or self.beta < 0.0:
            raise ValidationError(f"beta must be finite and >= 0, got {self.beta}")
        if not (0.0 < self.epsilon <= 1.0):
            raise ValidationError(f"epsilon must be in (0, 1], got {self.epsilon}")
        if not np.isfinite(self.mu) or self.mu <= 0.0:
            raise ValidationError(f"mu must be positive, got {self.mu}")
        if self.horizon < 1:
            raise ValidationError(f"horizon must be >= 1, got {self.horizon}")
        if self.population < 1:
            raise ValidationError(f"population must be >= 1, got {self.population}")
        if self.nodes < 1:
            raise ValidationError(f"nodes must be >= 1, got {self.nodes}")
        if self.node_seeds is not None:
            seeds = tuple((int(e), int(i)) for e, i in self.node_seeds)
            if len(seeds) != self.nodes:
                raise ValidationError(
                    f"node_seeds has {len(seeds)} entries for {self.nodes} nodes"
                )
            object.__setattr__(self, "node_seeds", seeds)
        for e0, i0 in self.seeds_per_node():
            if e0 < 0 or i0 < 0 or e0 + i0 > self.population:
                raise ValidationError(
                    f"initial E0={e0}, I0={i0} invalid for population {self.population}"
                )

    def seeds_per_node(self):
        """(E0, I0) per node; defaults to seeding node 0 only."""
        if self.node_seeds is not None:
            return list(self.node_seeds)
        if self.nodes == 1:
            return [(self.e0, self.i0)]
        return [(self.e0, self.i0)] + [(0, 0)] * (self.nodes - 1)

    def initial_state(self):
        """Start-of-day-0 compartment counts, shape (nodes, 4)."""
        state = np.zeros((self.nodes, 4), dtype=np.int64)
        for d, (e0, i0) in enumerate(self.seeds_per_node()):
            state[d] = (self.population - e0 - i0, e0, i0, 0)
        return state


@dataclass(frozen=True)
class Trajectory:
    """One realized run: daily states after steps 1..T plus daily transition counts."""

    scenario: Scenario
    seed: int
    states: np.ndarray  # (T, D, 4) int64, columns S,E,I,R
    incidence: np.ndarray  # (T, D, 3) int64, columns dSE,dEI,dIR

    @property
    def infectious(self):
        """Daily I counts, shape (T, D)."""
        return self.states[:, :, 2]

    @property
    def new_infections(self):
        """Daily S->E counts, shape (T, D)."""
        return self.incidence[:, :, 0]


@dataclass(frozen=True)
class MobilityGraph:
    """Nonnegative contact weights between nodes; rows are normalized to 1."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValidationError(f"graph weights must be square, got {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0.0):
            raise ValidationError("graph weights must be finite and nonnegative")
        if np.any(w.sum(axis=1) <= 0.0):
            raise ValidationError("every node needs positive total contact weight")
        if np.any(np.diag(w) <= 0.0):
            raise ValidationError("every node needs positive self-contact weight")
        object.__setattr__(self, "weights", w)

    @property
    def nodes(self):
        return self.weights.shape[0]

    @property
    def mixing(self):
        """Row-normalized mixing matrix M."""
        return self.weights / self.weights.sum(axis=1, keepdims=True)

    def diffusion_supports(self, order):
        """[M^0 .. M^order] for graph-diffusion layers."""
        if order < 0:
            raise ValidationError(f"diffusion order must be >= 0, got {order}")
        m = self.mixing
        supports = [np.eye(self.nodes)]
        for _ in range(order):
            supports.append(supports[-1] @ m)
        return supports


def ring_plus_self(nodes=5, self_weight=1.0, neighbor_weight=0.25):
    """Default mobility layout: each node contacts itself and its two ring neighbors."""
    if nodes < 1:
        raise ValidationError(f"nodes must be >= 1, got {nodes}")
    w = np.eye(nodes) * self_weight
    for i in range(nodes):
        w[i, (i + 1) % nodes] += neighbor_weight
        w[i, (i - 1) % nodes] += neighbor_weight
    return MobilityGraph(w)


def _hazard_to_prob(rate):
    return -np.expm1(-rate)


def _run_chain(scenario, mixing, seed):
    """Shared chain-binomial engine over (nodes,) state vectors."""
    rng = np.random.default_rng(seed)
    n = float(scenario.population)
    state = scenario.initial_state()
    s, e, i, r = (state[:, k].copy() for k in range(4))
    p_ei = _hazard_to_prob(scenario.epsilon)
    p_ir = _hazard_to_prob(scenario.mu)
    t_steps = scenario.horizon
    states = np.zeros((t_steps, scenario.nodes, 4), dtype=np.int64)
    incidence = np.zeros((t_steps, scenario.nodes, 3), dtype=np.int64)
    for t in range(t_steps):
        lam = scenario.beta * (mixing @ (i / n))
        d_se = rng.binomial(s, _hazard_to_prob(lam))
        d_ei = rng.binomial(e, p_ei)
        d_ir = rng.binomial(i, p_ir)
        s = s - d_se
        e = e + d_se - d_ei
        i = i + d_ei - d_ir
        r = r + d_ir
        states[t, :, 0] = s
        states[t, :, 1] = e
        states[t, :, 2] = i
        states[t, :, 3] = r
        incidence[t, :, 0] = d_se
        incidence[t, :, 1] = d_ei
        incidence[t, :, 2] = d_ir
    return states, incidence


def simulate_seir(scenario: Scenario, seed: int) -> Trajectory:
    """Single-population run; scenario.nodes must be 1."""
    if scenario.nodes != 1:
        raise ValidationError(
            f"simulate_seir is single-node; use simulate_metapop for nodes={scenario.nodes}"
        )
    states, incidence = _run_chain(scenario, np.eye(1), seed)
    return Trajectory(scenario=scenario, seed=int(seed), states=states, incidence=incidence)


def simulate_metapop(scenario: Scenario, graph: MobilityGraph, seed: int) -> Trajectory:
    """Graph-coupled run; per-node populations are closed (no migration of persons)."""
    if graph.nodes != scenario.nodes:
        raise ValidationError(
            f"graph has {graph.nodes} nodes but scenario declares {scenario.nodes}"
        )
    states, incidence = _run_chain(scenario, graph.mixing, seed)
    return Trajectory(scenario=scenario, seed=int(seed), states=states, incidence=incidence)


def scenario_grid(
    beta_range=(1.1, 4.0, 0.1),
    epsilon_range=(0.25, 0.65, 0.05),
    **shared,
):
    """Cartesian (beta, epsilon) grid in beta-major order.

    Ranges are (lo, hi, step) with inclusive endpoints; grid values are
    rounded to 10 decimals so float stepping cannot drift. Defaults give the
    30 x 9 = 270 candidate scenarios.
    """
    scenarios = []
    for beta in _steps(*beta_range):
        for eps in _steps(*epsilon_range):
            scenarios.append(Scenario(beta=beta, epsilon=eps, **shared))
    return scenarios


def _steps(lo, hi, step):
    if step <= 0 or hi < lo:
        raise ValidationError(f"bad range ({lo}, {hi}, {step})")
    count = int(round((hi - lo) / step)) + 1
    return [round(lo + k * step, 10) for k in range(count)]
