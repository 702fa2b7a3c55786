"""Scenario pools with sampled trajectories, and their on-disk form.

A dataset ties together a scenario table (with candidate / acquired /
validation / test roles), deterministic per-scenario simulation seeds, and
cached feature arrays. Trajectory seeds are derived from (root_seed,
scenario_id, draw), so any subset can be regenerated independently and
bit-identically; the JSONL files exist for inspection and hand-off, not
because the loop needs them.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import IntegrityError, ValidationError
from .simulators import (
    MobilityGraph,
    Scenario,
    Trajectory,
    ring_plus_self,
    scenario_grid,
    simulate_metapop,
    simulate_seir,
)

DATASET_FORMAT_VERSION = 1

ROLES = ("candidate", "acquired", "validation", "test")


def trajectory_seed(root_seed, scenario_id, draw):
    """Deterministic simulator seed for one (scenario, draw) pair."""
    seq = np.random.SeedSequence([int(root_seed), int(scenario_id), int(draw)])
    return int(seq.generate_state(1, np.uint64)[0])


def seir_features(traj: Trajectory) -> np.ndarray:
    """Daily infectious counts, shape (horizon,)."""
    return traj.states[:, 0, 2].astype(np.float64)


def metapop_features(traj: Trajectory) -> np.ndarray:
    """Per-node daily (infectious count, new infections), shape (horizon, nodes, 2)."""
    prevalence = traj.states[:, :, 2].astype(np.float64)
    incidence = traj.incidence[:, :, 0].astype(np.float64)
    return np.stack([prevalence, incidence], axis=-1)


@dataclass
class ScenarioRecord:
    scenario_id: int
    scenario: Scenario
    role: str


class SimDataset:
    """Scenario table + deterministic trajectory sampling + feature cache."""

    def __init__(self, kind, records, samples_per_scenario, root_seed, graph=None):
        if kind not in ("seir", "metapop"):
            raise ValidationError(f"unknown dataset kind {kind!r}")
        if kind == "metapop" and graph is None:
            raise ValidationError("metapop datasets need a mobility graph")
        if kind == "seir" and graph is not None:
            raise ValidationError("seir datasets do not take a graph")
        if samples_per_scenario < 1:
            raise ValidationError("samples_per_scenario must be >= 1")
        self.kind = kind
        self.graph = graph
        self.samples_per_scenario = int(samples_per_scenario)
        self.root_seed = int(root_seed)
        self._records = {}
        for rec in records:
            if rec.role not in ROLES:
                raise ValidationError(f"unknown role {rec.role!r}")
            if rec.scenario_id in self._records:
                raise ValidationError(f"duplicate scenario id {rec.scenario_id}")
            self._records[rec.scenario_id] = rec
        self.history = []
        self._feature_cache = {}
        first = next(iter(self._records.values())).scenario
        for rec in self._records.values():
            if (rec.scenario.horizon, rec.scenario.nodes) != (first.horizon, first.nodes):
                raise ValidationError("all scenarios must share horizon and nodes")
        self._horizon = first.horizon
        self._nodes = first.nodes

    # -- lookup ------------------------------------------------------------

    @property
    def feature_shape(self):
        if self.kind == "seir":
            return (self._horizon,)
        return (self._horizon, self._nodes, 2)

    @property
    def x_dim(self):
        return int(np.prod(self.feature_shape))

    @property
    def pool_size(self):
        """Scenarios that were ever candidates (acquired ones came from there)."""
        return sum(1 for r in self._records.values() if r.role in ("candidate", "acquired"))

    def ids_by_role(self, role):
        if role not in ROLES:
            raise ValidationError(f"unknown role {role!r}")
        return sorted(i for i, r in self._records.items() if r.role == role)

    def record(self, scenario_id) -> ScenarioRecord:
        try:
            return self._records[scenario_id]
        except KeyError:
            raise ValidationError(f"unknown scenario id {scenario_id}") from None

    def theta(self, scenario_id):
        sc = self.record(scenario_id).scenario
        return np.array([sc.beta, sc.epsilon])

    def thetas(self, ids):
        return np.stack([self.theta(i) for i in ids]) if ids else np.empty((0, 2))

    # -- simulation --------------------------------------------------------

    def simulate_one(self, scenario_id, draw) -> Trajectory:
        sc = self.record(scenario_id).scenario
        seed = trajectory_seed(self.root_seed, scenario_id, draw)
        if self.kind == "seir":
            return simulate_seir(sc, seed)
        return simulate_metapop(sc, self.graph, seed)

    def features(self, scenario_id):
        """All sampled trajectories' features, flattened: (samples, x_dim)."""
        cached = self._feature_cache.get(scenario_id)
        if cached is None:
            extract = seir_features if self.kind == "seir" else metapop_features
            rows = [
                extract(self.simulate_one(scenario_id, k)).reshape(-1)
                for k in range(self.samples_per_scenario)
            ]
            cached = np.stack(rows)
            self._feature_cache[scenario_id] = cached
        return cached

    def mean_features(self, scenario_id):
        return self.features(scenario_id).mean(axis=0)

    def training_arrays(self, ids):
        """Stacked (thetas, xs) rows for every sample of the given scenarios."""
        if not ids:
            raise ValidationError("no scenarios given")
        m = self.samples_per_scenario
        thetas = np.repeat(self.thetas(list(ids)), m, axis=0)
        xs = np.concatenate([self.features(i) for i in ids], axis=0)
        return thetas, xs

    # -- acquisition bookkeeping --------------------------------------------

    def mark_initial(self, scenario_id):
        """Seed the acquired set before the loop starts (no history event)."""
        rec = self.record(scenario_id)
        if rec.role != "candidate":
            raise ValidationError(
                f"scenario {scenario_id} has role {rec.role!r}, cannot seed from it"
            )
        rec.role = "acquired"

    def acquire(self, scenario_id, round_idx, meta=None):
        rec = self.record(scenario_id)
        if rec.role != "candidate":
            raise ValidationError(
                f"scenario {scenario_id} has role {rec.role!r}, only candidates can be acquired"
            )
        round_idx = int(round_idx)
        if self.history:
            last = self.history[-1]["round"]
            if round_idx not in (last, last + 1):
                raise ValidationError(
                    f"acquisition rounds must be contiguous, got {round_idx} after {last}"
                )
        elif round_idx != 1:
            raise ValidationError("first acquisition round must be 1")
        rec.role = "acquired"
        event = {"round": round_idx, "scenario_id": int(scenario_id)}
        if meta:
            event.update(meta)
        self.history.append(event)


# -- default experiment pools ----------------------------------------------


def _round10(values):
    return [float(np.round(v, 10)) for v in values]


def build_seir_dataset(
    root_seed,
    samples_per_scenario=30,
    beta_range=(1.1, 4.0, 0.1),
    epsilon_range=(0.25, 0.65, 0.05),
    horizon=100,
    population=100_000,
    e0=2000,
    i0=2000,
    mu=1.0,
    holdout_beta_count=5,
    val_epsilons=(0.275, 0.425, 0.575),
    test_epsilons=(0.325, 0.475, 0.625),
) -> SimDataset:
    """Candidate grid plus off-grid validation/test lattices.

    Candidates get ids 0.. in beta-major grid order; validation ids start
    at 1000 and test ids at 2000. The holdout epsilon phases sit strictly
    between grid lines, so no held-out scenario collides with a candidate.
    """
    shared = dict(mu=mu, horizon=horizon, population=population, e0=e0, i0=i0)
    candidates = scenario_grid(beta_range, epsilon_range, **shared)
    records = [
        ScenarioRecord(i, sc, "candidate") for i, sc in enumerate(candidates)
    ]
    holdout_betas = _round10(
        np.linspace(beta_range[0], beta_range[1], holdout_beta_count)
    )
    for base, role, epsilons in (
        (1000, "validation", val_epsilons),
        (2000, "test", test_epsilons),
    ):
        j = 0
        for beta in holdout_betas:
            for eps in epsilons:
                records.append(
                    ScenarioRecord(base + j, Scenario(beta=beta, epsilon=eps, **shared), role)
                )
                j += 1
    return SimDataset("seir", records, samples_per_scenario, root_seed)


def build_metapop_dataset(
    root_seed,
    nodes=5,
    samples_per_scenario=4,
    beta_range=(1.5, 3.5, 0.5),
    epsilon_range=(0.3, 0.6, 0.15),
    horizon=30,
    population=20_000,
    e0=400,
    i0=400,
    mu=1.0,
    graph: MobilityGraph | None = None,
    val_epsilons=(0.375,),
    test_epsilons=(0.525,),
    holdout_beta_count=2,
) -> SimDataset:
    """Smaller networked pool for the per-step-latent surrogate."""
    graph = ring_plus_self(nodes) if graph is None else graph
    shared = dict(
        mu=mu, horizon=horizon, population=population, e0=e0, i0=i0, nodes=nodes
    )
    candidates = scenario_grid(beta_range, epsilon_range, **shared)
    records = [ScenarioRecord(i, sc, "candidate") for i, sc in enumerate(candidates)]
    holdout_betas = _round10(
        np.linspace(beta_range[0], beta_range[1], holdout_beta_count)
    )
    for base, role, epsilons in (
        (1000, "validation", val_epsilons),
        (2000, "test", test_epsilons),
    ):
        j = 0
        for beta in holdout_betas:
            for eps in epsilons:
                records.append(
                    ScenarioRecord(base + j, Scenario(beta=beta, epsilon=eps, **shared), role)
                )
                j += 1
    return SimDataset("metapop", records, samples_per_scenario, root_seed, graph=graph)


# -- persistence -------------------------------------------------------------


def _scenario_row(rec: ScenarioRecord):
    sc = rec.scenario
    return {
        "id": rec.scenario_id,
        "role": rec.role,
        "beta": sc.beta,
        "epsilon": sc.epsilon,
        "mu": sc.mu,
        "horizon": sc.horizon,
        "population": sc.population,
        "e0": sc.e0,
        "i0": sc.i0,
        "nodes": sc.nodes,
    }


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def dataset_paths(out):
    """(jsonl path, manifest path) for a target that is a dir or a .jsonl file."""
    if str(out).endswith(".jsonl"):
        return str(out), str(out)[: -len(".jsonl")] + ".manifest.json"
    return os.path.join(out, "trajectories.jsonl"), os.path.join(out, "manifest.json")


def write_dataset(dataset: SimDataset, out):
    """Write the trajectory JSONL + manifest (deterministic bytes)."""
    traj_path, manifest_path = dataset_paths(out)
    parent = os.path.dirname(traj_path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    digest = hashlib.sha256()
    with open(traj_path, "w", encoding="utf-8") as fh:
        for sid in sorted(dataset._records):
            for draw in range(dataset.samples_per_scenario):
                traj = dataset.simulate_one(sid, draw)
                line = _dumps(
                    {
                        "scenario_id": sid,
                        "draw": draw,
                        "seed": traj.seed,
                        "states": traj.states.tolist(),
                        "incidence": traj.incidence.tolist(),
                    }
                )
                fh.write(line + "\n")
                digest.update((line + "\n").encode())
    manifest = {
        "version": DATASET_FORMAT_VERSION,
        "kind": dataset.kind,
        "root_seed": dataset.root_seed,
        "samples_per_scenario": dataset.samples_per_scenario,
        "graph_weights": None if dataset.graph is None else dataset.graph.weights.tolist(),
        "scenarios": [_scenario_row(dataset._records[i]) for i in sorted(dataset._records)],
        "trajectories_sha256": digest.hexdigest(),
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write(_dumps(manifest) + "\n")


def read_dataset(source) -> SimDataset:
    """Load a dataset (dir or .jsonl path); verifies the trajectory checksum."""
    if os.path.isdir(source):
        traj_path = os.path.join(source, "trajectories.jsonl")
        manifest_path = os.path.join(source, "manifest.json")
    else:
        traj_path, manifest_path = dataset_paths(source)
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"manifest is not valid JSON: {exc}") from exc
    if manifest.get("version") != DATASET_FORMAT_VERSION:
        raise IntegrityError(
            f"dataset format version {manifest.get('version')!r} is not supported"
        )
    records = []
    for row in manifest["scenarios"]:
        sc = Scenario(
            beta=row["beta"],
            epsilon=row["epsilon"],
            mu=row["mu"],
            horizon=row["horizon"],
            population=row["population"],
            e0=row["e0"],
            i0=row["i0"],
            nodes=row["nodes"],
        )
        records.append(ScenarioRecord(row["id"], sc, row["role"]))
    graph = None
    if manifest["graph_weights"] is not None:
        graph = MobilityGraph(np.array(manifest["graph_weights"], dtype=np.float64))
    dataset = SimDataset(
        manifest["kind"],
        records,
        manifest["samples_per_scenario"],
        manifest["root_seed"],
        graph=graph,
    )

    digest = hashlib.sha256()
    extract = seir_features if dataset.kind == "seir" else metapop_features
    per_scenario = {}
    with open(traj_path, "r", encoding="utf-8") as fh:
        for line in fh:
            digest.update(line.encode())
            row = json.loads(line)
            sid = row["scenario_id"]
            rec = dataset.record(sid)
            traj = Trajectory(
                scenario=rec.scenario,
                seed=row["seed"],
                states=np.array(row["states"], dtype=np.int64),
                incidence=np.array(row["incidence"], dtype=np.int64),
            )
            per_scenario.setdefault(sid, {})[row["draw"]] = extract(traj).reshape(-1)
    if digest.hexdigest() != manifest["trajectories_sha256"]:
        raise IntegrityError("trajectories.jsonl does not match its manifest checksum")
    m = dataset.samples_per_scenario
    for sid, draws in per_scenario.items():
        if sorted(draws) != list(range(m)):
            raise IntegrityError(f"scenario {sid} is missing trajectory draws")
        dataset._feature_cache[sid] = np.stack([draws[k] for k in range(m)])
    return dataset
