"""Interactive acquisition loop: train, score, select, query, augment.

Round numbering: acquisitions happen in rounds 1..rounds; after the last
one, a final train/evaluate pass runs so the last acquisition's effect is
measured. Every random draw comes from a stream keyed by (seed, purpose,
round [, scenario]), which is what makes checkpoint resume bit-identical
and candidate scoring order-independent.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np

from .acquisition import (
    AcquisitionScore,
    latent_information_gain,
    max_entropy,
    mean_std,
    random_score,
)
from .data import SimDataset
from .errors import IntegrityError, ValidationError
from .neural_process import Normalization, NpArchitecture, NeuralProcess
from .spatiotemporal import SpatiotemporalArchitecture, SpatiotemporalNeuralProcess
from .surrogate import TrainSettings, TrainedSurrogate, train_surrogate

CHECKPOINT_FORMAT_VERSION = 1

ACQUISITIONS = ("lig", "meanstd", "maxent", "random")

_TAG_INIT = 11
_TAG_TRAIN = 12
_TAG_EVAL = 13
_TAG_SCORE = 14
_TAG_GROUPS = 15


def _rng(seed, tag, *key):
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag, *map(int, key)]))


@dataclass
class LoopConfig:
    acquisition: str = "lig"
    seed: int = 0
    rounds: int = 9
    batch_size: int = 1
    group_random: int | None = None
    steps_per_round: int = 200
    initial_steps: int = 500
    context_fraction: float = 0.1
    n_z_train: int = 1
    patience: int = 50
    lr: float = 1e-3
    batch_rows: int = 0
    n_eval_samples: int = 30
    n_x_score: int = 30
    n_z_score: int = 30
    plateau_tol: float | None = 1e-3
    r_dim: int = 128
    z_dim: int = 32
    encoder_widths: tuple = (128, 128)
    decoder_widths: tuple = (128, 128)
    hidden_dim: int = 64
    diffusion_order: int = 2
    std_floor: float = 1e-3

    def __post_init__(self):
        self.encoder_widths = tuple(self.encoder_widths)
        self.decoder_widths = tuple(self.decoder_widths)
        if self.acquisition not in ACQUISITIONS:
            raise ValidationError(
                f"acquisition must be one of {ACQUISITIONS}, got {self.acquisition!r}"
            )
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.rounds < 0:
            raise ValidationError("rounds must be >= 0")
        if self.patience < 1:
            raise ValidationError("patience must be >= 1")
        if self.n_eval_samples < 2:
            raise ValidationError("n_eval_samples must be >= 2")
        if self.group_random is not None:
            if self.group_random < 1:
                raise ValidationError("group_random must be >= 1")
            if self.batch_size % self.group_random != 0:
                raise ValidationError("batch_size must be divisible by group_random")

    def to_payload(self):
        payload = {}
        for key, value in self.__dict__.items():
            payload[key] = list(value) if isinstance(value, tuple) else value
        return payload

    @staticmethod
    def from_payload(payload):
        kwargs = dict(payload)
        kwargs["encoder_widths"] = tuple(kwargs["encoder_widths"])
        kwargs["decoder_widths"] = tuple(kwargs["decoder_widths"])
        return LoopConfig(**kwargs)

    def config_hash(self):
        blob = json.dumps(self.to_payload(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class LoopResult:
    metrics: list
    choices: list
    surrogate: TrainedSurrogate
    stopped_early: bool
    complete: bool
    config: LoopConfig


def mae(predictions, truth):
    """Mean absolute error over matched arrays (denormalized units)."""
    predictions = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predictions.shape != truth.shape:
        raise ValidationError(
            f"shape mismatch: predictions {predictions.shape} vs truth {truth.shape}"
        )
    return float(np.mean(np.abs(predictions - truth)))


def initial_scenarios(dataset: SimDataset):
    """The two candidate corners: lowest and highest beta at the median epsilon."""
    ids = dataset.ids_by_role("candidate")
    if len(ids) < 2:
        raise ValidationError("need at least two candidates to seed the loop")
    thetas = dataset.thetas(ids)
    betas = thetas[:, 0]
    eps_med = float(np.median(np.unique(thetas[:, 1])))
    chosen = []
    for target_beta in (betas.min(), betas.max()):
        at_beta = [
            (abs(thetas[i, 1] - eps_med), thetas[i, 1], ids[i])
            for i in range(len(ids))
            if thetas[i, 0] == target_beta
        ]
        at_beta.sort()
        chosen.append(at_beta[0][2])
    if chosen[0] == chosen[1]:
        raise ValidationError("candidate pool collapses to a single corner")
    return sorted(chosen)


def build_surrogate(dataset: SimDataset, config: LoopConfig, init_seed) -> TrainedSurrogate:
    shape = dataset.feature_shape
    if dataset.kind == "seir":
        arch = NpArchitecture(
            theta_dim=2,
            x_dim=dataset.x_dim,
            r_dim=config.r_dim,
            z_dim=config.z_dim,
            encoder_widths=config.encoder_widths,
            decoder_widths=config.decoder_widths,
            std_floor=config.std_floor,
        )
        model = NeuralProcess(arch, seed=init_seed)
    else:
        horizon, nodes, channels = shape
        arch = SpatiotemporalArchitecture(
            theta_dim=2,
            horizon=horizon,
            nodes=nodes,
            channels=channels,
            hidden_dim=config.hidden_dim,
            z_dim=config.z_dim,
            diffusion_order=config.diffusion_order,
            std_floor=config.std_floor,
        )
        model = SpatiotemporalNeuralProcess(arch, dataset.graph, seed=init_seed)
    identity = Normalization(
        theta_loc=np.zeros(2),
        theta_scale=np.ones(2),
        x_loc=np.zeros(dataset.x_dim),
        x_scale=np.ones(dataset.x_dim),
    )
    return TrainedSurrogate(model, identity, shape)


def _init_seed(config):
    return int(np.random.SeedSequence([config.seed, _TAG_INIT]).generate_state(1)[0])


def evaluate_test_mae(surrogate, dataset, rng, n_samples):
    """Mean over test scenarios of MAE(predictive mean, seed-mean truth)."""
    test_ids = dataset.ids_by_role("test")
    if not test_ids:
        raise ValidationError("dataset has no test scenarios")
    shape = dataset.feature_shape
    values = []
    for sid in test_ids:
        pred = surrogate.predict(dataset.theta(sid), n_samples, rng)
        truth = dataset.mean_features(sid).reshape(shape)
        values.append(mae(pred.mean, truth))
    return float(np.mean(values))


def score_candidates(surrogate, dataset, config: LoopConfig, round_idx):
    """Score every remaining candidate; per-candidate streams keep this
    independent of evaluation order."""
    scores = []
    for sid in dataset.ids_by_role("candidate"):
        theta = dataset.theta(sid)
        if config.acquisition == "random":
            score = random_score(config.seed, round_idx, sid)
        else:
            rng = _rng(config.seed, _TAG_SCORE, round_idx, sid)
            if config.acquisition == "lig":
                score = latent_information_gain(
                    theta, surrogate, rng,
                    n_x_samples=config.n_x_score, n_z_samples=config.n_z_score,
                )
            else:
                xhat, _, _ = surrogate.sample_predictive_norm(
                    theta, config.n_x_score, rng
                )
                score = mean_std(xhat) if config.acquisition == "meanstd" else max_entropy(xhat)
        scores.append(
            AcquisitionScore(
                name=score.name,
                score=score.score,
                stderr=score.stderr,
                n_z_samples=score.n_z_samples,
                n_x_samples=score.n_x_samples,
                scenario_id=sid,
            )
        )
    return scores


def _top_by_score(scores, count):
    ranked = sorted(scores, key=lambda s: (-s.score, s.scenario_id))
    return ranked[:count]


def select_batch(scores, config: LoopConfig, round_idx):
    """Top-b by score (ties to the lowest scenario id), optionally within
    randomly drawn groups."""
    if config.group_random is None:
        return _top_by_score(scores, config.batch_size)
    g = config.group_random
    rng = _rng(config.seed, _TAG_GROUPS, round_idx)
    ids = np.array([s.scenario_id for s in scores])
    by_id = {s.scenario_id: s for s in scores}
    perm = rng.permutation(ids)
    chosen = []
    per_group = config.batch_size // g
    for group in np.array_split(perm, g):
        group_scores = [by_id[int(i)] for i in group]
        chosen.extend(_top_by_score(group_scores, per_group))
    return sorted(chosen, key=lambda s: s.scenario_id)


def _train_round(surrogate, dataset, config, round_idx, steps):
    acquired = dataset.ids_by_role("acquired")
    thetas, xs = dataset.training_arrays(acquired)
    val_ids = dataset.ids_by_role("validation")
    if not val_ids:
        raise ValidationError("dataset has no validation scenarios")
    val_thetas, val_xs = dataset.training_arrays(val_ids)
    surrogate.set_normalization(Normalization.fit(thetas, xs))
    settings = TrainSettings(
        steps=steps,
        lr=config.lr,
        context_fraction=config.context_fraction,
        n_z=config.n_z_train,
        patience=config.patience,
        batch_size=config.batch_rows,
    )
    report = train_surrogate(
        surrogate, thetas, xs, val_thetas, val_xs, settings,
        _rng(config.seed, _TAG_TRAIN, round_idx),
    )
    return report, acquired


def run_active_loop(
    dataset: SimDataset,
    config: LoopConfig,
    surrogate_factory=build_surrogate,
    checkpoint_dir=None,
    resume=False,
    progress=None,
) -> LoopResult:
    metrics = []
    choices = []
    stopped_early = False
    best_val_so_far = None
    start_round = 1
    surrogate = None

    if resume:
        if checkpoint_dir is None:
            raise ValidationError("resume needs a checkpoint directory")
        latest = latest_checkpoint(checkpoint_dir)
        if latest is not None:
            payload = load_checkpoint(latest)
            if payload["config_hash"] != config.config_hash():
                raise IntegrityError(
                    "checkpoint was written with a different configuration"
                )
            _restore_dataset_state(dataset, payload["dataset"])
            surrogate = TrainedSurrogate.from_payload(payload["surrogate"])
            metrics = payload["metrics"]
            choices = payload["choices"]
            stopped_early = payload["stopped_early"]
            best_val_so_far = payload["best_val"]
            start_round = payload["round"] + 1
            if payload["complete"]:
                return LoopResult(metrics, choices, surrogate, stopped_early, True, config)

    if surrogate is None:
        for sid in initial_scenarios(dataset):
            dataset.mark_initial(sid)
        surrogate = surrogate_factory(dataset, config, _init_seed(config))

    if not dataset.ids_by_role("acquired"):
        raise ValidationError("initial acquired set is empty")
    pool_size = dataset.pool_size
    total_rounds = config.rounds + 1
    complete = False

    for round_idx in range(start_round, total_rounds + 1):
        steps = config.initial_steps if round_idx == 1 else config.steps_per_round
        report, acquired = _train_round(surrogate, dataset, config, round_idx, steps)
        test_mae = evaluate_test_mae(
            surrogate, dataset, _rng(config.seed, _TAG_EVAL), config.n_eval_samples
        )
        metrics.append(
            {
                "round": round_idx,
                "percent_data": 100.0 * len(acquired) / pool_size,
                "test_mae": test_mae,
                "val_loss": report.best_val_loss,
                "acquired_scenarios": len(acquired),
                "train_steps": report.steps_run,
            }
        )
        if progress is not None:
            progress(metrics[-1])

        if (
            config.plateau_tol is not None
            and best_val_so_far is not None
            and best_val_so_far - report.best_val_loss < config.plateau_tol
        ):
            stopped_early = True
        if best_val_so_far is None or report.best_val_loss < best_val_so_far:
            best_val_so_far = report.best_val_loss

        is_last = round_idx == total_rounds or stopped_early
        if not is_last:
            scores = score_candidates(surrogate, dataset, config, round_idx)
            if not scores:
                complete = True  # pool exhausted: clean termination
            else:
                chosen = select_batch(scores, config, round_idx)
                for s in chosen:
                    dataset.acquire(
                        s.scenario_id,
                        round_idx,
                        {
                            "acquisition": s.name,
                            "score": s.score,
                            "stderr": s.stderr,
                            "n_samples": s.n_x_samples,
                        },
                    )
                    choices.append(
                        {
                            "round": round_idx,
                            "scenario_id": s.scenario_id,
                            "acquisition": s.name,
                            "score": s.score,
                            "stderr": s.stderr,
                            "n_samples": s.n_x_samples,
                        }
                    )
        else:
            complete = True

        if checkpoint_dir is not None:
            save_checkpoint(
                checkpoint_dir, round_idx, dataset, config, surrogate,
                metrics, choices, stopped_early, best_val_so_far, complete,
            )
        if complete:
            break

    return LoopResult(metrics, choices, surrogate, stopped_early, complete, config)


def train_offline(dataset: SimDataset, config: LoopConfig, steps, batch_rows=2048):
    """Reference model trained on the whole candidate pool.

    Returns (surrogate, train report, test MAE). Uses the same init stream
    as an active run with this config, so the comparison starts from
    identical parameters.
    """
    ids = sorted(dataset.ids_by_role("candidate") + dataset.ids_by_role("acquired"))
    if not ids:
        raise ValidationError("dataset has no pool scenarios")
    surrogate = build_surrogate(dataset, config, _init_seed(config))
    thetas, xs = dataset.training_arrays(ids)
    val_thetas, val_xs = dataset.training_arrays(dataset.ids_by_role("validation"))
    surrogate.set_normalization(Normalization.fit(thetas, xs))
    settings = TrainSettings(
        steps=steps,
        lr=config.lr,
        context_fraction=config.context_fraction,
        n_z=config.n_z_train,
        patience=config.patience,
        batch_size=batch_rows,
    )
    report = train_surrogate(
        surrogate, thetas, xs, val_thetas, val_xs, settings,
        _rng(config.seed, _TAG_TRAIN, 0),
    )
    test_mae = evaluate_test_mae(
        surrogate, dataset, _rng(config.seed, _TAG_EVAL), config.n_eval_samples
    )
    return surrogate, report, test_mae


# -- checkpointing -----------------------------------------------------------


def _restore_dataset_state(dataset, state):
    if dataset.root_seed != state["root_seed"] or dataset.kind != state["kind"]:
        raise IntegrityError("checkpoint does not belong to this dataset")
    for sid in state["initial_ids"]:
        dataset.record(sid).role = "acquired"
    for event in state["history"]:
        dataset.record(event["scenario_id"]).role = "acquired"
    dataset.history = list(state["history"])


def checkpoint_path(checkpoint_dir, round_idx):
    return os.path.join(checkpoint_dir, f"round-{round_idx:03d}.json")


def latest_checkpoint(checkpoint_dir):
    if not os.path.isdir(checkpoint_dir):
        return None
    names = sorted(
        n for n in os.listdir(checkpoint_dir)
        if n.startswith("round-") and n.endswith(".json")
    )
    return os.path.join(checkpoint_dir, names[-1]) if names else None


def save_checkpoint(
    checkpoint_dir, round_idx, dataset, config, surrogate,
    metrics, choices, stopped_early, best_val, complete,
):
    os.makedirs(checkpoint_dir, exist_ok=True)
    initial_ids = [
        i for i in dataset.ids_by_role("acquired")
        if not any(ev["scenario_id"] == i for ev in dataset.history)
    ]
    payload = {
        "version": CHECKPOINT_FORMAT_VERSION,
        "config_hash": config.config_hash(),
        "config": config.to_payload(),
        "round": round_idx,
        "metrics": metrics,
        "choices": choices,
        "stopped_early": stopped_early,
        "best_val": best_val,
        "complete": complete,
        "dataset": {
            "root_seed": dataset.root_seed,
            "kind": dataset.kind,
            "initial_ids": initial_ids,
            "history": dataset.history,
        },
        "surrogate": surrogate.to_payload(),
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    payload["sha256"] = hashlib.sha256(blob.encode()).hexdigest()
    path = checkpoint_path(checkpoint_dir, round_idx)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
    return path


def load_checkpoint(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise IntegrityError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("version") != CHECKPOINT_FORMAT_VERSION:
        raise IntegrityError(f"checkpoint {path} has an unsupported version")
    recorded = payload.pop("sha256", None)
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    if recorded is None or hashlib.sha256(blob.encode()).hexdigest() != recorded:
        raise IntegrityError(f"checkpoint {path} failed its integrity check")
    return payload
