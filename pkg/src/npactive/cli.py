"""Command-line entry point.

Subcommands: simulate | train-offline | active | theory | score.
Config precedence: built-in defaults < --config file < explicit flags.
Every artifact-producing command writes the resolved config next to its
outputs and is idempotent: rerunning a completed run with the same
config is a no-op, a changed config without --force is refused.

Exit codes: 0 ok, 2 validation error, 3 numerical error, 4 IO/integrity
error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from contextlib import contextmanager

from .active import (
    LoopConfig,
    latest_checkpoint,
    load_checkpoint,
    run_active_loop,
    score_candidates,
    train_offline,
)
from .data import (
    build_metapop_dataset,
    build_seir_dataset,
    dataset_paths,
    read_dataset,
    write_dataset,
)
from .errors import IntegrityError, NumericalError, ValidationError
from .surrogate import TrainedSurrogate
from .theory import scaling_experiment

OUT_ROOT_ENV = "NPACTIVE_OUT"

METRICS_COLUMNS = ["round", "percent_data", "test_mae", "val_loss"]
CHOICES_COLUMNS = ["round", "scenario_id", "acquisition", "score", "stderr", "n_samples"]
THEORY_COLUMNS = ["policy", "d", "k", "replicate", "error"]


def main(argv=None):
    try:
        return _dispatch(argv)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 4


def _dispatch(argv):
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "simulate": cmd_simulate,
        "train-offline": cmd_train_offline,
        "active": cmd_active,
        "theory": cmd_theory,
        "score": cmd_score,
    }
    return handlers[args.command](args)


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="npactive",
        description="Simulate epidemic scenario pools, train surrogates, "
        "and run acquisition loops.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sup = argparse.SUPPRESS

    p = sub.add_parser("simulate", help="generate a scenario pool dataset")
    p.add_argument("--grid", choices=["default", "metapop"], default=sup,
                   help="scenario pool: default (single population) or metapop")
    p.add_argument("--samples", type=int, default=sup, help="trajectories per scenario")
    p.add_argument("--seed", type=int, default=sup)
    p.add_argument("--horizon", type=int, default=sup, help="days to simulate")
    p.add_argument("--nodes", type=int, default=sup, help="metapop node count")
    _common_flags(p)

    p = sub.add_parser("train-offline", help="train one surrogate on the full pool")
    p.add_argument("--data", default=sup, help="dataset path (dir or .jsonl)")
    p.add_argument("--steps", type=int, default=sup)
    p.add_argument("--batch-rows", type=int, default=sup, help="minibatch rows (0 = full batch)")
    p.add_argument("--seed", type=int, default=sup)
    _model_flags(p)
    _common_flags(p)

    p = sub.add_parser("active", help="run the acquisition loop")
    p.add_argument("--data", default=sup)
    p.add_argument("--acq", default=sup,
                   help="lig | meanstd | maxent | random | all (driver mode)")
    p.add_argument("--batch", type=int, default=sup, help="scenarios acquired per round")
    p.add_argument("--rounds", type=int, default=sup, help="acquisition rounds")
    p.add_argument("--samples", type=int, default=sup,
                   help="predictive samples for scoring and evaluation")
    p.add_argument("--seed", type=int, default=sup)
    p.add_argument("--seeds", default=sup, help="comma list for driver mode, e.g. 1,2,3")
    p.add_argument("--group-random", type=int, default=sup,
                   help="split candidates into this many random groups, pick top per group")
    p.add_argument("--steps-per-round", type=int, default=sup)
    p.add_argument("--initial-steps", type=int, default=sup)
    p.add_argument("--plateau-tol", default=sup,
                   help="stop when val loss improves less than this per round; 'none' disables")
    _model_flags(p)
    _common_flags(p)

    p = sub.add_parser("theory", help="greedy vs random design error scaling")
    p.add_argument("--dims", default=sup, help="comma list, e.g. 4,8,16,32")
    p.add_argument("--rounds-per-dim", type=int, default=sup, help="k = this * d")
    p.add_argument("--sigma", type=float, default=sup)
    p.add_argument("--reps", type=int, default=sup)
    p.add_argument("--m", type=float, default=sup, help="prior precision scale")
    p.add_argument("--seed", type=int, default=sup)
    _common_flags(p)

    p = sub.add_parser("score", help="one-shot acquisition scoring of all candidates")
    p.add_argument("--data", default=sup)
    p.add_argument("--surrogate", default=sup, help="surrogate checkpoint JSON")
    p.add_argument("--acq", default=sup)
    p.add_argument("--round", type=int, default=sup, help="round label / RNG key")
    p.add_argument("--seed", type=int, default=sup)
    p.add_argument("--samples", type=int, default=sup)
    _common_flags(p)

    return parser


def _model_flags(p):
    sup = argparse.SUPPRESS
    p.add_argument("--z-dim", type=int, default=sup)
    p.add_argument("--r-dim", type=int, default=sup)
    p.add_argument("--hidden-dim", type=int, default=sup)
    p.add_argument("--diffusion-order", type=int, default=sup)


def _common_flags(p):
    sup = argparse.SUPPRESS
    p.add_argument("--config", default=sup, help="JSON file with defaults for these flags")
    p.add_argument("--out", default=sup,
                   help=f"output path (default: ${OUT_ROOT_ENV}/<command>)")
    p.add_argument("--force", action="store_true", default=False,
                   help="overwrite outputs written with a different config")


# -- config resolution -------------------------------------------------------

_DEFAULTS = {
    "simulate": {
        "grid": "default",
        "samples": 30,
        "seed": 0,
        "horizon": None,
        "nodes": 5,
    },
    "train-offline": {
        "data": None,
        "steps": 1500,
        "batch_rows": 2048,
        "seed": 0,
        "z_dim": 32,
        "r_dim": 128,
        "hidden_dim": 64,
        "diffusion_order": 2,
    },
    "active": {
        "data": None,
        "acq": "lig",
        "batch": 1,
        "rounds": 9,
        "samples": 30,
        "seed": 0,
        "seeds": None,
        "group_random": None,
        "steps_per_round": 200,
        "initial_steps": 500,
        "plateau_tol": 1e-3,
        "z_dim": 32,
        "r_dim": 128,
        "hidden_dim": 64,
        "diffusion_order": 2,
    },
    "theory": {
        "dims": "4,8,16,32",
        "rounds_per_dim": 40,
        "sigma": 0.5,
        "reps": 50,
        "m": 1.0,
        "seed": 0,
    },
    "score": {
        "data": None,
        "surrogate": None,
        "acq": "lig",
        "round": 1,
        "seed": 0,
        "samples": 30,
    },
}


def resolve_config(args):
    """defaults < config file < explicit flags; returns the semantic dict."""
    command = args.command
    resolved = dict(_DEFAULTS[command])
    flags = {k: v for k, v in vars(args).items()
             if k not in ("command", "config", "out", "force")}
    config_path = getattr(args, "config", None)
    if config_path is not None:
        try:
            with open(config_path, "r", encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ValidationError("config file must hold a JSON object")
        unknown = set(file_cfg) - set(resolved)
        if unknown:
            raise ValidationError(
                f"config file has unknown keys for {command}: {sorted(unknown)}"
            )
        resolved.update(file_cfg)
    resolved.update(flags)
    return resolved


def config_hash(resolved):
    blob = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _resolve_out(args, default_name):
    out = getattr(args, "out", None)
    if out is not None:
        return out
    root = os.environ.get(OUT_ROOT_ENV)
    if root is None:
        raise ValidationError(
            f"--out is required (or set {OUT_ROOT_ENV} for a default output root)"
        )
    return os.path.join(root, default_name)


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _write_csv(path, columns, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_csv_cell(row.get(c)) for c in columns])


def _csv_cell(value):
    if value is None:
        return ""
    return value


@contextmanager
def _run_lock(directory):
    """One command at a time per run directory."""
    os.makedirs(directory, exist_ok=True)
    lock_path = os.path.join(directory, ".lock")
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OSError(
            f"run directory {directory} is locked by another command "
            f"(remove {lock_path} if that command crashed)"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        if os.path.exists(lock_path):
            os.remove(lock_path)


def _check_existing_config(config_path, resolved, force):
    """Returns True if a matching resolved config already exists (no-op path)."""
    if not os.path.exists(config_path):
        return False
    with open(config_path, "r", encoding="utf-8") as fh:
        try:
            existing = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IntegrityError(f"existing resolved config is corrupt: {exc}") from exc
    if existing.get("config_hash") == config_hash(resolved):
        return True
    if not force:
        raise ValidationError(
            f"{config_path} was written with a different config; "
            "pass --force to overwrite"
        )
    return False


def _resolved_with_hash(command, resolved):
    out = dict(resolved)
    out["command"] = command
    out["config_hash"] = config_hash(resolved)
    return out


# -- simulate ----------------------------------------------------------------


def _build_dataset(resolved):
    horizon = resolved["horizon"]
    if resolved["grid"] == "default":
        kwargs = {} if horizon is None else {"horizon": horizon}
        return build_seir_dataset(
            resolved["seed"], samples_per_scenario=resolved["samples"], **kwargs
        )
    kwargs = {} if horizon is None else {"horizon": horizon}
    return build_metapop_dataset(
        resolved["seed"],
        nodes=resolved["nodes"],
        samples_per_scenario=resolved["samples"],
        **kwargs,
    )


def cmd_simulate(args):
    resolved = resolve_config(args)
    if resolved["samples"] < 1:
        raise ValidationError("--samples must be >= 1")
    out = _resolve_out(args, "data")
    traj_path, manifest_path = dataset_paths(out)
    parent = os.path.dirname(traj_path) or "."
    cfg_path = (
        traj_path[: -len(".jsonl")] + ".config.json"
        if str(out).endswith(".jsonl")
        else os.path.join(out, "resolved_config.json")
    )
    os.makedirs(parent, exist_ok=True)
    if _check_existing_config(cfg_path, resolved, args.force) and os.path.exists(traj_path):
        print(f"simulate: outputs already complete at {out}")
        return 0
    if os.path.exists(traj_path) and not os.path.exists(cfg_path) and not args.force:
        raise ValidationError(f"{traj_path} exists; pass --force to overwrite")
    with _run_lock(parent):
        dataset = _build_dataset(resolved)
        write_dataset(dataset, out)
        _write_json(cfg_path, _resolved_with_hash("simulate", resolved))
    roles = {r: len(dataset.ids_by_role(r)) for r in ("candidate", "validation", "test")}
    print(
        f"simulate: wrote {traj_path} "
        f"({roles['candidate']} candidate / {roles['validation']} val / "
        f"{roles['test']} test scenarios, {dataset.samples_per_scenario} samples each)"
    )
    return 0


# -- train-offline -----------------------------------------------------------


def _loop_config_from(resolved, acquisition="lig", seed=None):
    plateau = resolved.get("plateau_tol", 1e-3)
    if isinstance(plateau, str):
        plateau = None if plateau.lower() == "none" else float(plateau)
    return LoopConfig(
        acquisition=acquisition,
        seed=resolved["seed"] if seed is None else seed,
        rounds=resolved.get("rounds", 9),
        batch_size=resolved.get("batch", 1),
        group_random=resolved.get("group_random"),
        steps_per_round=resolved.get("steps_per_round", 200),
        initial_steps=resolved.get("initial_steps", 500),
        n_eval_samples=resolved.get("samples", 30),
        n_x_score=resolved.get("samples", 30),
        n_z_score=resolved.get("samples", 30),
        plateau_tol=plateau,
        r_dim=resolved.get("r_dim", 128),
        z_dim=resolved.get("z_dim", 32),
        hidden_dim=resolved.get("hidden_dim", 64),
        diffusion_order=resolved.get("diffusion_order", 2),
    )


def cmd_train_offline(args):
    resolved = resolve_config(args)
    if resolved["data"] is None:
        raise ValidationError("--data is required")
    if resolved["steps"] < 0:
        raise ValidationError("--steps must be >= 0")
    out = _resolve_out(args, "offline")
    os.makedirs(out, exist_ok=True)
    cfg_path = os.path.join(out, "resolved_config.json")
    surrogate_path = os.path.join(out, "surrogate.json")
    metrics_path = os.path.join(out, "metrics.csv")
    done = os.path.exists(surrogate_path) and os.path.exists(metrics_path)
    if _check_existing_config(cfg_path, resolved, args.force) and done:
        print(f"train-offline: outputs already complete at {out}")
        return 0
    with _run_lock(out):
        dataset = read_dataset(resolved["data"])
        config = _loop_config_from(resolved)
        surrogate, report, test_mae = train_offline(
            dataset, config, steps=resolved["steps"], batch_rows=resolved["batch_rows"]
        )
        surrogate.save(surrogate_path)
        _write_csv(
            metrics_path,
            METRICS_COLUMNS,
            [{
                "round": 0,
                "percent_data": 100.0,
                "test_mae": test_mae,
                "val_loss": report.best_val_loss,
            }],
        )
        _write_json(cfg_path, _resolved_with_hash("train-offline", resolved))
    print(
        f"train-offline: {report.steps_run} steps, val loss {report.best_val_loss:.4f}, "
        f"test MAE {test_mae:.2f} -> {out}"
    )
    return 0


# -- active ------------------------------------------------------------------


def _single_active_run(dataset, config, run_dir, force=False):
    """One (acquisition, seed) run with auto-resume; no-op when complete."""
    os.makedirs(run_dir, exist_ok=True)
    ckpt_dir = os.path.join(run_dir, "checkpoints")
    latest = latest_checkpoint(ckpt_dir)
    if latest is not None:
        payload = load_checkpoint(latest)
        if payload["config_hash"] != config.config_hash():
            if not force:
                raise ValidationError(
                    f"{run_dir} holds a run with a different loop config; "
                    "pass --force to rebuild"
                )
            for name in os.listdir(ckpt_dir):
                os.remove(os.path.join(ckpt_dir, name))
            latest = None
        elif payload["complete"]:
            return payload["metrics"], payload["choices"], False
    result = run_active_loop(
        dataset, config, checkpoint_dir=ckpt_dir, resume=latest is not None
    )
    _write_csv(os.path.join(run_dir, "metrics.csv"), METRICS_COLUMNS, result.metrics)
    _write_csv(os.path.join(run_dir, "choices.csv"), CHOICES_COLUMNS, result.choices)
    return result.metrics, result.choices, True


def cmd_active(args):
    resolved = resolve_config(args)
    if resolved["data"] is None:
        raise ValidationError("--data is required")
    acq = resolved["acq"]
    acq_list = ["lig", "meanstd", "maxent", "random"] if acq == "all" else [acq]
    if resolved["seeds"] is not None:
        seeds = [int(s) for s in str(resolved["seeds"]).split(",") if s != ""]
        if not seeds:
            raise ValidationError("--seeds must name at least one seed")
    else:
        seeds = [resolved["seed"]]
    driver_mode = len(acq_list) > 1 or len(seeds) > 1

    out = _resolve_out(args, "active")
    os.makedirs(out, exist_ok=True)
    cfg_path = os.path.join(out, "resolved_config.json")
    _check_existing_config(cfg_path, resolved, args.force)
    with _run_lock(out):
        _write_json(cfg_path, _resolved_with_hash("active", resolved))
        summary = []
        for acq_name in acq_list:
            for seed in seeds:
                dataset = read_dataset(resolved["data"])
                config = _loop_config_from(resolved, acquisition=acq_name, seed=seed)
                run_dir = (
                    os.path.join(out, f"{acq_name}-s{seed}") if driver_mode else out
                )
                metrics, _, ran = _single_active_run(
                    dataset, config, run_dir, force=args.force
                )
                for row in metrics:
                    summary.append({"acquisition": acq_name, "seed": seed, **row})
                status = "ran" if ran else "already complete"
                print(
                    f"active: {acq_name} seed {seed} {status}, "
                    f"final test MAE {metrics[-1]['test_mae']:.2f}"
                )
        if driver_mode:
            _write_csv(
                os.path.join(out, "summary.csv"),
                ["acquisition", "seed"] + METRICS_COLUMNS,
                summary,
            )
    return 0


# -- theory ------------------------------------------------------------------


def cmd_theory(args):
    resolved = resolve_config(args)
    dims = [int(d) for d in str(resolved["dims"]).split(",") if d != ""]
    if not dims:
        raise ValidationError("--dims must name at least one dimension")
    if resolved["reps"] < 1:
        raise ValidationError("--reps must be >= 1")
    out = _resolve_out(args, "theory.csv")
    if not str(out).endswith(".csv"):
        out = os.path.join(out, "theory.csv")
    parent = os.path.dirname(out) or "."
    os.makedirs(parent, exist_ok=True)
    cfg_path = out[: -len(".csv")] + ".config.json"
    if _check_existing_config(cfg_path, resolved, args.force) and os.path.exists(out):
        print(f"theory: output already complete at {out}")
        return 0
    with _run_lock(parent):
        rows = scaling_experiment(
            dims,
            rounds_per_dim=resolved["rounds_per_dim"],
            sigma=resolved["sigma"],
            m=resolved["m"],
            replicates=resolved["reps"],
            seed=resolved["seed"],
        )
        _write_csv(out, THEORY_COLUMNS, rows)
        _write_json(cfg_path, _resolved_with_hash("theory", resolved))
    print(f"theory: wrote {len(rows)} rows to {out}")
    return 0


# -- score -------------------------------------------------------------------


def cmd_score(args):
    resolved = resolve_config(args)
    for key in ("data", "surrogate"):
        if resolved[key] is None:
            raise ValidationError(f"--{key} is required")
    if resolved["acq"] not in ("lig", "meanstd", "maxent", "random"):
        raise ValidationError(f"unknown acquisition {resolved['acq']!r}")
    if resolved["round"] < 1:
        raise ValidationError("--round must be >= 1")
    out = _resolve_out(args, "scores.csv")
    if not str(out).endswith(".csv"):
        out = os.path.join(out, "scores.csv")
    parent = os.path.dirname(out) or "."
    os.makedirs(parent, exist_ok=True)
    cfg_path = out[: -len(".csv")] + ".config.json"
    if _check_existing_config(cfg_path, resolved, args.force) and os.path.exists(out):
        print(f"score: output already complete at {out}")
        return 0
    with _run_lock(parent):
        dataset = read_dataset(resolved["data"])
        surrogate = TrainedSurrogate.load(resolved["surrogate"])
        if surrogate.feature_shape != dataset.feature_shape:
            raise ValidationError(
                f"surrogate feature shape {surrogate.feature_shape} does not match "
                f"dataset {dataset.feature_shape}"
            )
        config = _loop_config_from(resolved, acquisition=resolved["acq"])
        scores = score_candidates(surrogate, dataset, config, resolved["round"])
        rows = [
            {
                "round": resolved["round"],
                "scenario_id": s.scenario_id,
                "acquisition": s.name,
                "score": s.score,
                "stderr": s.stderr,
                "n_samples": s.n_x_samples,
            }
            for s in scores
        ]
        _write_csv(out, CHOICES_COLUMNS, rows)
        _write_json(cfg_path, _resolved_with_hash("score", resolved))
    print(f"score: wrote {len(rows)} candidate scores to {out}")
    return 0
