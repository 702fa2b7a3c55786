"""End-to-end active learning on a small pool: LIG versus random queries."""

import numpy as np

from npactive.active import LoopConfig, run_active_loop
from npactive.data import build_seir_dataset


def fresh_pool():
    return build_seir_dataset(
        root_seed=3,
        samples_per_scenario=8,
        beta_range=(1.5, 3.5, 0.5),
        epsilon_range=(0.3, 0.5, 0.1),
        horizon=60,
        population=20_000,
        e0=400,
        i0=400,
    )


def run(acquisition):
    dataset = fresh_pool()
    config = LoopConfig(
        acquisition=acquisition,
        seed=0,
        rounds=4,
        batch_size=1,
        initial_steps=300,
        steps_per_round=300,
        plateau_tol=None,
        r_dim=32,
        z_dim=8,
        encoder_widths=(64,),
        decoder_widths=(64,),
        n_x_score=15,
        n_z_score=15,
    )
    return run_active_loop(dataset, config)


print("pool:", fresh_pool().pool_size, "candidate scenarios\n")
curves = {}
for acq in ("lig", "random"):
    report = run(acq)
    curves[acq] = [(m["acquired_scenarios"], m["test_mae"]) for m in report.metrics]
    picks = [c["scenario_id"] for c in report.choices]
    print(f"{acq:6s} picked scenarios {picks}")

print("\nacquired  LIG MAE   random MAE")
for (n, lig_mae), (_, rnd_mae) in zip(curves["lig"], curves["random"]):
    print(f"{n:8d}  {lig_mae:7.1f}   {rnd_mae:10.1f}")
