"""Train a neural-process surrogate on a small scenario pool, then predict."""

import numpy as np

from npactive.active import LoopConfig, train_offline
from npactive.data import build_seir_dataset
from npactive.simulators import Scenario, simulate_seir

# A coarse grid keeps this demo under a minute: 6 scenarios, 8 draws each.
dataset = build_seir_dataset(
    root_seed=0,
    samples_per_scenario=8,
    beta_range=(1.5, 3.5, 1.0),
    epsilon_range=(0.3, 0.5, 0.2),
    horizon=60,
    population=20_000,
    e0=400,
    i0=400,
)
print("pool scenarios:", dataset.pool_size,
      "| feature length:", dataset.feature_shape)

config = LoopConfig(
    acquisition="random",
    seed=0,
    r_dim=32,
    z_dim=8,
    encoder_widths=(64,),
    decoder_widths=(64,),
)
surrogate, report, test_mae = train_offline(dataset, config, steps=400)
print(f"trained {report.steps_run} steps, "
      f"best val loss {report.best_val_loss:.3f}, test MAE {test_mae:.1f}")

# Compare the surrogate's predictive band to fresh simulator draws at a
# test point it never saw.
theta = dataset.theta(dataset.ids_by_role("test")[0])
summary = surrogate.predict(theta, n_samples=50, rng=np.random.default_rng(5))

truth = np.stack([
    simulate_seir(
        Scenario(beta=theta[0], epsilon=theta[1], horizon=60,
                 population=20_000, e0=400, i0=400),
        seed=1000 + j,
    ).infectious[:, 0]
    for j in range(50)
])

days = [5, 10, 20, 40]
print(f"\ntheta = (beta {theta[0]:.2f}, epsilon {theta[1]:.2f})")
print("day   truth mean   pred mean   pred std")
for d in days:
    print(f"{d:3d}   {truth[:, d - 1].mean():9.1f}   {summary.mean[d - 1]:9.1f}"
          f"   {summary.std[d - 1]:8.1f}")
