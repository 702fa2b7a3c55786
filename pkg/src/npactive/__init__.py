"""Simulation-efficient surrogate modeling for epidemic models.

Stochastic SEIR simulators (single population and metapopulation), latent
variable surrogates trained by amortized variational inference on a small
hand-rolled reverse-mode autodiff core, information-based acquisition
functions, the interactive acquisition loop, and a linear-model bench for
design-policy error scaling.
"""
from .errors import IntegrityError, NumericalError, ValidationError
from .gaussian import GaussianDiag, gaussian_entropy, kl_diag_gaussian
from .simulators import (
    MobilityGraph,
    Scenario,
    Trajectory,
    ring_plus_self,
    scenario_grid,
    simulate_metapop,
    simulate_seir,
)
from .neural_process import (
    Normalization,
    NpArchitecture,
    NeuralProcess,
    elbo_loss,
)
from .spatiotemporal import SpatiotemporalArchitecture, SpatiotemporalNeuralProcess
from .surrogate import (
    PredictiveSummary,
    TrainSettings,
    TrainedSurrogate,
    train_surrogate,
    validation_loss,
)
from .acquisition import (
    AcquisitionScore,
    eig_nested_mc,
    knn_entropy,
    latent_information_gain,
    max_entropy,
    mean_std,
    random_score,
)
from .data import (
    SimDataset,
    build_metapop_dataset,
    build_seir_dataset,
    read_dataset,
    write_dataset,
)
from .active import (
    LoopConfig,
    LoopResult,
    evaluate_test_mae,
    mae,
    run_active_loop,
    train_offline,
)
from .theory import (
    LinearBanditState,
    scaling_experiment,
    select_greedy,
    select_random,
)

__version__ = "0.1.0"

__all__ = [
    "AcquisitionScore",
    "GaussianDiag",
    "IntegrityError",
    "LinearBanditState",
    "LoopConfig",
    "LoopResult",
    "MobilityGraph",
    "NeuralProcess",
    "Normalization",
    "NpArchitecture",
    "NumericalError",
    "PredictiveSummary",
    "Scenario",
    "SimDataset",
    "SpatiotemporalArchitecture",
    "SpatiotemporalNeuralProcess",
    "TrainSettings",
    "TrainedSurrogate",
    "Trajectory",
    "ValidationError",
    "build_metapop_dataset",
    "build_seir_dataset",
    "eig_nested_mc",
    "elbo_loss",
    "evaluate_test_mae",
    "gaussian_entropy",
    "kl_diag_gaussian",
    "knn_entropy",
    "latent_information_gain",
    "mae",
    "max_entropy",
    "mean_std",
    "random_score",
    "read_dataset",
    "ring_plus_self",
    "run_active_loop",
    "scaling_experiment",
    "scenario_grid",
    "select_greedy",
    "select_random",
    "simulate_metapop",
    "simulate_seir",
    "train_offline",
    "train_surrogate",
    "validation_loss",
    "write_dataset",
]
