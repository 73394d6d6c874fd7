"""Offline imitation from limited expert data plus mixed-quality data.

The library matches the learner's discounted state-action occupancy to the
expert's, regularized toward the union dataset through an asymmetrically
relaxed f-divergence that tolerates density ratios up to a level beta
before penalizing them.  The dual of that matching problem has a pointwise
closed form, so tabular problems solve exactly and continuous ones train a
small net on the same objective; a policy then falls out of the resulting
example weights by weighted behavioral cloning.

Modules:
    divergence   relaxed generators, divergences, concentrability checks
    mdp          tabular MDPs, occupancies, gridworlds, rollout sampling
    datasets     transition containers, binary IO, mixture construction
    ratio        density-ratio estimation by counting or a classifier
    nets         minimal MLPs with exact gradients and a penalty term
    solver       closed-form inner weights and the dual solvers
    extraction   weighted-BC policy extraction and cloning baselines
    experiments  gridworld benchmark, scoring, sweeps
    oracles      independent grid-search and finite-difference checkers
    verification runtime consistency battery behind `relaxdice verify`
    cli          the command-line interface
"""

from .datasets import (
    LEVEL_RATIOS,
    DatasetFormatError,
    MixSpec,
    SpaceDescriptor,
    TransitionDataset,
    continuous_space,
    load_dataset,
    load_mdp,
    mix_datasets,
    mix_spec_for_level,
    save_dataset,
    save_mdp,
    tabular_space,
)
from .divergence import (
    ConcentrabilityBound,
    Generator,
    RelaxedDivergenceSpec,
    SupportViolationError,
    f_divergence,
    f_tilde,
    preserves_optimum_check,
    relaxed_f_divergence,
)
from .extraction import (
    BcTrainConfig,
    bc_drc_eta,
    bc_eta,
    extract_policy,
    policy_from_net,
    train_weighted_bc,
)
from .experiments import (
    ExperimentConfig,
    ResultRow,
    SweepConfig,
    normalized_score,
    run_experiment,
    run_sweep,
)
from .mdp import (
    Gridworld,
    GridworldSpec,
    OccupancyMeasure,
    TabularMDP,
    TabularPolicy,
    exact_return,
    make_gridworld,
    occupancy_of_policy,
    policy_of_occupancy,
    random_mdp,
    sample_trajectories,
)
from .nets import Mlp, load_net, save_net
from .ratio import DensityRatioEstimate, tabular_ratio, train_classifier
from .solver import (
    DiceSolution,
    SolverConfig,
    closed_form_weight,
    closed_form_weight_demodice,
    closed_form_weight_drc,
    load_solution,
    save_solution,
    solve,
)

__version__ = "0.1.0"

__all__ = [
    "BcTrainConfig",
    "ConcentrabilityBound",
    "DatasetFormatError",
    "DensityRatioEstimate",
    "DiceSolution",
    "ExperimentConfig",
    "Generator",
    "Gridworld",
    "GridworldSpec",
    "LEVEL_RATIOS",
    "MixSpec",
    "Mlp",
    "OccupancyMeasure",
    "RelaxedDivergenceSpec",
    "ResultRow",
    "SolverConfig",
    "SpaceDescriptor",
    "SupportViolationError",
    "SweepConfig",
    "TabularMDP",
    "TabularPolicy",
    "TransitionDataset",
    "bc_drc_eta",
    "bc_eta",
    "closed_form_weight",
    "closed_form_weight_demodice",
    "closed_form_weight_drc",
    "continuous_space",
    "exact_return",
    "extract_policy",
    "f_divergence",
    "f_tilde",
    "load_dataset",
    "load_mdp",
    "load_net",
    "load_solution",
    "make_gridworld",
    "mix_datasets",
    "mix_spec_for_level",
    "normalized_score",
    "occupancy_of_policy",
    "policy_from_net",
    "policy_of_occupancy",
    "preserves_optimum_check",
    "random_mdp",
    "relaxed_f_divergence",
    "run_experiment",
    "run_sweep",
    "sample_trajectories",
    "save_dataset",
    "save_mdp",
    "save_net",
    "save_solution",
    "solve",
    "tabular_ratio",
    "tabular_space",
    "train_classifier",
    "train_weighted_bc",
]
