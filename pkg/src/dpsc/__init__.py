"""Differentially private sparse logistic regression by perturbed ADMM."""

from .accountant import PrivacyPlan, epsilon_of, gamma_for, make_plan, min_epsilon
from .core import (
    LOGISTIC, AdmmState, Dataset, LossSpec, PenaltySpec, objective_value, soft_threshold,
    z_update, z_update_l1, z_update_lhalf,
)
from .data import SynthSpec, read_dataset, synth_generate, train_test_split, write_dataset
from .estimator import DPSparseLogisticRegression
from .evaluation import ExperimentGrid, MetricsReport, run_experiment
from .exceptions import (
    ConfigError, DataFormatError, DPSCError, PrivacyBudgetError, SolverDivergenceError,
)
from .noise import NoiseSpec, sample_noise
from .solver import SolverConfig, SolveResult, run_dpll, run_dplh, run_dpsc

__version__ = "0.1.0"

__all__ = [
    "AdmmState", "ConfigError", "DPSCError", "DPSparseLogisticRegression", "DataFormatError",
    "Dataset", "ExperimentGrid", "LOGISTIC", "LossSpec", "MetricsReport", "NoiseSpec",
    "PenaltySpec", "PrivacyBudgetError", "PrivacyPlan", "SolveResult", "SolverConfig",
    "SolverDivergenceError", "SynthSpec", "epsilon_of", "gamma_for", "make_plan",
    "min_epsilon", "objective_value", "read_dataset", "run_dpll", "run_dplh", "run_dpsc",
    "run_experiment", "sample_noise", "soft_threshold", "synth_generate", "train_test_split",
    "write_dataset", "z_update", "z_update_l1", "z_update_lhalf",
]
