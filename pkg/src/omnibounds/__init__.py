"""Trajectory-based generalization bounds for SGD, estimated from run ensembles."""
from .bounds import (BoundReport, EstimationConfig, PerturbationChoice, flatness_bound,
                     measured_gap, neu_isotropic_bound, optimal_sigma, wang_bound)
from .config import ExperimentConfig, load_config
from .data import Dataset, SplitPlan, load_idx, partition, synth_gaussian_mixture
from .linalg import LinearOperator, RngStream, cg_solve
from .problems import MLP, LeastSquaresProblem, QuadraticProblem, SoftmaxRegression
from .trainer import RunEnsemble, SGDConfig, TrajectoryRecord, run_ensemble, run_sgd

__version__ = "0.1.0"
