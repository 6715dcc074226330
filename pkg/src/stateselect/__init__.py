"""Sampling-based state selection for output-feedback stochastic control.

The package scores every particle of a filtered state density as a candidate
to feed a fixed feedback law, gates candidates by Monte Carlo
constraint-satisfaction rates, and picks the cheapest survivor. For linear
plants with quadratic cost and polyhedral chance constraints the whole
procedure collapses to a small quadratic program. A bootstrap particle
filter, a Kalman filter, a value-iteration controller constructor and a
closed-loop experiment harness complete the loop.
"""

from .catalog import ModelBundle, get as get_model_bundle, names as model_names
from .errors import (ConfigurationError, ConvergenceError,
                     DegenerateLikelihoodError, QPUnboundedError)
from .filtering import (ParticleSet, effective_sample_size, mean_and_cov,
                        predict, resample, update)
from .linear import (CostQuadratic, LinearProblem, TightenedPolyhedron,
                     cost_matrices, kalman_step, propagate_covariances,
                     quadratic_vs_sampling_oracle, solve_qp,
                     tighten_constraints)
from .models import (ConstraintSet, Controller, Dims, NoiseModel, PlantModel,
                     StageCost, rollout_closed_loop, rollout_open_loop,
                     trajectory_cost)
from .selection import (CandidateReport, SelectionConfig, SelectionResult,
                        candidate_dominance_check, evaluate_candidate,
                        sample_bound, select_state)
from .synthesis import (GridPolicy, ValueGrid, admissible_inputs,
                        extract_policy, load_policy, save_policy,
                        value_iteration)

__version__ = "0.1.0"

__all__ = [
    "CandidateReport", "ConfigurationError", "ConstraintSet", "Controller",
    "ConvergenceError", "CostQuadratic", "DegenerateLikelihoodError", "Dims",
    "GridPolicy", "LinearProblem", "ModelBundle", "NoiseModel", "ParticleSet",
    "PlantModel", "QPUnboundedError", "SelectionConfig", "SelectionResult",
    "StageCost", "TightenedPolyhedron", "ValueGrid", "admissible_inputs",
    "candidate_dominance_check", "cost_matrices", "effective_sample_size",
    "evaluate_candidate", "extract_policy", "get_model_bundle", "kalman_step",
    "load_policy", "mean_and_cov", "model_names", "predict",
    "propagate_covariances", "quadratic_vs_sampling_oracle", "resample",
    "rollout_closed_loop", "rollout_open_loop", "sample_bound", "save_policy",
    "select_state", "solve_qp", "tighten_constraints", "trajectory_cost",
    "update", "value_iteration",
]
