"""Sinkhorn-type solvers for entropic vector quantile regression on discrete marginals."""

from .bounds import ProblemBounds, compute_bounds, contraction_rates, default_eta, optimal_potential_bounds
from .estimators import BEstimates, b_estimators, conditional_moments
from .gaussian import GaussianModel, gaussian_dual_value, sample_gaussian_problem
from .modified import modified_step, run_modified
from .problem import (
    Coupling,
    DiscreteProblem,
    Potentials,
    ProblemError,
    compute_cost_matrix,
    coupling,
    dual_objective,
    iota,
    neg_gradients,
    primal_objective,
    residuals,
)
from .projection import ProjectionConfig, huber, project, project_coordinatewise
from .trace import IterateTrace, SolverConfig
from .vanilla import NewtonConfig, run_vanilla, solve_g_implicit, vanilla_step

__all__ = [
    "BEstimates",
    "Coupling",
    "DiscreteProblem",
    "GaussianModel",
    "IterateTrace",
    "NewtonConfig",
    "Potentials",
    "ProblemBounds",
    "ProblemError",
    "ProjectionConfig",
    "SolverConfig",
    "b_estimators",
    "compute_bounds",
    "compute_cost_matrix",
    "conditional_moments",
    "contraction_rates",
    "coupling",
    "default_eta",
    "dual_objective",
    "gaussian_dual_value",
    "huber",
    "iota",
    "modified_step",
    "neg_gradients",
    "optimal_potential_bounds",
    "primal_objective",
    "project",
    "project_coordinatewise",
    "residuals",
    "run_modified",
    "run_vanilla",
    "sample_gaussian_problem",
    "solve_g_implicit",
    "vanilla_step",
]
