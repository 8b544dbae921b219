"""Optimal decentralized LQG control with asymmetric information sharing.

Controller 1 observes both sensors and controller 2's inputs; controller 2
observes only its own sensor. The package synthesizes the two Kalman filters,
the coupled Riccati recursions and the resulting control law, and checks the
closed loop by Monte Carlo simulation.
"""

from .controller import GainSchedule, SteadyGains, control_inputs, optimal_cost, synthesize
from .estimator import covariance_pipeline, steady_filters
from .model import Dimensions, ProblemDef, augment, benchmark_problem, scalar_problem, validate
from .riccati import backward_pass, forward_iteration, solve_finite_horizon
from .simulator import SimConfig, monte_carlo, rollout, stability_report

__all__ = [
    "Dimensions", "ProblemDef", "augment", "benchmark_problem", "scalar_problem", "validate",
    "covariance_pipeline", "steady_filters",
    "backward_pass", "forward_iteration", "solve_finite_horizon",
    "GainSchedule", "SteadyGains", "control_inputs", "optimal_cost", "synthesize",
    "SimConfig", "monte_carlo", "rollout", "stability_report",
]
__version__ = "0.1.0"
