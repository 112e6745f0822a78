"""Robust planning under stochastic dynamics via statistical linearization."""
from .core import (ControlTrajectory, DimensionError, DynamicsModel, GaussianBelief,
                   NonFiniteError, QuadraticCost, eval_drift, eval_jacobian_fd)
from .normal import inverse_normal_cdf
from .propagate import (BeliefTrajectory, PropagationError, covariance_penalty_profile,
                        expected_quadratic_cost, propagate)

__version__ = "0.1.0"

__all__ = ["BeliefTrajectory", "ControlTrajectory", "DimensionError", "DynamicsModel",
           "GaussianBelief", "NonFiniteError", "PropagationError", "QuadraticCost",
           "covariance_penalty_profile", "eval_drift", "eval_jacobian_fd",
           "expected_quadratic_cost", "inverse_normal_cdf", "propagate"]
