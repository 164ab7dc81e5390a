"""Numerical verification of maximum principles for cross-diffusion elliptic systems."""

from .errors import *  # noqa: F401,F403
from .field_model import Grid, MatrixField, ScalarField, VectorField, eval_field, gradient, parse_coeff
from .discrete_operator import Problem, DiscreteOperator, apply, assemble_scalar, assemble_system
from .linear_core import green_columns, green_sign_condition, principal_eigenpair, solve

__version__ = "0.1.0"
