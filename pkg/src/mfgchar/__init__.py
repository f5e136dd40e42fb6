"""Characteristics-based solver for first-order mean-field games on the flat torus.

The package builds the forward-backward characteristic system for an empirical
initial measure, assembles the value function and the mass path from it, and
evaluates the value function on (time, space, measure) together with its
measure derivative and the master-equation residual.
"""

from .errors import (ConfigError, DivergenceError, InvalidInputError, InversionError,
                     MfgError, NoConvergenceError, UnsupportedCaseError)
from .measure import EmpiricalMeasure, TransportPlan, wasserstein
from .coefficients import CoefficientTriple, CouplingModel, HamiltonianModel
from .characteristics import CharacteristicField, SolverConfig, solve
from .inversion import invert_flow, vee_field
from .mfg import MfgSolution, build_solution
from .master import evaluate_master, evaluate_u
from .scenarios import Scenario

__version__ = "0.1.0"

__all__ = [
    "CharacteristicField", "CoefficientTriple", "ConfigError", "CouplingModel",
    "DivergenceError", "EmpiricalMeasure", "HamiltonianModel", "InvalidInputError",
    "InversionError", "MfgError", "MfgSolution", "NoConvergenceError", "Scenario",
    "SolverConfig", "TransportPlan", "UnsupportedCaseError", "build_solution",
    "evaluate_master", "evaluate_u", "invert_flow", "solve", "vee_field", "wasserstein",
]
