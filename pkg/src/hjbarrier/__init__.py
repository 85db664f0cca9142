"""Finite-horizon safety verification for polynomial ODEs with bounded disturbances."""

__version__ = "0.1.0"

from .certificate import Certificate, CheckReport, Mode, check_certificate, lie_derivative
from .dynamics import Box, DisturbanceSet, InitialSet, SafeSet, SystemSpec
from .errors import (ConfigurationError, DomainError, HJBarrierError, InputError, NumericError,
                     PolyParseError)
from .hj import Grid, Status, ValueGrid, check_dpp, safety_verdict, solve_value_function
from .poly import PolyExpr, parse_poly
from .problem import Problem, load_problem, parse_problem, serialize_problem
from .simulate import DisturbanceSignal, integrate, monte_carlo_falsify
from .synthesis import Template, cegis_synthesize, fit_from_value_function

__all__ = [
    "Box", "Certificate", "CheckReport", "ConfigurationError", "DisturbanceSet", "DisturbanceSignal",
    "DomainError", "Grid", "HJBarrierError", "InitialSet", "InputError", "Mode", "NumericError",
    "PolyExpr", "PolyParseError", "Problem", "SafeSet", "Status", "SystemSpec", "Template",
    "ValueGrid", "cegis_synthesize", "check_certificate", "check_dpp", "fit_from_value_function",
    "integrate", "lie_derivative", "load_problem", "monte_carlo_falsify", "parse_poly",
    "parse_problem", "safety_verdict", "serialize_problem", "solve_value_function",
]
