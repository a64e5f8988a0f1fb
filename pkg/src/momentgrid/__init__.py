"""Moment-SOS relaxations for polynomial optimization in complex variables,
with optimal power flow as the main application."""

__version__ = "0.1.0"

from .cpoly import Constraint, CPolynomial, CPolyProblem, add_sphere_slack, to_real  # noqa: E402
from .driver import (IterationConfig, SolveReport, iterate_orders, laplacian_solve,  # noqa: E402
                     penalized_solve, solve_low, solve_moment, sweep)
from .hierarchy import build_moment  # noqa: E402
from .lowrelax import build_shor, build_socp  # noqa: E402
from .netio import load_case, preprocess_low_impedance, read_case  # noqa: E402
from .opf import build_opf_qcqp  # noqa: E402
from .pop import parse_pop, read_pop  # noqa: E402

__all__ = [
    "Constraint", "CPolynomial", "CPolyProblem", "IterationConfig", "SolveReport",
    "add_sphere_slack", "build_moment", "build_opf_qcqp", "build_shor", "build_socp",
    "iterate_orders", "laplacian_solve", "load_case", "parse_pop", "penalized_solve",
    "preprocess_low_impedance", "read_case", "read_pop", "solve_low", "solve_moment",
    "sweep", "to_real",
]
