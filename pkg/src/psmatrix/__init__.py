"""Nonclassicality tests from matrices of phase-space distribution values."""

__version__ = "0.1.0"

from .core import (
    DensityMatrix,
    DomainError,
    PhasePoint,
    SeriesConvergenceError,
    TruncationError,
    distribution,
    nexp,
)
from .states import StateSpec, analytic_q, make_state, optimal_point
from .witness import (
    WitnessReport,
    build_matrix,
    chebyshev_criterion,
    nonlinear_pair_criterion,
    pair_criterion,
    qq_multi,
    qq_pair,
    report,
    three_by_three,
    wigner_husimi_two_mode,
    wq_criterion,
)

__all__ = [
    "__version__", "DensityMatrix", "DomainError", "PhasePoint", "SeriesConvergenceError",
    "TruncationError", "distribution", "nexp", "StateSpec", "analytic_q", "make_state",
    "optimal_point", "WitnessReport", "build_matrix", "chebyshev_criterion",
    "nonlinear_pair_criterion", "pair_criterion", "qq_multi", "qq_pair", "report",
    "three_by_three", "wigner_husimi_two_mode", "wq_criterion",
]
