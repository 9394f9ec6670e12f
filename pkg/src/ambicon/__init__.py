"""Optimal contracts for a principal and an agent who disagree about volatility.

Submodules: :mod:`model` (types, validation), :mod:`analytic` (closed forms),
:mod:`montecarlo`, :mod:`hjbi` (PDE solver), :mod:`harness` (cross-checks)
and :mod:`cli`.
"""

__version__ = "0.1.0"

from .analytic import (  # noqa: E402
    FbSolution,
    SbSolution,
    degenerate_fb_sequence,
    solve_first_best,
    solve_second_best,
)
from .model import (  # noqa: E402
    ANY,
    AmbiguityBand,
    FbRegime,
    LinearQuadraticContract,
    RiskProfile,
    SbRegime,
    validate,
)

__all__ = [
    "ANY",
    "AmbiguityBand",
    "FbRegime",
    "FbSolution",
    "LinearQuadraticContract",
    "RiskProfile",
    "SbRegime",
    "SbSolution",
    "degenerate_fb_sequence",
    "solve_first_best",
    "solve_second_best",
    "validate",
]
