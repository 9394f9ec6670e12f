"""Domain types, validation and regime classification.

Everything here is plain data: the solvers in :mod:`ambicon.analytic`,
:mod:`ambicon.montecarlo` and :mod:`ambicon.hjbi` take these objects and
assume they went through :func:`validate` first.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

ANY = "any"


class AmbiconError(Exception):
    """Base class; the class name is the violated invariant."""

    def __init__(self, message: str = ""):
        super().__init__(f"{type(self).__name__}: {message}" if message else type(self).__name__)


class ModelError(AmbiconError):
    """Invalid user-supplied parameters (maps to CLI exit code 2)."""


class NonPositiveParameter(ModelError):
    pass


class EmptyBand(ModelError):
    pass


class NonNegativeReservation(ModelError):
    pass


class SolverError(AmbiconError):
    """A solver precondition failed (maps to CLI exit code 3)."""


class DegenerateRegime(SolverError):
    pass


class NotDegenerate(SolverError):
    pass


class EmptyIntersection(SolverError):
    pass


class CflViolation(SolverError):
    pass


class NonPositiveValueSurface(SolverError):
    pass


class UnsupportedDirection(SolverError):
    pass


class EffortCapWarning(UserWarning):
    """a_max sits below the unconstrained optimum 1/k; closed forms use the clipped effort."""


@dataclass(frozen=True)
class RiskProfile:
    r_agent: float
    r_principal: float
    cost_coeff: float
    effort_cap: float
    horizon: float
    reservation: float

    @property
    def reservation_cert(self) -> float:
        """Certainty equivalent R_0 = -log(-R)/R_A."""
        return -math.log(-self.reservation) / self.r_agent

    def cost(self, a):
        return 0.5 * self.cost_coeff * a * a

    def replace(self, **changes) -> "RiskProfile":
        fields = {**self.__dict__, **changes}
        return RiskProfile(**fields)


@dataclass(frozen=True)
class AmbiguityBand:
    lo: float
    hi: float

    def contains(self, alpha: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= alpha <= self.hi + tol

    def grid(self, n: int) -> np.ndarray:
        return np.linspace(self.lo, self.hi, n)

    def intersect(self, other: "AmbiguityBand") -> "AmbiguityBand | None":
        lo, hi = max(self.lo, other.lo), min(self.hi, other.hi)
        return AmbiguityBand(lo, hi) if lo <= hi else None


@dataclass(frozen=True)
class LinearQuadraticContract:
    """xi = z * B_T + (gamma / 2) * <B>_T + delta."""

    z: float
    gamma: float
    delta: float

    def payoff(self, b_t, qv_t):
        return self.z * b_t + 0.5 * self.gamma * qv_t + self.delta

    def retained(self, b_t, qv_t):
        # B_T - xi, arranged so that z == 1 cancels exactly
        return (1.0 - self.z) * b_t - 0.5 * self.gamma * qv_t - self.delta

    def shifted(self, dz: float = 0.0, dgamma: float = 0.0, ddelta: float = 0.0) -> "LinearQuadraticContract":
        return LinearQuadraticContract(self.z + dz, self.gamma + dgamma, self.delta + ddelta)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.z, self.gamma, self.delta))


class FbRegime(str, enum.Enum):
    DEGENERATE_LOW = "DegenerateLow"  # hi_P < lo_A
    DEGENERATE_HIGH = "DegenerateHigh"  # hi_A < lo_P
    BOUNDARY_PA = "BoundaryPA"  # lo_A == hi_P
    INTERIOR = "Interior"  # lo_A < hi_P < hi_A
    BOUNDARY_TOPS = "BoundaryTops"  # hi_A == hi_P
    BOUNDARY_AP = "BoundaryAP"  # lo_P == hi_A
    INTERIOR_REV = "InteriorRev"  # lo_P < hi_A < hi_P

    @property
    def degenerate(self) -> bool:
        return self in (FbRegime.DEGENERATE_LOW, FbRegime.DEGENERATE_HIGH)


class SbRegime(str, enum.Enum):
    PRINCIPAL_TOP_IN_AGENT_BAND = "PrincipalTopInAgentBand"
    AGENT_TOP_IN_PRINCIPAL_BAND = "AgentTopInPrincipalBand"
    DEGENERATE = "Degenerate"


def _cmp(x: float, y: float, tol: float) -> int:
    if abs(x - y) <= tol:
        return 0
    return -1 if x < y else 1


def classify_fb(band_a: AmbiguityBand, band_p: AmbiguityBand, tol: float = 0.0) -> FbRegime:
    """Total classification; equal tops win over the other boundary cases."""
    tops = _cmp(band_p.hi, band_a.hi, tol)
    if tops == 0:
        return FbRegime.BOUNDARY_TOPS
    if tops < 0:
        c = _cmp(band_p.hi, band_a.lo, tol)
        return {-1: FbRegime.DEGENERATE_LOW, 0: FbRegime.BOUNDARY_PA, 1: FbRegime.INTERIOR}[c]
    c = _cmp(band_a.hi, band_p.lo, tol)
    return {-1: FbRegime.DEGENERATE_HIGH, 0: FbRegime.BOUNDARY_AP, 1: FbRegime.INTERIOR_REV}[c]


def classify_sb(band_a: AmbiguityBand, band_p: AmbiguityBand, tol: float = 0.0) -> SbRegime:
    if _cmp(band_a.lo, band_p.hi, tol) <= 0 and _cmp(band_p.hi, band_a.hi, tol) <= 0:
        return SbRegime.PRINCIPAL_TOP_IN_AGENT_BAND
    if _cmp(band_p.lo, band_a.hi, tol) <= 0 and _cmp(band_a.hi, band_p.hi, tol) <= 0:
        return SbRegime.AGENT_TOP_IN_PRINCIPAL_BAND
    return SbRegime.DEGENERATE


@dataclass(frozen=True)
class ValidatedModel:
    profile: RiskProfile
    band_a: AmbiguityBand
    band_p: AmbiguityBand
    fb_regime: FbRegime
    sb_regime: SbRegime
    effort_cap_binds: bool


def validate_profile(profile: RiskProfile) -> RiskProfile:
    for name in ("r_agent", "r_principal", "cost_coeff", "effort_cap", "horizon"):
        value = getattr(profile, name)
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
            raise NonPositiveParameter(f"{name}={value!r} must be a finite positive number")
    r = profile.reservation
    if not (isinstance(r, (int, float)) and math.isfinite(r)):
        raise NonPositiveParameter(f"reservation={r!r} must be finite")
    if r >= 0:
        raise NonNegativeReservation(f"reservation={r!r} must be < 0")
    return profile


def validate_band(band: AmbiguityBand, name: str = "band") -> AmbiguityBand:
    for attr in ("lo", "hi"):
        value = getattr(band, attr)
        if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
            raise NonPositiveParameter(f"{name}.{attr}={value!r} must be a finite positive number")
    if band.lo > band.hi:
        raise EmptyBand(f"{name}: lo={band.lo} > hi={band.hi}")
    return band


def validate(
    profile: RiskProfile,
    band_a: AmbiguityBand,
    band_p: AmbiguityBand,
    tol: float = 0.0,
) -> ValidatedModel:
    """Check sign constraints and classify both regimes.

    Degenerate (disjoint) band pairs are valid input. A warning is emitted
    when ``effort_cap < 1 / cost_coeff``.
    """
    validate_profile(profile)
    validate_band(band_a, "agent")
    validate_band(band_p, "principal")
    binds = profile.effort_cap < 1.0 / profile.cost_coeff
    if binds:
        warnings.warn(
            f"effort_cap={profile.effort_cap} < 1/k={1.0 / profile.cost_coeff}; closed forms use clipped effort",
            EffortCapWarning,
            stacklevel=2,
        )
    return ValidatedModel(
        profile=profile,
        band_a=band_a,
        band_p=band_p,
        fb_regime=classify_fb(band_a, band_p, tol),
        sb_regime=classify_sb(band_a, band_p, tol),
        effort_cap_binds=binds,
    )
