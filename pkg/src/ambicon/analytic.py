"""Closed-form first-best and second-best solutions for constant ambiguity bands.

All efforts are constant over [0, T]; integrals of effort and cost are
therefore ``a * T`` and ``k(a) * T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .model import (
    ANY,
    AmbiguityBand,
    DegenerateRegime,
    FbRegime,
    LinearQuadraticContract,
    NotDegenerate,
    RiskProfile,
    SbRegime,
    classify_fb,
    classify_sb,
)

EXP_CLAMP = 700.0


def clamped_exp(x):
    """``exp`` with the exponent clamped to +-700. Returns ``(value, saturated)``."""
    x = np.asarray(x, dtype=float)
    saturated = np.abs(x) > EXP_CLAMP
    value = np.exp(np.clip(x, -EXP_CLAMP, EXP_CLAMP))
    if value.ndim == 0:
        return float(value), bool(saturated)
    return value, saturated


def _scalar(x):
    x = np.asarray(x)
    return float(x) if x.ndim == 0 else x


def agent_best_response(z, profile: RiskProfile):
    """Minimiser of ``k a^2 / 2 - a z`` over ``[0, a_max]``."""
    return _scalar(np.clip(np.asarray(z, dtype=float) / profile.cost_coeff, 0.0, profile.effort_cap))


def first_best_effort(profile: RiskProfile) -> float:
    """argmin of k(a) - a on [0, a_max]."""
    return min(1.0 / profile.cost_coeff, profile.effort_cap)


# ---------------------------------------------------------------------------
# Fixed-volatility utilities of a contract in Q
# ---------------------------------------------------------------------------


def principal_exponent(a, z, gamma, delta, alpha, profile: RiskProfile):
    T, rp = profile.horizon, profile.r_principal
    return rp * (delta - (1.0 - z) * a * T + (0.5 * rp * (1.0 - z) ** 2 + 0.5 * gamma) * alpha * T)


def agent_exponent(a, z, gamma, delta, alpha, profile: RiskProfile):
    T, ra = profile.horizon, profile.r_agent
    return ra * (T * profile.cost(a) - z * a * T - delta + (0.5 * ra * z * z - 0.5 * gamma) * alpha * T)


def principal_utility(a, contract: LinearQuadraticContract, alpha, profile: RiskProfile):
    """E[-exp(-R_P (B_T - xi))] under constant effort ``a`` and variance ``alpha``."""
    value, _ = clamped_exp(principal_exponent(a, contract.z, contract.gamma, contract.delta, alpha, profile))
    return -value


def agent_utility(a, contract: LinearQuadraticContract, alpha, profile: RiskProfile):
    value, _ = clamped_exp(agent_exponent(a, contract.z, contract.gamma, contract.delta, alpha, profile))
    return -value


class FEval(NamedTuple):
    gamma_p: float
    gamma_a: float
    f: float
    saturated: bool


def f_eval(a, contract: LinearQuadraticContract, alpha_p, alpha_a, rho, profile: RiskProfile) -> FEval:
    """Lagrangian ``Gamma_P + rho * Gamma_A`` at fixed volatilities."""
    ep, sat_p = clamped_exp(principal_exponent(a, contract.z, contract.gamma, contract.delta, alpha_p, profile))
    ea, sat_a = clamped_exp(agent_exponent(a, contract.z, contract.gamma, contract.delta, alpha_a, profile))
    return FEval(-ep, -ea, -ep - rho * ea, bool(np.any(sat_p) or np.any(sat_a)))


def delta_star(a, z, gamma, alpha_p, alpha_a, rho, profile: RiskProfile):
    """Maximiser in delta of the Lagrangian (it is strictly concave in delta)."""
    ra, rp, T = profile.r_agent, profile.r_principal, profile.horizon
    s = ra + rp
    return (
        math.log(rho * ra / rp)
        + T * ((rp * (1.0 - z) - ra * z) * a + ra * profile.cost(a))
        - 0.5 * rp * (rp * (1.0 - z) ** 2 + gamma) * alpha_p * T
        + 0.5 * ra * (ra * z * z - gamma) * alpha_a * T
    ) / s


def g_eval(a, z, gamma, alpha_p, alpha_a, rho, profile: RiskProfile, return_flag: bool = False):
    """The Lagrangian maximised over delta, in closed form."""
    ra, rp, T = profile.r_agent, profile.r_principal, profile.horizon
    s = ra + rp
    prefactor = rho ** (rp / s) * (s / rp) * (ra / rp) ** (-ra / s)
    exponent = (ra * rp / s) * (
        T * (profile.cost(a) - a)
        + 0.5 * gamma * T * (alpha_p - alpha_a)
        + 0.5 * T * (alpha_p * rp * (1.0 - z) ** 2 + alpha_a * ra * z * z)
    )
    value, saturated = clamped_exp(exponent)
    out = -prefactor * value
    return (out, saturated) if return_flag else out


class WorstCase(NamedTuple):
    u_p: float
    u_a: float
    alpha_p_worst: float | str
    alpha_a_worst: float | str


def worst_case_utilities_q(
    contract: LinearQuadraticContract,
    a: float,
    band_a: AmbiguityBand,
    band_p: AmbiguityBand,
    profile: RiskProfile,
    tol: float = 0.0,
) -> WorstCase:
    """Infimum of each party's utility over its band; attained at an endpoint.

    On the boundary cells (``gamma == -R_P (1-z)^2`` for the principal,
    ``gamma == R_A z^2`` for the agent) the utility is flat in alpha and the
    worst case is reported as ``"any"``.
    """
    z, g = contract.z, contract.gamma
    thr_p = -profile.r_principal * (1.0 - z) ** 2
    thr_a = profile.r_agent * z * z
    if abs(g - thr_p) <= tol:
        alpha_p, alpha_p_eval = ANY, band_p.hi
    else:
        alpha_p = band_p.lo if g < thr_p else band_p.hi
        alpha_p_eval = alpha_p
    if abs(g - thr_a) <= tol:
        alpha_a, alpha_a_eval = ANY, band_a.hi
    else:
        alpha_a = band_a.hi if g < thr_a else band_a.lo
        alpha_a_eval = alpha_a
    return WorstCase(
        principal_utility(a, contract, alpha_p_eval, profile),
        agent_utility(a, contract, alpha_a_eval, profile),
        alpha_p,
        alpha_a,
    )


def _as_alpha(worst: float | str, fallback: float) -> float:
    return fallback if worst == ANY else float(worst)


# ---------------------------------------------------------------------------
# First best
# ---------------------------------------------------------------------------

_PRINCIPAL_TOP_REGIMES = (FbRegime.BOUNDARY_PA, FbRegime.INTERIOR, FbRegime.BOUNDARY_TOPS)


@dataclass(frozen=True)
class FbSolution:
    """Optimal first-best family ``{(z*, gamma, delta(gamma)) : gamma in gamma_range}``."""

    regime: FbRegime
    effort: float
    z_star: float
    gamma_range: tuple[float, float]
    representative_contract: LinearQuadraticContract
    principal_value: float
    lagrange_log_term: float
    alpha_ref: float
    alpha_p_worst: float | str
    alpha_a_worst: float | str
    profile: RiskProfile = field(repr=False)

    @property
    def rho(self) -> float:
        p = self.profile
        return p.r_principal / p.r_agent * math.exp((p.r_agent + p.r_principal) * self.lagrange_log_term)

    @property
    def common_alpha(self) -> float:
        """A volatility that is worst for both parties at the representative contract."""
        return self.alpha_ref

    def delta_for_gamma(self, gamma: float) -> float:
        p = self.profile
        T, a, z = p.horizon, self.effort, self.z_star
        return T * p.cost(a) - z * T * a + 0.5 * self.alpha_ref * T * (p.r_agent * z * z - gamma) + p.reservation_cert

    def contract_at(self, gamma: float) -> LinearQuadraticContract:
        lo, hi = self.gamma_range
        if not lo <= gamma <= hi:
            raise ValueError(f"gamma={gamma} outside optimal range [{lo}, {hi}]")
        return LinearQuadraticContract(self.z_star, gamma, self.delta_for_gamma(gamma))


def _fb_value(profile: RiskProfile, a: float, alpha_ref: float) -> float:
    ra, rp, T = profile.r_agent, profile.r_principal, profile.horizon
    s = ra + rp
    value, _ = clamped_exp(rp * T * (profile.cost(a) - a + 0.5 * alpha_ref * ra * rp / s))
    return -((-profile.reservation) ** (-rp / ra)) * value


def solve_first_best(
    profile: RiskProfile, band_a: AmbiguityBand, band_p: AmbiguityBand, tol: float = 0.0
) -> FbSolution:
    regime = classify_fb(band_a, band_p, tol)
    if regime.degenerate:
        raise DegenerateRegime(f"{regime.value}: bands are disjoint, use degenerate_fb_sequence")
    ra, rp, T = profile.r_agent, profile.r_principal, profile.horizon
    s = ra + rp
    z = rp / s
    a = first_best_effort(profile)
    g_up = ra * z * z
    g_down = -rp * (1.0 - z) ** 2
    alpha_ref = band_p.hi if regime in _PRINCIPAL_TOP_REGIMES else band_a.hi
    gamma_range = {
        FbRegime.BOUNDARY_PA: (g_up, math.inf),
        FbRegime.INTERIOR: (g_up, g_up),
        FbRegime.BOUNDARY_TOPS: (g_down, g_up),
        FbRegime.BOUNDARY_AP: (-math.inf, g_down),
        FbRegime.INTERIOR_REV: (g_down, g_down),
    }[regime]

    def delta_of(g):
        return T * profile.cost(a) - z * T * a + 0.5 * alpha_ref * T * (g_up - g) + profile.reservation_cert

    # finite endpoint whose delta is smallest in magnitude
    candidates = [g for g in gamma_range if math.isfinite(g)]
    gamma = min(candidates, key=lambda g: (abs(delta_of(g)), -g))
    contract = LinearQuadraticContract(z, gamma, delta_of(gamma))
    wc = worst_case_utilities_q(contract, a, band_a, band_p, profile)
    alpha_p = _as_alpha(wc.alpha_p_worst, alpha_ref)
    alpha_a = _as_alpha(wc.alpha_a_worst, alpha_ref)
    log_term = contract.delta - (
        T * ((rp * (1.0 - z) - ra * z) * a + ra * profile.cost(a))
        - 0.5 * rp * (rp * (1.0 - z) ** 2 + gamma) * alpha_p * T
        + 0.5 * ra * (ra * z * z - gamma) * alpha_a * T
    ) / s
    return FbSolution(
        regime=regime,
        effort=a,
        z_star=z,
        gamma_range=gamma_range,
        representative_contract=contract,
        principal_value=_fb_value(profile, a, alpha_ref),
        lagrange_log_term=log_term,
        alpha_ref=alpha_ref,
        alpha_p_worst=wc.alpha_p_worst,
        alpha_a_worst=wc.alpha_a_worst,
        profile=profile,
    )


@dataclass(frozen=True)
class DegenerateSequenceItem:
    n: int
    contract: LinearQuadraticContract
    principal_value: float
    agent_value: float
    saturated: bool = False


def degenerate_fb_sequence(
    profile: RiskProfile, band_a: AmbiguityBand, band_p: AmbiguityBand, n_list, tol: float = 0.0
) -> list[DegenerateSequenceItem]:
    """Maximising sequence of quadratic-variation contracts for disjoint bands.

    The recommended effort is ``a_max``; every item leaves the agent exactly
    at the reservation utility while the principal's value tends to 0.
    """
    regime = classify_fb(band_a, band_p, tol)
    if not regime.degenerate:
        raise NotDegenerate(f"regime {regime.value} has intersecting bands")
    T, a = profile.horizon, profile.effort_cap
    base = T * profile.cost(a) + profile.reservation_cert
    items = []
    for n in n_list:
        n = int(n)
        if n < 1:
            raise ValueError("sequence index must be a positive integer")
        if regime is FbRegime.DEGENERATE_LOW:
            contract = LinearQuadraticContract(0.0, float(n), base - 0.5 * T * n * band_a.lo)
        else:
            contract = LinearQuadraticContract(0.0, -float(n), base + 0.5 * T * n * band_a.hi)
        wc = worst_case_utilities_q(contract, a, band_a, band_p, profile)
        alpha_p = _as_alpha(wc.alpha_p_worst, band_p.hi)
        _, saturated = clamped_exp(principal_exponent(a, 0.0, contract.gamma, contract.delta, alpha_p, profile))
        items.append(DegenerateSequenceItem(n, contract, wc.u_p, wc.u_a, saturated))
    return items


def degenerate_fb_value_low(n: int, profile: RiskProfile, band_a: AmbiguityBand, band_p: AmbiguityBand) -> float:
    """Principal value of the n-th item when hi_P < lo_A, written out directly."""
    T, rp, a = profile.horizon, profile.r_principal, profile.effort_cap
    d = T * profile.cost(a) + profile.reservation_cert
    return -math.exp(-rp * (a * T - d + 0.5 * T * n * (band_a.lo - band_p.hi) - 0.5 * rp * T * band_p.hi))


# ---------------------------------------------------------------------------
# Second best
# ---------------------------------------------------------------------------


def h_eval(alpha, z, gamma, band_a: AmbiguityBand, profile: RiskProfile):
    """Reduced principal drift H(alpha, z, gamma) with clipped agent effort."""
    alpha = np.asarray(alpha, dtype=float)
    z = np.asarray(z, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    a = np.clip(z / profile.cost_coeff, 0.0, profile.effort_cap)
    h_z = a - profile.cost(a) - 0.5 * alpha * (profile.r_agent * z * z + profile.r_principal * (1.0 - z) ** 2)
    h_gamma = -0.5 * alpha * gamma + np.minimum(0.5 * band_a.lo * gamma, 0.5 * band_a.hi * gamma)
    return _scalar(h_z + h_gamma)


def z_star_sb(alpha, profile: RiskProfile):
    alpha = np.asarray(alpha, dtype=float)
    k = profile.cost_coeff
    return _scalar((1.0 + k * alpha * profile.r_principal) / (1.0 + alpha * k * (profile.r_agent + profile.r_principal)))


def sb_contract_q(z: float, gamma: float, band_a: AmbiguityBand, profile: RiskProfile, y0: float | None = None):
    """Write the second-best contract with constant (Z, Gamma) as a member of Q.

    xi = Y_0 + (Gamma + R_A z^2)/2 <B>_T - T inf_A(alpha Gamma / 2) + T (k(a*) - a* z) + z B_T
    """
    y0 = profile.reservation_cert if y0 is None else y0
    T = profile.horizon
    a = agent_best_response(z, profile)
    m = min(0.5 * band_a.lo * gamma, 0.5 * band_a.hi * gamma)
    return LinearQuadraticContract(z, gamma + profile.r_agent * z * z, y0 - T * m + T * (profile.cost(a) - a * z))


def sb_contract_value(
    z: float, gamma: float, band_a: AmbiguityBand, band_p: AmbiguityBand, profile: RiskProfile, y0: float | None = None
) -> tuple[float, float]:
    """Principal's worst case over the band intersection for constant (z, gamma).

    Returns ``(value, worst_alpha)``; H is affine in alpha so an endpoint is worst.
    """
    inter = band_a.intersect(band_p)
    if inter is None:
        raise DegenerateRegime("bands are disjoint")
    y0 = profile.reservation_cert if y0 is None else y0
    h_lo = h_eval(inter.lo, z, gamma, band_a, profile)
    h_hi = h_eval(inter.hi, z, gamma, band_a, profile)
    alpha, h = (inter.hi, h_hi) if h_hi <= h_lo else (inter.lo, h_lo)
    value, _ = clamped_exp(-profile.r_principal * (profile.horizon * h - y0))
    return -value, alpha


@dataclass(frozen=True)
class DegenerateSbContract:
    """Pays ``c`` on the agent's volatility support and ``-n`` elsewhere."""

    c: float
    n: float
    band_a: AmbiguityBand
    horizon: float

    def payoff(self, b_t, qv_t):
        qv = np.asarray(qv_t, dtype=float)
        T = self.horizon
        slack = 1e-12 * T * self.band_a.hi
        inside = (qv >= self.band_a.lo * T - slack) & (qv <= self.band_a.hi * T + slack)
        return np.where(inside, self.c, -self.n) + 0.0 * np.asarray(b_t, dtype=float)

    def retained(self, b_t, qv_t):
        return np.asarray(b_t, dtype=float) - self.payoff(b_t, qv_t)


def sb_degenerate_contract(n: float, profile: RiskProfile, band_a: AmbiguityBand) -> DegenerateSbContract:
    # c solves -exp(-R_A (c - k(0) T)) = R and k(0) = 0
    return DegenerateSbContract(profile.reservation_cert, float(n), band_a, profile.horizon)


@dataclass(frozen=True)
class SbSolution:
    regime: SbRegime
    z_star: float
    gamma_star: float
    y0: float
    effort: float
    principal_value: float
    worst_alpha: float
    contract: LinearQuadraticContract | None
    intersection: AmbiguityBand | None


def solve_second_best(
    profile: RiskProfile, band_a: AmbiguityBand, band_p: AmbiguityBand, tol: float = 0.0
) -> SbSolution:
    regime = classify_sb(band_a, band_p, tol)
    y0 = profile.reservation_cert
    if regime is SbRegime.DEGENERATE:
        return SbSolution(regime, 0.0, 0.0, y0, 0.0, 0.0, band_p.hi, None, None)
    if regime is SbRegime.PRINCIPAL_TOP_IN_AGENT_BAND:
        alpha = band_p.hi
        z = z_star_sb(alpha, profile)
        gamma = 0.0
    else:
        alpha = band_a.hi
        z = z_star_sb(alpha, profile)
        gamma = -profile.r_agent * z * z - profile.r_principal * (1.0 - z) ** 2
    h = h_eval(alpha, z, gamma, band_a, profile)
    value, _ = clamped_exp(-profile.r_principal * (profile.horizon * h - y0))
    return SbSolution(
        regime=regime,
        z_star=z,
        gamma_star=gamma,
        y0=y0,
        effort=agent_best_response(z, profile),
        principal_value=-value,
        worst_alpha=alpha,
        contract=sb_contract_q(z, gamma, band_a, profile, y0),
        intersection=band_a.intersect(band_p),
    )


def sb_degenerate_bound(
    n: float,
    profile: RiskProfile,
    bound_m: float,
    band_a: AmbiguityBand | None = None,
    band_p: AmbiguityBand | None = None,
) -> float:
    """Lower bound ``-exp(-R_P n + R_P^2 T M / 2)`` on the n-th degenerate contract's value."""
    if band_a is not None and band_p is not None and classify_sb(band_a, band_p) is not SbRegime.DEGENERATE:
        raise NotDegenerate("bands intersect")
    rp = profile.r_principal
    value, _ = clamped_exp(-rp * n + 0.5 * rp * rp * profile.horizon * bound_m)
    return -value
