"""Finite-difference solver for the principal's HJBI equation with state-dependent bands.

The unknown is psi(t, x) > 0 with psi(T, x) = exp(-R_P x); the principal's
value is ``-exp(R_P R_0) * psi(0, 0)``. The Hamiltonian is
``sup_alpha inf_(z, gamma) G``; under the effective-domain convention alpha
ranges over D_A(t,x) intersected with D_P(t,x) and gamma = 0.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import _kernels
from .model import (
    AmbiguityBand,
    CflViolation,
    EmptyBand,
    EmptyIntersection,
    NonPositiveParameter,
    NonPositiveValueSurface,
    RiskProfile,
)
from .montecarlo import worker_count

CROSS_TERMS = ("gradient", "value")
P_SCHEMES = ("hybrid", "upwind")
DEFAULT_Z_BOUNDS = (-5.0, 5.0)


class Infeasible:
    """Value of G when alpha lies outside the principal's band (a +inf penalty)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "Infeasible"

    def __float__(self) -> float:
        return math.inf


INFEASIBLE = Infeasible()


@dataclass(frozen=True)
class MarkovAmbiguityField:
    """Band bounds of D_A(t, x) and D_P(t, x) sampled on a (t, x) grid.

    Values between nodes are bilinear; outside the grid they are held constant.
    """

    t_grid: np.ndarray
    x_grid: np.ndarray
    a_lo: np.ndarray
    a_hi: np.ndarray
    p_lo: np.ndarray
    p_hi: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t_grid, dtype=float)
        x = np.asarray(self.x_grid, dtype=float)
        object.__setattr__(self, "t_grid", t)
        object.__setattr__(self, "x_grid", x)
        for name in ("a_lo", "a_hi", "p_lo", "p_hi"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (len(t), len(x)):
                raise ValueError(f"{name} has shape {arr.shape}, expected {(len(t), len(x))}")
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise NonPositiveParameter(f"{name} must be finite and positive at every node")
            object.__setattr__(self, name, arr)
        for grid, name in ((t, "t_grid"), (x, "x_grid")):
            if grid.ndim != 1 or len(grid) == 0 or np.any(np.diff(grid) <= 0):
                raise ValueError(f"{name} must be a non-empty increasing 1-D array")
        if np.any(self.a_lo > self.a_hi):
            raise EmptyBand("agent band has lo > hi at some node")
        if np.any(self.p_lo > self.p_hi):
            raise EmptyBand("principal band has lo > hi at some node")

    @classmethod
    def constant(cls, band_a: AmbiguityBand, band_p: AmbiguityBand, horizon: float = 1.0) -> "MarkovAmbiguityField":
        one = np.ones((1, 1))
        return cls(
            np.array([0.0]),
            np.array([0.0]),
            band_a.lo * one,
            band_a.hi * one,
            band_p.lo * one,
            band_p.hi * one,
        )

    @property
    def bound_m(self) -> float:
        """Largest principal variance anywhere on the grid."""
        return float(np.max(self.p_hi))

    @property
    def max_effective_alpha(self) -> float:
        return float(np.max(np.minimum(self.a_hi, self.p_hi)))

    @property
    def is_time_homogeneous(self) -> bool:
        return len(self.t_grid) == 1 or all(
            np.array_equal(arr[0], arr[i]) for arr in (self.a_lo, self.a_hi, self.p_lo, self.p_hi) for i in range(1, len(self.t_grid))
        )

    def _interp(self, arr: np.ndarray, t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if len(self.t_grid) == 1:
            row = arr[0]
        else:
            tc = min(max(t, self.t_grid[0]), self.t_grid[-1])
            i = min(int(np.searchsorted(self.t_grid, tc, side="right")) - 1, len(self.t_grid) - 2)
            w = (tc - self.t_grid[i]) / (self.t_grid[i + 1] - self.t_grid[i])
            row = (1.0 - w) * arr[i] + w * arr[i + 1]
        if len(self.x_grid) == 1:
            return np.broadcast_to(row[0], x.shape).astype(float)
        return np.interp(x, self.x_grid, row)

    def bands_at(self, t: float, x):
        """``(a_lo, a_hi, p_lo, p_hi)`` at time ``t`` and position(s) ``x``."""
        return tuple(self._interp(arr, t, x) for arr in (self.a_lo, self.a_hi, self.p_lo, self.p_hi))

    def effective(self, t: float, x):
        """Intersection [max(lo), min(hi)] of the two bands; raises if empty."""
        a_lo, a_hi, p_lo, p_hi = self.bands_at(t, x)
        lo, hi = np.maximum(a_lo, p_lo), np.minimum(a_hi, p_hi)
        if np.any(lo > hi):
            raise EmptyIntersection(f"agent and principal bands are disjoint at t={t}")
        return lo, hi

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x", "a_lo", "a_hi", "p_lo", "p_hi"])
            for i, t in enumerate(self.t_grid):
                for j, x in enumerate(self.x_grid):
                    w.writerow([repr(float(v)) for v in (t, x, self.a_lo[i, j], self.a_hi[i, j], self.p_lo[i, j], self.p_hi[i, j])])

    @classmethod
    def from_csv(cls, path) -> "MarkovAmbiguityField":
        """Read a long-format grid with columns t, x, a_lo, a_hi, p_lo, p_hi."""
        data = np.atleast_2d(np.loadtxt(path, delimiter=",", skiprows=1, dtype=float))
        if data.shape[1] != 6:
            raise ValueError(f"{path}: expected 6 columns, found {data.shape[1]}")
        ts, xs = np.unique(data[:, 0]), np.unique(data[:, 1])
        if len(data) != len(ts) * len(xs):
            raise ValueError(f"{path}: rows do not form a full (t, x) grid")
        ti = np.searchsorted(ts, data[:, 0])
        xi = np.searchsorted(xs, data[:, 1])
        arrays = []
        for col in range(2, 6):
            arr = np.empty((len(ts), len(xs)))
            arr[ti, xi] = data[:, col]
            arrays.append(arr)
        return cls(ts, xs, *arrays)


@dataclass(frozen=True)
class PdeGrid:
    n_t: int
    n_x: int
    x_min: float
    x_max: float
    horizon: float

    def __post_init__(self):
        if self.n_t < 1 or self.n_x < 5:
            raise ValueError("need n_t >= 1 and n_x >= 5")
        if not self.x_min < 0.0 < self.x_max:
            raise ValueError("x-range must straddle 0")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_t

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_x - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_x)

    def cfl_number(self, max_alpha: float, drift_bound: float) -> float:
        return self.dt * (max_alpha / self.dx**2 + drift_bound / self.dx)

    @classmethod
    def auto(
        cls,
        field: MarkovAmbiguityField,
        profile: RiskProfile,
        n_x: int = 801,
        x_min: float | None = None,
        x_max: float | None = None,
        cfl_safety: float = 0.9,
        cross_term: str = "gradient",
        z_bounds: tuple[float, float] = DEFAULT_Z_BOUNDS,
        min_n_t: int = 1,
    ) -> "PdeGrid":
        """Grid with the smallest CFL-valid step count for ``n_x`` nodes.

        The default x-range is six standard deviations of the widest
        diffusion over the horizon.
        """
        m = field.max_effective_alpha
        half = 6.0 * math.sqrt(m * profile.horizon)
        x_min = -half if x_min is None else x_min
        x_max = half if x_max is None else x_max
        dx = (x_max - x_min) / (n_x - 1)
        rate = m / dx**2 + drift_bound(profile, m, cross_term, z_bounds) / dx
        n_t = max(min_n_t, math.ceil(profile.horizon * rate / cfl_safety))
        return cls(n_t, n_x, x_min, x_max, profile.horizon)


def drift_bound(profile: RiskProfile, max_alpha: float, cross_term: str, z_bounds=DEFAULT_Z_BOUNDS) -> float:
    """Bound on the coefficient of the first derivative over the z search range."""
    b = profile.effort_cap
    if cross_term == "gradient":
        b += max_alpha * profile.r_principal * max(abs(z_bounds[0]), abs(z_bounds[1]))
    return b


@dataclass
class ValueSurface:
    """psi on stored time levels (rows) by x nodes (columns), with recorded policies."""

    t: np.ndarray
    x: np.ndarray
    psi: np.ndarray
    z_policy: np.ndarray
    alpha_policy: np.ndarray
    principal_value: float
    clamp_count: int
    grid: PdeGrid
    cross_term: str = "gradient"
    z_bounds: tuple[float, float] = DEFAULT_Z_BOUNDS
    p_scheme: str = "hybrid"
    runtime_s: float = dc_field(default=0.0, repr=False)

    def psi_at(self, x0: float = 0.0, level: int = 0) -> float:
        """Log-linear interpolation of psi at ``x0`` on a stored level."""
        return float(np.exp(np.interp(x0, self.x, np.log(self.psi[level]))))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x", "psi", "z_policy", "alpha_policy"])
            for i, t in enumerate(self.t):
                for j, x in enumerate(self.x):
                    w.writerow([f"{t:.10g}", f"{x:.10g}", f"{self.psi[i, j]:.17g}", f"{self.z_policy[i, j]:.17g}", f"{self.alpha_policy[i, j]:.17g}"])


def _check_cross(cross_term: str) -> bool:
    if cross_term not in CROSS_TERMS:
        raise ValueError(f"cross_term must be one of {CROSS_TERMS}")
    return cross_term == "gradient"


def g_map(t, x, v, p, q, z, gamma, alpha, field: MarkovAmbiguityField, profile: RiskProfile, cross_term: str = "gradient"):
    """Pointwise HJBI integrand. Returns :data:`INFEASIBLE` when alpha is outside D_P(t, x).

    ``cross_term="gradient"`` multiplies the alpha z R_P term by p; ``"value"``
    multiplies it by v.
    """
    grad = _check_cross(cross_term)
    a_lo, a_hi, p_lo, p_hi = (float(b) for b in field.bands_at(t, x))
    if not p_lo <= alpha <= p_hi:
        return INFEASIBLE
    return _g_values(z, gamma, alpha, v, p, q, a_lo, a_hi, profile, grad)


def _g_values(z, gamma, alpha, v, p, q, a_lo, a_hi, profile: RiskProfile, grad: bool):
    ra, rp, k = profile.r_agent, profile.r_principal, profile.cost_coeff
    z = np.asarray(z, dtype=float)
    a = np.clip(z / k, 0.0, profile.effort_cap)
    gamma_part = 0.5 * alpha * gamma - min(0.5 * a_lo * gamma, 0.5 * a_hi * gamma)
    out = (
        a * p
        + (0.5 * ra * alpha * z * z + 0.5 * k * a * a + gamma_part) * rp * v
        + 0.5 * alpha * q
        + 0.5 * alpha * z * z * rp * rp * v
        + alpha * z * rp * (p if grad else v)
    )
    return float(out) if out.ndim == 0 else out


def _g_scalar(z, alpha, v, p, q, profile: RiskProfile, grad: bool) -> float:
    # gamma = 0 specialisation of _g_values on plain floats
    ra, rp, k = profile.r_agent, profile.r_principal, profile.cost_coeff
    a = min(max(z / k, 0.0), profile.effort_cap)
    return (
        a * p
        + (0.5 * ra * alpha * z * z + 0.5 * k * a * a) * rp * v
        + 0.5 * alpha * q
        + 0.5 * alpha * z * z * rp * rp * v
        + alpha * z * rp * (p if grad else v)
    )


def _golden_min(fn, a: float, b: float, iters: int):
    x1 = b - _kernels.GOLDEN * (b - a)
    x2 = a + _kernels.GOLDEN * (b - a)
    f1, f2 = fn(x1), fn(x2)
    for _ in range(iters):
        if f1 > f2:
            a = x1
            x1, f1 = x2, f2
            x2 = a + _kernels.GOLDEN * (b - a)
            f2 = fn(x2)
        else:
            b = x2
            x2, f2 = x1, f1
            x1 = b - _kernels.GOLDEN * (b - a)
            f1 = fn(x1)
    return (f1, x1) if f1 <= f2 else (f2, x2)


@dataclass(frozen=True)
class SearchSpec:
    """Grid and refinement settings for the brute-force Hamiltonian."""

    z_min: float = DEFAULT_Z_BOUNDS[0]
    z_max: float = DEFAULT_Z_BOUNDS[1]
    n_z: int = 2001
    n_alpha: int = 21
    z_iters: int = 64
    alpha_iters: int = 56


def hamiltonian_generic(
    t,
    x,
    v,
    p,
    q,
    field: MarkovAmbiguityField,
    profile: RiskProfile,
    search: SearchSpec = SearchSpec(),
    cross_term: str = "gradient",
    allow_negative_z: bool = True,
):
    """sup over alpha, inf over z of G by grid search plus golden refinement.

    Serves as an oracle for :func:`hamiltonian_reduced`. Returns
    ``(value, z_arg, alpha_arg)``.
    """
    grad = _check_cross(cross_term)
    a_lo, a_hi, _, _ = (float(b) for b in field.bands_at(t, x))
    lo, hi = (float(b) for b in field.effective(t, x))
    v, p, q = float(v), float(p), float(q)
    z_min = search.z_min if allow_negative_z else max(search.z_min, 0.0)
    zs = np.linspace(z_min, search.z_max, search.n_z)

    def inner(alpha):
        vals = _g_values(zs, 0.0, alpha, v, p, q, a_lo, a_hi, profile, grad)
        # every local minimum of the grid gets a bracketed refinement
        left = np.r_[True, vals[1:] <= vals[:-1]]
        right = np.r_[vals[:-1] <= vals[1:], True]
        best = (math.inf, 0.0)
        for i in np.flatnonzero(left & right):
            lo_z, hi_z = zs[max(i - 1, 0)], zs[min(i + 1, len(zs) - 1)]
            cand = _golden_min(lambda zz: _g_scalar(zz, alpha, v, p, q, profile, grad), lo_z, hi_z, search.z_iters)
            cand = min(cand, (float(vals[i]), float(zs[i])))
            best = min(best, cand)
        return best

    if hi - lo <= 0.0:
        val, z = inner(lo)
        return float(val), float(z), lo
    alphas = np.linspace(lo, hi, search.n_alpha)
    results = [inner(a) for a in alphas]
    i = int(np.argmax([r[0] for r in results]))
    best = (results[i][0], results[i][1], float(alphas[i]))
    a_left, a_right = alphas[max(i - 1, 0)], alphas[min(i + 1, len(alphas) - 1)]
    neg, alpha = _golden_min(lambda a: -inner(a)[0], a_left, a_right, search.alpha_iters)
    if -neg > best[0]:
        val, z = inner(alpha)
        best = (val, z, float(alpha))
    return float(best[0]), float(best[1]), best[2]


def _z_limits(allow_negative_z: bool, z_bounds) -> tuple[float, float]:
    lo, hi = z_bounds
    return (max(lo, 0.0) if not allow_negative_z else lo), hi


def hamiltonian_reduced(
    t,
    x,
    v,
    p,
    q,
    field: MarkovAmbiguityField,
    profile: RiskProfile,
    cross_term: str = "gradient",
    allow_negative_z: bool = True,
    z_bounds: tuple[float, float] = DEFAULT_Z_BOUNDS,
):
    """Same quantity as :func:`hamiltonian_generic`, with the inner inf in closed form."""
    grad = _check_cross(cross_term)
    lo, hi = (float(b) for b in field.effective(t, x))
    zlo, zhi = _z_limits(allow_negative_z, z_bounds)
    pr = profile
    return _kernels.node_hamiltonian(v, p, q, lo, hi, pr.r_agent, pr.r_principal, pr.cost_coeff, pr.effort_cap, zlo, zhi, grad)


def _store_levels(n_t: int, max_slices: int) -> np.ndarray:
    stride = max(1, math.ceil(n_t / max_slices))
    levels = list(range(0, n_t + 1, stride))
    if levels[-1] != n_t:
        levels.append(n_t)
    return np.array(levels)


def solve_pde(
    field: MarkovAmbiguityField,
    profile: RiskProfile,
    grid: PdeGrid,
    cross_term: str = "gradient",
    allow_negative_z: bool = True,
    z_bounds: tuple[float, float] = DEFAULT_Z_BOUNDS,
    cfl_safety: float = 0.9,
    terminal=None,
    max_slices: int = 400,
    p_scheme: str = "hybrid",
) -> ValueSurface:
    """Explicit backward sweep from psi(T, x) = exp(-R_P x).

    ``terminal`` optionally replaces the terminal data (array over ``grid.x``
    or a callable of x). Stored slices are every ``ceil(n_t / max_slices)``
    levels plus both ends. ``p_scheme="upwind"`` forces one-sided first
    derivatives everywhere; ``"hybrid"`` centres them where monotone.
    """
    grad = _check_cross(cross_term)
    if p_scheme not in P_SCHEMES:
        raise ValueError(f"p_scheme must be one of {P_SCHEMES}")
    central = p_scheme == "hybrid"
    if abs(grid.horizon - profile.horizon) > 1e-12 * profile.horizon:
        raise ValueError(f"grid horizon {grid.horizon} differs from profile horizon {profile.horizon}")
    x = grid.x
    dt, dx = grid.dt, grid.dx
    for t_node in field.t_grid:
        field.effective(float(t_node), x)
    m = field.max_effective_alpha
    cfl = grid.cfl_number(m, drift_bound(profile, m, cross_term, z_bounds))
    if cfl > cfl_safety:
        raise CflViolation(f"dt*(M/dx^2 + D/dx) = {cfl:.4g} exceeds {cfl_safety}; increase n_t")

    rp = profile.r_principal
    if terminal is None:
        psi = np.exp(-rp * x)
    else:
        psi = np.array(terminal(x) if callable(terminal) else terminal, dtype=float)
        if psi.shape != x.shape or np.any(psi <= 0):
            raise NonPositiveValueSurface("terminal data must be positive on every node")
    zlo, zhi = _z_limits(allow_negative_z, z_bounds)
    args = (profile.r_agent, rp, profile.cost_coeff, profile.effort_cap, zlo, zhi, grad)
    _kernels.set_threads(worker_count())

    levels = _store_levels(grid.n_t, max_slices)
    slot = {int(lv): i for i, lv in enumerate(levels)}
    psi_s = np.empty((len(levels), len(x)))
    z_s = np.empty_like(psi_s)
    a_s = np.empty_like(psi_s)
    psi_s[-1] = psi

    homogeneous = field.is_time_homogeneous
    band = field.effective(grid.horizon, x) if homogeneous else None
    out = np.empty_like(psi)
    z_out = np.empty_like(psi)
    a_out = np.empty_like(psi)
    clamps = 0
    start = time.perf_counter()
    for n in range(grid.n_t - 1, -1, -1):
        lo, hi = band if homogeneous else field.effective((n + 1) * dt, x)
        clamps += _kernels.step(psi, dt, dx, lo, hi, *args, central, out, z_out, a_out)
        # z_out / a_out are the optimisers on level n + 1
        if n + 1 in slot:
            z_s[slot[n + 1]] = z_out
            a_s[slot[n + 1]] = a_out
        psi, out = out, psi
        if n in slot:
            psi_s[slot[n]] = psi
    if clamps > 1e-3 * grid.n_t * grid.n_x:
        raise NonPositiveValueSurface(f"{clamps} clamped nodes exceed 0.1% of the grid")

    lo, hi = band if homogeneous else field.effective(0.0, x)
    z0, a0 = _policy_slice(psi, lo, hi, dx, args, central)
    z_s[0], a_s[0] = z0, a0

    surface = ValueSurface(
        t=levels * dt,
        x=x,
        psi=psi_s,
        z_policy=z_s,
        alpha_policy=a_s,
        principal_value=0.0,
        clamp_count=clamps,
        grid=grid,
        cross_term=cross_term,
        z_bounds=(zlo, zhi),
        p_scheme=p_scheme,
        runtime_s=time.perf_counter() - start,
    )
    surface.principal_value = -math.exp(rp * profile.reservation_cert) * surface.psi_at(0.0, 0)
    return surface


def _policy_slice(psi, lo, hi, dx, args, central):
    """Optimisers on one slice, using the same differences as the sweep."""
    out, z, al = np.empty_like(psi), np.empty_like(psi), np.empty_like(psi)
    _kernels.step_np(psi, 0.0, dx, lo, hi, *args, central, out, z, al)
    return z, al


def extract_policy(surface: ValueSurface, field: MarkovAmbiguityField, profile: RiskProfile):
    """Recompute ``(z_policy, alpha_policy)`` on every stored slice from psi."""
    grad = surface.cross_term == "gradient"
    central = surface.p_scheme == "hybrid"
    zlo, zhi = surface.z_bounds
    args = (profile.r_agent, profile.r_principal, profile.cost_coeff, profile.effort_cap, zlo, zhi, grad)
    z_pol = np.empty_like(surface.psi)
    a_pol = np.empty_like(surface.psi)
    for i, t in enumerate(surface.t):
        lo, hi = field.effective(float(t), surface.x)
        z_pol[i], a_pol[i] = _policy_slice(surface.psi[i], lo, hi, surface.grid.dx, args, central)
    return z_pol, a_pol
