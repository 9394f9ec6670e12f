"""Monte Carlo estimation of exponential utilities under constant volatility.

Random numbers come from counter-based Philox streams: chunk ``c`` of stream
``s`` for seed ``seed`` always produces the same draws, so estimates do not
depend on how many worker threads process the chunks.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .analytic import EXP_CLAMP, agent_utility, principal_utility
from .model import AmbiguityBand, LinearQuadraticContract, RiskProfile, UnsupportedDirection

CHUNK = 1 << 16
DEFAULT_EULER_STEPS = 256


def worker_count() -> int:
    """Worker threads for chunked sampling, capped by ``AMBICON_THREADS``."""
    n = os.cpu_count() or 1
    cap = os.environ.get("AMBICON_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return n


@dataclass(frozen=True)
class Scenario:
    alpha: float
    effort: float
    n_paths: int
    seed: int = 0
    antithetic: bool = True
    # Euler mode: piecewise-constant variance path sampled on this many steps.
    euler_steps: int | None = None
    alpha_path: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha={self.alpha} must be > 0")
        if self.effort < 0:
            raise ValueError(f"effort={self.effort} must be >= 0")
        if self.n_paths < 1:
            raise ValueError("n_paths must be positive")

    def with_alpha(self, alpha: float) -> "Scenario":
        return Scenario(alpha, self.effort, self.n_paths, self.seed, self.antithetic, self.euler_steps, self.alpha_path)

    def with_effort(self, effort: float) -> "Scenario":
        return Scenario(self.alpha, effort, self.n_paths, self.seed, self.antithetic, self.euler_steps, self.alpha_path)


class TerminalSample(NamedTuple):
    b_t: float
    qv_t: float
    effort_integral: float
    cost_integral: float


@dataclass(frozen=True)
class TerminalSamples:
    """Column-oriented batch of terminal samples."""

    b_t: np.ndarray
    qv_t: np.ndarray
    effort_integral: float
    cost_integral: float

    def __len__(self) -> int:
        return len(self.b_t)

    def __getitem__(self, i: int) -> TerminalSample:
        return TerminalSample(float(self.b_t[i]), float(self.qv_t[i]), self.effort_integral, self.cost_integral)


@dataclass(frozen=True)
class UtilityEstimate:
    mean: float
    std_error: float
    n: int

    def within(self, ref: float, se_mult: float, slack: float = 1e-12) -> bool:
        return abs(self.mean - ref) <= se_mult * self.std_error + slack * abs(ref)


def _summarise(samples: np.ndarray) -> UtilityEstimate:
    n = len(samples)
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return UtilityEstimate(mean, se, n)


def _chunk_normals(seed: int, stream: int, chunk: int, shape) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(key=int(seed), counter=[0, 0, chunk, stream]))
    return gen.standard_normal(shape)


def _normals(seed: int, stream: int, n: int, weights: np.ndarray | None = None) -> np.ndarray:
    """``n`` standard normals, or ``n`` weighted sums of ``len(weights)`` normals.

    Rows are assigned to fixed chunks of CHUNK, one Philox counter per chunk.
    """
    n_chunks = -(-n // CHUNK)

    def job(c):
        rows = min(CHUNK, n - c * CHUNK)
        if weights is None:
            return _chunk_normals(seed, stream, c, rows)
        return _chunk_normals(seed, stream, c, (rows, len(weights))) @ weights

    workers = min(worker_count(), n_chunks)
    if workers <= 1:
        parts = [job(c) for c in range(n_chunks)]
    else:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(job, range(n_chunks)))
    return np.concatenate(parts)


def _alpha_steps(scenario: Scenario) -> np.ndarray:
    steps = scenario.euler_steps or DEFAULT_EULER_STEPS
    if scenario.alpha_path is None:
        return np.full(steps, scenario.alpha)
    path = np.asarray(scenario.alpha_path, dtype=float)
    # piecewise constant on equal sub-intervals
    return path[np.minimum((np.arange(steps) * len(path)) // steps, len(path) - 1)]


def _draws(scenario: Scenario, profile: RiskProfile, stream: int, n: int):
    """Terminal (B_T, <B>_T) for ``n`` draws, plus their antithetic mirrors if enabled."""
    T, a = profile.horizon, scenario.effort
    if scenario.euler_steps is None and scenario.alpha_path is None:
        g = _normals(scenario.seed, stream, n)
        scale = math.sqrt(scenario.alpha * T)
        qv = np.full(n, scenario.alpha * T)
        plus = a * T + scale * g
        minus = a * T - scale * g if scenario.antithetic else None
        return plus, minus, qv
    alphas = _alpha_steps(scenario)
    dt = T / len(alphas)
    diffusion = _normals(scenario.seed, stream, n, np.sqrt(alphas * dt))
    drift = a * T
    qv = np.full(n, float(np.sum(alphas) * dt))
    return drift + diffusion, (drift - diffusion if scenario.antithetic else None), qv


def sample_terminal(scenario: Scenario, profile: RiskProfile, stream: int = 0) -> TerminalSamples:
    """Exact sample of (B_T, <B>_T) under constant effort and variance.

    With antithetic sampling the batch holds the draws followed by their
    mirror images, truncated to ``n_paths``.
    """
    n = scenario.n_paths
    n_draw = -(-n // 2) if scenario.antithetic else n
    plus, minus, qv = _draws(scenario, profile, stream, n_draw)
    b = plus if minus is None else np.concatenate([plus, minus])[:n]
    qv = np.full(n, qv[0]) if len(qv) else qv
    T = profile.horizon
    return TerminalSamples(b[:n], qv, scenario.effort * T, T * profile.cost(scenario.effort))


def _exp(x):
    return np.exp(np.clip(x, -EXP_CLAMP, EXP_CLAMP))


def _retained(contract, b, qv):
    if hasattr(contract, "retained"):
        return contract.retained(b, qv)
    return b - contract.payoff(b, qv)


def _pair_mean(fn, plus, minus, qv):
    out = fn(plus, qv)
    if minus is not None:
        out = 0.5 * (out + fn(minus, qv))
    return out


def estimate_utilities(contract, scenario: Scenario, profile: RiskProfile, stream: int = 0):
    """Sample means of the principal's and the agent's utility.

    ``contract`` is anything with ``payoff(b_t, qv_t)``. Returns ``(u_p, u_a)``.
    With antithetic sampling each reported sample is a mirrored pair average,
    so ``n`` counts pairs.
    """
    plus, minus, qv = _draws(scenario, profile, stream, scenario.n_paths)
    rp, ra = profile.r_principal, profile.r_agent
    cost = profile.horizon * profile.cost(scenario.effort)
    u_p = _pair_mean(lambda b, s: -_exp(-rp * _retained(contract, b, s)), plus, minus, qv)
    u_a = _pair_mean(lambda b, s: -_exp(-ra * (contract.payoff(b, s) - cost)), plus, minus, qv)
    return _summarise(u_p), _summarise(u_a)


@dataclass(frozen=True)
class ScanResult:
    alpha_worst: float
    value: UtilityEstimate
    alphas: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def __iter__(self):
        return iter((self.alpha_worst, self.value))


def worst_case_scan(
    contract,
    effort: float,
    band: AmbiguityBand,
    side: str,
    grid_n: int,
    profile: RiskProfile,
    template: Scenario | None = None,
) -> ScanResult:
    """Minimise one party's fixed-volatility utility over a uniform band grid.

    Contracts in Q are evaluated in closed form; anything else goes through
    Monte Carlo with common random numbers across grid points.
    """
    if grid_n < 2:
        raise ValueError("grid_n must be >= 2")
    if side not in ("principal", "agent"):
        raise ValueError(f"side must be 'principal' or 'agent', got {side!r}")
    alphas = band.grid(grid_n)
    if isinstance(contract, LinearQuadraticContract):
        fn = principal_utility if side == "principal" else agent_utility
        values = np.array([fn(effort, contract, a, profile) for a in alphas])
        i = int(np.argmin(values))
        return ScanResult(float(alphas[i]), UtilityEstimate(float(values[i]), 0.0, 1), alphas, values)
    if template is None:
        raise ValueError("a scenario template is required for contracts outside Q")
    ests = []
    for a in alphas:
        u_p, u_a = estimate_utilities(contract, template.with_alpha(a).with_effort(effort), profile)
        ests.append(u_p if side == "principal" else u_a)
    values = np.array([e.mean for e in ests])
    i = int(np.argmin(values))
    return ScanResult(float(alphas[i]), ests[i], alphas, values)


@dataclass(frozen=True)
class Direction:
    """Perturbation h = z B_T + (gamma/2) <B>_T + delta of a contract."""

    z: float = 0.0
    gamma: float = 0.0
    delta: float = 0.0
    kind: str = "custom"

    @classmethod
    def constant(cls, c: float = 1.0) -> "Direction":
        return cls(0.0, 0.0, float(c), "constant")

    @classmethod
    def terminal_output(cls) -> "Direction":
        return cls(1.0, 0.0, 0.0, "terminal_output")

    @classmethod
    def custom(cls, z: float, gamma: float, delta: float) -> "Direction":
        return cls(float(z), float(gamma), float(delta), "custom")

    def __call__(self, b, qv):
        return self.z * b + 0.5 * self.gamma * qv + self.delta

    def is_zero(self) -> bool:
        return self.z == 0.0 and self.gamma == 0.0 and self.delta == 0.0


def gateaux_residual(
    contract,
    direction: Direction,
    effort: float,
    alpha_p: float,
    alpha_a: float,
    rho: float,
    template: Scenario,
    profile: RiskProfile,
) -> UtilityEstimate:
    """Estimate of the directional derivative of the risk-sharing Lagrangian.

    The principal term is sampled at variance ``alpha_p`` and the agent term
    at ``alpha_a`` from independent streams. For ``h = 1`` the result equals
    minus the delta-derivative of ``Gamma_P + rho * Gamma_A``.
    """
    if not isinstance(direction, Direction):
        raise UnsupportedDirection(f"direction of type {type(direction).__name__} is not linear-quadratic")
    if not all(math.isfinite(c) for c in (direction.z, direction.gamma, direction.delta)):
        raise UnsupportedDirection("direction coefficients must be finite")
    n = template.n_paths
    if direction.is_zero():
        return UtilityEstimate(0.0, 0.0, n)
    rp, ra = profile.r_principal, profile.r_agent
    cost = profile.horizon * profile.cost(effort)
    pp, pm, pq = _draws(template.with_alpha(alpha_p).with_effort(effort), profile, 0, n)
    ap, am, aq = _draws(template.with_alpha(alpha_a).with_effort(effort), profile, 1, n)

    def principal(b, qv):
        return rp * direction(b, qv) * _exp(-rp * _retained(contract, b, qv))

    def agent(b, qv):
        return rho * ra * direction(b, qv) * _exp(-ra * (contract.payoff(b, qv) - cost))

    return _summarise(_pair_mean(principal, pp, pm, pq) - _pair_mean(agent, ap, am, aq))

