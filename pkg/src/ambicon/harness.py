"""Cross-checks between closed forms, the PDE solver and Monte Carlo.

All tolerances live in :class:`HarnessConfig` so that every comparison made
by an acceptance run can be audited in one place.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import analytic
from .hjbi import MarkovAmbiguityField, PdeGrid, solve_pde
from .model import (
    ANY,
    AmbiguityBand,
    EmptyIntersection,
    FbRegime,
    LinearQuadraticContract,
    RiskProfile,
    SbRegime,
    classify_fb,
)
from .montecarlo import Direction, Scenario, estimate_utilities, gateaux_residual, worker_count, worst_case_scan


@dataclass(frozen=True)
class HarnessConfig:
    pde_rel: float = 0.01
    se_mult: float = 3.5
    closed_form_rel: float = 1e-12
    participation_rel: float = 1e-9
    degenerate_floor: float = -1e-6
    pde_n_x: int = 401
    degenerate_sb_n: int = 20
    degenerate_fb_n: tuple[int, ...] = (1, 5, 100)
    perturbation_radius: float = 0.2
    # identical values up to rounding are ties, not violations
    tie_rel: float = 1e-12


@dataclass(frozen=True)
class McSpec:
    n_paths: int = 200_000
    seed: int = 0
    grid_n: int = 11


@dataclass
class Check:
    metric: str
    value: float
    tolerance: float
    passed: bool


@dataclass
class CrossCheckReport:
    case_id: str
    closed_form: float
    pde_value: float | None = None
    mc_value: tuple[float, float] | None = None
    rel_errors: dict[str, float] = field(default_factory=dict)
    checks: list[Check] = field(default_factory=list)
    runtime_ms: int = 0
    regime: str = ""
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, metric: str, value: float, tolerance: float, passed: bool) -> None:
        self.checks.append(Check(metric, float(value), float(tolerance), bool(passed)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["checks"] = [{"metric": c.metric, "value": c.value, "tolerance": c.tolerance, "pass": c.passed} for c in self.checks]
        d["pass"] = self.passed
        return d


def _rel(a: float, b: float) -> float:
    return abs(a - b) / abs(b) if b != 0 else abs(a - b)


def _mc_check(report: CrossCheckReport, name: str, est, ref: float, cfg: HarnessConfig) -> None:
    dev = abs(est.mean - ref)
    tol = cfg.se_mult * est.std_error + cfg.tie_rel * abs(ref)
    report.check(name, dev, tol, dev <= tol)


def _scenario(mc: McSpec, alpha: float, effort: float) -> Scenario:
    return Scenario(alpha=alpha, effort=effort, n_paths=mc.n_paths, seed=mc.seed)


# ---------------------------------------------------------------------------
# second best
# ---------------------------------------------------------------------------


def crosscheck_second_best(
    profile: RiskProfile,
    band_a: AmbiguityBand,
    band_p: AmbiguityBand,
    grid: PdeGrid | None = None,
    mc: McSpec = McSpec(),
    config: HarnessConfig = HarnessConfig(),
    case_id: str = "second-best",
) -> CrossCheckReport:
    """Closed form vs PDE (relative tolerance) vs Monte Carlo at the worst variance."""
    start = time.perf_counter()
    sol = analytic.solve_second_best(profile, band_a, band_p)
    report = CrossCheckReport(case_id, sol.principal_value, regime=sol.regime.value)

    if sol.regime is SbRegime.DEGENERATE:
        try:
            solve_pde(MarkovAmbiguityField.constant(band_a, band_p), profile, grid or _tiny_grid(profile))
        except EmptyIntersection:
            report.notes.append("pde skipped: EmptyIntersection")
        n = config.degenerate_sb_n
        contract = analytic.sb_degenerate_contract(n, profile, band_a)
        # the payment ignores output, so the agent exerts no effort
        scan = worst_case_scan(contract, 0.0, band_p, "principal", mc.grid_n, profile, _scenario(mc, band_p.hi, 0.0))
        est = scan.value
        report.mc_value = (est.mean, est.std_error)
        report.check("mc_degenerate_above_floor", est.mean, config.degenerate_floor, est.mean > config.degenerate_floor)
        bound = analytic.sb_degenerate_bound(n, profile, band_p.hi)
        report.check("mc_above_bound", bound - est.mean, config.se_mult * est.std_error, est.mean >= bound - config.se_mult * est.std_error)
        _, u_a = estimate_utilities(contract, _scenario(mc, band_a.lo, 0.0), profile)
        report.check(
            "participation_rel",
            _rel(u_a.mean, profile.reservation),
            config.participation_rel,
            _rel(u_a.mean, profile.reservation) <= config.participation_rel,
        )
        report.runtime_ms = int(1000 * (time.perf_counter() - start))
        return report

    field_ = MarkovAmbiguityField.constant(band_a, band_p)
    grid = grid or PdeGrid.auto(field_, profile, n_x=config.pde_n_x)
    surface = solve_pde(field_, profile, grid)
    report.pde_value = surface.principal_value
    err = _rel(surface.principal_value, sol.principal_value)
    report.rel_errors["pde"] = err
    report.check("pde_rel_error", err, config.pde_rel, err <= config.pde_rel)

    u_p, _ = estimate_utilities(sol.contract, _scenario(mc, sol.worst_alpha, sol.effort), profile)
    report.mc_value = (u_p.mean, u_p.std_error)
    report.rel_errors["mc"] = _rel(u_p.mean, sol.principal_value)
    _mc_check(report, "mc_abs_error", u_p, sol.principal_value, config)

    scan = worst_case_scan(sol.contract, sol.effort, band_a, "agent", mc.grid_n, profile)
    part = _rel(scan.value.mean, profile.reservation)
    report.check("participation_rel", part, config.participation_rel, part <= config.participation_rel)
    report.runtime_ms = int(1000 * (time.perf_counter() - start))
    return report


def _tiny_grid(profile: RiskProfile) -> PdeGrid:
    return PdeGrid(1, 5, -1.0, 1.0, profile.horizon)


# ---------------------------------------------------------------------------
# first best
# ---------------------------------------------------------------------------


def crosscheck_first_best(
    profile: RiskProfile,
    band_a: AmbiguityBand,
    band_p: AmbiguityBand,
    mc: McSpec = McSpec(),
    config: HarnessConfig = HarnessConfig(),
    case_id: str = "first-best",
) -> CrossCheckReport:
    start = time.perf_counter()
    regime = classify_fb(band_a, band_p)
    if regime.degenerate:
        report = _crosscheck_fb_degenerate(profile, band_a, band_p, regime, mc, config, case_id)
    else:
        report = _crosscheck_fb_regular(profile, band_a, band_p, mc, config, case_id)
    report.runtime_ms = int(1000 * (time.perf_counter() - start))
    return report


def _crosscheck_fb_regular(profile, band_a, band_p, mc, config, case_id) -> CrossCheckReport:
    sol = analytic.solve_first_best(profile, band_a, band_p)
    c = sol.representative_contract
    report = CrossCheckReport(case_id, sol.principal_value, regime=sol.regime.value)
    wc = analytic.worst_case_utilities_q(c, sol.effort, band_a, band_p, profile)
    err = _rel(wc.u_p, sol.principal_value)
    report.rel_errors["closed_form"] = err
    report.check("closed_form_rel", err, config.closed_form_rel, err <= config.closed_form_rel)
    part = _rel(wc.u_a, profile.reservation)
    report.check("participation_rel", part, config.participation_rel, part <= config.participation_rel)

    alpha_p = sol.common_alpha if wc.alpha_p_worst == ANY else wc.alpha_p_worst
    u_p, _ = estimate_utilities(c, _scenario(mc, alpha_p, sol.effort), profile)
    report.mc_value = (u_p.mean, u_p.std_error)
    report.rel_errors["mc"] = _rel(u_p.mean, sol.principal_value)
    _mc_check(report, "mc_abs_error", u_p, sol.principal_value, config)

    template = _scenario(mc, sol.common_alpha, sol.effort)
    for direction in (Direction.constant(1.0), Direction.terminal_output()):
        res = gateaux_residual(c, direction, sol.effort, sol.common_alpha, sol.common_alpha, sol.rho, template, profile)
        tol = config.se_mult * res.std_error
        report.check(f"gateaux_{direction.kind}", abs(res.mean), tol, abs(res.mean) <= tol)
    return report


def _crosscheck_fb_degenerate(profile, band_a, band_p, regime, mc, config, case_id) -> CrossCheckReport:
    items = analytic.degenerate_fb_sequence(profile, band_a, band_p, config.degenerate_fb_n)
    report = CrossCheckReport(case_id, 0.0, regime=regime.value)
    values = [it.principal_value for it in items]
    report.check("sequence_increasing", float(np.min(np.diff(values))) if len(values) > 1 else 0.0, 0.0, all(np.diff(values) > 0))
    for it in items:
        if regime is FbRegime.DEGENERATE_LOW:
            ref = analytic.degenerate_fb_value_low(it.n, profile, band_a, band_p)
            err = _rel(it.principal_value, ref)
            report.check(f"value_n{it.n}_rel", err, config.closed_form_rel, err <= config.closed_form_rel)
        err = _rel(it.agent_value, profile.reservation)
        report.check(f"agent_n{it.n}_rel", err, config.closed_form_rel, err <= config.closed_form_rel)

    a = profile.effort_cap
    it = items[0]
    wc = analytic.worst_case_utilities_q(it.contract, a, band_a, band_p, profile)
    alpha_p = band_p.hi if wc.alpha_p_worst == ANY else wc.alpha_p_worst
    u_p, _ = estimate_utilities(it.contract, _scenario(mc, alpha_p, a), profile)
    report.mc_value = (u_p.mean, u_p.std_error)
    _mc_check(report, f"mc_principal_n{it.n}", u_p, it.principal_value, config)
    # the agent's utility is minimal, and equal to R, at the predicted endpoint
    worst_a = wc.alpha_a_worst
    for alpha in band_a.grid(mc.grid_n):
        _, u_a = estimate_utilities(it.contract, _scenario(mc, alpha, a), profile)
        if alpha == worst_a:
            _mc_check(report, f"mc_agent_at_{alpha:.6g}", u_a, profile.reservation, config)
        else:
            gap = profile.reservation - u_a.mean
            tol = config.se_mult * u_a.std_error
            report.check(f"mc_agent_above_R_at_{alpha:.6g}", gap, tol, gap <= tol)
    return report


# ---------------------------------------------------------------------------
# dominance
# ---------------------------------------------------------------------------


def fb_objective(contract: LinearQuadraticContract, effort: float, band_a, band_p, rho: float, profile: RiskProfile) -> float:
    """Worst-case principal utility plus rho times worst-case agent utility."""
    wc = analytic.worst_case_utilities_q(contract, effort, band_a, band_p, profile)
    return wc.u_p + rho * wc.u_a


def dominance_scan(
    profile: RiskProfile,
    band_a: AmbiguityBand,
    band_p: AmbiguityBand,
    n_perturbations: int,
    seed: int,
    mc: McSpec = McSpec(n_paths=20_000),
    config: HarnessConfig = HarnessConfig(),
    radius: float | None = None,
    case_id: str = "dominance",
) -> CrossCheckReport:
    """Random perturbations of the optimal contracts never do better.

    First best: the Lagrangian objective with calibrated rho, evaluated exactly.
    Second best: Monte Carlo value of perturbed (z, gamma) contracts that keep
    Y_0 = R_0, at their own worst variance in the band intersection.
    """
    start = time.perf_counter()
    radius = config.perturbation_radius if radius is None else radius
    rng = np.random.default_rng(seed)
    fb = analytic.solve_first_best(profile, band_a, band_p)
    report = CrossCheckReport(case_id, fb.principal_value, regime=fb.regime.value)

    c0 = fb.representative_contract
    best = fb_objective(c0, fb.effort, band_a, band_p, fb.rho, profile)
    shifts = rng.uniform(-radius, radius, size=(n_perturbations, 3))
    excess = []
    for dz, dg, dd in shifts:
        obj = fb_objective(c0.shifted(dz, dg, dd), fb.effort, band_a, band_p, fb.rho, profile)
        excess.append(obj - best)
    excess = np.array(excess)
    fb_bad = int(np.count_nonzero(excess > config.tie_rel * abs(best)))
    report.rel_errors["fb_max_excess"] = float(excess.max(initial=-math.inf))
    report.check("fb_violations", fb_bad, 0, fb_bad == 0)

    sb = analytic.solve_second_best(profile, band_a, band_p)
    if sb.regime is not SbRegime.DEGENERATE:
        sb_shifts = rng.uniform(-radius, radius, size=(n_perturbations, 2))
        sb_bad = 0
        worst_z = -math.inf
        for i, (dz, dg) in enumerate(sb_shifts):
            z, g = sb.z_star + dz, sb.gamma_star + dg
            contract = analytic.sb_contract_q(z, g, band_a, profile)
            _, alpha = analytic.sb_contract_value(z, g, band_a, band_p, profile)
            effort = analytic.agent_best_response(z, profile)
            scen = Scenario(alpha, effort, mc.n_paths, seed=mc.seed + i + 1)
            u_p, _ = estimate_utilities(contract, scen, profile)
            score = (u_p.mean - sb.principal_value) / u_p.std_error if u_p.std_error > 0 else 0.0
            worst_z = max(worst_z, score)
            if u_p.mean > sb.principal_value + config.se_mult * u_p.std_error + config.tie_rel * abs(sb.principal_value):
                sb_bad += 1
        report.rel_errors["sb_max_excess_se"] = float(worst_z)
        report.check("sb_violations", sb_bad, 0, sb_bad == 0)
    report.runtime_ms = int(1000 * (time.perf_counter() - start))
    return report


# ---------------------------------------------------------------------------
# suite
# ---------------------------------------------------------------------------

STANDARD_PROFILE = RiskProfile(1.0, 1.0, 1.0, 2.0, 1.0, -1.0)

FB_CASES = {
    "fb-degenerate-low": ((1.0, 2.0), (0.2, 0.5)),
    "fb-degenerate-high": ((0.2, 0.5), (1.0, 2.0)),
    "fb-boundary-pa": ((1.0, 1.5), (0.5, 1.0)),
    "fb-interior": ((0.6, 1.5), (0.5, 1.0)),
    "fb-boundary-tops": ((0.7, 1.0), (0.5, 1.0)),
    "fb-boundary-ap": ((0.5, 0.8), (0.8, 1.2)),
    "fb-interior-rev": ((0.5, 0.8), (0.3, 1.0)),
}

SB_CASES = {
    "sb-principal-top": ((0.5, 1.5), (0.5, 1.0)),
    "sb-agent-top": ((0.5, 1.5), (0.5, 2.0)),
    "sb-degenerate": ((1.0, 2.0), (0.2, 0.5)),
}


def run_standard_cases(
    profile: RiskProfile = STANDARD_PROFILE, mc: McSpec = McSpec(), config: HarnessConfig = HarnessConfig()
) -> list[CrossCheckReport]:
    """Every first-best and second-best regime at least once; cases run concurrently."""
    jobs = []
    for cid, (a, p) in FB_CASES.items():
        jobs.append((crosscheck_first_best, profile, AmbiguityBand(*a), AmbiguityBand(*p), cid))
    for cid, (a, p) in SB_CASES.items():
        jobs.append((crosscheck_second_best, profile, AmbiguityBand(*a), AmbiguityBand(*p), cid))

    def run(job):
        fn, pr, ba, bp, cid = job
        return fn(pr, ba, bp, mc=mc, config=config, case_id=cid)

    with ThreadPoolExecutor(max(1, min(worker_count(), len(jobs)))) as pool:
        return list(pool.map(run, jobs))


def covered_regimes(reports: list[CrossCheckReport]) -> tuple[set[str], set[str]]:
    fb = {r.regime for r in reports if r.regime in {x.value for x in FbRegime}}
    sb = {r.regime for r in reports if r.regime in {x.value for x in SbRegime}}
    return fb, sb


def write_reports(reports: list[CrossCheckReport], json_path, csv_path, include_runtime: bool = True) -> None:
    """JSON array of full reports and a flat CSV of (case_id, metric, value, tolerance, pass)."""
    payload = []
    for r in reports:
        d = r.to_dict()
        if not include_runtime:
            d.pop("runtime_ms")
        payload.append(d)
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", "regime", "metric", "value", "tolerance", "pass"])
        for r in reports:
            w.writerow([r.case_id, r.regime, "closed_form", repr(r.closed_form), "", ""])
            for c in r.checks:
                w.writerow([r.case_id, r.regime, c.metric, repr(c.value), repr(c.tolerance), str(c.passed).lower()])


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")

