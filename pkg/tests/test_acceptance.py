"""Acceptance criteria 1-7, each reported as one PASS/FAIL line."""

import math
import statistics
import time

import numpy as np

from ambicon.analytic import (
    agent_utility,
    degenerate_fb_sequence,
    delta_star,
    f_eval,
    g_eval,
    h_eval,
    principal_utility,
    sb_degenerate_bound,
    solve_first_best,
    solve_second_best,
    worst_case_utilities_q,
    z_star_sb,
)
from ambicon.harness import McSpec, dominance_scan
from ambicon.hjbi import MarkovAmbiguityField, PdeGrid, SearchSpec, hamiltonian_generic, hamiltonian_reduced, solve_pde
from ambicon.model import AmbiguityBand, FbRegime, LinearQuadraticContract, RiskProfile
from ambicon.montecarlo import Direction, Scenario, estimate_utilities, gateaux_residual

from conftest import record_criterion

P = RiskProfile(1.0, 1.0, 1.0, 2.0, 1.0, -1.0)
A = AmbiguityBand(0.5, 1.5)
P_I, P_II = AmbiguityBand(0.5, 1.0), AmbiguityBand(0.5, 2.0)
V_I, V_II = -math.exp(-1 / 6), -math.exp(-0.03125)
SE = 3.5
MILLION = 10**6


def rel(a, b):
    return abs(a - b) / abs(b) if b else abs(a - b)


def test_criterion_1_second_best_principal_top():
    sol = solve_second_best(P, A, P_I)
    times = []
    for _ in range(50):
        t0 = time.perf_counter()
        solve_second_best(P, A, P_I)
        times.append(time.perf_counter() - t0)
    ms = 1000 * statistics.median(times)
    ok = (
        abs(sol.z_star - 2 / 3) <= 1e-12 * (2 / 3)
        and sol.gamma_star == 0.0
        and rel(sol.principal_value, V_I) <= 1e-12
        and ms < 1.0
    )
    record_criterion(1, ok, f"z*={sol.z_star:.15g} value={sol.principal_value:.15g} median {ms:.3f} ms")
    assert ok


def test_criterion_2_second_best_agent_top_and_identity():
    sol = solve_second_best(P, A, P_II)
    ok_sol = (
        abs(sol.z_star - 0.625) <= 1e-12 * 0.625
        and abs(sol.gamma_star + 0.53125) <= 1e-12 * 0.53125
        and rel(sol.principal_value, V_II) <= 1e-12
    )
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        alpha, z = rng.uniform(0.05, 3.0), rng.uniform(-1.0, 2.0)
        g = -P.r_agent * z * z - P.r_principal * (1 - z) ** 2
        worst = max(worst, abs(h_eval(A.hi, z, 0.0, A, P) - h_eval(alpha, z, g, A, P)))
    ok = ok_sol and worst <= 1e-12
    record_criterion(2, ok, f"value={sol.principal_value:.15g} gamma*={sol.gamma_star} identity max dev {worst:.1e}")
    assert ok


def test_criterion_3_pde_against_closed_forms():
    details, ok = [], True
    for name, bp, ref in (("i", P_I, V_I), ("ii", P_II, V_II)):
        field = MarkovAmbiguityField.constant(A, bp)
        errs = []
        for n_x in (401, 801):
            grid = PdeGrid.auto(field, P, n_x=n_x)
            t0 = time.perf_counter()
            surf = solve_pde(field, P, grid)
            secs = time.perf_counter() - t0
            errs.append(rel(surf.principal_value, ref))
            ok &= secs < 60.0 and grid.n_x >= 400 and grid.n_t >= 400
        ok &= errs[0] <= 0.01 and errs[1] < errs[0]
        details.append(f"{name}: err {errs[0]:.2e} -> {errs[1]:.2e}")
    record_criterion(3, ok, "; ".join(details))
    assert ok


def fb_closed_form(alpha_bar):
    ra, rp, T = P.r_agent, P.r_principal, P.horizon
    a = min(1 / P.cost_coeff, P.effort_cap)
    return -((-P.reservation) ** (-rp / ra)) * math.exp(rp * T * (P.cost(a) - a + 0.5 * alpha_bar * ra * rp / (ra + rp)))


def test_criterion_4_first_best_regimes():
    cases = [
        (FbRegime.BOUNDARY_PA, (1.0, 1.5), (0.5, 1.0), 1.0),
        (FbRegime.INTERIOR, (0.6, 1.5), (0.5, 1.0), 1.0),
        (FbRegime.BOUNDARY_TOPS, (0.7, 1.0), (0.5, 1.0), 1.0),
        (FbRegime.BOUNDARY_AP, (0.5, 0.8), (0.8, 1.2), 0.8),
        (FbRegime.INTERIOR_REV, (0.5, 0.8), (0.3, 1.0), 0.8),
    ]
    ok, worst_v, worst_p = True, 0.0, 0.0
    for regime, a, p, alpha_bar in cases:
        ba, bp = AmbiguityBand(*a), AmbiguityBand(*p)
        sol = solve_first_best(P, ba, bp)
        wc = worst_case_utilities_q(sol.representative_contract, sol.effort, ba, bp, P)
        worst_v = max(worst_v, rel(sol.principal_value, fb_closed_form(alpha_bar)))
        worst_p = max(worst_p, rel(wc.u_a, P.reservation))
        ok &= sol.regime is regime
    ok &= worst_v <= 1e-12 and worst_p <= 1e-9
    record_criterion(4, ok, f"value max rel {worst_v:.1e}, participation max rel {worst_p:.1e}")
    assert ok


def test_criterion_5_degeneracy():
    ba, bp = AmbiguityBand(1.0, 2.0), AmbiguityBand(0.2, 0.5)
    items = degenerate_fb_sequence(P, ba, bp, [1, 5, 100])
    ok = True
    notes = []
    for item in items:
        expected = -math.exp(0.25 - 0.25 * item.n)
        ok &= rel(item.principal_value, expected) <= 1e-12 and item.agent_value == P.reservation
        a = P.effort_cap
        u_p, _ = estimate_utilities(item.contract, Scenario(bp.hi, a, MILLION, seed=item.n), P)
        _, u_a = estimate_utilities(item.contract, Scenario(ba.lo, a, MILLION, seed=item.n), P)
        ok &= u_p.within(expected, SE) and u_a.within(P.reservation, SE)
        notes.append(f"n={item.n} {item.principal_value:.6g} (MC {(u_p.mean - expected) / u_p.std_error:+.2f} SE)")
    bounds = [sb_degenerate_bound(n, P, 1.0) for n in range(1, 101)]
    ok &= all(b > a for a, b in zip(bounds, bounds[1:])) and bounds[-1] < 0 and bounds[-1] > -1e-40
    record_criterion(5, ok, "; ".join(notes) + "; bound increasing to 0")
    assert ok


def test_criterion_6_gateaux_optimality():
    sol = solve_first_best(P, AmbiguityBand(0.7, 1.0), AmbiguityBand(0.5, 1.0))
    c = sol.contract_at(0.0)
    alpha, rho, a = sol.common_alpha, sol.rho, sol.effort
    tpl = Scenario(alpha, a, MILLION, seed=6)
    ok, notes = sol.regime is FbRegime.BOUNDARY_TOPS, []
    for d in (Direction.constant(), Direction.terminal_output()):
        r = gateaux_residual(c, d, a, alpha, alpha, rho, tpl, P)
        ok &= abs(r.mean) <= SE * r.std_error
        notes.append(f"{d.kind} {r.mean / r.std_error:+.2f} SE")
    shifted = c.shifted(ddelta=0.1)
    eps = 1e-6
    oracle = -(f_eval(a, shifted.shifted(ddelta=eps), alpha, alpha, rho, P).f - f_eval(a, shifted.shifted(ddelta=-eps), alpha, alpha, rho, P).f) / (2 * eps)
    r = gateaux_residual(shifted, Direction.constant(), a, alpha, alpha, rho, tpl, P)
    ok &= abs(r.mean) > 5 * r.std_error and np.sign(r.mean) == np.sign(oracle)
    notes.append(f"shift +0.1: {r.mean / r.std_error:+.1f} SE, oracle sign {'+' if oracle > 0 else '-'}")
    record_criterion(6, ok, "; ".join(notes))
    assert ok


def _random_profile(rng):
    return RiskProfile(*rng.uniform(0.3, 2.0, 2), rng.uniform(0.5, 2.0), 10.0, rng.uniform(0.5, 2.0), -rng.uniform(0.3, 2.0))


def test_criterion_7_property_suites():
    rng = np.random.default_rng(7)
    results = {}

    concave = fg = True
    for _ in range(300):
        p = _random_profile(rng)
        a, z, g = rng.uniform(0, 2), rng.uniform(-1, 2), rng.uniform(-1, 1)
        ap, aa, rho = rng.uniform(0.2, 2), rng.uniform(0.2, 2), rng.uniform(0.2, 3)
        d = rng.uniform(-2, 2)
        f = [f_eval(a, LinearQuadraticContract(z, g, d + s), ap, aa, rho, p).f for s in (-1e-2, 0, 1e-2)]
        concave &= f[0] - 2 * f[1] + f[2] < 0
        ds = delta_star(a, z, g, ap, aa, rho, p)
        fv = f_eval(a, LinearQuadraticContract(z, g, ds), ap, aa, rho, p).f
        fg &= abs(g_eval(a, z, g, ap, aa, rho, p) - fv) <= 1e-10 * max(1.0, abs(fv))
    results["delta-concavity"] = concave
    results["F/G identity"] = fg

    endpoint = True
    for _ in range(200):
        p = _random_profile(rng)
        ba = AmbiguityBand(lo := rng.uniform(0.1, 1), lo + rng.uniform(0.05, 1))
        bp = AmbiguityBand(lo2 := rng.uniform(0.1, 1), lo2 + rng.uniform(0.05, 1))
        c = LinearQuadraticContract(rng.uniform(-1, 2), rng.uniform(-2, 2), rng.uniform(-1, 1))
        a = rng.uniform(0, 2)
        wc = worst_case_utilities_q(c, a, ba, bp, p)
        endpoint &= abs(wc.u_p - min(principal_utility(a, c, x, p) for x in bp.grid(101))) <= 1e-12 * abs(wc.u_p)
        endpoint &= abs(wc.u_a - min(agent_utility(a, c, x, p) for x in ba.grid(101))) <= 1e-12 * abs(wc.u_a)
    results["endpoint argmin"] = endpoint

    invariant = True
    zs = np.linspace(-1, 2, 300001)
    for _ in range(30):
        p = _random_profile(rng)
        alpha = rng.uniform(0.05, 3)
        band = AmbiguityBand(0.1, 3.0)
        for g in (0.0, rng.uniform(-2, 2)):
            invariant &= abs(zs[np.argmax(h_eval(alpha, zs, g, band, p))] - z_star_sb(alpha, p)) <= 2e-5
    results["argmax invariance of z*"] = invariant

    ham = True
    worst = 0.0
    for _ in range(1000):
        lo = rng.uniform(0.1, 2)
        field = MarkovAmbiguityField.constant(
            AmbiguityBand(lo, lo + rng.uniform(0, 2)), AmbiguityBand(rng.uniform(0.05, lo), lo + rng.uniform(0, 2))
        )
        v = 10 ** rng.uniform(-3, 3)
        pp, q = rng.normal(0, 3) * v, rng.normal(0, 3) * v
        ref = hamiltonian_generic(0, 0, v, pp, q, field, P, SearchSpec())[0]
        got = hamiltonian_reduced(0, 0, v, pp, q, field, P)[0]
        worst = max(worst, abs(got - ref) / max(1.0, abs(ref)))
    ham = worst <= 1e-8
    results[f"Hamiltonian agreement ({worst:.1e})"] = ham

    c = LinearQuadraticContract(0.5, 0.1, 0.0)
    sc = Scenario(1.0, 1.0, 200_000, seed=3)
    results["MC determinism"] = estimate_utilities(c, sc, P) == estimate_utilities(c, sc, P)
    hits = 0
    for i in range(50):
        p = RiskProfile(*rng.uniform(0.3, 1.5, 2), rng.uniform(0.5, 2), 3.0, rng.uniform(0.5, 1.5), -rng.uniform(0.5, 2))
        cc = LinearQuadraticContract(rng.uniform(-0.5, 1.5), rng.uniform(-1, 1), rng.uniform(-0.5, 0.5))
        s = Scenario(rng.uniform(0.2, 1.5), rng.uniform(0, 2), 100_000, seed=100 + i)
        u_p, u_a = estimate_utilities(cc, s, p)
        hits += u_p.within(principal_utility(s.effort, cc, s.alpha, p), SE)
        hits += u_a.within(agent_utility(s.effort, cc, s.alpha, p), SE)
    results[f"MC oracle agreement ({hits}/100)"] = hits >= 96

    fb_scan = dominance_scan(P, AmbiguityBand(0.7, 1.0), AmbiguityBand(0.5, 1.0), 1000, seed=1)
    sb_scan = dominance_scan(P, A, P_I, 1000, seed=2, mc=McSpec(n_paths=20_000))
    results["dominance scans"] = fb_scan.passed and sb_scan.passed

    sb_le_fb = True
    for _ in range(300):
        p = _random_profile(rng)
        ba = AmbiguityBand(lo := rng.uniform(0.1, 1), lo + rng.uniform(0.05, 1))
        plo = rng.uniform(0.05, ba.hi - 0.01)
        bp = AmbiguityBand(plo, max(plo, ba.lo) + rng.uniform(0.01, 1.5))
        sb_le_fb &= solve_second_best(p, ba, bp).principal_value <= solve_first_best(p, ba, bp).principal_value
    results["SB <= FB"] = sb_le_fb

    vals = [solve_first_best(P, A, AmbiguityBand(0.3, hi)).principal_value for hi in np.linspace(A.lo, A.hi, 101)]
    results["FB monotone in principal top"] = all(b <= a for a, b in zip(vals, vals[1:]))

    ok = all(results.values())
    failed = [k for k, v in results.items() if not v]
    record_criterion(7, ok, f"{len(results)} suites" + (f"; failed: {failed}" if failed else "; all green"))
    assert ok, failed
