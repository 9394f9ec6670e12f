"""Batch command-line front end.

    ambicon <command> --config run.json [--out DIR] [--seed N] [--quiet]

Exit codes: 0 success, 2 configuration error, 3 solver error, 4 failed check.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, _kernels, analytic, harness
from .hjbi import MarkovAmbiguityField, PdeGrid, solve_pde
from .model import AmbiconError, AmbiguityBand, ModelError, RiskProfile, SbRegime, validate, validate_profile
from .montecarlo import Direction, Scenario, estimate_utilities, gateaux_residual

COMMANDS = ("first-best", "second-best", "pde", "simulate", "gateaux-check", "crosscheck", "sweep")
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4

PROFILE_KEYS = ("r_agent", "r_principal", "cost_coeff", "effort_cap", "horizon", "reservation")
DEFAULTS = {
    "mc": {"n_paths": 200_000, "seed": 0, "grid_n": 11},
    "pde": {"n_t": None, "n_x": 401, "x_min": None, "x_max": None, "cross_term": "gradient", "p_scheme": "hybrid"},
    "output_dir": "out",
    "tolerance": 0.0,
}


class ConfigError(ModelError):
    """Malformed or incomplete run configuration."""


class CheckFailed(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number, got {value!r}")
    return float(value)


def load_config(raw: dict, base_dir: Path | None = None) -> dict:
    """Fill defaults and check the shape of a run configuration."""
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object")
    cfg = _merge(DEFAULTS, raw)
    prof = cfg.get("profile")
    if not isinstance(prof, dict):
        raise ConfigError("missing object 'profile'")
    for key in PROFILE_KEYS:
        if key not in prof:
            raise ConfigError(f"missing profile.{key}")
        _number(prof[key], f"profile.{key}")
    unknown = set(prof) - set(PROFILE_KEYS)
    if unknown:
        raise ConfigError(f"unknown profile keys {sorted(unknown)}")
    if "bands" not in cfg and "field" not in cfg:
        raise ConfigError("one of 'bands' or 'field' is required")
    if "bands" in cfg:
        bands = cfg["bands"]
        for side in ("agent", "principal"):
            pair = bands.get(side) if isinstance(bands, dict) else None
            if not (isinstance(pair, list) and len(pair) == 2):
                raise ConfigError(f"bands.{side} must be a [lo, hi] pair")
            for i, v in enumerate(pair):
                _number(v, f"bands.{side}[{i}]")
    if "field" in cfg and not isinstance(cfg["field"], str):
        raise ConfigError("field must be a path to a CSV grid")
    for key in ("n_paths", "seed", "grid_n"):
        v = cfg["mc"].get(key)
        if isinstance(v, bool) or not isinstance(v, int) or v < 0:
            raise ConfigError(f"mc.{key} must be a non-negative integer")
    if cfg["mc"]["n_paths"] < 2 or cfg["mc"]["grid_n"] < 2:
        raise ConfigError("mc.n_paths and mc.grid_n must be >= 2")
    if cfg["pde"]["cross_term"] not in ("gradient", "value"):
        raise ConfigError("pde.cross_term must be 'gradient' or 'value'")
    if cfg["pde"]["p_scheme"] not in ("hybrid", "upwind"):
        raise ConfigError("pde.p_scheme must be 'hybrid' or 'upwind'")
    _number(cfg["tolerance"], "tolerance")
    if base_dir is not None:
        cfg["_base_dir"] = str(base_dir)
    return cfg


def build_model(cfg: dict):
    profile = RiskProfile(**{k: float(cfg["profile"][k]) for k in PROFILE_KEYS})
    if "bands" not in cfg:
        raise ConfigError("this command needs constant 'bands'")
    band_a = AmbiguityBand(*map(float, cfg["bands"]["agent"]))
    band_p = AmbiguityBand(*map(float, cfg["bands"]["principal"]))
    return validate(profile, band_a, band_p, float(cfg["tolerance"]))


def _profile_only(cfg: dict) -> RiskProfile:
    return validate_profile(RiskProfile(**{k: float(cfg["profile"][k]) for k in PROFILE_KEYS}))


def _mc_spec(cfg: dict) -> harness.McSpec:
    mc = cfg["mc"]
    return harness.McSpec(int(mc["n_paths"]), int(mc["seed"]), int(mc["grid_n"]))


def _public(cfg: dict) -> dict:
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, float):
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        if math.isnan(obj):
            return "nan"
        return obj
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "item"):
        return _jsonable(obj.item())
    if hasattr(obj, "value") and not isinstance(obj, (int, str)):
        return obj.value
    return obj


def _write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return str(v).lower()
    return v


def _contract_dict(c) -> dict | None:
    if c is None:
        return None
    return {"z": c.z, "gamma": c.gamma, "delta": c.delta}


# ---------------------------------------------------------------------------
# commands; each returns (solution, report rows, summary line)
# ---------------------------------------------------------------------------


def cmd_first_best(cfg, out: Path):
    model = build_model(cfg)
    if model.fb_regime.degenerate:
        n_list = cfg.get("degenerate", {}).get("n", [1, 5, 100])
        items = analytic.degenerate_fb_sequence(model.profile, model.band_a, model.band_p, n_list)
        sol = {
            "regime": model.fb_regime.value,
            "principal_value": 0.0,
            "effort": model.profile.effort_cap,
            "sequence": [
                {"n": it.n, "contract": _contract_dict(it.contract), "principal_value": it.principal_value, "agent_value": it.agent_value}
                for it in items
            ],
        }
        rows = [(f"principal_value_n{it.n}", it.principal_value) for it in items]
        return sol, rows, f"first-best {model.fb_regime.value}: sequence values {[f'{it.principal_value:.6g}' for it in items]}"
    fb = analytic.solve_first_best(model.profile, model.band_a, model.band_p)
    sol = {
        "regime": fb.regime.value,
        "effort": fb.effort,
        "z_star": fb.z_star,
        "gamma_range": list(fb.gamma_range),
        "contract": _contract_dict(fb.representative_contract),
        "principal_value": fb.principal_value,
        "lagrange_log_term": fb.lagrange_log_term,
        "common_alpha": fb.common_alpha,
    }
    rows = [("principal_value", fb.principal_value), ("z_star", fb.z_star), ("effort", fb.effort)]
    return sol, rows, f"first-best {fb.regime.value}: value {fb.principal_value:.8g}, z* {fb.z_star:.6g}"


def cmd_second_best(cfg, out: Path):
    model = build_model(cfg)
    sb = analytic.solve_second_best(model.profile, model.band_a, model.band_p)
    sol = {
        "regime": sb.regime.value,
        "z_star": sb.z_star,
        "gamma_star": sb.gamma_star,
        "y0": sb.y0,
        "effort": sb.effort,
        "principal_value": sb.principal_value,
        "worst_alpha": sb.worst_alpha,
        "contract": _contract_dict(sb.contract),
    }
    rows = [("principal_value", sb.principal_value), ("z_star", sb.z_star), ("gamma_star", sb.gamma_star)]
    return sol, rows, f"second-best {sb.regime.value}: value {sb.principal_value:.8g}, z* {sb.z_star:.6g}"


def _field(cfg) -> MarkovAmbiguityField:
    if "field" in cfg:
        path = Path(cfg["field"])
        if not path.is_absolute() and "_base_dir" in cfg:
            path = Path(cfg["_base_dir"]) / path
        if not path.exists():
            raise ConfigError(f"field file {path} does not exist")
        return MarkovAmbiguityField.from_csv(path)
    model = build_model(cfg)
    return MarkovAmbiguityField.constant(model.band_a, model.band_p, model.profile.horizon)


def cmd_pde(cfg, out: Path):
    profile = _profile_only(cfg)
    field = _field(cfg)
    p = cfg["pde"]
    if p["n_t"] is None:
        grid = PdeGrid.auto(field, profile, n_x=int(p["n_x"]), x_min=p["x_min"], x_max=p["x_max"], cross_term=p["cross_term"])
    else:
        half = 6.0 * math.sqrt(field.max_effective_alpha * profile.horizon)
        grid = PdeGrid(
            int(p["n_t"]),
            int(p["n_x"]),
            -half if p["x_min"] is None else float(p["x_min"]),
            half if p["x_max"] is None else float(p["x_max"]),
            profile.horizon,
        )
    surface = solve_pde(field, profile, grid, cross_term=p["cross_term"], p_scheme=p["p_scheme"])
    surface.to_csv(out / "surface.csv")
    j = int(round(-grid.x_min / grid.dx))
    sol = {
        "principal_value": surface.principal_value,
        "grid": {"n_t": grid.n_t, "n_x": grid.n_x, "x_min": grid.x_min, "x_max": grid.x_max, "dt": grid.dt, "dx": grid.dx},
        "clamp_count": surface.clamp_count,
        "z_policy_t0_x0": float(surface.z_policy[0, j]),
        "alpha_policy_t0_x0": float(surface.alpha_policy[0, j]),
        "backend": _kernels.get_backend(),
    }
    rows = [("principal_value", surface.principal_value), ("clamp_count", surface.clamp_count)]
    if "bands" in cfg:
        model = build_model(cfg)
        if model.sb_regime is not SbRegime.DEGENERATE:
            ref = analytic.solve_second_best(model.profile, model.band_a, model.band_p).principal_value
            sol["closed_form"] = ref
            rows.append(("closed_form", ref))
    return sol, rows, f"pde: value {surface.principal_value:.8g} on {grid.n_t}x{grid.n_x} grid"


def cmd_simulate(cfg, out: Path):
    model = build_model(cfg)
    sim = cfg.get("simulate", {})
    sb = analytic.solve_second_best(model.profile, model.band_a, model.band_p)
    mc = _mc_spec(cfg)
    if "contract" in sim:
        c = sim["contract"]
        contract = analytic.LinearQuadraticContract(
            _number(c["z"], "simulate.contract.z"), _number(c["gamma"], "simulate.contract.gamma"), _number(c["delta"], "simulate.contract.delta")
        )
        effort = float(sim.get("effort", analytic.agent_best_response(contract.z, model.profile)))
        alpha = float(sim.get("alpha", model.band_p.hi))
    elif sb.contract is not None:
        contract, effort = sb.contract, sb.effort
        alpha = float(sim.get("alpha", sb.worst_alpha))
    else:
        contract = analytic.sb_degenerate_contract(int(sim.get("n", 20)), model.profile, model.band_a)
        effort, alpha = 0.0, float(sim.get("alpha", model.band_p.hi))
    u_p, u_a = estimate_utilities(contract, Scenario(alpha, effort, mc.n_paths, mc.seed), model.profile)
    sol = {
        "alpha": alpha,
        "effort": effort,
        "n_paths": mc.n_paths,
        "seed": mc.seed,
        "u_p": {"mean": u_p.mean, "std_error": u_p.std_error, "n": u_p.n},
        "u_a": {"mean": u_a.mean, "std_error": u_a.std_error, "n": u_a.n},
    }
    rows = [("u_p_mean", u_p.mean), ("u_p_se", u_p.std_error), ("u_a_mean", u_a.mean), ("u_a_se", u_a.std_error)]
    return sol, rows, f"simulate: u_p {u_p.mean:.8g} +- {u_p.std_error:.2g}, u_a {u_a.mean:.8g} +- {u_a.std_error:.2g}"


def cmd_gateaux(cfg, out: Path):
    model = build_model(cfg)
    fb = analytic.solve_first_best(model.profile, model.band_a, model.band_p)
    spec = cfg.get("gateaux", {})
    gamma = spec.get("gamma")
    contract = fb.representative_contract if gamma is None else fb.contract_at(float(gamma))
    contract = contract.shifted(ddelta=float(spec.get("delta_shift", 0.0)))
    mc = _mc_spec(cfg)
    template = Scenario(fb.common_alpha, fb.effort, mc.n_paths, mc.seed)
    se_mult = harness.HarnessConfig().se_mult
    rows, results, ok = [], {}, True
    for name in spec.get("directions", ["constant", "terminal_output"]):
        if name == "constant":
            direction = Direction.constant(1.0)
        elif name == "terminal_output":
            direction = Direction.terminal_output()
        else:
            raise ConfigError(f"unknown direction {name!r}")
        res = gateaux_residual(contract, direction, fb.effort, fb.common_alpha, fb.common_alpha, fb.rho, template, model.profile)
        within = abs(res.mean) <= se_mult * res.std_error
        ok &= within
        results[name] = {"mean": res.mean, "std_error": res.std_error, "n": res.n, "within": within}
        rows.append((f"{name}_mean", res.mean))
        rows.append((f"{name}_se", res.std_error))
    sol = {"regime": fb.regime.value, "contract": _contract_dict(contract), "rho": fb.rho, "alpha": fb.common_alpha, "residuals": results}
    summary = "gateaux-check: " + ", ".join(f"{k} {v['mean']:.3g} ({v['mean'] / v['std_error'] if v['std_error'] else 0:.2f} SE)" for k, v in results.items())
    if not ok and not spec.get("expect_nonzero", False):
        raise CheckFailed((sol, rows, summary))
    return sol, rows, summary


def cmd_crosscheck(cfg, out: Path):
    model = build_model(cfg)
    mc = _mc_spec(cfg)
    hcfg = harness.HarnessConfig(pde_n_x=int(cfg["pde"]["n_x"]))
    reports = [
        harness.crosscheck_first_best(model.profile, model.band_a, model.band_p, mc=mc, config=hcfg, case_id="first-best"),
        harness.crosscheck_second_best(model.profile, model.band_a, model.band_p, mc=mc, config=hcfg, case_id="second-best"),
    ]
    harness.write_reports(reports, out / "report.json", out / "report.csv", include_runtime=False)
    sol = {
        "fb_regime": model.fb_regime.value,
        "sb_regime": model.sb_regime.value,
        "reports": [
            {"case_id": r.case_id, "regime": r.regime, "value": r.closed_form, "pde_value": r.pde_value, "mc_value": r.mc_value, "pass": r.passed}
            for r in reports
        ],
    }
    summary = "crosscheck: " + ", ".join(f"{r.case_id} {r.regime} value={r.closed_form:.6g} {'pass' if r.passed else 'FAIL'}" for r in reports)
    if not all(r.passed for r in reports):
        raise CheckFailed((sol, None, summary))
    return sol, None, summary


def _set_path(cfg: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = cfg
    for key in parts[:-1]:
        node = node[int(key)] if isinstance(node, list) else node.get(key)
        if node is None:
            raise ConfigError(f"sweep axis {dotted!r} does not name a config field")
    last = parts[-1]
    if isinstance(node, list):
        node[int(last)] = value
    elif isinstance(node, dict) and last in node:
        node[last] = value
    else:
        raise ConfigError(f"sweep axis {dotted!r} does not name a config field")


def sweep_rows(cfg: dict, axis: str, values) -> list[tuple]:
    rows = []
    for v in values:
        point = copy.deepcopy(cfg)
        _set_path(point, axis, _number(v, "sweep value"))
        load_config(_public(point))
        model = build_model(point)
        pr, ba, bp = model.profile, model.band_a, model.band_p
        fb_value = 0.0 if model.fb_regime.degenerate else analytic.solve_first_best(pr, ba, bp).principal_value
        sb = analytic.solve_second_best(pr, ba, bp)
        rows.append((float(v), model.fb_regime.value, fb_value, sb.regime.value, sb.principal_value, sb.z_star))
    return rows


def cmd_sweep(cfg, out: Path):
    spec = cfg.get("sweep")
    if not isinstance(spec, dict) or "axis" not in spec or not isinstance(spec.get("values"), list) or not spec["values"]:
        raise ConfigError("sweep needs {'axis': dotted.path, 'values': [...]}")
    rows = sweep_rows(cfg, spec["axis"], spec["values"])
    _write_rows(out / "sweep.csv", ["value", "fb_regime", "fb_value", "sb_regime", "sb_value", "sb_z_star"], rows)
    sol = {"axis": spec["axis"], "rows": [dict(zip(["value", "fb_regime", "fb_value", "sb_regime", "sb_value", "sb_z_star"], r)) for r in rows]}
    report = [(f"sb_value@{r[0]!r}", r[4]) for r in rows]
    return sol, report, f"sweep over {spec['axis']}: {len(rows)} points"


HANDLERS = {
    "first-best": cmd_first_best,
    "second-best": cmd_second_best,
    "pde": cmd_pde,
    "simulate": cmd_simulate,
    "gateaux-check": cmd_gateaux,
    "crosscheck": cmd_crosscheck,
    "sweep": cmd_sweep,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ambicon", description="Optimal contracts under volatility ambiguity.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("config_path", nargs="?", help="run configuration (JSON); same as --config")
    ap.add_argument("--config", dest="config_flag", help="run configuration (JSON)")
    ap.add_argument("--out", help="output directory (overrides output_dir)")
    ap.add_argument("--seed", type=int, help="Monte Carlo seed (overrides mc.seed)")
    ap.add_argument("--quiet", action="store_true", help="suppress the summary line")
    return ap


def _finish(cmd, cfg, out: Path, sol, rows, summary, quiet: bool, started: float, status: str):
    payload = {"command": cmd, "status": status, "config": _public(cfg), "solution": sol}
    _write_json(out / "solution.json", payload)
    if rows is not None:
        _write_rows(out / "report.csv", ["metric", "value"], rows)
    _write_json(
        out / "metadata.json",
        {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "runtime_s": time.perf_counter() - started,
            "version": __version__,
            "backend": _kernels.get_backend(),
        },
    )
    if not quiet:
        print(summary)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    started = time.perf_counter()
    path = args.config_flag or args.config_path
    try:
        if path is None:
            raise ConfigError("no configuration given (use --config PATH)")
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from None
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            raw.setdefault("mc", {})["seed"] = args.seed
        if args.out is not None:
            raw["output_dir"] = args.out
        cfg = load_config(raw, Path(path).resolve().parent)
        out = Path(cfg["output_dir"])
        out.mkdir(parents=True, exist_ok=True)
        try:
            sol, rows, summary = HANDLERS[args.command](cfg, out)
        except CheckFailed as failed:
            sol, rows, summary = failed.args[0]
            _finish(args.command, cfg, out, sol, rows, summary, args.quiet, started, "failed")
            return EXIT_CHECK
        _finish(args.command, cfg, out, sol, rows, summary, args.quiet, started, "ok")
        return EXIT_OK
    except (ModelError, ValueError, KeyError) as exc:
        msg = str(exc) if isinstance(exc, AmbiconError) else f"ConfigError: {exc}"
        print(msg, file=sys.stderr)
        return EXIT_CONFIG
    except AmbiconError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
