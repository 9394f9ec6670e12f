import csv
import json
import math
import os
import subprocess
import sys

import pytest

from ambicon.analytic import h_eval, z_star_sb
from ambicon.cli import load_config, main
from ambicon.model import AmbiguityBand, RiskProfile

PROFILE = {"r_agent": 1, "r_principal": 1, "cost_coeff": 1, "effort_cap": 2, "horizon": 1, "reservation": -1}


def write_cfg(tmp_path, name="cfg.json", **extra):
    cfg = {"profile": dict(PROFILE), "bands": {"agent": [0.5, 1.5], "principal": [0.5, 1.0]}, "mc": {"n_paths": 20000, "seed": 1, "grid_n": 5}}
    cfg.update(extra)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def run(tmp_path, *args, out="out"):
    return main([*map(str, args), "--out", str(tmp_path / out)])


def solution(tmp_path, out="out"):
    return json.loads((tmp_path / out / "solution.json").read_text())


def test_second_best(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    assert run(tmp_path, "second-best", cfg) == 0
    sol = solution(tmp_path)["solution"]
    assert sol["z_star"] == pytest.approx(2 / 3, abs=1e-15)
    assert sol["principal_value"] == pytest.approx(-math.exp(-1 / 6), rel=1e-12)
    assert "second-best" in capsys.readouterr().out
    assert (tmp_path / "out" / "report.csv").exists()


@pytest.mark.parametrize("command", ["first-best", "second-best", "simulate", "gateaux-check", "crosscheck"])
def test_commands_succeed(tmp_path, command):
    cfg = write_cfg(tmp_path)
    assert main(["--config", str(cfg), command, "--out", str(tmp_path / "o"), "--quiet"]) == 0
    payload = solution(tmp_path, "o")
    assert payload["command"] == command and payload["status"] == "ok"
    # the echoed config is itself a valid configuration
    load_config(payload["config"])


def test_pde_writes_surface(tmp_path):
    cfg = write_cfg(tmp_path, pde={"n_x": 201})
    assert run(tmp_path, "pde", cfg) == 0
    with open(tmp_path / "out" / "surface.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ["t", "x", "psi", "z_policy", "alpha_policy"]
    assert solution(tmp_path)["solution"]["principal_value"] == pytest.approx(-math.exp(-1 / 6), rel=0.01)


def test_pde_from_field_file(tmp_path):
    from ambicon.hjbi import MarkovAmbiguityField

    MarkovAmbiguityField.constant(AmbiguityBand(0.5, 1.5), AmbiguityBand(0.5, 1.0)).to_csv(tmp_path / "field.csv")
    cfg = {"profile": PROFILE, "field": "field.csv", "pde": {"n_x": 201}}
    (tmp_path / "f.json").write_text(json.dumps(cfg))
    assert run(tmp_path, "pde", tmp_path / "f.json") == 0


def test_config_errors_exit_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, bands={"agent": [1.5, 0.5], "principal": [0.5, 1.0]})
    assert run(tmp_path, "second-best", cfg) == 2
    assert "EmptyBand" in capsys.readouterr().err
    assert run(tmp_path, "second-best", tmp_path / "missing.json") == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert run(tmp_path, "second-best", tmp_path / "bad.json") == 2
    cfg = write_cfg(tmp_path, "pos.json", profile=dict(PROFILE, reservation=0.5))
    assert run(tmp_path, "first-best", cfg) == 2
    assert "NonNegativeReservation" in capsys.readouterr().err


def test_solver_error_exit_3(tmp_path, capsys):
    cfg = write_cfg(tmp_path, bands={"agent": [1, 2], "principal": [0.2, 0.5]})
    assert run(tmp_path, "pde", cfg) == 3
    assert "EmptyIntersection" in capsys.readouterr().err
    cfg = write_cfg(tmp_path, "cfl.json", pde={"n_t": 5, "n_x": 401})
    assert run(tmp_path, "pde", cfg) == 3


def test_failed_check_exit_4(tmp_path):
    cfg = write_cfg(tmp_path, pde={"n_x": 21})
    assert run(tmp_path, "crosscheck", cfg) == 4
    assert solution(tmp_path)["status"] == "failed"


def test_degenerate_crosscheck(tmp_path):
    cfg = write_cfg(tmp_path, bands={"agent": [1, 2], "principal": [0.2, 0.5]})
    assert run(tmp_path, "crosscheck", cfg) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "report.csv")))
    sb = [r for r in rows if r["case_id"] == "second-best" and r["metric"] == "closed_form"]
    assert sb[0]["regime"] == "Degenerate" and float(sb[0]["value"]) == 0.0


def _run_twice(tmp_path, *cmd, names=("solution.json", "report.csv")):
    """Bytes of the named outputs from two runs into the same directory."""
    outs = []
    for _ in range(2):
        assert cmd[0](*cmd[1:]) == 0
        outs.append({n: (tmp_path / "out" / n).read_bytes() for n in names})
    return outs


def test_outputs_byte_identical_across_runs(tmp_path):
    cfg = write_cfg(tmp_path)
    for command in ("simulate", "crosscheck"):
        a, b = _run_twice(tmp_path, run, tmp_path, command, cfg)
        assert a == b


def test_seed_flag_changes_estimates(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "s1"), "--seed", "7", "--quiet"]) == 0
    assert main(["simulate", str(cfg), "--out", str(tmp_path / "s2"), "--seed", "8", "--quiet"]) == 0
    a, b = solution(tmp_path, "s1"), solution(tmp_path, "s2")
    assert a["config"]["mc"]["seed"] == 7
    assert a["solution"] != b["solution"]


def test_quiet_suppresses_summary(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    main(["first-best", str(cfg), "--out", str(tmp_path / "q"), "--quiet"])
    assert capsys.readouterr().out == ""


def sweep_values(tmp_path, axis, values, out="sw"):
    cfg = write_cfg(tmp_path, f"{out}.json", sweep={"axis": axis, "values": values})
    assert run(tmp_path, "sweep", cfg, out=out) == 0
    return list(csv.DictReader(open(tmp_path / out / "sweep.csv")))


def test_sweep_principal_top(tmp_path):
    rows = sweep_values(tmp_path, "bands.principal.1", [0.6, 0.8, 1.0])
    prof = RiskProfile(1, 1, 1, 2, 1, -1)
    ba = AmbiguityBand(0.5, 1.5)
    values = [float(r["sb_value"]) for r in rows]
    for r, alpha in zip(rows, (0.6, 0.8, 1.0)):
        oracle = -math.exp(-h_eval(alpha, z_star_sb(alpha, prof), 0.0, ba, prof))
        assert float(r["sb_value"]) == pytest.approx(oracle, rel=1e-12)
    assert values[0] == pytest.approx(-0.75441, abs=1e-5)
    assert all(b <= a for a, b in zip(values, values[1:]))


def test_single_value_sweep_matches_run(tmp_path):
    rows = sweep_values(tmp_path, "bands.principal.1", [1.0])
    cfg = write_cfg(tmp_path, "one.json")
    assert run(tmp_path, "second-best", cfg, out="one") == 0
    assert float(rows[0]["sb_value"]) == solution(tmp_path, "one")["solution"]["principal_value"]


def test_sweep_regime_switch(tmp_path):
    rows = sweep_values(tmp_path, "bands.principal.1", [1.4, 1.5, 1.6])
    assert [r["sb_regime"] for r in rows] == ["PrincipalTopInAgentBand", "PrincipalTopInAgentBand", "AgentTopInPrincipalBand"]
    assert [r["fb_regime"] for r in rows] == ["Interior", "BoundaryTops", "InteriorRev"]


def test_sweep_rejects_unknown_axis(tmp_path):
    cfg = write_cfg(tmp_path, sweep={"axis": "profile.nope", "values": [1]})
    assert run(tmp_path, "sweep", cfg) == 2


def test_module_entry_point_and_threads_env(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "out"

    def external():
        env = dict(os.environ, AMBICON_THREADS="1")
        cmd = [sys.executable, "-m", "ambicon.cli", "simulate", str(cfg), "--out", str(out), "--quiet"]
        proc = subprocess.run(cmd, env=env, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        return 0

    (a,) = [_run_twice(tmp_path, external, names=("solution.json",))[0]]
    assert run(tmp_path, "simulate", cfg) == 0
    assert (out / "solution.json").read_bytes() == a["solution.json"]
