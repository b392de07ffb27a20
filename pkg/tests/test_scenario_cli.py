import json
import math
import subprocess
import sys
from pathlib import Path

import pytest

from poisson_sde import scenario
from poisson_sde.cli import main
from poisson_sde.presets import list_presets
from poisson_sde.scenario import ConfigError, run_scenario, validate_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg, indent=1))
    return str(p)


def custom(slope=0.2, declared_L=0.2, analyses=("solve",), h=0.01, horizon=1.0, options=None):
    return {
        "operator": {"kind": "scalar", "nu": 5.0},
        "coefficients": {"custom": {
            "drift": {"offset": {"kind": "periodic", "period": 2 * math.pi}, "slope": slope, "A0": 1.0, "L": declared_L, "M": declared_L},
            "diffusion": {"offset": 0.5, "slope": 0.0, "A0": 0.5, "L": 0.0, "M": 0.0},
        }},
        "grid": {"t0": 0.0, "h": h, "horizon": horizon},
        "ensemble": {"n_paths": 32, "seed": 0},
        "analyses": list(analyses),
        "options": options or {},
    }


def test_exactly_two_presets():
    ps = list_presets()
    assert [p["name"] for p in ps] == ["example1", "example2"]
    assert ps[0]["nu"] == 5.0 and ps[1]["nu"] == pytest.approx(math.pi**2, rel=1e-15)
    assert all(p["provenance"] for p in ps)


def test_presets_command_prints_json(capsys):
    assert main(["presets"]) == 0
    assert len(json.loads(capsys.readouterr().out)) == 2


def test_validate_example1_table():
    cfg = validate_config((CONFIGS / "example1.json").read_text())
    rows = {r["analysis"]: r for r in cfg.admissibility}
    assert rows["convergence"]["threshold"] == pytest.approx(5 / math.sqrt(18), abs=1e-12)
    assert rows["solve"]["threshold"] == pytest.approx(5 / math.sqrt(7), abs=1e-12)
    assert rows["dissipativity"]["threshold"] == pytest.approx(5 / 6, abs=1e-12)
    assert all(r["pass"] for r in rows.values())


@pytest.mark.parametrize("N,nu", [(1.0, 5.0), (1.0, math.pi**2), (2.5, 0.3), (1.0, 1e3)])
def test_table_thresholds_match_closed_forms(N, nu):
    rows = scenario.admissibility_table(["solve", "comparability", "dissipativity", "convergence"], N, nu, 0.1, 0.1)
    expected = [
        nu / (N * math.sqrt(2 + nu)),
        nu / (2 * N * math.sqrt(1 + nu)),
        nu / (N * math.sqrt(6 * (nu + 1))),
        nu / (N * math.sqrt(3 * (nu + 1))),
    ]
    assert [r["threshold"] for r in rows] == pytest.approx(expected, abs=1e-12)


def test_custom_L2_fails_bounded_condition(capsys):
    assert main(["validate", str(CONFIGS / "custom_inadmissible.json")]) == 2
    err = capsys.readouterr().err
    assert "bounded" in err and "1.88982" in err and "line " in err


@pytest.mark.parametrize(
    "mutate,needle",
    [
        (lambda c: c["grid"].__setitem__("h", -0.01), "grid.h: must be positive"),
        (lambda c: c.__setitem__("analyses", []), "analyses: must be a nonempty list"),
        (lambda c: c["analyses"].append("nonsense"), "unknown analysis"),
        (lambda c: c["coefficients"]["custom"]["drift"].pop("L"), "declared constant missing"),
        (lambda c: c.__setitem__("extra", 1), "extra: unknown key"),
    ],
)
def test_structural_errors_are_line_anchored(tmp_path, capsys, mutate, needle):
    cfg = custom()
    mutate(cfg)
    assert main(["validate", write_cfg(tmp_path, cfg)]) == 2
    err = capsys.readouterr().err
    assert needle in err
    assert all(line.split(": ", 1)[1].startswith("line ") for line in err.strip().splitlines())


def test_invalid_json_reports_line():
    with pytest.raises(ConfigError) as info:
        validate_config('{\n "grid": {,\n}')
    assert info.value.errors[0].startswith("line 2")


def test_exit_ok_and_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", write_cfg(tmp_path, custom(analyses=("solve", "dissipativity", "convergence"))), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["exit_code"] == 0 and rep["results"]["violations"] == 0
    assert {p.name for p in out.iterdir()} >= {"report.json", "solve.csv", "dissipativity.csv", "convergence.csv", "convergence_to_bounded.csv"}


def test_exit_violation(tmp_path, monkeypatch):
    monkeypatch.setattr(scenario, "theta_2", lambda N, nu, L: -1.0)
    assert main(["run", write_cfg(tmp_path, custom()), "--out", str(tmp_path / "o")]) == 1


def test_exit_audit_failure(tmp_path, capsys):
    # slope 0.8 declared as 0.2
    assert main(["run", write_cfg(tmp_path, custom(slope=0.8)), "--out", str(tmp_path / "o")]) == 3
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert "audit" in rep["errors"]


def test_exit_runtime_on_nonconvergence(tmp_path, capsys):
    cfg = custom(options={"solve": {"max_iter": 1}})
    assert main(["run", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 4
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert "solve" in rep["errors"] and rep["results"]["solve"]["trace"]["converged"] is False


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(scenario.OUT_DIR_ENV, str(tmp_path / "env"))
    cfg = validate_config(json.dumps(custom(horizon=0.2)))
    run_scenario(cfg)
    assert (tmp_path / "env" / "report.json").exists()


def test_fixed_clock_reports_identical_across_threads(tmp_path):
    text = json.dumps(custom(analyses=("solve", "convergence")))
    a = run_scenario(validate_config(text), str(tmp_path / "a"), threads=1, fixed_clock=True)
    b = run_scenario(validate_config(text), str(tmp_path / "b"), threads=4, fixed_clock=True)
    assert a.to_json() == b.to_json()
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "poisson_sde", "validate", str(CONFIGS / "example2.json")], capture_output=True, text=True)
    assert r.returncode == 0 and "valid" in r.stdout
