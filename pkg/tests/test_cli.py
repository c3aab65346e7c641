import json

import numpy as np
import pytest

from netstab import presets
from netstab.cli import main
from netstab.control import load_controller
from netstab.network import save_network


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


def test_validate_default_network(capsys):
    code, doc = run_cli(capsys, "validate")
    assert code == 0
    assert doc["ok"] and doc["acyclic"] and doc["violations"] == []


def test_validate_reports_violations(capsys, tmp_path):
    spec = presets.reference_with_backedge()
    path = tmp_path / "cyclic.json"
    save_network(spec, path)
    code, doc = run_cli(capsys, "validate", "--network", str(path))
    assert code == 1
    assert not doc["acyclic"]
    assert doc["cycle"]  # 1-based cycle listing


def test_missing_file_is_an_input_error(capsys):
    code = main(["validate", "--network", "/no/such/file.json"])
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_solve_uep_outputs_equilibrium(capsys):
    code, doc = run_cli(capsys, "solve-uep")
    assert code == 0
    np.testing.assert_allclose(doc["xstar"],
                               [55, 55, 55, 55, 27.5, 27.5, 55, 55],
                               rtol=0, atol=1e-6)
    np.testing.assert_allclose(doc["flows"],
                               [25, 25, 25, 25, 12.5, 12.5, 25, 25],
                               rtol=0, atol=1e-8)


def test_custom_network_requires_vstar(capsys, tmp_path):
    path = tmp_path / "net.json"
    save_network(presets.reference_network(), path)
    code = main(["solve-uep", "--network", str(path)])
    assert code == 2
    assert "--vstar" in capsys.readouterr().err

    code, doc = run_cli(capsys, "solve-uep", "--network", str(path),
                        "--vstar", "25,0,0,0,12.5,0,0,0")
    assert code == 0
    assert doc["xstar"][4] == pytest.approx(27.5, abs=1e-6)


def test_synthesize_writes_a_loadable_controller(capsys, tmp_path):
    code, doc = run_cli(capsys, "synthesize", "--out", str(tmp_path))
    assert code == 0
    cfg = load_controller(tmp_path / "controller.json")
    np.testing.assert_allclose(cfg.b, doc["b"], rtol=0, atol=0)
    assert cfg.tau == 0.5
    assert np.all(cfg.b[np.array([0, 4])] > 0)


def test_analyze_emits_a_full_certificate(capsys, tmp_path):
    code, doc = run_cli(capsys, "analyze", "--out", str(tmp_path))
    assert code == 0
    assert doc["ok"]
    assert doc["comparison"]["rho"] == pytest.approx(0.991, abs=1e-9)
    assert doc["checks"]["contraction_ok"]
    assert doc["trapping_steps"] > 0
    assert len(doc["audits"]["demand"]) == 8
    saved = json.loads((tmp_path / "certificate.json").read_text())
    assert saved["comparison"]["rho"] == doc["comparison"]["rho"]


def test_simulate_runs_a_scenario_file(capsys, tmp_path):
    scenario = {
        "x0": [170.0] * 8,
        "horizon": 30,
        "disturbance": {"kind": "uniform", "seed": 3},
        "control": {"kind": "open-loop", "v": [25, 0, 0, 0, 12.5, 0, 0, 0]},
        "reference": [55, 55, 55, 55, 27.5, 27.5, 55, 55],
    }
    path = tmp_path / "jam.json"
    path.write_text(json.dumps(scenario))
    code, doc = run_cli(capsys, "simulate", "--scenario", str(path),
                        "--out", str(tmp_path))
    assert code == 0
    assert (tmp_path / "jam.csv").exists()
    assert doc["horizon"] == 30
    assert doc["max_mass_balance_error"] < 1e-9


def test_simulate_rejects_unknown_scenario_fields(capsys, tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"x0": [0] * 8, "horizon": 5,
                                "disturbance": {"kind": "uniform"},
                                "control": {"kind": "open-loop", "v": [0] * 8},
                                "plot": True}))
    code = main(["simulate", "--scenario", str(path)])
    assert code == 2
    assert "unknown scenario field" in capsys.readouterr().err


def test_gridlock_demo_cli(capsys):
    code, doc = run_cli(capsys, "gridlock-demo", "--horizon", "50")
    assert code == 0
    assert doc["locked"] and doc["max_drift"] == 0.0
    assert doc["cycle"] == [1, 2, 3]


def test_reproduce_writes_suite(capsys, tmp_path):
    code, doc = run_cli(capsys, "reproduce-paper", "--out", str(tmp_path))
    assert code == 0
    assert (tmp_path / "summary.json").exists()
    assert (tmp_path / "open_loop_congestion.csv").exists()
    closed = doc["scenarios"]["closed_loop_jam"]
    assert closed["terminal_deviation"] < 1.0
    assert closed["sigma_hat"] > 0
