import csv
import json

import pytest

from qlab.cli import main


def write_cfg(tmp_path, text):
    p = tmp_path / "run.cfg"
    p.write_text(text, encoding="utf-8")
    return p


def test_missing_config(tmp_path, capsys):
    missing = tmp_path / "absent.cfg"
    assert main(["minact", "--config", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_bad_key_exit_code(tmp_path):
    assert main(["minact", "--config", str(write_cfg(tmp_path, "bogus = 1\n"))]) == 2


def test_numerical_failure_exit_code(tmp_path):
    cfg = write_cfg(tmp_path, "rho = 400\nminact.N = 4\n")
    out = tmp_path / "out"
    assert main(["minact", "--config", str(cfg), "--out", str(out)]) == 3
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "OverflowError"


def test_minact_outputs(tmp_path):
    out = tmp_path / "out"
    assert main(["minact", "--config", str(write_cfg(tmp_path, "")), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert abs(summary["gap"]) <= 0.02 and summary["lower_bound_ok"]
    with open(out / "trajectories" / "minact_path.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ["t", "mode_1", "mode_2", "mode_3", "mode_4"]
    assert (out / "figures" / "minact_path.png").stat().st_size > 0


def test_sweep_gaps(tmp_path):
    out = tmp_path / "out"
    assert main(["quasipotential-sweep", "--config", str(write_cfg(tmp_path, "")), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["points"]) == 12
    assert all(abs(p["gap"]) <= 0.02 for p in summary["points"])


def test_sk_compare_csv(tmp_path):
    cfg = write_cfg(tmp_path, "paths = 40\nT = 0.5\n")
    out = tmp_path / "out"
    assert main(["sk-compare", "--config", str(cfg), "--out", str(out)]) == 0
    with open(out / "sk_compare.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["mu", "mean_deviation", "stderr"]
    assert len(rows) == 4 and all(float(v) > 0 for r in rows[1:] for v in r)
    with open(out / "trajectories" / "sk_wave_replica0.csv") as fh:
        header = next(csv.reader(fh))
    assert header[:2] == ["t", "mode_1"] and header[-1] == "vmode_8"


def test_outputs_independent_of_thread_count(tmp_path):
    cfg = write_cfg(tmp_path, "paths = 600\nT = 0.3\nexit.paths = 600\nexit.eps_factors = 0.5, 0.25\n")
    for cmd in ("sk-compare", "exit-mc"):
        a, b = tmp_path / f"{cmd}1", tmp_path / f"{cmd}3"
        assert main([cmd, "--config", str(cfg), "--out", str(a), "--workers", "1"]) == 0
        assert main([cmd, "--config", str(cfg), "--out", str(b), "--workers", "3"]) == 0
        assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()


def test_exit_records_header(tmp_path):
    cfg = write_cfg(tmp_path, "exit.paths = 100\nexit.eps_factors = 0.5\n")
    out = tmp_path / "out"
    assert main(["exit-mc", "--config", str(cfg), "--out", str(out), "--seed", "3"]) == 0
    with open(out / "exit_records.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["eps", "n_paths", "n_censored", "mean_tau", "stderr", "eps_log_mean_tau"]
    assert json.loads((out / "summary.json").read_text())["config"]["seed"] == 3
    assert (out / "figures" / "exit_times.png").exists()


def test_action_check(tmp_path):
    out = tmp_path / "out"
    assert main(["action-check", "--config", str(write_cfg(tmp_path, "action.T = 0.2\n")), "--out", str(out)]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert max(g["relative_error"] for g in s["gramian"]) <= 1e-6
    assert s["energy_balance"]["relative_error"] <= 1e-3
    assert all(abs(r["gap"]) <= 0.01 for r in s["reversed_flow"])


def test_default_config_command(capsys):
    assert main(["default-config"]) == 0
    assert "exit.N = 1" in capsys.readouterr().out


def test_requires_subcommand():
    with pytest.raises(SystemExit):
        main([])
