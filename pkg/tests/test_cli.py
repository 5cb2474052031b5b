from __future__ import annotations

import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from pumpvs.cli import main
from pumpvs.io import dumps_schedule, load_schedule, read_csv_table

from conftest import ANALOG


@pytest.fixture()
def analog(tmp_path) -> Path:
    d = tmp_path / "analog"
    shutil.copytree(ANALOG, d)
    return d


def edit(path: Path, old: str, new: str) -> Path:
    text = path.read_text()
    assert old in text
    path.write_text(text.replace(old, new))
    return path


def run(*argv):
    return main([str(a) for a in argv])


def test_solve_deterministic(analog, tmp_path, capsys):
    out = tmp_path / "out"
    assert run("solve", "--config", analog / "case_a.toml", "--mode", "deterministic", "--out", out) == 0
    s = load_schedule(out / "schedule.json")
    assert s.optimal and s.mode == "deterministic"
    head = (out / "costs.csv").read_text().splitlines()[0]
    assert head.startswith("# config-sha256: ")
    assert (out / "pump_bands.csv").exists() and (out / "pump_bands.png").exists()
    assert "optimal" in capsys.readouterr().out


def test_large_box_is_infeasible(analog, tmp_path, capsys):
    cfg = edit(analog / "case_a.toml", "vs_price = 5.0", "vs_price = 5.0\nrobust_scale = 10.0")
    out = tmp_path / "out"
    assert run("solve", "--config", cfg, "--mode", "robust", "--out", out) == 2
    assert "infeasible" in capsys.readouterr().err
    assert load_schedule(out / "schedule.json").status == "infeasible"


def test_missing_price_file(analog, tmp_path, capsys):
    (analog / "prices.csv").unlink()
    assert run("solve", "--config", analog / "case_c.toml", "--out", tmp_path / "o") == 3
    assert "prices.csv" in capsys.readouterr().err


def test_unknown_config_field(analog, tmp_path, capsys):
    cfg = edit(analog / "case_c.toml", "vs_price = 5.0", "vs_price = 5.0\nvs_prise = 4.0")
    assert run("solve", "--config", cfg, "--out", tmp_path / "o") == 3
    assert "vs_prise" in capsys.readouterr().err


def test_eps_above_half_rejected(analog, tmp_path):
    assert run("solve", "--config", analog / "case_c.toml", "--eps-p", "0.7", "--out", tmp_path / "o") == 3


def test_empty_sweep(analog, tmp_path):
    out = tmp_path / "out"
    assert run("sweep", "--config", analog / "case_c.toml", "--eps-p", "--out", out) == 0
    header, rows = read_csv_table(out / "sweep.csv")
    assert header[0] == "label" and rows == []


def test_sweep_half_has_no_increase(analog, tmp_path):
    out = tmp_path / "out"
    assert run("sweep", "--config", analog / "case_c.toml", "--eps-p", "0.5", "0.05", "0.001", "--out", out) == 0
    header, rows = read_csv_table(out / "sweep.csv")
    inc = [float(r[header.index("total_increase_pct")]) for r in rows]
    assert abs(inc[0]) < 1e-6
    assert inc[0] <= inc[1] + 1e-8 <= inc[2] + 2e-8
    assert "solve_time_s" not in header


def test_timing_is_opt_in(analog, tmp_path):
    out = tmp_path / "out"
    assert run("solve", "--config", analog / "case_c.toml", "--timing", "--out", out) == 0
    header, _ = read_csv_table(out / "costs.csv")
    assert header[-1] == "solve_time_s"
    assert "solve_time" in json.loads((out / "schedule.json").read_text())


def test_schedule_round_trip(analog, tmp_path):
    out = tmp_path / "out"
    assert run("solve", "--config", analog / "case_c.toml", "--mode", "robust", "--out", out) == 0
    text = (out / "schedule.json").read_text()
    s = load_schedule(out / "schedule.json")
    digest = json.loads(text)["config_sha256"]
    assert dumps_schedule(s, digest, timing=False) == text
    assert s.policy.shape == (12, 1, len(s.policy[0, 0]))
    assert set(s.water) == {"nominal", "upper", "lower"}


def test_evaluate_is_byte_identical(analog, tmp_path):
    cfg = analog / "case_c.toml"
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run("solve", "--config", cfg, "--out", out) == 0
        assert run("evaluate", "--config", cfg, "--samples", 300, "--out", out) == 0
    names = sorted(p.name for p in a.iterdir())
    assert "joint_rates.csv" in names and "individual_rates_fitted.csv" in names and "violation_rates.png" in names
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n


def test_evaluate_zero_policy_tiny_sigma(analog, tmp_path):
    cfg = edit(analog / "case_c.toml", "sigma_global = 0.0101\nsigma_node = 0.0398",
               "sigma_global = 1e-9\nsigma_node = 1e-9")
    out = tmp_path / "o"
    assert run("solve", "--config", cfg, "--mode", "deterministic", "--out", out) == 0
    assert run("evaluate", "--config", cfg, "--samples", 200, "--out", out) == 0
    _, rows = read_csv_table(out / "individual_rates_actual.csv")
    assert all(float(r[-1]) == 0.0 for r in rows)


def test_evaluate_pump_mismatch(analog, tmp_path, capsys):
    out = tmp_path / "o"
    assert run("solve", "--config", analog / "case_c.toml", "--mode", "deterministic", "--out", out) == 0
    edit(out / "schedule.json", '"P9"', '"P10"')
    assert run("evaluate", "--config", analog / "case_c.toml", "--samples", 10, "--out", out) == 3
    assert "pumps" in capsys.readouterr().err


def test_output_dir_precedence(analog, tmp_path, monkeypatch):
    env = tmp_path / "env"
    monkeypatch.setenv("PUMPVS_OUT", str(env))
    assert run("solve", "--config", analog / "case_c.toml", "--mode", "deterministic") == 0
    assert (env / "schedule.json").exists()
    flag = tmp_path / "flag"
    assert run("solve", "--config", analog / "case_c.toml", "--mode", "deterministic", "--out", flag) == 0
    assert (flag / "schedule.json").exists()
    monkeypatch.delenv("PUMPVS_OUT")
    assert run("solve", "--config", analog / "case_c.toml", "--mode", "deterministic") == 0
    assert (analog / "out" / "case_c" / "schedule.json").exists()


def test_seed_flag_changes_samples(analog, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("solve", "--config", analog / "case_c.toml", "--out", a) == 0
    assert run("solve", "--config", analog / "case_c.toml", "--seed", 5, "--out", b) == 0
    pa, pb = load_schedule(a / "schedule.json"), load_schedule(b / "schedule.json")
    assert json.loads((a / "schedule.json").read_text())["config_sha256"] != \
        json.loads((b / "schedule.json").read_text())["config_sha256"]
    assert not np.array_equal(pa.policy, pb.policy)
