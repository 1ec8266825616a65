import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from cyclestudy.cli import main

CONFIG = """\
[panel]
n_states = 6
districts_per_state = 4
counties_per_district = 2-3
n_years = 12
[effects]
event_path = -2: -0.02, -1: -0.03, 0: 0, 1: -0.04
[noise]
county_sd = 0.1
noise_sd = 0.05
da_effect_sd = 0.15
[run]
seed = 3
"""


@pytest.fixture(scope="module")
def simdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "cfg.ini").write_text(CONFIG)
    assert main(["simulate", "--config", str(d / "cfg.ini"), "--out", str(d / "sim")]) == 0
    return d


def load(p):
    return json.loads(Path(p).read_text())


def test_simulate_outputs(simdir):
    sim = simdir / "sim"
    rows = (sim / "panel.csv").read_text().splitlines()
    man = load(sim / "manifest.json")
    assert man["subcommand"] == "simulate" and man["seed"] == 3
    assert set(man["outputs"]) == {"panel.csv", "truth.json", "da_map.csv"}
    assert 6 * 4 * 2 * 12 <= len(rows) - 1 <= 6 * 4 * 3 * 12
    assert load(sim / "truth.json")["relative_path"]["1"] == -0.04


def test_simulate_is_byte_identical(simdir, tmp_path):
    assert main(["simulate", "--config", str(simdir / "cfg.ini"), "--out", str(tmp_path)]) == 0
    for name in ("panel.csv", "truth.json", "da_map.csv"):
        assert (tmp_path / name).read_bytes() == (simdir / "sim" / name).read_bytes()


def test_estimate_dynamic_and_static(simdir, tmp_path):
    panel = str(simdir / "sim" / "panel.csv")
    assert main(["estimate", "--input", panel, "--log", "--out", str(tmp_path / "d")]) == 0
    d = load(tmp_path / "d" / "estimate.json")
    assert [c["k"] for c in d["coefficients"]] == [-2, -1, 0, 1]
    assert d["spec"]["transform"] == "log"
    assert (tmp_path / "d" / "plot.csv").read_text().startswith("k,estimate,se,ci_low,ci_high")
    assert main(["estimate", "--input", panel, "--mode", "static", "--log1p", "--out", str(tmp_path / "s")]) == 0
    s = load(tmp_path / "s" / "estimate.json")
    assert len(s["coefficients"]) == 1 and s["spec"]["transform"] == "log1p"


def test_iw_outputs(simdir, tmp_path):
    panel = str(simdir / "sim" / "panel.csv")
    assert main(["iw", "--input", panel, "--reps", "20", "--seed", "1", "--log", "--out", str(tmp_path)]) == 0
    d = load(tmp_path / "iw.json")
    assert set(d["outcomes"]) == {"admissions_per_1000", "months_per_1000"}
    assert d["outcomes"]["admissions_per_1000"]["reps"] == 20
    table = (tmp_path / "table.txt").read_text()
    assert "Admissions / 1000 Pop." in table and "Sentenced Months / 1000 Pop." in table


def test_magnitude_direct(capsys):
    assert main(["magnitude", "--effect", "0.1528", "--gamma-sq", "0.0323"]) == 0
    d = json.loads(capsys.readouterr().out)
    assert round(d["sd_units"], 2) == 0.85 and round(d["percentile"], 1) == 80.2


def test_magnitude_from_panel(simdir, tmp_path):
    sim = simdir / "sim"
    assert main(["magnitude", "--from-panel", str(sim / "panel.csv"), "--da-map", str(sim / "da_map.csv"),
                 "--out", str(tmp_path)]) == 0
    sv = load(tmp_path / "signal_variance.json")
    assert sv["gamma_sq"] > 0
    assert set(load(tmp_path / "magnitude.json")) == {"effect", "gamma_sq", "sd_units", "percentile", "clamped"}


def test_cycle(simdir, tmp_path):
    assert main(["cycle", "--input", str(simdir / "sim" / "panel.csv"), "--log", "--out", str(tmp_path)]) == 0
    d = load(tmp_path / "cycle.json")
    assert {"A", "phi", "se_A", "se_phi", "ssr"} <= set(d)
    assert (tmp_path / "curve.csv").read_text().startswith("k,loess,sinusoid")


def test_exit_code_input_errors(simdir, tmp_path, capsys):
    assert main(["estimate", "--input", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o")]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("county_id,state_id\nA,B\n")
    assert main(["estimate", "--input", str(bad), "--out", str(tmp_path / "o")]) == 2
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[panel]\nn_states = x\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "n_states" in capsys.readouterr().err
    assert main(["magnitude", "--effect", "0.1"]) == 2
    panel = str(simdir / "sim" / "panel.csv")
    assert main(["estimate", "--input", panel, "--log", "--log1p", "--out", str(tmp_path / "o")]) == 2
    assert main(["estimate", "--input", panel, "--fe", "state,galaxy", "--out", str(tmp_path / "o")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["estimate", "--mode", "sideways"])
    assert exc.value.code == 2


def test_exit_code_estimation_errors(simdir, tmp_path):
    panel = str(simdir / "sim" / "panel.csv")
    assert main(["magnitude", "--effect", "0.1", "--gamma-sq", "0"]) == 3
    assert main(["iw", "--input", panel, "--reps", "5", "--fe", "county,year", "--out", str(tmp_path / "i")]) == 3
    assert main(["estimate", "--input", panel, "--normalize", "5", "--out", str(tmp_path / "e")]) == 3
    assert not (tmp_path / "e" / "manifest.json").exists()


def test_console_script_version():
    exe = shutil.which("cyclestudy")
    cmd = [exe] if exe else [sys.executable, "-m", "cyclestudy.cli"]
    out = subprocess.run(cmd + ["--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("cyclestudy ")
