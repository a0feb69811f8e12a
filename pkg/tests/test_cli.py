import csv
import json

import pytest

from delaymimo.cli import main

SMALL = ["--cache-rows", "4000"]


def test_solve_writes_outputs(tmp_path, capsys):
    assert main(["solve", "--out", str(tmp_path), *SMALL]) == 0
    text = capsys.readouterr().out
    assert "joint states (N+1)^L = 25" in text
    assert (tmp_path / "solution_full.json").exists()
    assert (tmp_path / "solution_decomposed.json").exists()
    assert (tmp_path / "summary.txt").read_text() == text


def test_solve_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["solve", "--mode", "decomposed", "--out", str(tmp_path / d), *SMALL]) == 0
    name = "solution_decomposed.json"
    assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_gamma_with_p0_is_rejected(tmp_path, capsys):
    assert main(["solve", "--gamma", "0.1", "--p0", "20dB", "--out", str(tmp_path)]) == 1
    assert "exactly one" in capsys.readouterr().err


def test_bad_arguments_exit_one():
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--mode", "sideways"])
    assert exc.value.code == 1


def test_state_cap_refusal(tmp_path, capsys):
    cfg = tmp_path / "big.toml"
    cfg.write_text("buffer_size = 2000\nmax_states = 1000000\n")
    assert main(["solve", "--config", str(cfg), "--mode", "full", "--out", str(tmp_path)]) == 1
    assert "state" in capsys.readouterr().err


def test_calibrate_out_of_range(tmp_path, capsys):
    assert main(["calibrate", "--p0", "1e9", "--mode", "decomposed", "--out", str(tmp_path),
                 *SMALL]) == 1


def test_calibrate_writes_curve(tmp_path):
    assert main(["calibrate", "--p0", "20dB", "--mode", "decomposed", "--out", str(tmp_path),
                 *SMALL]) == 0
    lines = (tmp_path / "calibration_decomposed.csv").read_text().splitlines()
    assert lines[0].startswith("# version=") and len(lines) == 22


def test_simulate_outputs(tmp_path, capsys):
    args = ["simulate", "--p0", "20dB", "--policy", "decomposed,rr,csit", "--slots", "20000",
            "--seeds", "3,4", "--out", str(tmp_path), *SMALL]
    assert main(args) == 0
    body = json.loads((tmp_path / "sim_rr_seed4.json").read_text())
    assert body["seed"] == 4 and body["slots"] == 20000
    with open(tmp_path / "simulate.csv") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    assert len(rows) == 3 * 2 * 2


def test_sweep_marks_failed_points(tmp_path):
    args = ["sweep", "--axis", "P0", "--grid", "20dB,1e9", "--no-sim", "--plot-spec",
            "--policy", "decomposed", "--out", str(tmp_path), *SMALL]
    assert main(args) == 0
    with open(tmp_path / "sweep_P0.csv") as fh:
        rows = list(csv.DictReader(line for line in fh if not line.startswith("#")))
    assert [r["status"] for r in rows] == ["ok", "ok", "failed"]
    assert "calibrat" in rows[-1]["error"].lower() or rows[-1]["error"]
    assert (tmp_path / "sweep_P0.vl.json").exists()


def test_verify_fault_injection(capsys):
    assert main(["verify", "--cache-rows", "2000", "--inject-fault"]) == 3
    out = capsys.readouterr().out
    assert "residual_full\tFAIL" in out and "residual_decomposed\tFAIL" in out
