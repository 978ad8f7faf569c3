import subprocess
import sys

import pytest

from replica_lse.cli import main
from replica_lse.harness import COLUMNS, read_csv


def test_rs_to_file(tmp_path):
    out = tmp_path / "rs.csv"
    assert main(["rs", "--alpha-inv", "2", "--lambda", "0.1", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert len(rows) == 1 and rows[0].distortion == pytest.approx(0.03452248382484877, rel=1e-8)


def test_rs_to_stdout(capsys):
    assert main(["rs", "--lambda", "1.0"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split(",") == COLUMNS and len(lines) == 2


def test_not_converged_exit_code(capsys):
    # lam = 0 with alpha < 1 has no RS fixed point
    assert main(["rs", "--alpha-inv", "2", "--lambda", "0"]) == 2


def test_usage_errors_exit_one(capsys):
    assert main(["rs", "--penalty", "ridge-l7"]) == 1
    assert main(["rs", "--support", "disc"]) == 1
    assert "error" in capsys.readouterr().err


def test_decoupled_input(capsys):
    assert main(["decoupled", "--penalty", "ridge-l0", "--lambda0", "1", "--xi", "1", "--input", "2+0j"]) == 0
    assert complex(capsys.readouterr().out.strip()) == 2


def test_calibrate(capsys):
    assert main(["calibrate", "--penalty", "ridge-l0", "--lambda", "0.1", "--target-eta", "0.3",
                 "--tune", "lam0"]) == 0
    out = dict(line.split(" = ") for line in capsys.readouterr().out.splitlines())
    assert float(out["eta"]) == pytest.approx(0.3, abs=1e-4)
    assert float(out["closed_form_lam0"]) == pytest.approx(float(out["lam0"]), rel=1e-3)
    assert main(["calibrate", "--penalty", "ridge-l0"]) == 1


def test_sweep(tmp_path):
    cfg = tmp_path / "s.ini"
    cfg.write_text("[run]\nalpha_inv = 2\nvariable = lam\nvalues = 0.1 0.2\n")
    out = tmp_path / "s.csv"
    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    assert [r.sweep_value for r in read_csv(out)] == [0.1, 0.2]
    assert main(["sweep", "--config", str(tmp_path / "missing.ini")]) == 1


def test_console_module():
    res = subprocess.run([sys.executable, "-m", "replica_lse.cli", "rs", "--lambda", "0.5"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0 and res.stdout.startswith("mode,")
