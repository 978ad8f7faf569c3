import io
import math
from dataclasses import replace

import pytest

from replica_lse import harness
from replica_lse.harness import (COLUMNS, CalibrationError, ConfigError, SweepConfig, calibrate_eta,
                                 calibrate_power, format_rows, parse_config, read_csv, run_sweep, trial_seed)

BASIC = """
# ridge sweep
[model]
spectral = mp
alpha_inv = 2
penalty = ridge
[sweep]
variable = lam
start = 0.1
stop = 0.5
step = 0.1
"""


def test_parse_range():
    cfg = parse_config(BASIC)
    assert cfg.sweep_var == "lam"
    assert cfg.values == (0.1, 0.2, 0.3, 0.4, 0.5)
    assert cfg.at(0.3).lam == 0.3 and cfg.at(0.3).sweep_var is None


def test_parse_values_and_types():
    cfg = parse_config("""
[a]
mode = finite   # inline comment
n = 40
trials = 3
warm_start = false
values = 1, 2 3
variable = alpha_inv
""")
    assert cfg.values == (1.0, 2.0, 3.0)
    assert cfg.n == 40 and cfg.warm_start is False


@pytest.mark.parametrize("text,match", [
    ("[a]\nvariable = lam\nstart = 1\nstop = 0\nstep = 0.1\n", "empty"),
    ("[a]\nvariable = lam\nstart = 0\nstop = 1\n", "needs"),
    ("[a]\nbogus = 1\n", "unknown"),
    ("[a]\nmode = nope\n", "mode"),
    ("[a]\nlam = 1\n[b]\nlam = 2\n", "duplicate"),
    ("[a]\nlam = abc\n", "bad value"),
    ("[a]\nstart = 0\n", "without a variable"),
    ("[a]\ntarget_eta = 0.3\n", "tune"),
    ("[a]\nmode = finite\n", "n and trials"),
    ("lam = 1\n", "section"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


def test_spectral_path_is_relative_to_config(tmp_path):
    (tmp_path / "c.ini").write_text("[a]\nspectral = file:eig.txt\n")
    assert harness.load_config(tmp_path / "c.ini").spectral == "file:" + str(tmp_path / "eig.txt")


def test_make_support_needs_peak():
    with pytest.raises(ConfigError):
        harness.make_support(SweepConfig(support="disc"))
    assert harness.make_spectral(SweepConfig(spectral="point:2", alpha_inv=4)).atom == 2.0


def test_csv_round_trip(tmp_path):
    cfg = replace(parse_config(BASIC), values=(0.1, 0.3))
    path = tmp_path / "out.csv"
    rows = run_sweep(cfg, str(path))
    back = read_csv(path)
    assert format_rows(back) == format_rows(rows)
    assert path.read_text().splitlines()[0].split(",") == COLUMNS
    assert all(r.converged for r in back)


def test_sweep_deterministic():
    cfg = parse_config(BASIC)
    a, b = io.StringIO(), io.StringIO()
    run_sweep(cfg, a)
    run_sweep(cfg, b)
    assert a.getvalue() == b.getvalue()


def test_warm_and_cold_agree():
    cfg = replace(parse_config(BASIC), penalty="ridge-l1", lam1=0.8)
    warm = run_sweep(cfg)
    cold = run_sweep(replace(cfg, warm_start=False))
    for w, c in zip(warm, cold):
        assert w.distortion == pytest.approx(c.distortion, rel=1e-8)
    assert sum(w.iterations for w in warm) <= sum(c.iterations for c in cold)


def test_failure_is_recorded_not_raised():
    cfg = SweepConfig(alpha_inv=2.0, lam=0.0, sweep_var="lam", values=(0.0, 0.2))
    rows = run_sweep(cfg)
    assert not rows[0].converged and rows[0].note
    assert rows[1].converged


def test_rs_row_values():
    row = run_sweep(SweepConfig(alpha_inv=2.0, lam=0.1))[0]
    assert row.distortion == pytest.approx(0.03452248382484877, rel=1e-8)
    assert row.c == 0.0 and row.solver_mode == "rs"
    assert math.isnan(row.wall_time_ms)
    assert not math.isnan(run_sweep(SweepConfig(alpha_inv=2.0, lam=0.1, timing=True))[0].wall_time_ms)


def test_finite_rows_use_independent_seeds():
    assert trial_seed(0, 1) != trial_seed(0, 2) and trial_seed(0, 1) == trial_seed(0, 1)
    row = run_sweep(SweepConfig(mode="finite", alpha_inv=2.0, lam=0.1, n=40, trials=4))[0]
    assert row.converged and row.distortion_se > 0 and row.solver_mode == "finite:rzf"


def test_decoupled_eval_row():
    row = run_sweep(SweepConfig(mode="decoupled_eval", lam=1.0, xi=1.0, variance=2.0))[0]
    # ridge: x = s / 2, E|x|^2 = variance / 4
    assert row.avg_power == pytest.approx(0.5)
    assert row.eta == 1.0


def test_calibrate_full_activity_gives_zero():
    cal = calibrate_eta(SweepConfig(penalty="ridge-l0", lam=0.1), 1.0, "lam0")
    assert cal.value == 0.0


def test_calibrate_l0_matches_closed_form():
    cal = calibrate_eta(SweepConfig(penalty="ridge-l0", lam=0.1, alpha_inv=2.0), 0.3, "lam0")
    assert cal.achieved == pytest.approx(0.3, abs=1e-4)
    assert cal.closed_form == pytest.approx(cal.value, rel=1e-3)


def test_calibrate_l1_iterations():
    cal = calibrate_eta(SweepConfig(penalty="ridge-l1", lam=0.1, alpha_inv=2.0), 0.3, "lam1")
    assert abs(cal.achieved - 0.3) < 1e-4
    assert cal.iterations <= 40


def test_calibrate_unreachable():
    with pytest.raises(CalibrationError, match="not reachable"):
        calibrate_power(SweepConfig(penalty="ridge-l1", lam1=1.0, alpha_inv=2.0), 5.0)


def test_calibrate_power_ridge():
    point, cal = calibrate_power(SweepConfig(alpha_inv=2.0), 0.2)
    assert cal.achieved == pytest.approx(0.2, rel=1e-4)
    assert harness.rs_point(point).avg_power == pytest.approx(0.2, rel=1e-4)


def test_format_rows_booleans():
    row = run_sweep(SweepConfig(lam=0.1))[0]
    line = format_rows([row], header=False)
    assert ",true," in line
