"""Sweep configuration, orchestration, calibration and CSV output."""
from __future__ import annotations

import configparser
import csv
import io
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import finite
from .decoupled import Penalty, Support, check_combination
from .rs import (DivergenceError, InfeasibleState, RsSolution, SolverOptions, papr, random_tas_prediction,
                 rs_expectations, rs_solve, to_db)
from .rsb import RsbOptions, rsb_solve
from .spectral import SpectralModel

log = logging.getLogger(__name__)

MODES = ("rs", "rsb", "finite", "random_tas", "decoupled_eval")
SWEEP_VARS = ("alpha_inv", "lam", "lam0", "lam1", "rho")
PENALTIES = ("ridge", "ridge-l0", "ridge-l1")
SUPPORTS = ("complex", "disc", "psk")
TUNABLES = ("lam", "lam0", "lam1")


class ConfigError(ValueError):
    """Invalid sweep configuration or command line."""


class CalibrationError(RuntimeError):
    """The requested target lies outside the reachable range."""


# -- configuration -------------------------------------------------------------


@dataclass(frozen=True)
class SweepConfig:
    mode: str = "rs"
    spectral: str = "mp"
    alpha_inv: float = 2.0
    rho: float = 1.0
    penalty: str = "ridge"
    lam: float = 0.0
    lam0: float = 0.0
    lam1: float = 0.0
    support: str = "complex"
    peak: float = math.inf
    psk_order: int = 2
    # calibration: target_eta replaces the coefficient named by ``tune``;
    # in random_tas mode target_eta is the selected fraction itself
    target_eta: Optional[float] = None
    tune: Optional[str] = None
    target_power: Optional[float] = None
    tune_power: str = "lam"
    # decoupled_eval inputs
    xi: float = 1.0
    variance: float = 1.0
    sweep_var: Optional[str] = None
    values: Tuple[float, ...] = ()
    n: Optional[int] = None
    trials: Optional[int] = None
    seed: int = 0
    restarts: int = 8
    sweeps: int = 200
    tol: float = 1e-10
    max_iter: int = 5000
    warm_start: bool = True
    workers: int = 1
    timing: bool = False
    output: Optional[str] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.penalty not in PENALTIES:
            raise ConfigError(f"penalty must be one of {PENALTIES}")
        if self.support not in SUPPORTS:
            raise ConfigError(f"support must be one of {SUPPORTS}")
        if self.sweep_var is not None:
            if self.sweep_var not in SWEEP_VARS:
                raise ConfigError(f"sweep variable must be one of {SWEEP_VARS}")
            if not self.values:
                raise ConfigError("sweep range is empty")
        if self.tune is not None and self.tune not in TUNABLES:
            raise ConfigError(f"tune must be one of {TUNABLES}")
        if self.tune_power not in TUNABLES:
            raise ConfigError(f"tune_power must be one of {TUNABLES}")
        if self.target_eta is not None and self.mode != "random_tas" and self.tune is None:
            raise ConfigError("target_eta needs 'tune' naming the coefficient it replaces")
        if self.mode == "random_tas" and self.target_eta is None:
            raise ConfigError("random_tas needs target_eta (the selected fraction)")
        if self.mode == "finite" and (not self.n or not self.trials):
            raise ConfigError("finite mode requires n and trials")
        if (self.n is None) != (self.trials is None):
            raise ConfigError("n and trials go together")
        if not self.alpha_inv > 0 or not self.rho > 0:
            raise ConfigError("alpha_inv and rho must be positive")

    @property
    def points(self) -> Tuple[float, ...]:
        return self.values if self.sweep_var else (math.nan,)

    def at(self, value: float) -> "SweepConfig":
        """Single-point configuration with the sweep variable substituted."""
        if self.sweep_var is None:
            return self
        return replace(self, **{self.sweep_var: float(value)}, sweep_var=None, values=())


_FLOATS = {f.name for f in fields(SweepConfig) if f.type in ("float", "Optional[float]")}
_INTS = {"psk_order", "n", "trials", "seed", "restarts", "sweeps", "max_iter", "workers"}
_BOOLS = {"warm_start", "timing"}


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def sweep_values(start: float, stop: float, step: float) -> Tuple[float, ...]:
    if not step > 0:
        raise ConfigError("step must be positive")
    if stop < start:
        raise ConfigError("empty sweep range (stop < start)")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return tuple(round(start + i * step, 12) for i in range(count))


def parse_config(text: str, base_dir: Optional[Path] = None) -> SweepConfig:
    """Parse ``[section]`` blocks of ``key = value`` lines; ``#`` starts a comment.

    Section names are organisational only.  The sweep is given either as
    ``variable`` with ``start``/``stop``/``step`` or with a ``values`` list.
    """
    cp = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                   interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    raw = {}
    for sec in cp.sections():
        for key, val in cp.items(sec):
            if key in raw:
                raise ConfigError(f"duplicate key {key!r}")
            raw[key] = val
    kw = {}
    var = raw.pop("variable", None)
    rng = {k: raw.pop(k) for k in ("start", "stop", "step") if k in raw}
    listed = raw.pop("values", None)
    if var is not None:
        kw["sweep_var"] = var.strip()
        if listed is not None and rng:
            raise ConfigError("give either values or start/stop/step")
        if listed is not None:
            kw["values"] = tuple(float(v) for v in listed.replace(",", " ").split())
        elif len(rng) == 3:
            kw["values"] = sweep_values(*(float(rng[k]) for k in ("start", "stop", "step")))
        else:
            raise ConfigError("sweep needs values or all of start, stop, step")
    elif rng or listed:
        raise ConfigError("sweep range given without a variable")
    names = {f.name for f in fields(SweepConfig)}
    for key, val in raw.items():
        if key not in names or key in ("sweep_var", "values"):
            raise ConfigError(f"unknown key {key!r}")
        val = val.strip()
        try:
            if key in _BOOLS:
                kw[key] = _parse_bool(val)
            elif key in _INTS:
                kw[key] = int(val)
            elif key in _FLOATS:
                kw[key] = float(val)
            else:
                kw[key] = val
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {val!r}") from exc
    if base_dir is not None and kw.get("spectral", "").startswith("file:"):
        path = Path(kw["spectral"][5:])
        if not path.is_absolute():
            kw["spectral"] = "file:" + str(base_dir / path)
    return SweepConfig(**kw)


def load_config(path) -> SweepConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), path.parent)


# -- model construction -------------------------------------------------------


def make_penalty(cfg: SweepConfig) -> Penalty:
    if cfg.penalty == "ridge":
        return Penalty(lam=cfg.lam)
    if cfg.penalty == "ridge-l0":
        return Penalty(lam=cfg.lam, lam0=cfg.lam0)
    return Penalty(lam=cfg.lam, lam1=cfg.lam1)


def make_support(cfg: SweepConfig) -> Support:
    if cfg.support == "complex":
        return Support.complex_plane()
    if not math.isfinite(cfg.peak):
        raise ConfigError(f"support {cfg.support!r} needs a finite peak power")
    if cfg.support == "disc":
        return Support.disc(cfg.peak)
    return Support.psk_zero(cfg.peak, cfg.psk_order)


def make_spectral(cfg: SweepConfig) -> SpectralModel:
    alpha = 1.0 / cfg.alpha_inv
    spec = cfg.spectral.strip()
    if spec == "mp":
        return SpectralModel.marchenko_pastur(alpha)
    if spec == "point" or spec.startswith("point:"):
        atom = float(spec[6:]) if ":" in spec else 1.0
        return SpectralModel.point_mass(atom, alpha)
    if spec.startswith("file:"):
        return SpectralModel.from_file(spec[5:], alpha)
    raise ConfigError(f"unknown spectral model {spec!r}")


def _rs_options(cfg: SweepConfig, init=None) -> SolverOptions:
    return SolverOptions(tol=cfg.tol, max_iter=cfg.max_iter, init=init)


def rs_point(cfg: SweepConfig, init=None) -> RsSolution:
    """RS solution at a fully specified point (random_tas: the ridge reduction)."""
    if cfg.mode == "random_tas":
        return random_tas_prediction(cfg.rho, cfg.lam, cfg.target_eta, 1.0 / cfg.alpha_inv,
                                     _rs_options(cfg, init))
    return rs_solve(cfg.rho, make_penalty(cfg), make_support(cfg), make_spectral(cfg), _rs_options(cfg, init))


# -- calibration --------------------------------------------------------------


@dataclass
class Calibration:
    coefficient: str
    value: float
    achieved: float
    iterations: int
    solution: RsSolution
    closed_form: Optional[float] = None


def _bisect(f: Callable[[float], Tuple[float, RsSolution]], target: float, tol: float, lo: float, hi: float,
            log_scale: bool, max_iter: int, what: str) -> Tuple[float, float, RsSolution, int]:
    """Bisection for f(x) = target where f is monotone on [lo, hi].  The
    bracket's upper end is doubled until the target is enclosed."""
    f_lo, s_lo = f(lo)
    if abs(f_lo - target) < tol:
        return lo, f_lo, s_lo, 1
    f_hi, s_hi = f(hi)
    evals = 2
    grow = 0
    while (f_lo - target) * (f_hi - target) > 0 and abs(f_hi - target) >= tol:
        if grow >= 60:
            raise CalibrationError(
                f"{what} = {target:g} not reachable: {what} ranges over [{min(f_lo, f_hi):.6g}, {max(f_lo, f_hi):.6g}]")
        hi *= 2.0
        f_hi, s_hi = f(hi)
        evals += 1
        grow += 1
    if abs(f_hi - target) < tol:
        return hi, f_hi, s_hi, evals
    for _ in range(max_iter):
        mid = math.sqrt(lo * hi) if log_scale else 0.5 * (lo + hi)
        f_mid, s_mid = f(mid)
        evals += 1
        if abs(f_mid - target) < tol:
            return mid, f_mid, s_mid, evals
        if (f_mid - target) * (f_lo - target) > 0:
            lo, f_lo = mid, f_mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    raise CalibrationError(f"{what} bisection did not reach tolerance {tol:g} (last {f_mid:.10g})")


def hard_threshold_lam0(sol: RsSolution, lam: float, eta: float) -> float:
    """lam0 giving activity eta at a converged ridge+l0 fixed point on C:
    eta = exp(-tau0^2 / rho_rs) with tau0^2 = xi lam0 (1 + xi lam)."""
    return sol.rho_rs * math.log(1.0 / eta) / (sol.xi * (1.0 + sol.xi * lam))


def calibrate_eta(cfg: SweepConfig, target: float, tunable: str, tol: float = 1e-4,
                  max_iter: int = 200) -> Calibration:
    """Tune one coefficient so that the RS activity equals ``target``.

    Activity decreases in lam0 and lam1 (and in lam for finite supports), so
    the search starts at zero and grows the bracket upwards.
    """
    if tunable not in TUNABLES:
        raise ConfigError(f"tunable must be one of {TUNABLES}")
    if not 0 < target <= 1:
        raise ConfigError("target eta must lie in (0, 1]")
    base = replace(cfg, mode="rs", target_eta=None, tune=None, target_power=None, sweep_var=None, values=())
    last = {}

    def f(v):
        sol = rs_point(replace(base, **{tunable: v}), last.get("init"))
        last["init"] = (sol.chi, sol.p)
        return sol.eta, sol

    value, eta, sol, evals = _bisect(f, target, tol, 0.0, 1.0, False, max_iter, "eta")
    closed = None
    if tunable == "lam0" and cfg.support == "complex" and 0 < target < 1:
        closed = hard_threshold_lam0(sol, cfg.lam, eta)
    return Calibration(tunable, value, eta, evals, sol, closed)


def calibrate_power(cfg: SweepConfig, target: float, tunable: str = "lam", rtol: float = 1e-4,
                    max_iter: int = 200) -> Tuple[SweepConfig, Calibration]:
    """Tune ``tunable`` (log-scale bisection) so the RS average power equals
    ``target``; a target_eta calibration, if configured, is redone at each
    trial value.  Returns the resolved configuration and the calibration."""
    inner = {}

    def f(v):
        point = replace(cfg, **{tunable: v}, target_power=None)
        point = resolve_eta(point)
        sol = rs_point(point)
        inner["cfg"] = point
        return sol.avg_power / target, sol

    value, ratio, sol, evals = _bisect(f, 1.0, rtol, 1e-8, 1.0, True, max_iter, "power/target")
    point = resolve_eta(replace(cfg, **{tunable: value}, target_power=None))
    return point, Calibration(tunable, value, ratio * target, evals, sol)


def resolve_eta(cfg: SweepConfig) -> SweepConfig:
    if cfg.target_eta is None or cfg.mode == "random_tas":
        return cfg
    cal = calibrate_eta(cfg, cfg.target_eta, cfg.tune)
    return replace(cfg, **{cfg.tune: cal.value}, target_eta=None, tune=None)


def resolve(cfg: SweepConfig) -> SweepConfig:
    """Replace calibration targets with concrete coefficient values."""
    if cfg.target_power is not None:
        point, _ = calibrate_power(cfg, cfg.target_power, cfg.tune_power)
        return point
    return resolve_eta(cfg)


# -- rows and CSV -------------------------------------------------------------


@dataclass
class ResultRow:
    mode: str
    sweep_var: str
    sweep_value: float
    alpha_inv: float
    rho: float
    spectral: str
    penalty: str
    lam: float
    lam0: float
    lam1: float
    support: str
    peak: float
    psk_order: int
    target_eta: float
    n: int
    trials: int
    seed: int
    chi: float = math.nan
    p: float = math.nan
    c: float = math.nan
    mu: float = math.nan
    xi: float = math.nan
    rho_rs: float = math.nan
    rho_rsb1: float = math.nan
    distortion: float = math.nan
    distortion_db: float = math.nan
    distortion_se: float = math.nan
    eta: float = math.nan
    avg_power: float = math.nan
    papr: float = math.nan
    iterations: int = 0
    residual: float = math.nan
    converged: bool = False
    solver_mode: str = ""
    wall_time_ms: float = math.nan
    note: str = ""


COLUMNS = [f.name for f in fields(ResultRow)]
_ROW_TYPES = {f.name: f.type for f in fields(ResultRow)}


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _unfmt(name: str, text: str):
    kind = _ROW_TYPES[name]
    if kind == "bool":
        return text == "true"
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    return text


def format_rows(rows: Sequence[ResultRow], header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(COLUMNS)
    for row in rows:
        w.writerow([_fmt(getattr(row, c)) for c in COLUMNS])
    return buf.getvalue()


def read_csv(path) -> List[ResultRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        head = next(reader)
        if head != COLUMNS:
            raise ValueError("unexpected CSV header")
        return [ResultRow(**{c: _unfmt(c, v) for c, v in zip(head, line)}) for line in reader]


def _base_row(cfg: SweepConfig, sweep_var: str, value: float) -> ResultRow:
    nan_if_none = lambda v: math.nan if v is None else v
    return ResultRow(
        mode=cfg.mode, sweep_var=sweep_var, sweep_value=value, alpha_inv=cfg.alpha_inv, rho=cfg.rho,
        spectral=cfg.spectral, penalty=cfg.penalty, lam=cfg.lam, lam0=cfg.lam0, lam1=cfg.lam1,
        support=cfg.support, peak=cfg.peak, psk_order=cfg.psk_order,
        target_eta=nan_if_none(cfg.target_eta), n=cfg.n or 0, trials=cfg.trials or 0, seed=cfg.seed,
    )


# -- point evaluation ---------------------------------------------------------


def trial_seed(master: int, index: int) -> int:
    """Independent 63-bit seed for trial ``index`` of a run seeded by ``master``."""
    return int(np.random.SeedSequence([master, index]).generate_state(1, np.uint64)[0] >> np.uint64(1))


def _finite_trial(cfg: SweepConfig, index: int) -> finite.SolveResult:
    pen, sup = make_penalty(cfg), make_support(cfg)
    model = "iid_gaussian" if cfg.spectral == "mp" else make_spectral(cfg)
    seed = trial_seed(cfg.seed, index)
    if cfg.mode == "random_tas":
        inst = finite.sample_instance(cfg.n, 1.0 / cfg.alpha_inv, cfg.rho, Penalty(lam=cfg.lam), sup, model, seed)
        return finite.random_tas(inst, cfg.target_eta, cfg.lam)
    inst = finite.sample_instance(cfg.n, 1.0 / cfg.alpha_inv, cfg.rho, pen, sup, model, seed)
    return finite.solve(inst, max_iter=cfg.max_iter, restarts=cfg.restarts, sweeps=cfg.sweeps)


def _fill_finite(row: ResultRow, cfg: SweepConfig, results: Sequence[finite.SolveResult]) -> None:
    d = np.array([r.distortion for r in results])
    row.distortion = float(d.mean())
    row.distortion_db = to_db(row.distortion)
    row.distortion_se = float(d.std(ddof=1) / math.sqrt(d.size)) if d.size > 1 else math.nan
    row.eta = float(np.mean([r.active_fraction for r in results]))
    row.avg_power = float(np.mean([r.avg_power for r in results]))
    row.papr = papr(make_support(cfg), row.avg_power)
    row.iterations = int(sum(r.iterations for r in results))
    row.converged = all(r.converged for r in results)
    row.solver_mode = "finite:" + ("random_tas" if cfg.mode == "random_tas" else finite.solver_name(
        make_penalty(cfg), make_support(cfg)))


def evaluate(cfg: SweepConfig, row: ResultRow, warm: Optional[dict] = None) -> dict:
    """Solve one fully resolved point, filling ``row``; returns warm-start state."""
    warm = warm or {}
    if cfg.mode == "decoupled_eval":
        pen, sup = make_penalty(cfg), make_support(cfg)
        check_combination(pen, sup)
        e = rs_expectations(cfg.xi, cfg.variance, pen, sup)
        row.xi, row.rho_rs = cfg.xi, cfg.variance
        row.p = row.avg_power = e["second_moment"]
        row.chi = cfg.xi * e["correlation"] / cfg.variance
        row.eta = e["eta"]
        row.papr = papr(sup, row.avg_power)
        row.iterations, row.residual, row.converged = 1, 0.0, True
        row.solver_mode = "decoupled"
        return {}
    if cfg.mode == "finite" or (cfg.mode == "random_tas" and cfg.n):
        results = [_finite_trial(cfg, i) for i in range(cfg.trials)]
        _fill_finite(row, cfg, results)
        return {}
    if cfg.mode == "rsb":
        opts = RsbOptions(tol=cfg.tol, max_iter=cfg.max_iter, init=warm.get("rsb"), mu_init=warm.get("mu"))
        sol = rsb_solve(cfg.rho, make_penalty(cfg), make_support(cfg), make_spectral(cfg), opts)
        row.c, row.mu, row.rho_rsb1 = sol.c, sol.mu, sol.rho_rsb1
        row.note = sol.note
        row.solver_mode = "rsb:rs-fallback" if sol.is_rs else "rsb"
        nxt = {} if sol.is_rs else {"rsb": (sol.chi, sol.c, sol.p), "mu": sol.mu}
    else:
        sol = rs_point(cfg, warm.get("rs"))
        row.c, row.mu, row.rho_rsb1 = 0.0, math.nan, 0.0
        row.solver_mode = "rs"
        nxt = {"rs": (sol.chi, sol.p)}
    row.chi, row.p, row.xi, row.rho_rs = sol.chi, sol.p, sol.xi, sol.rho_rs
    row.distortion, row.distortion_db = sol.distortion, to_db(sol.distortion)
    row.eta, row.avg_power, row.papr = sol.eta, sol.avg_power, sol.papr
    row.iterations, row.residual, row.converged = sol.iterations, sol.residual, sol.converged
    return nxt if sol.converged else {}


def run_point(cfg: SweepConfig, value: float, warm: Optional[dict] = None) -> Tuple[ResultRow, dict]:
    """Evaluate one sweep point.  Failures are recorded in the row."""
    point = cfg.at(value)
    t0 = time.perf_counter()
    nxt = {}
    try:
        resolved = resolve(point)
        row = _base_row(resolved, cfg.sweep_var or "", value)
        row.target_eta = math.nan if cfg.target_eta is None else cfg.target_eta
        nxt = evaluate(resolved, row, warm)
    except ConfigError:
        raise
    except (InfeasibleState, DivergenceError, CalibrationError, FloatingPointError, ValueError,
            RuntimeError, ArithmeticError) as exc:
        log.warning("point %s=%g failed: %s", cfg.sweep_var, value, exc)
        row = _base_row(point, cfg.sweep_var or "", value)
        row.converged = False
        row.solver_mode = cfg.mode
        row.note = f"{type(exc).__name__}: {exc}"
    if cfg.timing:
        row.wall_time_ms = 1e3 * (time.perf_counter() - t0)
    return row, nxt


def _run_cold(args):
    cfg, value = args
    return run_point(cfg, value)[0]


def run_sweep(cfg: SweepConfig, out=None) -> List[ResultRow]:
    """One row per sweep point, written to ``out`` (path or text stream) as
    each point finishes.

    With ``warm_start`` each fixed point starts from the previous point's
    solution and the sweep runs sequentially; otherwise points may run in a
    process pool of ``workers``.  Output is deterministic given the config
    (``wall_time_ms`` is only filled when ``timing`` is on).
    """
    out = out if out is not None else cfg.output
    own = isinstance(out, (str, Path))
    stream = open(out, "w", newline="", encoding="utf-8") if own else out
    rows: List[ResultRow] = []
    try:
        if stream is not None:
            stream.write(format_rows([], header=True))
            stream.flush()

        def emit(row):
            rows.append(row)
            if stream is not None:
                stream.write(format_rows([row], header=False))
                stream.flush()

        if cfg.warm_start or cfg.workers <= 1 or len(cfg.points) == 1:
            warm = {}
            for v in cfg.points:
                row, nxt = run_point(cfg, v, warm if cfg.warm_start else None)
                warm = nxt or warm
                emit(row)
        else:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                for row in pool.map(_run_cold, [(cfg, v) for v in cfg.points]):
                    emit(row)
    finally:
        if own:
            stream.close()
    return rows
