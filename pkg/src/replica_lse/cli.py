"""Command line entry point.

Exit codes: 0 when every row converged, 2 when some row did not, 1 on usage
or configuration errors.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace

from . import harness
from .decoupled import solve_scalar


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p: argparse.ArgumentParser, finite: bool = False) -> None:
    p.add_argument("--alpha-inv", type=float, default=2.0, help="inverse load factor n/k")
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--penalty", choices=harness.PENALTIES, default="ridge")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--lambda0", dest="lam0", type=float, default=0.0)
    p.add_argument("--lambda1", dest="lam1", type=float, default=0.0)
    p.add_argument("--support", choices=harness.SUPPORTS, default="complex")
    p.add_argument("--peak", type=float, default=math.inf, help="peak power P")
    p.add_argument("--psk-order", type=int, default=2)
    p.add_argument("--spectral", default="mp", help="mp | point[:atom] | file:<path>")
    p.add_argument("--target-eta", type=float, default=None)
    p.add_argument("--tune", choices=harness.TUNABLES, default=None,
                   help="coefficient replaced by the --target-eta calibration")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=5000)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="replica-lse", description="Replica predictions and finite simulations for LSE precoders.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in (("rs", "replica-symmetric prediction"), ("rsb", "one-step RSB prediction"),
                       ("finite", "finite-size simulation"), ("random-tas", "random antenna selection")):
        _common(sub.add_parser(name, help=text))
    dec = sub.add_parser("decoupled", help="decoupled scalar precoder")
    _common(dec)
    dec.add_argument("--xi", type=float, default=1.0)
    dec.add_argument("--variance", type=float, default=1.0, help="variance of the decoupled input")
    dec.add_argument("--input", type=complex, default=None, help="evaluate x(s) at one input s instead")
    sw = sub.add_parser("sweep", help="run a sweep configuration file")
    sw.add_argument("--config", required=True)
    sw.add_argument("--out", default=None)
    cal = sub.add_parser("calibrate", help="tune a coefficient to hit a target activity (and power)")
    _common(cal)
    cal.add_argument("--target-power", type=float, default=None)
    cal.add_argument("--tune-power", choices=harness.TUNABLES, default="lam")
    return parser


_MODE = {"rs": "rs", "rsb": "rsb", "finite": "finite", "random-tas": "random_tas", "decoupled": "decoupled_eval"}


def _config(args, mode: str) -> harness.SweepConfig:
    kw = dict(mode=mode, spectral=args.spectral, alpha_inv=args.alpha_inv, rho=args.rho, penalty=args.penalty,
              lam=args.lam, lam0=args.lam0, lam1=args.lam1, support=args.support, peak=args.peak,
              psk_order=args.psk_order, target_eta=args.target_eta, tune=args.tune, n=args.n,
              trials=args.trials, seed=args.seed, tol=args.tol, max_iter=args.max_iter)
    if mode == "decoupled_eval":
        kw.update(xi=args.xi, variance=args.variance)
    return harness.SweepConfig(**kw)


def _emit(cfg, out) -> int:
    rows = harness.run_sweep(cfg, out if out else sys.stdout)
    return 0 if all(r.converged for r in rows) else 2


def main(argv=None) -> int:
    try:
        return _main(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1


def _main(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "sweep":
            cfg = harness.load_config(args.config)
            return _emit(cfg, args.out or cfg.output)
        if args.command == "calibrate":
            cfg = _config(args, "rs")
            if args.target_power is not None:
                point, cal = harness.calibrate_power(cfg, args.target_power, args.tune_power)
                print(f"{args.tune_power} = {getattr(point, args.tune_power):.17g}")
                if args.tune:
                    print(f"{args.tune} = {getattr(point, args.tune):.17g}")
                print(f"avg_power = {cal.achieved:.17g}")
                print(f"eta = {cal.solution.eta:.17g}")
                return 0
            if args.target_eta is None or args.tune is None:
                parser.error("calibrate needs --target-eta and --tune (or --target-power)")
            cal = harness.calibrate_eta(replace(cfg, target_eta=None, tune=None), args.target_eta, args.tune)
            print(f"{args.tune} = {cal.value:.17g}")
            print(f"eta = {cal.achieved:.17g}")
            print(f"iterations = {cal.iterations}")
            if cal.closed_form is not None:
                print(f"closed_form_{args.tune} = {cal.closed_form:.17g}")
            return 0
        cfg = _config(args, _MODE[args.command])
        if args.command == "decoupled" and args.input is not None:
            x = solve_scalar(args.input, args.xi, harness.make_penalty(cfg), harness.make_support(cfg))
            print(f"{x.real:.17g}{x.imag:+.17g}j")
            return 0
        return _emit(cfg, args.out)
    except (harness.ConfigError, harness.CalibrationError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
