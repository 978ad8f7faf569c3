"""Replica analysis of least-square-error precoders with antenna selection.

Asymptotic (replica symmetric and one-step RSB) predictions for

    x = argmin_{v in X^n} ||H v - sqrt(rho) s||^2 + sum_j u(v_j)

with finite-size simulations to check them.
"""
from .decoupled import Penalty, Support, UnsupportedCombination, solve_scalar
from .finite import ProblemInstance, SolveResult, sample_instance
from .harness import SweepConfig, calibrate_eta, run_sweep
from .rs import RsSolution, SolverOptions, random_tas_prediction, rs_solve
from .rsb import RsbOptions, RsbSolution, rsb_solve
from .spectral import SpectralModel, r_derivative, r_integral, r_transform

__all__ = [
    "Penalty", "Support", "UnsupportedCombination", "solve_scalar",
    "ProblemInstance", "SolveResult", "sample_instance",
    "SweepConfig", "calibrate_eta", "run_sweep",
    "RsSolution", "SolverOptions", "random_tas_prediction", "rs_solve",
    "RsbOptions", "RsbSolution", "rsb_solve",
    "SpectralModel", "r_derivative", "r_integral", "r_transform",
]
