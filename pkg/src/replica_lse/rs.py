"""Replica-symmetric fixed point of the LSE precoder.

Order parameters (chi, p) are found by damped substitution on

    p   = E |x|^2
    chi = (xi / rho_rs) E Re(x* s),      s ~ CN(0, rho_rs)

with x the decoupled precoder output, xi = 1 / R(-chi) and

    rho_rs = xi^2 [rho R(-chi) + (p - rho chi) R'(-chi)].

The asymptotic distortion is

    D = rho + (1/alpha) d/dchi [(p - rho chi) chi R(-chi)]

with p held fixed inside the derivative.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from . import quadrature
from .decoupled import Penalty, Support, check_combination, default_tol, is_active, solve_scalar, breakpoints
from .spectral import SpectralModel, r_derivative, r_transform

log = logging.getLogger(__name__)


class InfeasibleState(ValueError):
    """A trial state maps to a non-positive decoupled variance."""


class DivergenceError(RuntimeError):
    """chi ran past its cap: the problem is ill-posed at these settings
    (e.g. an unregularised precoder on an underdetermined channel)."""


@dataclass(frozen=True)
class RsState:
    chi: float
    p: float

    def __post_init__(self):
        if not (self.chi >= 0 and self.p >= 0 and math.isfinite(self.chi) and math.isfinite(self.p)):
            raise ValueError(f"invalid RS state chi={self.chi}, p={self.p}")


@dataclass(frozen=True)
class SolverOptions:
    damping: float = 0.5
    max_iter: int = 5000
    tol: float = 1e-10
    init: Optional[Tuple[float, float]] = None
    extra_inits: Sequence[Tuple[float, float]] = ()
    chi_cap: float = 1e8
    n_radial: int = 200
    n_angular: int = 64

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError("damping must be in (0, 1]")
        if self.max_iter < 1 or not self.tol > 0:
            raise ValueError("max_iter and tol must be positive")


@dataclass
class RsSolution:
    state: RsState
    xi: float
    rho_rs: float
    distortion: float
    eta: float
    avg_power: float
    papr: float
    iterations: int
    residual: float
    converged: bool
    multiplicity: int = 1
    equation_residuals: Tuple[float, float] = (0.0, 0.0)

    @property
    def chi(self) -> float:
        return self.state.chi

    @property
    def p(self) -> float:
        return self.state.p

    @property
    def distortion_db(self) -> float:
        return to_db(self.distortion)


def to_db(value: float) -> float:
    if value == 0:
        return -math.inf
    return 10.0 * math.log10(value) if value > 0 else math.nan


def papr(support: Support, avg_power: float) -> float:
    if not support.bounded:
        return math.inf
    return support.peak / avg_power if avg_power > 0 else math.inf


def rs_effective_params(state: RsState, rho: float, spectral: SpectralModel) -> Tuple[float, float]:
    """(xi, rho_rs) for a trial state."""
    R = r_transform(spectral, -state.chi)
    if not R > 0:
        raise InfeasibleState(f"R(-chi) = {R} is not positive")
    dR = r_derivative(spectral, -state.chi)
    xi = 1.0 / R
    rho_rs = xi**2 * (rho * R + (state.p - rho * state.chi) * dR)
    if not rho_rs > 0:
        raise InfeasibleState(f"rho_rs = {rho_rs} at chi={state.chi}, p={state.p}")
    return xi, rho_rs


def decoupled_grid(var: float, xi: float, penalty: Penalty, support: Support, n_radial=200, n_angular=64):
    """Quadrature nodes for s ~ CN(0, var) adapted to the operator symmetry.

    Returns (nodes, weights).  For phase-invariant supports the nodes are the
    real magnitudes |s| (the phase factors out of every moment we need); for
    BPSK only Re(s) matters and the nodes are real N(0, var/2) points; other
    PSK orders use a full polar grid.
    """
    breaks = breakpoints(xi, penalty, support)
    if support.phase_invariant:
        r, w = quadrature.rayleigh(var, n_radial, breaks)
        return r.astype(complex), w
    if support.real_only:
        a, w = quadrature.real_gaussian(var / 2.0, n_radial, breaks)
        return a.astype(complex), w
    return quadrature.complex_polar(var, n_radial, n_angular, breaks)


def rs_expectations(xi: float, rho_rs: float, penalty: Penalty, support: Support,
                    n_radial: int = 200, n_angular: int = 64) -> dict:
    """E|x|^2, E Re(x* s) and P(x != 0) for s ~ CN(0, rho_rs)."""
    if not rho_rs > 0:
        raise InfeasibleState("rho_rs must be positive")
    s, w = decoupled_grid(rho_rs, xi, penalty, support, n_radial, n_angular)
    x = solve_scalar(s, xi, penalty, support)
    vals = np.stack([np.abs(x) ** 2, np.real(np.conj(x) * s), is_active(x, default_tol(support))])
    out = vals @ w
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite quadrature value")
    return {"second_moment": float(out[0]), "correlation": float(out[1]), "eta": float(min(max(out[2], 0.0), 1.0))}


def distortion(chi_t: float, p: float, rho: float, spectral: SpectralModel,
               xi: float = 1.0, c: float = 0.0, rho_rsb1: float = 0.0) -> float:
    """rho + (1/alpha){ d/dchi~[(p - rho chi~) chi~ R(-chi~)] + (xi c - chi~ rho_rsb1)/xi^2 }.

    The RS value is the c = rho_rsb1 = 0 case.
    """
    R = r_transform(spectral, -chi_t)
    dR = r_derivative(spectral, -chi_t)
    # d/dchi R(-chi) = -R'(-chi)
    bracket = (p - 2 * rho * chi_t) * R - (p - rho * chi_t) * chi_t * dR
    extra = (xi * c - chi_t * rho_rsb1) / xi**2 if (c or rho_rsb1) else 0.0
    return rho + (bracket + extra) / spectral.alpha


def rs_distortion(chi: float, p: float, rho: float, spectral: SpectralModel) -> float:
    return distortion(chi, p, rho, spectral)


def _iterate(rho, penalty, support, spectral, opts: SolverOptions, chi0, p0):
    chi, p = chi0, p0
    damping = opts.damping
    prev_change = math.inf
    best = None
    for it in range(1, opts.max_iter + 1):
        try:
            xi, rho_rs = rs_effective_params(RsState(chi, p), rho, spectral)
        except InfeasibleState:
            if best is None:
                raise
            # step back toward the last good point with stronger damping
            damping = max(damping * 0.5, 1e-4)
            chi, p = best[1], best[2]
            continue
        e = rs_expectations(xi, rho_rs, penalty, support, opts.n_radial, opts.n_angular)
        chi_new = xi * e["correlation"] / rho_rs
        p_new = e["second_moment"]
        change = max(abs(chi_new - chi) / max(chi, 1e-300, abs(chi_new)) if (chi or chi_new) else 0.0,
                     abs(p_new - p) / max(p, abs(p_new), 1e-300) if (p or p_new) else 0.0)
        if best is None or change < best[0]:
            best = (change, chi, p, it)
        if change < opts.tol:
            return chi_new, p_new, it, change, True
        # back off when the update grows, recover slowly otherwise
        if change > prev_change:
            damping = max(damping * 0.7, 1e-3)
        else:
            damping = min(damping * 1.1, opts.damping)
        prev_change = change
        chi = (1 - damping) * chi + damping * chi_new
        p = (1 - damping) * p + damping * p_new
        if chi > opts.chi_cap:
            raise DivergenceError(f"chi exceeded {opts.chi_cap:g} after {it} iterations")
    return best[1], best[2], opts.max_iter, best[0], False


def _polish(rho, penalty, support, spectral, opts: SolverOptions, chi0, p0):
    """Newton-type (MINPACK hybrid) solve of the two RS equations from a
    nearby point; used when substitution stalls."""

    def F(z):
        try:
            xi, rho_rs = rs_effective_params(RsState(max(z[0], 0.0), max(z[1], 0.0)), rho, spectral)
        except (InfeasibleState, ValueError):
            return [1e3, 1e3]
        e = rs_expectations(xi, rho_rs, penalty, support, opts.n_radial, opts.n_angular)
        return [xi * e["correlation"] / rho_rs - z[0], e["second_moment"] - z[1]]

    sol = optimize.root(F, [chi0, p0], method="hybr", options={"xtol": opts.tol * 1e-2})
    chi, p = (float(v) for v in sol.x)
    if chi < 0 or p < 0:
        return None
    res = max(abs(v) for v in F([chi, p])) / max(chi, p, 1e-300)
    return (chi, p, int(sol.nfev), res, res < opts.tol)


def _finish(chi, p, rho, penalty, support, spectral, opts, iterations, change, converged) -> RsSolution:
    state = RsState(chi, p)
    xi, rho_rs = rs_effective_params(state, rho, spectral)
    e = rs_expectations(xi, rho_rs, penalty, support, opts.n_radial, opts.n_angular)
    eq = (abs(p - e["second_moment"]), abs(chi * rho_rs - xi * e["correlation"]))
    avg = e["second_moment"]
    return RsSolution(
        state=state, xi=xi, rho_rs=rho_rs,
        distortion=rs_distortion(chi, p, rho, spectral),
        eta=e["eta"], avg_power=avg, papr=papr(support, avg),
        iterations=iterations, residual=change, converged=converged,
        equation_residuals=eq,
    )


def rs_solve(rho: float, penalty: Penalty, support: Support, spectral: SpectralModel,
             options: SolverOptions = SolverOptions()) -> RsSolution:
    """Solve the RS fixed point and evaluate distortion, activity and power.

    Several initialisations (``options.init`` plus ``options.extra_inits``)
    may be given; the converged fixed point with the lowest distortion is
    returned and ``multiplicity`` counts the distinct ones found.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    check_combination(penalty, support)
    inits = [options.init or (1.0, rho)] + list(options.extra_inits)
    found = []
    for chi0, p0 in inits:
        chi, p, it, change, ok = _iterate(rho, penalty, support, spectral, options, chi0, p0)
        if not ok:
            polished = _polish(rho, penalty, support, spectral, options, chi, p)
            if polished is not None and polished[3] < change:
                chi, p, extra, change, ok = polished
                it += extra
        found.append(_finish(chi, p, rho, penalty, support, spectral, options, it, change, ok))
    good = [s for s in found if s.converged] or found
    good.sort(key=lambda s: s.distortion)
    distinct = []
    for s in good:
        if all(abs(s.chi - d.chi) > 1e-6 * max(1.0, d.chi) or abs(s.p - d.p) > 1e-6 * max(1.0, d.p)
               for d in distinct):
            distinct.append(s)
    best = good[0]
    best.multiplicity = len(distinct)
    if best.multiplicity > 1:
        log.info("RS: %d distinct fixed points, keeping D=%.6g", best.multiplicity, best.distortion)
    return best


def random_tas_prediction(rho: float, lam: float, eta: float, alpha: float,
                          options: SolverOptions = SolverOptions()) -> RsSolution:
    """RS prediction for ridge precoding on a random eta-fraction of antennas
    of an i.i.d. channel with load alpha.

    The selected k x (eta n) submatrix equals sqrt(eta) times a matrix with
    entry variance 1/(eta n), so after v' = sqrt(eta) v the problem is a
    ridge precoder with load alpha/eta and regulariser lam/eta.  Distortion
    is unchanged and the power per antenna over all n antennas equals the
    per-antenna power of the rescaled problem.
    """
    if not 0 < eta <= 1:
        raise ValueError("eta must be in (0, 1]")
    sol = rs_solve(rho, Penalty(lam=lam / eta), Support.complex_plane(),
                   SpectralModel.marchenko_pastur(alpha / eta), options)
    sol.eta = eta
    return sol
