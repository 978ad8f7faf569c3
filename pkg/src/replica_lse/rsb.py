"""One-step replica symmetry breaking fixed point.

Order parameters (chi, c, p) and the Parisi parameter mu.  With
chi~ = chi + mu c, xi = 1/R(-chi),

    rho_rs   = xi^2 [rho R(-chi~) + (p - rho chi~) R'(-chi~)]
    rho_rsb1 = xi^2 [R(-chi) - R(-chi~)] / mu

the decoupled input is t + u with t ~ CN(0, rho_rs) and u drawn from the
tilted conditional

    p(u | t) = exp(-(mu/xi) e(t + u)) phi(u; rho_rsb1) / Z(t),
    e(y)     = min_v [|v - y|^2 + xi u(v)] - |y|^2  <= 0.

At fixed mu the order parameters solve

    c + p        = E |x|^2
    chi~         = (xi / rho_rs)   E Re(x* t)
    chi~ + mu p  = (xi / rho_rsb1) E Re(x* u)

and mu solves

    mu^2 p rho_rsb1 / xi^2 + mu c / xi + I  =  E[-(mu/xi) e] - E log Z
    I = -int_chi^chi~ R(-w) dw.

The right-hand side is I(s_rsb1; s_rs) + KL(p_{s_rsb1} || phi(.; rho_rsb1))
written as one expected log-density ratio.  The third equation is iterated
in its equivalent form p = E |E[x | t]|^2 (Gaussian integration by parts),
which keeps p non-negative; all three are reported as residuals.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import optimize, special
from scipy.special import logsumexp

from . import quadrature
from .decoupled import (Penalty, Support, breakpoints, check_combination, default_tol,
                        is_active, objective, solve_scalar)
from .rs import (DivergenceError, InfeasibleState, RsSolution, SolverOptions, distortion,
                 papr, rs_solve, to_db)
from .spectral import SpectralModel, r_derivative, r_integral, r_transform

log = logging.getLogger(__name__)


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class RsbState:
    chi: float
    c: float
    p: float
    mu: float

    def __post_init__(self):
        vals = (self.chi, self.c, self.p, self.mu)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite RSB state {vals}")
        if self.chi < 0 or self.c < 0 or self.p < 0 or not self.mu > 0:
            raise ValueError(f"invalid RSB state {vals}")

    @property
    def chi_tilde(self) -> float:
        return float(self.chi + self.mu * self.c)


@dataclass(frozen=True)
class TiltedDensityParams:
    mu: float
    xi: float
    rho_rsb1: float
    penalty: Penalty
    support: Support


@dataclass(frozen=True)
class RsbOptions:
    damping: float = 0.8
    max_iter: int = 3000
    tol: float = 1e-10
    mu_min: float = 1e-3
    mu_max: float = 1e3
    mu_probes: int = 13
    mu_tol: float = 1e-6
    init: Optional[Tuple[float, float, float]] = None
    mu_init: Optional[float] = None
    chi_cap: float = 1e8
    c_floor: float = 1e-12
    n_outer: int = 200
    n_inner: int = 96
    n_angular: int = 64
    max_inner: int = 192
    outer_min_piece: int = 16
    pin_c_zero: bool = False

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError("damping must be in (0, 1]")
        if not 0 < self.mu_min < self.mu_max:
            raise ValueError("need 0 < mu_min < mu_max")


@dataclass
class RsbSolution:
    state: RsbState
    xi: float
    chi_tilde: float
    rho_rs: float
    rho_rsb1: float
    distortion: float
    eta: float
    avg_power: float
    papr: float
    mu_residual: float
    iterations: int
    residual: float
    converged: bool
    equation_residuals: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    is_rs: bool = False
    roots: List[Tuple[float, float]] = field(default_factory=list)
    note: str = ""

    @property
    def chi(self):
        return self.state.chi

    @property
    def c(self):
        return self.state.c

    @property
    def p(self):
        return self.state.p

    @property
    def mu(self):
        return self.state.mu

    @property
    def distortion_db(self) -> float:
        return to_db(self.distortion)


# --------------------------------------------------------------------------
def rsb_effective_params(state: RsbState, rho: float, spectral: SpectralModel) -> dict:
    chi_t = state.chi_tilde
    R0 = r_transform(spectral, -state.chi)
    Rt = r_transform(spectral, -chi_t)
    if not R0 > 0:
        raise InfeasibleState(f"R(-chi) = {R0} is not positive")
    xi = 1.0 / R0
    rho_rs = xi**2 * (rho * Rt + (state.p - rho * chi_t) * r_derivative(spectral, -chi_t))
    rho_rsb1 = xi**2 * (R0 - Rt) / state.mu if state.c > 0 else 0.0
    if not rho_rs > 0:
        raise InfeasibleState(f"rho_rs = {rho_rs} is not positive")
    if rho_rsb1 < 0:
        raise InfeasibleState(f"rho_rsb1 = {rho_rsb1} < 0: R(-w) is not decreasing here")
    return {"xi": float(xi), "chi_tilde": chi_t, "rho_rs": float(rho_rs), "rho_rsb1": float(rho_rsb1)}


def tilt_energy(z, xi: float, penalty: Penalty, support: Support):
    """min_v [|v - z|^2 + xi u(v)] - |z|^2, which is <= 0 since v = 0 gives |z|^2."""
    z = np.asarray(z, dtype=complex)
    x = solve_scalar(z, xi, penalty, support)
    e = objective(x, z, xi, penalty) - np.abs(z) ** 2
    # the v = 0 candidate bounds it exactly; roundoff can cross zero
    e = np.minimum(e, 0.0)
    return float(e) if e.ndim == 0 else e


def _tilt_slope(xi, penalty, support) -> float:
    """Bound on |grad e(y)| for large |y|, used to widen truncation windows."""
    if support.bounded:
        return 2.0 * support.radius
    return math.inf


# --------------------------------------------------------------------------
# Joint quadrature over (t, u)


class _JointGrid:
    """Outer nodes t_i with weights W_i, inner nodes y_ij = t_i + u_ij with
    Gaussian weights w_ij for u ~ phi(.; rho_rsb1).

    ``mode`` is 'real' (BPSK, only real parts matter), 'radial'
    (phase-invariant supports, t >= 0) or 'polar' (general PSK).
    """

    def __init__(self, params: TiltedDensityParams, rho_rs: float, opts: RsbOptions, n_inner=None):
        sup = params.support
        xi, mu, v1 = params.xi, params.mu, params.rho_rsb1
        breaks = breakpoints(xi, params.penalty, sup)
        n_inner = n_inner or opts.n_inner
        slope = mu / xi * _tilt_slope(xi, params.penalty, sup)
        outer_breaks = _transition_breaks(breaks, v1 / 2.0 if sup.real_only else v1, slope)
        if sup.real_only:
            self.mode = "real"
            t, W = quadrature.real_gaussian(rho_rs / 2.0, opts.n_outer, outer_breaks, min_per_piece=opts.outer_min_piece)
            self.t = t.astype(complex)
            self.W = W
            self.u, self.w = _real_inner(t, v1 / 2.0, breaks, slope, n_inner)
        else:
            if sup.phase_invariant:
                self.mode = "radial"
                r, W = quadrature.rayleigh(rho_rs, opts.n_outer, outer_breaks, min_per_piece=opts.outer_min_piece)
                self.t, self.W = r.astype(complex), W
            else:
                self.mode = "polar"
                self.t, self.W = quadrature.complex_polar(rho_rs, max(opts.n_outer // 4, 24), max(opts.n_angular // 2, 16), breaks)
            u, w = quadrature.complex_hermite(v1, n_inner)
            self.u = np.broadcast_to(u, (self.t.size, u.size))
            self.w = np.broadcast_to(w, (self.t.size, u.size))


def _transition_breaks(breaks, var, slope):
    """Outer breakpoints covering the band of t where t + u straddles an
    operator breakpoint; conditional moments change on the inner scale there."""
    if not breaks or var <= 0:
        return list(breaks)
    sd = math.sqrt(var)
    half = math.sqrt(2.0 * quadrature.TAIL) * sd
    widen = var * slope if math.isfinite(slope) else 0.0
    out = set(breaks)
    for b in breaks:
        for edge in np.arange(b - half - widen, b + half + widen + sd, 2.0 * sd):
            out.add(float(edge))
    return sorted(out)


def _real_inner(t, var, breaks, slope, m_per_piece):
    """Per-t composite Gauss-Legendre for u ~ N(0, var) on the real line,
    split where t + u crosses a breakpoint of the scalar operator."""
    sd = math.sqrt(var)
    half = math.sqrt(2.0 * quadrature.TAIL) * sd
    widen = var * slope if math.isfinite(slope) else 0.0
    lo = -half - widen
    hi = half + widen
    cuts = sorted({b for x in breaks for b in (x, -x)})
    # edges in u-space per outer node, clipped into the window
    edges = [np.full_like(t, lo)]
    for b in cuts:
        edges.append(np.clip(b - t, lo, hi))
    edges.append(np.full_like(t, hi))
    edges = np.sort(np.stack(edges, axis=1), axis=1)
    m = max(16, m_per_piece // max(1, len(cuts) + 1) * 2)
    x, w = quadrature._leggauss(m)
    a, b = edges[:, :-1], edges[:, 1:]
    h = (b - a)[..., None]
    u = a[..., None] + 0.5 * h * (x + 1.0)
    wu = 0.5 * h * w
    u = u.reshape(t.size, -1)
    wu = wu.reshape(t.size, -1) * np.exp(-(u**2) / (2 * var)) / math.sqrt(2 * math.pi * var)
    return u.astype(complex), wu


def _joint_moments(grid: _JointGrid, params: TiltedDensityParams, chunk: int = 32) -> dict:
    xi, mu, pen, sup = params.xi, params.mu, params.penalty, params.support
    tol = default_tol(sup)
    acc = dict(second_moment=0.0, corr_rs=0.0, corr_rsb=0.0, eta=0.0, cond_p=0.0,
               tilt=0.0, log_z=0.0, weight=0.0)
    for lo in range(0, grid.t.size, chunk):
        sl = slice(lo, lo + chunk)
        t = grid.t[sl][:, None]
        u = np.asarray(grid.u[sl])
        w = np.asarray(grid.w[sl])
        W = grid.W[sl]
        y = t + u
        x = solve_scalar(y, xi, pen, sup)
        e = np.minimum(objective(x, y, xi, pen) - np.abs(y) ** 2, 0.0)
        a = -(mu / xi) * e
        with np.errstate(divide="ignore"):
            lw = np.log(w)
        log_z = logsumexp(lw + a, axis=1)
        pi = np.exp(lw + a - log_z[:, None])
        ex = (pi * x).sum(axis=1)
        acc["second_moment"] += W @ (pi * np.abs(x) ** 2).sum(axis=1)
        acc["corr_rs"] += W @ (pi * np.real(np.conj(x) * t)).sum(axis=1)
        acc["corr_rsb"] += W @ (pi * np.real(np.conj(x) * u)).sum(axis=1)
        acc["eta"] += W @ (pi * is_active(x, tol)).sum(axis=1)
        acc["cond_p"] += W @ np.abs(ex) ** 2
        acc["tilt"] += W @ (pi * a).sum(axis=1)
        acc["log_z"] += W @ log_z
        acc["weight"] += W.sum()
    out = {k: float(v) for k, v in acc.items()}
    if not all(math.isfinite(v) for v in out.values()):
        raise QuadratureError("non-finite value in joint quadrature")
    return out


def _log_z_error(params: TiltedDensityParams, rho_rs: float, opts: RsbOptions, n_inner: int) -> float:
    """Relative change of Z(t) when the inner rule is coarsened by 3/4,
    checked on a handful of outer nodes."""
    g1 = _JointGrid(params, rho_rs, opts, n_inner)
    g2 = _JointGrid(params, rho_rs, opts, max(8, (3 * n_inner) // 4))
    idx = np.linspace(0, g1.t.size - 1, min(9, g1.t.size)).astype(int)

    def logz(g):
        y = g.t[idx][:, None] + np.asarray(g.u[idx])
        e = tilt_energy(y, params.xi, params.penalty, params.support)
        with np.errstate(divide="ignore"):
            return logsumexp(np.log(np.asarray(g.w[idx])) - (params.mu / params.xi) * e, axis=1)

    return float(np.max(np.abs(np.expm1(logz(g1) - logz(g2)))))


def log_normalizer(t, params: TiltedDensityParams, n_inner: int = 96) -> float:
    """log Z(t) for one conditioning value."""
    t = complex(t)
    if params.rho_rsb1 == 0:
        return 0.0
    if params.support.real_only:
        breaks = breakpoints(params.xi, params.penalty, params.support)
        slope = params.mu / params.xi * _tilt_slope(params.xi, params.penalty, params.support)
        u, w = _real_inner(np.array([t.real]), params.rho_rsb1 / 2.0, breaks, slope, n_inner)
        u, w = u[0] + 1j * t.imag * 0, w[0]
        y = t.real + u
    elif params.support.kind == "psk_zero":
        u, w = quadrature.complex_hermite(params.rho_rsb1, n_inner)
        y = t + u
    else:
        return _radial_log_normalizer(abs(t), params, 8 * n_inner)
    e = tilt_energy(y, params.xi, params.penalty, params.support)
    return float(logsumexp(np.log(w) - (params.mu / params.xi) * e))


def _radial_log_normalizer(r_t: float, params: TiltedDensityParams, n: int) -> float:
    # phase-invariant e: the angular integral of the Gaussian is 2 pi exp(-(r^2 + r_t^2)/v1) I0(2 r r_t / v1),
    # leaving a 1-D integral over |y| split at the scalar thresholds
    v1, beta = params.rho_rsb1, params.mu / params.xi
    if params.support.bounded:
        shift, sd = beta * params.support.radius * v1, math.sqrt(v1)
    else:
        a = 1.0 / v1 - beta / (1.0 + params.xi * params.penalty.lam)
        if not a > 0:
            raise ValueError("tilted conditional is not normalisable (mu too large)")
        shift, sd = r_t * (1.0 / (v1 * a) - 1.0), math.sqrt(1.0 / a)
    top = r_t + shift + 16.0 * sd
    edges = sorted({0.0, top, *(b for b in breakpoints(params.xi, params.penalty, params.support) if 0 < b < top)})
    r, w = quadrature.piecewise_legendre(edges, n, min_per_piece=32)
    e = tilt_energy(r.astype(complex), params.xi, params.penalty, params.support)
    z = 2.0 * r * r_t / v1
    logf = np.log(2.0 * r / v1) - (r - r_t) ** 2 / v1 + np.log(special.i0e(z)) - beta * e
    return float(logsumexp(logf, b=w))


def tilted_conditional(u, t, params: TiltedDensityParams, n_inner: int = 96):
    """Density of s_rsb1 = u given s_rs = t (with respect to d^2 u on C).

    ``u`` may be an array; Z(t) is computed once.  For BPSK the factor in
    Im(u) is the untilted Gaussian, so the density is still reported on C.
    """
    v1 = params.rho_rsb1
    if not v1 > 0:
        raise ValueError("the conditional is a point mass at 0 when rho_rsb1 = 0")
    lz = log_normalizer(t, params, n_inner)
    lz2 = log_normalizer(t, params, max(8, (3 * n_inner) // 4))
    if abs(math.expm1(lz - lz2)) > 1e-6:
        raise QuadratureError(f"normaliser not converged (rel. change {abs(math.expm1(lz - lz2)):.2e})")
    u = np.asarray(u, dtype=complex)
    y = complex(t) + u
    if params.support.real_only:
        y = y.real.astype(complex)
    e = tilt_energy(y, params.xi, params.penalty, params.support)
    dens = np.exp(-(params.mu / params.xi) * e - np.abs(u) ** 2 / v1 - lz) / (math.pi * v1)
    return float(dens) if dens.ndim == 0 else dens


def rsb_expectations(params: TiltedDensityParams, rho_rs: float, opts: RsbOptions = RsbOptions(),
                     refine: bool = True) -> dict:
    """Joint expectations over t ~ CN(0, rho_rs) and u ~ p(u | t).

    Keys: second_moment (E|x|^2), corr_rs (E Re x* t), corr_rsb (E Re x* u),
    eta, cond_p (E |E[x|t]|^2), tilt (E[-(mu/xi) e]), log_z (E log Z),
    weight (outer normalisation), z_error (inner rule error estimate).
    """
    n_inner = opts.n_inner
    z_err = 0.0
    if refine and params.rho_rsb1 > 0:
        z_err = _log_z_error(params, rho_rs, opts, n_inner)
        while z_err > 1e-6 and n_inner * 2 <= opts.max_inner:
            n_inner *= 2
            z_err = _log_z_error(params, rho_rs, opts, n_inner)
        if z_err > 1e-6:
            log.debug("inner quadrature error estimate %.2e at n_inner=%d", z_err, n_inner)
    grid = _JointGrid(params, rho_rs, opts, n_inner)
    out = _joint_moments(grid, params)
    out["z_error"] = z_err
    out["n_inner"] = n_inner
    return out


# --------------------------------------------------------------------------
# Mutual information + KL, computed separately from their definitions.


def info_terms_direct(params: TiltedDensityParams, rho_rs: float, n_outer: int = 400, n_u: int = 800) -> dict:
    """I(s_rsb1; s_rs) and KL(p_{s_rsb1} || phi(.; rho_rsb1)) on a shared
    discrete grid, for BPSK (real-reduced) configurations.

    The marginal p(u) = int p(u|t) phi(t) dt is formed explicitly on a fixed
    u-grid, so this path never uses the log-ratio collapse.
    """
    sup = params.support
    if not sup.real_only:
        raise NotImplementedError("direct information terms are implemented for BPSK only")
    xi, mu, v1 = params.xi, params.mu, params.rho_rsb1 / 2.0
    breaks = breakpoints(xi, params.penalty, sup)
    t, W = quadrature.real_gaussian(rho_rs / 2.0, n_outer, breaks)
    slope = mu / xi * _tilt_slope(xi, params.penalty, sup)
    sd = math.sqrt(v1)
    span = math.sqrt(2 * quadrature.TAIL) * sd + v1 * slope
    u, wu = quadrature.piecewise_legendre([-span, span], n_u)
    y = t[:, None] + u[None, :]
    a = -(mu / xi) * tilt_energy(y.astype(complex), xi, params.penalty, sup)
    log_phi = -(u**2) / (2 * v1) - 0.5 * math.log(2 * math.pi * v1)
    log_num = a + log_phi[None, :]
    log_z = logsumexp(log_num + np.log(wu)[None, :], axis=1)
    log_cond = log_num - log_z[:, None]            # log p(u|t) on the grid
    cond = np.exp(log_cond)
    marg = W @ cond                                # p(u)
    log_marg = np.log(np.maximum(marg, 1e-300))
    joint_w = W[:, None] * cond * wu[None, :]
    mi = float(np.sum(joint_w * (log_cond - log_marg[None, :])))
    kl = float(np.sum(marg * wu * (log_marg - log_phi)))
    return {"mutual_information": mi, "kl": kl, "sum": mi + kl,
            "collapsed": float(W @ (np.sum(cond * wu * a, axis=1)) - W @ log_z)}


# --------------------------------------------------------------------------


def equation_residuals(state: RsbState, eff: dict, m: dict) -> Tuple[float, float, float]:
    xi, chi_t = eff["xi"], eff["chi_tilde"]
    r1 = state.c + state.p - m["second_moment"]
    r3 = chi_t - xi * m["corr_rs"] / eff["rho_rs"]
    r2 = (chi_t + state.mu * state.p - xi * m["corr_rsb"] / eff["rho_rsb1"]) if eff["rho_rsb1"] > 0 else 0.0
    return (r1, r2, r3)


def mu_residual_terms(state: RsbState, eff: dict, m: dict, spectral: SpectralModel) -> Tuple[float, float]:
    xi, mu = eff["xi"], state.mu
    info = -r_integral(spectral, state.chi, eff["chi_tilde"])
    lhs = mu**2 * state.p * eff["rho_rsb1"] / xi**2 + mu * state.c / xi + info
    rhs = m["tilt"] - m["log_z"]
    return lhs, rhs


def rsb_mu_residual(state: RsbState, rho: float, spectral: SpectralModel, penalty: Penalty,
                    support: Support, opts: RsbOptions = RsbOptions()) -> float:
    """LHS - RHS of the Parisi-parameter equation at ``state``."""
    eff = rsb_effective_params(state, rho, spectral)
    if eff["rho_rsb1"] == 0:
        return 0.0
    params = TiltedDensityParams(state.mu, eff["xi"], eff["rho_rsb1"], penalty, support)
    m = rsb_expectations(params, eff["rho_rs"], opts)
    lhs, rhs = mu_residual_terms(state, eff, m, spectral)
    return lhs - rhs


def rsb_distortion(state: RsbState, rho: float, spectral: SpectralModel) -> float:
    eff = rsb_effective_params(state, rho, spectral)
    return distortion(eff["chi_tilde"], state.p, rho, spectral, eff["xi"], state.c, eff["rho_rsb1"])


# --------------------------------------------------------------------------


@dataclass
class _Inner:
    state: RsbState
    eff: dict
    moments: dict
    iterations: int
    change: float
    converged: bool


def _inner_solve(mu, rho, penalty, support, spectral, opts: RsbOptions, start) -> _Inner:
    """Damped fixed point on (chi, c, p) at fixed mu."""
    chi, c, p = start
    damping = opts.damping
    prev = math.inf
    best = None
    last = None
    for it in range(1, opts.max_iter + 1):
        if opts.pin_c_zero:
            c = 0.0
        state = RsbState(chi, c, p, mu)
        try:
            eff = rsb_effective_params(state, rho, spectral)
        except InfeasibleState:
            if last is None:
                raise
            damping = max(damping * 0.5, 1e-4)
            chi, c, p = last
            continue
        if eff["rho_rsb1"] > 0:
            params = TiltedDensityParams(mu, eff["xi"], eff["rho_rsb1"], penalty, support)
            m = rsb_expectations(params, eff["rho_rs"], opts, refine=(it == 1))
        else:
            m = _rs_moments(eff, penalty, support, opts)
        chi_t_new = float(eff["xi"] * m["corr_rs"] / eff["rho_rs"])
        p_new = m["cond_p"]
        c_new = 0.0 if opts.pin_c_zero else max(m["second_moment"] - p_new, 0.0)
        chi_new = max(chi_t_new - mu * c_new, 0.0)
        scale = lambda a, b: max(abs(a), abs(b), 1e-300)
        change = max(abs(chi_new - chi) / scale(chi, chi_new),
                     abs(p_new - p) / scale(p, p_new),
                     abs(c_new - c) / max(abs(c), abs(c_new), abs(p_new), 1e-300))
        if best is None or change < best.change:
            best = _Inner(state, eff, m, it, change, False)
        if change < opts.tol:
            st = RsbState(chi_new, c_new, p_new, mu)
            return _Inner(st, rsb_effective_params(st, rho, spectral), m, it, change, True)
        if c_new <= opts.c_floor * max(1.0, p_new) and not opts.pin_c_zero and c <= opts.c_floor * max(1.0, p):
            # collapsed onto the RS manifold
            st = RsbState(chi_new, 0.0, p_new, mu)
            return _Inner(st, rsb_effective_params(st, rho, spectral), m, it, change, change < 1e-6)
        if change > prev:
            damping = max(damping * 0.7, 1e-3)
        else:
            damping = min(damping * 1.1, opts.damping)
        prev = change
        last = (chi, c, p)
        chi = (1 - damping) * chi + damping * chi_new
        c = (1 - damping) * c + damping * c_new
        p = (1 - damping) * p + damping * p_new
        if chi > opts.chi_cap:
            raise DivergenceError("chi exceeded cap in RSB inner loop")
    return best


def _rs_moments(eff, penalty, support, opts: RsbOptions) -> dict:
    """Joint moments in the degenerate c = 0 limit (u = 0 almost surely)."""
    from .rs import decoupled_grid

    s, w = decoupled_grid(eff["rho_rs"], eff["xi"], penalty, support, opts.n_outer, opts.n_angular)
    x = solve_scalar(s, eff["xi"], penalty, support)
    m2 = float(w @ np.abs(x) ** 2)
    return {"second_moment": m2, "corr_rs": float(w @ np.real(np.conj(x) * s)), "corr_rsb": 0.0,
            "eta": float(w @ is_active(x, default_tol(support))), "cond_p": m2, "tilt": 0.0,
            "log_z": 0.0, "weight": float(w.sum()), "z_error": 0.0, "n_inner": 0}


def _make_solution(inner: _Inner, rho, spectral, support, roots, mu_res, note="") -> RsbSolution:
    st, eff, m = inner.state, inner.eff, inner.moments
    eq = equation_residuals(st, eff, m) if st.c > 0 else (st.p - m["second_moment"], 0.0,
                                                          eff["chi_tilde"] - eff["xi"] * m["corr_rs"] / eff["rho_rs"])
    avg = m["second_moment"]
    return RsbSolution(
        state=st, xi=eff["xi"], chi_tilde=eff["chi_tilde"], rho_rs=eff["rho_rs"], rho_rsb1=eff["rho_rsb1"],
        distortion=distortion(eff["chi_tilde"], st.p, rho, spectral, eff["xi"], st.c, eff["rho_rsb1"]),
        eta=min(max(m["eta"], 0.0), 1.0), avg_power=avg, papr=papr(support, avg),
        mu_residual=mu_res, iterations=inner.iterations, residual=inner.change,
        converged=inner.converged, equation_residuals=eq, is_rs=st.c == 0, roots=roots, note=note,
    )


def _from_rs(rs: RsSolution, mu: float, rho, spectral, support, note, roots=()) -> RsbSolution:
    st = RsbState(rs.chi, 0.0, rs.p, mu)
    return RsbSolution(
        state=st, xi=rs.xi, chi_tilde=rs.chi, rho_rs=rs.rho_rs, rho_rsb1=0.0, distortion=rs.distortion,
        eta=rs.eta, avg_power=rs.avg_power, papr=rs.papr, mu_residual=0.0, iterations=rs.iterations,
        residual=rs.residual, converged=rs.converged,
        equation_residuals=(rs.equation_residuals[0], 0.0, rs.equation_residuals[1]),
        is_rs=True, roots=list(roots), note=note,
    )


def rsb_solve(rho: float, penalty: Penalty, support: Support, spectral: SpectralModel,
              options: RsbOptions = RsbOptions()) -> RsbSolution:
    """One-step RSB solution.

    Outer: log-spaced probing of mu in [mu_min, mu_max] followed by Brent
    refinement of every sign change of the mu residual.  Inner: damped
    fixed point on (chi, c, p) at fixed mu.  When no c > 0 root exists the
    RS solution (always a stationary point) is returned with ``is_rs``.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    check_combination(penalty, support)
    rs = rs_solve(rho, penalty, support, spectral,
                  SolverOptions(tol=options.tol, chi_cap=options.chi_cap, n_radial=options.n_outer,
                                n_angular=options.n_angular))
    if options.pin_c_zero:
        mu = options.mu_init or 1.0
        inner = _inner_solve(mu, rho, penalty, support, spectral, options, (rs.chi, 0.0, rs.p))
        return _make_solution(inner, rho, spectral, support, [], 0.0, "c pinned to 0")

    if options.init is not None:
        start = options.init
    else:
        # break the symmetry: move a fraction of p into c
        start = (rs.chi, 0.5 * max(rs.p, 1e-3), 0.5 * rs.p)

    cache = {}

    def solve_at(mu, start_state):
        key = float(mu)
        if key not in cache:
            inner = _inner_solve(mu, rho, penalty, support, spectral, options, start_state)
            if inner.state.c > 0:
                lhs, rhs = mu_residual_terms(inner.state, inner.eff, inner.moments, spectral)
                res = lhs - rhs
            else:
                res = math.nan
            cache[key] = (inner, res)
        return cache[key]

    if options.mu_init is not None:
        lo = max(options.mu_min, options.mu_init / 4)
        hi = min(options.mu_max, options.mu_init * 4)
        probes = np.geomspace(lo, hi, max(5, options.mu_probes // 3))
    else:
        probes = np.geomspace(options.mu_min, options.mu_max, options.mu_probes)

    vals = []
    cur = start
    for mu in probes:
        try:
            inner, res = solve_at(mu, cur)
        except (InfeasibleState, DivergenceError) as exc:
            log.debug("mu=%g: %s", mu, exc)
            vals.append((mu, math.nan, None))
            continue
        vals.append((mu, res, inner))
        if inner.state.c > 0:
            s = inner.state
            cur = (s.chi, s.c, s.p)
        else:
            cur = start

    def nearest(mu):
        # warm start from the cached c > 0 state closest in log mu
        good = [(abs(math.log(k / mu)), v[0].state) for k, v in cache.items() if v[0].state.c > 0]
        st = min(good, key=lambda g: g[0])[1] if good else None
        return (st.chi, st.c, st.p) if st else start

    roots = []
    for (m0, r0, i0), (m1, r1, i1) in zip(vals, vals[1:]):
        if not (math.isfinite(r0) and math.isfinite(r1)) or r0 * r1 > 0:
            continue

        def f(lmu, r0=r0):
            mu = math.exp(lmu)
            inner, res = solve_at(mu, nearest(mu))
            return res if math.isfinite(res) else -r0

        try:
            lmu = optimize.brentq(f, math.log(m0), math.log(m1), xtol=options.mu_tol, rtol=1e-10)
        except ValueError:
            continue
        inner, res = solve_at(math.exp(lmu), nearest(math.exp(lmu)))
        if inner.state.c > 0 and inner.converged:
            roots.append((inner, res))

    if not roots:
        note = "no mu bracket with c > 0 in [%g, %g]; RS returned" % (options.mu_min, options.mu_max)
        return _from_rs(rs, 1.0, rho, spectral, support, note)

    sols = [_make_solution(i, rho, spectral, support, [], r) for i, r in roots]
    root_list = [(s.mu, s.distortion) for s in sols]
    # several roots: keep the one with the largest distortion (the most
    # conservative prediction) and report the rest
    sols.sort(key=lambda s: -s.distortion)
    best = sols[0]
    best.roots = root_list
    if len(sols) > 1:
        best.note = f"{len(sols)} mu roots"
    return best
