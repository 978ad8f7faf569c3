"""Scalar (decoupled) LSE precoder.

Solves  x(s) = argmin_{v in X} |v - s|^2 + xi * u(v)  with

    u(v) = lam |v|^2 + lam0 * 1{v != 0} + lam1 |v|

over one of three supports: the complex plane, the disc |v| <= sqrt(P), or
the set {0} U {sqrt(P) exp(j 2 pi k / M), k = 1..M}.  Every function here is
vectorised over ``s``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class UnsupportedCombination(ValueError):
    pass


@dataclass(frozen=True)
class Penalty:
    """Per-entry regulariser lam |v|^2 + lam0 ||v||_0 + lam1 |v|."""

    lam: float = 0.0
    lam0: float = 0.0
    lam1: float = 0.0

    def __post_init__(self):
        for name in ("lam", "lam0", "lam1"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be non-negative and finite, got {v}")
        if self.lam0 > 0 and self.lam1 > 0:
            raise ValueError("at most one of lam0 and lam1 may be positive")

    @property
    def kind(self) -> str:
        if self.lam0 > 0:
            return "ridge-l0"
        if self.lam1 > 0:
            return "ridge-l1"
        return "ridge"

    @property
    def is_convex(self) -> bool:
        return self.lam0 == 0

    def __call__(self, v):
        a = np.abs(v)
        return self.lam * a**2 + self.lam0 * (a > 0) + self.lam1 * a


@dataclass(frozen=True)
class Support:
    """Constellation set the precoder output is restricted to."""

    kind: str = "complex_plane"
    peak: float = math.inf
    order: int = 0

    def __post_init__(self):
        if self.kind == "complex_plane":
            object.__setattr__(self, "peak", math.inf)
        elif self.kind in ("disc", "psk_zero"):
            if not (self.peak > 0 and math.isfinite(self.peak)):
                raise ValueError("peak power P must be positive and finite")
            if self.kind == "psk_zero" and not (isinstance(self.order, (int, np.integer)) and self.order >= 2):
                # M=1 would allow psi(k*) <= 0 and a division by zero in tau_d
                raise ValueError("PSK order M must be an integer >= 2")
        else:
            raise ValueError(f"unknown support kind {self.kind!r}")

    @classmethod
    def complex_plane(cls) -> "Support":
        return cls("complex_plane")

    @classmethod
    def disc(cls, peak: float) -> "Support":
        return cls("disc", peak)

    @classmethod
    def psk_zero(cls, peak: float, order: int) -> "Support":
        return cls("psk_zero", peak, int(order))

    @property
    def radius(self) -> float:
        return math.sqrt(self.peak)

    @property
    def bounded(self) -> bool:
        return self.kind != "complex_plane"

    @property
    def phase_invariant(self) -> bool:
        return self.kind != "psk_zero"

    @property
    def real_only(self) -> bool:
        """True when the precoder output only depends on Re(s) (BPSK)."""
        return self.kind == "psk_zero" and self.order == 2

    def points(self) -> np.ndarray:
        """Finite constellation (psk_zero only), zero first."""
        if self.kind != "psk_zero":
            raise ValueError("only psk_zero has a finite constellation")
        k = np.arange(1, self.order + 1)
        return np.concatenate([[0j], self.radius * np.exp(2j * np.pi * k / self.order)])

    def contains(self, v, tol: float = 1e-12) -> np.ndarray:
        v = np.asarray(v)
        if self.kind == "complex_plane":
            return np.isfinite(v)
        if self.kind == "disc":
            return np.abs(v) <= self.radius + tol
        d = np.abs(v[..., None] - self.points())
        return d.min(axis=-1) <= tol

    def describe(self) -> str:
        if self.kind == "complex_plane":
            return "complex"
        if self.kind == "disc":
            return f"disc(P={self.peak!r})"
        return f"psk(P={self.peak!r},M={self.order})"


def check_combination(penalty: Penalty, support: Support) -> None:
    if support.kind == "psk_zero" and (penalty.lam0 > 0 or penalty.lam1 > 0):
        # |v| is constant on the nonzero PSK points, so both terms only shift lam
        raise UnsupportedCombination(
            "psk_zero support takes a pure ridge penalty; zero-norm/l1 terms are redundant there"
        )


def objective(v, s, xi, penalty: Penalty):
    """|v - s|^2 + xi u(v)."""
    return np.abs(v - s) ** 2 + xi * penalty(v)


def thresholds(xi: float, penalty: Penalty, support: Support) -> dict:
    """Magnitude thresholds of the closed-form rules (for docs, tests and
    quadrature breakpoints)."""
    g = 1.0 + xi * penalty.lam
    out = {}
    if penalty.lam0 > 0:
        out["tau0"] = math.sqrt(xi * penalty.lam0 * g)
    if penalty.lam1 > 0 or support.kind != "psk_zero":
        out["tau1"] = xi * penalty.lam1 / 2.0
    if support.kind == "disc":
        r = support.radius
        if penalty.lam0 > 0:
            tt = g * r
            out["tau0_tilde"] = tt
            out["tau0_hat"] = max(tt, tt / 2.0 + out["tau0"] ** 2 / (2.0 * tt))
        else:
            out["tau1_tilde"] = r * g + xi * penalty.lam1 / 2.0
    if support.kind == "psk_zero":
        # threshold on |s| * psi(k*), i.e. on the projection onto the nearest point
        out["tau_d_projected"] = support.radius * g / 2.0
    return out


def breakpoints(xi: float, penalty: Penalty, support: Support) -> list:
    """Sorted magnitudes where x(s) is non-smooth in |s| (or in Re s for BPSK)."""
    pts = {v for v in thresholds(xi, penalty, support).values() if v > 0}
    if support.kind == "disc" and penalty.lam0 == 0 and penalty.lam1 == 0:
        pts.add(support.radius * (1.0 + xi * penalty.lam))
    return sorted(pts)


def solve_scalar(s, xi: float, penalty: Penalty, support: Support):
    """Global minimiser of |v - s|^2 + xi u(v) over the support.

    Exact thresholds resolve to the silent branch.  Returns a complex array
    shaped like ``s`` (or a Python complex for scalar input).
    """
    check_combination(penalty, support)
    if not (xi > 0 and math.isfinite(xi)):
        raise ValueError(f"xi must be positive and finite, got {xi}")
    scalar = np.ndim(s) == 0
    s = np.asarray(s, dtype=complex)
    if not np.all(np.isfinite(s)):
        raise ValueError("non-finite decoupled input")

    g = 1.0 + xi * penalty.lam
    mag = np.abs(s)
    # angle() stays finite for subnormal inputs where s / |s| overflows
    phase = np.exp(1j * np.angle(s))

    if support.kind == "psk_zero":
        x = _solve_psk(s, mag, g, support)
    else:
        # magnitude of the best nonzero point: shrink, soft threshold, clip
        r = np.maximum(mag - xi * penalty.lam1 / 2.0, 0.0) / g
        if support.kind == "disc":
            r = np.minimum(r, support.radius)
        if penalty.lam0 > 0:
            # compare the nonzero candidate against silence directly; this
            # also settles the overlapping endpoints of the disc rule
            gain = mag**2 - (g * r**2 - 2.0 * r * mag + mag**2 + xi * penalty.lam0)
            r = np.where(gain > 0, r, 0.0)
        x = phase * r
    return complex(x) if scalar else x


def _solve_psk(s, mag, g, support):
    pts = support.points()[1:]
    ang = 2 * np.pi * np.arange(1, support.order + 1) / support.order
    psi = np.cos(ang - np.angle(s)[..., None])
    # argmax returns the first (smallest k) on ties
    kstar = np.argmax(psi, axis=-1)
    proj = mag * np.take_along_axis(psi, kstar[..., None], axis=-1)[..., 0]
    # active iff |s| psi(k*) > sqrt(P)(1 + xi lam)/2, i.e. |s| > tau_d
    active = proj > support.radius * g / 2.0
    return np.where(active, pts[kstar], 0j)


def default_tol(support: Support) -> float:
    return 1e-9 * support.radius if support.bounded else 1e-9


def is_active(x, tol: float = 1e-9):
    if tol < 0:
        raise ValueError("tol must be non-negative")
    return np.abs(x) > tol


@dataclass(frozen=True)
class Grid:
    radial: int = 400
    angular: int = 256
    radius_cap: float | None = None

    def __post_init__(self):
        if self.radial < 1 or self.angular < 1:
            raise ValueError("grid resolution must be positive")
        if self.radius_cap is not None and not self.radius_cap > 0:
            raise ValueError("radius cap must be positive")


def oracle_grid(s, xi: float, support: Support, grid: Grid):
    """Candidate points of the brute-force oracle and the cell diameter."""
    if support.kind == "psk_zero":
        return support.points(), 0.0
    if support.kind == "disc":
        cap = support.radius
    else:
        cap = grid.radius_cap if grid.radius_cap is not None else max(4.0 * abs(s), 1.0)
        if cap < 4.0 * abs(s):
            raise ValueError("radius cap must be at least 4|s| on unbounded supports")
    r = np.linspace(0.0, cap, grid.radial + 1)[1:]
    th = 2 * np.pi * np.arange(grid.angular) / grid.angular
    pts = np.concatenate([[0j], (r[:, None] * np.exp(1j * th)[None, :]).ravel()])
    cell = math.hypot(cap / grid.radial, cap * 2 * np.pi / grid.angular)
    return pts, cell


def oracle_scalar(s, xi: float, penalty: Penalty, support: Support, grid: Grid = Grid()) -> complex:
    """Best grid point of |v - s|^2 + xi u(v) by exhaustive evaluation."""
    check_combination(penalty, support)
    s = complex(s)
    if s == 0:
        return 0j
    pts, _ = oracle_grid(s, xi, support, grid)
    vals = objective(pts, s, xi, penalty)
    return complex(pts[int(np.argmin(vals))])


def oracle_bound(s, xi: float, penalty: Penalty, support: Support, grid: Grid = Grid()) -> float:
    """Upper bound on how far the best grid objective can sit above the true
    minimum: a Lipschitz bound on the smooth part over one grid cell plus the
    lam0 jump, which never hurts since 0 is on the grid."""
    if support.kind == "psk_zero":
        return 0.0
    pts, cell = oracle_grid(complex(s), xi, support, grid)
    cap = float(np.max(np.abs(pts)))
    lip = 2.0 * (1.0 + xi * penalty.lam) * cap + 2.0 * abs(s) + xi * penalty.lam1
    return lip * cell + (1.0 + xi * penalty.lam) * cell**2
