"""Deterministic quadrature rules for expectations over complex Gaussians.

All rules return ``(nodes, weights)`` with weights summing to one (up to the
truncated tail), so that E f(s) ~= sum(w * f(nodes)).
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite import hermgauss
from numpy.polynomial.legendre import leggauss

# exp(-TAIL) is below double precision relative to one
TAIL = 40.0


@lru_cache(maxsize=64)
def _leggauss(n: int):
    x, w = leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=64)
def _hermgauss(n: int):
    x, w = hermgauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def piecewise_legendre(edges, n_total: int, min_per_piece: int = 8):
    """Composite Gauss-Legendre over consecutive intervals of ``edges``.

    Nodes are distributed in proportion to interval length with at least
    ``min_per_piece`` per piece.
    """
    edges = np.asarray(edges, dtype=float)
    lengths = np.diff(edges)
    keep = lengths > 0
    lo, lengths = edges[:-1][keep], lengths[keep]
    total = lengths.sum()
    xs, ws = [], []
    for a, h in zip(lo, lengths):
        m = max(min_per_piece, int(round(n_total * h / total)))
        x, w = _leggauss(m)
        xs.append(a + 0.5 * h * (x + 1.0))
        ws.append(0.5 * h * w)
    return np.concatenate(xs), np.concatenate(ws)


def rayleigh(var: float, n: int = 200, breaks=(), min_per_piece: int = 8):
    """Magnitude r = |s| of s ~ CN(0, var): density (2r/var) exp(-r^2/var)."""
    rmax = math.sqrt(var * TAIL)
    edges = [0.0] + sorted(b for b in breaks if 0 < b < rmax) + [rmax]
    r, w = piecewise_legendre(edges, n, min_per_piece)
    w = w * (2.0 * r / var) * np.exp(-(r**2) / var)
    return r, w


def real_gaussian(var: float, n: int = 200, breaks=(), center: float = 0.0, widen: float = 0.0,
                  min_per_piece: int = 8):
    """N(0, var) on the real line, split at ``breaks`` (and their negatives).

    ``center``/``widen`` extend the truncated window for integrands that
    carry an exponential tilt.
    """
    sd = math.sqrt(var)
    half = math.sqrt(2.0 * TAIL) * sd
    lo, hi = min(-half, center - half) - widen, max(half, center + half) + widen
    cuts = sorted({b for x in breaks for b in (x, -x) if lo < b < hi})
    x, w = piecewise_legendre([lo] + cuts + [hi], n, min_per_piece)
    w = w * np.exp(-(x**2) / (2 * var)) / math.sqrt(2 * math.pi * var)
    return x, w


def complex_polar(var: float, n_radial: int = 200, n_angular: int = 64, breaks=()):
    """CN(0, var) on a radial (Gauss-Legendre) x angular (uniform) grid."""
    r, wr = rayleigh(var, n_radial, breaks)
    th = 2 * np.pi * (np.arange(n_angular) + 0.5) / n_angular
    nodes = (r[:, None] * np.exp(1j * th)[None, :]).ravel()
    weights = (wr[:, None] * np.full(n_angular, 1.0 / n_angular)[None, :]).ravel()
    return nodes, weights


def complex_hermite(var: float, n: int = 96):
    """CN(0, var) on an n x n Gauss-Hermite product grid."""
    x, w = _hermgauss(n)
    # each component has variance var/2: u = sqrt(var) * x
    a = math.sqrt(var) * x
    wn = w / math.sqrt(math.pi)
    nodes = (a[:, None] + 1j * a[None, :]).ravel()
    weights = (wn[:, None] * wn[None, :]).ravel()
    return nodes, weights
