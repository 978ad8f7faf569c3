"""R-transforms of channel Gram-matrix spectra.

Three spectral models are supported:

* ``marchenko_pastur``: H with i.i.d. entries of variance 1/n, so that
  R(w) = alpha / (1 - w).
* ``point_mass``: every eigenvalue equal to ``atom``, R(w) = atom.
* ``empirical``: a finite sample of eigenvalues; R is obtained by inverting
  the sample Stieltjes transform on the real axis below the spectrum.

Only real arguments are handled.  All downstream formulas evaluate the
transform at -chi with chi >= 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import PchipInterpolator


class SpectralDomainError(ValueError):
    """Raised when an R-transform is requested outside its domain."""


class InversionError(RuntimeError):
    """Raised when the numerical Stieltjes inversion does not converge."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


KINDS = ("marchenko_pastur", "point_mass", "empirical")


@dataclass(frozen=True)
class SpectralModel:
    """Eigenvalue distribution of H^H H together with the load factor k/n."""

    kind: str
    alpha: float
    atom: float = 1.0
    eigenvalues: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    _cache: Optional[PchipInterpolator] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown spectral kind {self.kind!r}")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError("alpha must be positive and finite")
        if self.kind == "point_mass" and not self.atom > 0:
            raise ValueError("point mass location must be positive")
        if self.kind == "empirical":
            if self.eigenvalues is None or len(self.eigenvalues) == 0:
                raise ValueError("empirical model needs eigenvalue samples")
            ev = np.sort(np.asarray(self.eigenvalues, dtype=float))
            if not np.all(np.isfinite(ev)):
                raise ValueError("eigenvalues must be finite")
            # roundoff from eigvalsh can leave tiny negatives
            if ev[0] < -1e-9 * max(1.0, ev[-1]):
                raise ValueError("eigenvalues must be non-negative")
            ev = np.clip(ev, 0.0, None)
            ev.setflags(write=False)
            object.__setattr__(self, "eigenvalues", ev)

    # -- constructors -------------------------------------------------------
    @classmethod
    def marchenko_pastur(cls, alpha: float) -> "SpectralModel":
        return cls("marchenko_pastur", alpha)

    @classmethod
    def point_mass(cls, atom: float = 1.0, alpha: float = 1.0) -> "SpectralModel":
        return cls("point_mass", alpha, atom=atom)

    @classmethod
    def empirical(cls, eigenvalues: Sequence[float], alpha: float) -> "SpectralModel":
        return cls("empirical", alpha, eigenvalues=np.asarray(eigenvalues, dtype=float))

    @classmethod
    def from_file(cls, path, alpha: float) -> "SpectralModel":
        """Load eigenvalues from a text file, one decimal value per line."""
        values = []
        for line in Path(path).read_text().splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                values.append(float(line))
        return cls.empirical(values, alpha)

    def save(self, path) -> None:
        if self.kind != "empirical":
            raise ValueError("only empirical spectra are written to disk")
        Path(path).write_text("".join(f"{v!r}\n" for v in self.eigenvalues.tolist()))

    def with_grid(self, omegas: Sequence[float]) -> "SpectralModel":
        """Return a copy whose empirical R-transform is served from a cached
        monotone interpolant on ``omegas`` (values outside the grid fall back
        to direct inversion)."""
        if self.kind != "empirical":
            return self
        grid = np.unique(np.asarray(omegas, dtype=float))
        if grid.size < 2 or grid[-1] > 0:
            raise SpectralDomainError("interpolation grid must lie in w <= 0")
        vals = np.array([_empirical_r(self.eigenvalues, w) for w in grid])
        return SpectralModel(
            self.kind, self.alpha, self.atom, self.eigenvalues, PchipInterpolator(grid, vals)
        )

    @property
    def mean(self) -> float:
        if self.kind == "marchenko_pastur":
            return self.alpha
        if self.kind == "point_mass":
            return self.atom
        return float(np.mean(self.eigenvalues))

    def describe(self) -> str:
        if self.kind == "marchenko_pastur":
            return "mp"
        if self.kind == "point_mass":
            return f"point:{self.atom!r}"
        return f"empirical[{len(self.eigenvalues)}]"


def _empirical_r(ev: np.ndarray, w: float) -> float:
    """R(w) for a discrete spectrum, w <= 0.

    With s = 1/w + r the Stieltjes equation mean(1/(s - ev)) = w becomes
    mean(1/(1 + w (r - ev))) = 1, which avoids the cancellation in s - 1/w
    for small |w|.  The left side increases monotonically in r on the branch
    s < min(ev), and R(w) = r.
    """
    if w == 0.0:
        return float(ev.mean())
    lo, hi_ev = float(ev[0]), float(ev[-1])
    if hi_ev - lo <= 1e-14 * max(1.0, hi_ev):
        return float(ev.mean())
    a = -w  # > 0

    def f(r):
        return float(np.mean(1.0 / (1.0 - a * (r - ev)))) - 1.0

    # r in [min ev, min ev + 1/a) keeps every denominator positive
    hi = min(hi_ev, lo + (1.0 / a) * (1.0 - 1e-12))
    f_lo, f_hi = f(lo), f(hi)
    if f_lo >= 0.0:
        return lo
    if f_hi <= 0.0:
        # the pole was cut by the 1e-12 margin; the root sits against it
        return hi
    r, info = optimize.brentq(f, lo, hi, xtol=1e-15 * max(1.0, hi_ev), rtol=1e-15, full_output=True)
    if not info.converged:
        raise InversionError("Stieltjes inversion did not converge", abs(f(r)))
    return float(r)


def r_transform(model: SpectralModel, omega: float) -> float:
    """R-transform R(w) of the Gram spectrum at real argument ``omega``."""
    omega = float(omega)
    if model.kind == "marchenko_pastur":
        if omega >= 1.0:
            raise SpectralDomainError(f"Marchenko-Pastur R-transform needs w < 1, got {omega}")
        return model.alpha / (1.0 - omega)
    if model.kind == "point_mass":
        return model.atom
    if omega > 0.0:
        raise SpectralDomainError(f"empirical R-transform is evaluated for w <= 0, got {omega}")
    if model._cache is not None:
        x = model._cache.x
        if x[0] <= omega <= x[-1]:
            return float(model._cache(omega))
    return _empirical_r(model.eigenvalues, omega)


def r_derivative(model: SpectralModel, omega: float) -> float:
    """dR/dw at ``omega``.

    Closed form for the analytic models; for empirical spectra a central
    difference whose step is halved until two successive estimates agree to
    1e-8 relative (the difference is a second-order error estimate).
    """
    omega = float(omega)
    if model.kind == "marchenko_pastur":
        if omega >= 1.0:
            raise SpectralDomainError(f"Marchenko-Pastur R-transform needs w < 1, got {omega}")
        return model.alpha / (1.0 - omega) ** 2
    if model.kind == "point_mass":
        return 0.0
    if omega > 0.0:
        raise SpectralDomainError(f"empirical R-transform is evaluated for w <= 0, got {omega}")

    def central(h):
        # one-sided at the boundary w=0
        if omega + h > 0.0:
            return (r_transform(model, omega) - r_transform(model, omega - 2 * h)) / (2 * h)
        return (r_transform(model, omega + h) - r_transform(model, omega - h)) / (2 * h)

    h = 1e-2 * max(1.0, abs(omega))
    prev = central(h)
    best, best_err = prev, math.inf
    for _ in range(30):
        h *= 0.5
        cur = central(h)
        err = abs(cur - prev)
        # Richardson: removes the h^2 term
        extrap = cur + (cur - prev) / 3.0
        if err < best_err:
            best, best_err = extrap, err
        if err <= 1e-8 * max(abs(cur), 1e-12):
            return extrap
        if err > 4 * best_err:
            # roundoff is taking over
            break
        prev = cur
    return best


def r_integral(model: SpectralModel, a: float, b: float) -> float:
    """Integral of R(-w) dw over [a, b]."""
    a, b = float(a), float(b)
    if a > b:
        raise ValueError("r_integral needs a <= b")
    if a == b:
        return 0.0
    if model.kind == "marchenko_pastur":
        if a <= -1.0:
            raise SpectralDomainError("Marchenko-Pastur R(-w) needs w > -1")
        return model.alpha * math.log1p((b - a) / (1.0 + a))
    if model.kind == "point_mass":
        return model.atom * (b - a)
    if a < 0.0:
        raise SpectralDomainError("empirical R(-w) needs w >= 0")
    val, _ = integrate.quad(lambda w: r_transform(model, -w), a, b, epsabs=1e-10, epsrel=1e-12, limit=200)
    return float(val)
