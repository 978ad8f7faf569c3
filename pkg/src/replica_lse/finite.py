"""Finite-size instances of the LSE precoding problem

    x = argmin_{v in X^n} ||H v - sqrt(rho) s||^2 + sum_j u(v_j)

with solvers and empirical metrics used to check the replica predictions.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from itertools import product
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy import stats

from .decoupled import Penalty, Support, check_combination, solve_scalar
from .spectral import SpectralModel


@dataclass
class ProblemInstance:
    H: np.ndarray
    s: np.ndarray
    rho: float
    penalty: Penalty
    support: Support
    seed: int = 0
    model: Union[str, SpectralModel] = "iid_gaussian"

    @property
    def k(self) -> int:
        return self.H.shape[0]

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def target(self) -> np.ndarray:
        return math.sqrt(self.rho) * self.s

    def objective(self, x) -> float:
        r = self.H @ x - self.target
        return float(np.vdot(r, r).real + np.sum(self.penalty(x)))


@dataclass
class SolveResult:
    x: np.ndarray
    objective: float
    distortion: float
    active_fraction: float
    avg_power: float
    iterations: int
    converged: bool
    history: List[float] = field(default_factory=list, repr=False)


def _result(inst: ProblemInstance, x, iterations, converged, history=None) -> SolveResult:
    r = inst.H @ x - inst.target
    dist = float(np.vdot(r, r).real) / inst.k
    tol = 1e-9 * max(1.0, inst.support.radius if inst.support.bounded else 1.0)
    return SolveResult(
        x=x,
        objective=inst.k * dist + float(np.sum(inst.penalty(x))),
        distortion=dist,
        active_fraction=float(np.mean(np.abs(x) > tol)),
        avg_power=float(np.mean(np.abs(x) ** 2)),
        iterations=iterations,
        converged=converged,
        history=history or [],
    )


# -- instances ---------------------------------------------------------------


def complex_gaussian(rng, shape, var=1.0):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * math.sqrt(var / 2.0)


def haar_unitary(rng, n: int) -> np.ndarray:
    z = complex_gaussian(rng, (n, n))
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def sample_spectrum(model: SpectralModel, n: int, rng) -> np.ndarray:
    """n eigenvalues of an n x n Gram matrix drawn from ``model``."""
    if model.kind == "point_mass":
        return np.full(n, model.atom)
    if model.kind == "empirical":
        return rng.choice(model.eigenvalues, size=n, replace=True)
    k = max(1, int(round(model.alpha * n)))
    G = complex_gaussian(rng, (k, n), 1.0 / n)
    ev = np.linalg.eigvalsh(G.conj().T @ G)
    ev[ev < 1e-12 * max(1.0, ev[-1])] = 0.0
    return ev


def sample_instance(n: int, alpha: float, rho: float, penalty: Penalty, support: Support,
                    model: Union[str, SpectralModel] = "iid_gaussian", seed: int = 0) -> ProblemInstance:
    """Draw (H, s) deterministically from ``seed``.

    ``model`` is ``"iid_gaussian"`` (entries CN(0, 1/n)) or a SpectralModel,
    in which case H^H H = U D U^H with Haar U and D sampled from the model.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    k = int(round(alpha * n))
    if k < 1:
        raise ValueError("alpha * n must be at least 1")
    check_combination(penalty, support)
    rng = np.random.default_rng(seed)
    if isinstance(model, str):
        if model != "iid_gaussian":
            raise ValueError(f"unknown channel model {model!r}")
        H = complex_gaussian(rng, (k, n), 1.0 / n)
    else:
        d = sample_spectrum(model, n, rng)
        nz = np.flatnonzero(d > 0)
        if nz.size > k:
            raise ValueError(f"spectrum has rank {nz.size} > k = {k}")
        U = haar_unitary(rng, n)
        V = haar_unitary(rng, k)[:, : nz.size]
        H = (V * np.sqrt(d[nz])) @ U[:, nz].conj().T
    s = complex_gaussian(rng, k)
    return ProblemInstance(H, s, rho, penalty, support, seed, model)


def dump_instance(inst: ProblemInstance, path) -> None:
    """Binary layout: uint64 n, uint64 k (little endian), then H row-major and
    s as interleaved float64 (re, im) pairs."""
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", inst.n, inst.k))
        fh.write(np.ascontiguousarray(inst.H, dtype="<c16").tobytes())
        fh.write(np.ascontiguousarray(inst.s, dtype="<c16").tobytes())


def load_instance(path, rho: float, penalty: Penalty, support: Support) -> ProblemInstance:
    raw = Path(path).read_bytes()
    n, k = struct.unpack_from("<QQ", raw, 0)
    need = 16 + 16 * (k * n + k)
    if len(raw) != need:
        raise ValueError(f"expected {need} bytes for n={n}, k={k}, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<c16", offset=16)
    H = data[: k * n].reshape(k, n).astype(complex)
    s = data[k * n:].astype(complex)
    return ProblemInstance(H, s, rho, penalty, support, seed=-1, model="file")


# -- solvers ------------------------------------------------------------------


def spectral_norm_sq(H: np.ndarray, rtol: float = 1e-6, seed: int = 0, max_iter: int = 10000) -> float:
    """Largest eigenvalue of H^H H by power iteration."""
    rng = np.random.default_rng(seed)
    v = complex_gaussian(rng, H.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iter):
        w = H.conj().T @ (H @ v)
        new = float(np.linalg.norm(w))
        if new == 0:
            return 0.0
        v = w / new
        if abs(new - est) <= rtol * new:
            return new
        est = new
    return est


def rzf(inst: ProblemInstance) -> np.ndarray:
    """(H^H H + lam I)^{-1} H^H sqrt(rho) s, via the k x k system when k < n."""
    H, lam = inst.H, inst.penalty.lam
    k, n = H.shape
    if k < n:
        return H.conj().T @ np.linalg.solve(H @ H.conj().T + lam * np.eye(k), inst.target)
    return np.linalg.solve(H.conj().T @ H + lam * np.eye(n), H.conj().T @ inst.target)


def solve_rzf(inst: ProblemInstance) -> SolveResult:
    """Closed-form ridge precoder as a SolveResult (complex_plane only)."""
    if inst.penalty.lam0 or inst.penalty.lam1 or inst.support.kind != "complex_plane":
        raise ValueError("the closed form covers the pure ridge penalty on the complex plane")
    return _result(inst, rzf(inst), 1, True)


def solve_convex(inst: ProblemInstance, max_iter: int = 20000, tol: float = 1e-12,
                 x0: Optional[np.ndarray] = None) -> SolveResult:
    """Monotone accelerated proximal gradient for convex penalty/support pairs.

    The prox of gamma*u plus the support indicator is the decoupled scalar
    rule with xi = 2*gamma.
    """
    pen, sup = inst.penalty, inst.support
    if pen.lam0 > 0 or sup.kind == "psk_zero":
        raise ValueError("solve_convex needs a convex problem (no zero-norm, no PSK support)")
    H, b = inst.H, inst.target
    L = 2.0 * spectral_norm_sq(H, seed=inst.seed) * (1.0 + 1e-5)
    if L == 0:
        x = np.zeros(inst.n, complex)
        return _result(inst, x, 0, True)
    gamma = 1.0 / L
    HH = H.conj().T

    def F(v):
        r = H @ v - b
        return float(np.vdot(r, r).real + np.sum(pen(v)))

    x = np.zeros(inst.n, complex) if x0 is None else np.asarray(x0, complex).copy()
    fx = F(x)
    y, t = x.copy(), 1.0
    history = [fx]
    stall = 0
    for it in range(1, max_iter + 1):
        grad = 2.0 * (HH @ (H @ y - b))
        z = solve_scalar(y - gamma * grad, 2.0 * gamma, pen, sup)
        fz = F(z)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        if fz <= fx:
            x_new, f_new = z, fz
        else:
            x_new, f_new = x, fx
        # monotone FISTA extrapolation
        y = x_new + (t / t_new) * (z - x_new) + ((t - 1.0) / t_new) * (x_new - x)
        dx = np.linalg.norm(x_new - x)
        rel = abs(fx - f_new) / max(abs(f_new), 1e-300)
        x, fx, t = x_new, f_new, t_new
        history.append(fx)
        if rel < tol and dx <= 1e-9 * max(1.0, np.linalg.norm(x)):
            stall += 1
            if stall >= 3:
                return _result(inst, x, it, True, history)
        else:
            stall = 0
    return _result(inst, x, max_iter, False, history)


def project_to_support(v: np.ndarray, support: Support) -> np.ndarray:
    if support.kind == "complex_plane":
        return v.copy()
    if support.kind == "disc":
        mag = np.abs(v)
        return np.where(mag > support.radius, v / np.where(mag > 0, mag, 1) * support.radius, v)
    pts = support.points()
    return pts[np.argmin(np.abs(v[:, None] - pts[None, :]), axis=1)]


def random_support_points(rng, n: int, support: Support) -> np.ndarray:
    if support.kind == "psk_zero":
        return rng.choice(support.points(), size=n)
    if support.kind == "disc":
        return support.radius * np.sqrt(rng.uniform(size=n)) * np.exp(2j * np.pi * rng.uniform(size=n))
    return complex_gaussian(rng, n, 1.0)


def _coordinate_pass(inst: ProblemInstance, x, max_sweeps, tol, order_rng, record):
    H, pen, sup = inst.H, inst.penalty, inst.support
    norms = np.einsum("ij,ij->j", H.conj(), H).real
    r = inst.target - H @ x
    obj = float(np.vdot(r, r).real + np.sum(pen(x)))
    history = [obj] if record else []
    cols = [H[:, j] for j in range(inst.n)]
    for sweep in range(1, max_sweeps + 1):
        order = order_rng.permutation(inst.n) if order_rng is not None else range(inst.n)
        changed = 0
        step = 0.0
        for j in order:
            nj = norms[j]
            if nj == 0:
                continue
            h = cols[j]
            old = x[j]
            c = old + np.vdot(h, r) / nj
            new = solve_scalar(c, 1.0 / nj, pen, sup)
            if new != old:
                r -= h * (new - old)
                x[j] = new
                changed += 1
                step = max(step, abs(new - old))
                if record:
                    history.append(float(np.vdot(r, r).real + np.sum(pen(x))))
        new_obj = float(np.vdot(r, r).real + np.sum(pen(x)))
        scale = max(1.0, float(np.max(np.abs(x))))
        done = changed == 0 or (abs(obj - new_obj) <= tol * max(abs(new_obj), 1e-300) and step <= 1e-12 * scale)
        obj = new_obj
        if done:
            return x, sweep, True, history
    return x, max_sweeps, False, history


def solve_coordinate(inst: ProblemInstance, sweeps: int = 200, restarts: int = 8, tol: float = 1e-12,
                     shuffle: bool = False, record: bool = False, seed: Optional[int] = None) -> SolveResult:
    """Cyclic exact coordinate minimisation with restarts; keeps the best.

    Restarts are the zero vector, the ridge solution projected onto the
    support, then seeded random support points.  Works for every
    penalty/support pair; on non-convex problems the result is an upper
    bound on the optimal objective.
    """
    check_combination(inst.penalty, inst.support)
    rng = np.random.default_rng([inst.seed if seed is None else seed, 7919])
    starts = [np.zeros(inst.n, complex)]
    if restarts >= 2:
        ridge = replace(inst, penalty=Penalty(lam=max(inst.penalty.lam, 1e-8)))
        starts.append(project_to_support(rzf(ridge), inst.support))
    while len(starts) < restarts:
        starts.append(random_support_points(rng, inst.n, inst.support))
    best = None
    total = 0
    for x0 in starts[: max(1, restarts)]:
        order_rng = np.random.default_rng(rng.integers(2**63)) if shuffle else None
        x, it, ok, hist = _coordinate_pass(inst, x0.astype(complex), sweeps, tol, order_rng, record)
        total += it
        res = _result(inst, x, it, ok, hist)
        if best is None or res.objective < best.objective:
            best = res
    best.iterations = total
    return best


def solver_name(penalty: Penalty, support: Support) -> str:
    """Which finite solver ``solve`` routes a penalty/support pair to.

    Zero-norm and PSK problems go to coordinate descent only; no convex
    relaxation is substituted for them.
    """
    if support.kind == "complex_plane" and not penalty.lam0 and not penalty.lam1:
        return "rzf"
    if penalty.lam0 == 0 and support.kind != "psk_zero":
        return "convex"
    return "coordinate"


def solve(inst: ProblemInstance, max_iter: int = 20000, restarts: int = 8, sweeps: int = 200) -> SolveResult:
    name = solver_name(inst.penalty, inst.support)
    if name == "rzf":
        return solve_rzf(inst)
    if name == "convex":
        return solve_convex(inst, max_iter=max_iter)
    return solve_coordinate(inst, sweeps=sweeps, restarts=restarts)


def random_tas(inst: ProblemInstance, eta_target: float, lam: float, seed: Optional[int] = None) -> SolveResult:
    """Ridge precoding on ceil(eta n) uniformly chosen antennas, zeros elsewhere."""
    if not 0 < eta_target <= 1:
        raise ValueError("eta_target must be in (0, 1]")
    m = int(math.ceil(eta_target * inst.n - 1e-12))
    if m < 1:
        raise ValueError("empty antenna selection")
    rng = np.random.default_rng([inst.seed if seed is None else seed, 104729])
    idx = np.sort(rng.choice(inst.n, size=m, replace=False)) if m < inst.n else np.arange(inst.n)
    sub = replace(inst, H=inst.H[:, idx], penalty=Penalty(lam=lam))
    if inst.support.kind == "complex_plane":
        xs, it, ok = rzf(sub), 1, True
    else:
        r = solve_convex(sub)
        xs, it, ok = r.x, r.iterations, r.converged
    x = np.zeros(inst.n, complex)
    x[idx] = xs
    ridge_inst = replace(inst, penalty=Penalty(lam=lam))
    return _result(ridge_inst, x, it, ok)


# -- marginals ----------------------------------------------------------------


@dataclass
class MarginalSummary:
    histograms: List[np.ndarray]
    edges: np.ndarray
    activity: List[float]
    ks_max: float
    ks_critical: float
    samples_per_bin: List[int]


def ks_critical(n1: int, n2: int, level: float = 0.01) -> float:
    c = math.sqrt(-0.5 * math.log(level / 2.0))
    return c * math.sqrt((n1 + n2) / (n1 * n2))


def empirical_marginal(results: Sequence[SolveResult], bins: Sequence[Sequence[int]],
                       n_hist: int = 40, hist_range=None, min_samples: int = 1000,
                       tol: float = 1e-9) -> MarginalSummary:
    """Pool |x_j| by index bin across trials and compare the bins."""
    if len(bins) < 2:
        raise ValueError("need at least two index bins")
    pooled = [np.concatenate([np.abs(r.x[np.asarray(b)]) for r in results]) for b in bins]
    sizes = [p.size for p in pooled]
    if min(sizes) < min_samples:
        raise ValueError(f"insufficient samples per bin: {min(sizes)} < {min_samples}")
    if hist_range is None:
        hi = max(float(p.max()) for p in pooled)
        hist_range = (0.0, hi if hi > 0 else 1.0)
    edges = np.linspace(*hist_range, n_hist + 1)
    hists = [np.histogram(p, bins=edges, density=True)[0] for p in pooled]
    ks = 0.0
    crit = math.inf
    for i in range(len(pooled)):
        for j in range(i + 1, len(pooled)):
            ks = max(ks, float(stats.ks_2samp(pooled[i], pooled[j]).statistic))
            crit = min(crit, ks_critical(sizes[i], sizes[j]))
    return MarginalSummary(hists, edges, [float(np.mean(p > tol)) for p in pooled], ks, crit, sizes)


def exhaustive_psk(inst: ProblemInstance) -> SolveResult:
    """Brute force over (M+1)^n points; tiny n only."""
    if inst.support.kind != "psk_zero":
        raise ValueError("exhaustive search needs a finite support")
    pts = inst.support.points()
    if len(pts) ** inst.n > 5_000_000:
        raise ValueError("instance too large for exhaustive search")
    cand = np.array(list(product(pts, repeat=inst.n)))  # (N, n)
    r = cand @ inst.H.T - inst.target[None, :]
    vals = np.einsum("ij,ij->i", r.conj(), r).real + inst.penalty(cand).sum(axis=1)
    i = int(np.argmin(vals))
    return _result(inst, cand[i].copy(), len(cand), True)
