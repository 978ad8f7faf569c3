import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from replica_lse import quadrature
from replica_lse.decoupled import Penalty, Support, breakpoints, solve_scalar, thresholds
from replica_lse.rs import (DivergenceError, RsState, SolverOptions, distortion, papr,
                            random_tas_prediction, rs_distortion, rs_effective_params, rs_expectations,
                            rs_solve, to_db)
from replica_lse.spectral import SpectralModel, r_transform

C = Support.complex_plane()
MP = SpectralModel.marchenko_pastur


def rzf_distortion_oracle(alpha, lam, rho=1.0):
    """rho lam^2 E[(mu + lam)^-2] over the Marchenko-Pastur law of H H^H.

    The RZF residual is -lam (H H^H + lam I)^-1 sqrt(rho) s, so this is an
    independent random-matrix expression for the asymptotic distortion.
    """
    a, b = (1 - math.sqrt(alpha)) ** 2, (1 + math.sqrt(alpha)) ** 2
    dens = lambda x: math.sqrt(max((b - x) * (x - a), 0.0)) / (2 * math.pi * alpha * x)
    return quad(lambda x: dens(x) * rho * lam**2 / (x + lam) ** 2, a, b, epsabs=1e-14, epsrel=1e-13)[0]


# frozen from rzf_distortion_oracle
RZF_ORACLE = {(0.5, 0.1): 0.03452248382484877, (0.5, 1.0): 0.3488746876271658, (0.25, 0.3): 0.08325124095280907}


def test_frozen_oracle_values():
    for (alpha, lam), v in RZF_ORACLE.items():
        assert rzf_distortion_oracle(alpha, lam) == pytest.approx(v, rel=1e-10)


@pytest.mark.parametrize("alpha,lam", sorted(RZF_ORACLE))
def test_ridge_matches_random_matrix_oracle(alpha, lam):
    sol = rs_solve(1.0, Penalty(lam=lam), C, MP(alpha))
    assert sol.converged
    assert sol.distortion == pytest.approx(RZF_ORACLE[(alpha, lam)], rel=1e-8)


@settings(max_examples=60, deadline=None)
@given(alpha=st.floats(0.1, 4), chi=st.floats(0, 50), p=st.floats(0, 10), rho=st.floats(0.1, 5))
def test_mp_rho_rs_simplifies(alpha, chi, p, rho):
    xi, rho_rs = rs_effective_params(RsState(chi, p), rho, MP(alpha))
    assert xi == pytest.approx((1 + chi) / alpha)
    assert rho_rs == pytest.approx((rho + p) / alpha, rel=1e-12)


def test_effective_params_examples():
    assert rs_effective_params(RsState(0.0, 0.0), 1.0, MP(1.0)) == pytest.approx((1.0, 1.0))
    xi, rho_rs = rs_effective_params(RsState(0.7, 0.2), 2.0, SpectralModel.point_mass(3.0))
    assert xi == pytest.approx(1 / 3) and rho_rs == pytest.approx(2.0 * xi)


def test_invalid_state():
    for chi, p in ((-1.0, 0.0), (0.0, -1.0), (math.inf, 0.0)):
        with pytest.raises(ValueError):
            RsState(chi, p)


def test_ridge_moments_closed_form():
    xi, v, lam = 1.7, 2.3, 0.4
    e = rs_expectations(xi, v, Penalty(lam=lam), C)
    g = 1 + xi * lam
    assert e["second_moment"] == pytest.approx(v / g**2, rel=1e-12)
    assert e["correlation"] == pytest.approx(v / g, rel=1e-12)
    assert e["eta"] == 1.0


def test_hard_threshold_activity():
    xi, v, pen = 1.3, 0.9, Penalty(lam=0.2, lam0=0.5)
    tau0 = thresholds(xi, pen, C)["tau0"]
    assert rs_expectations(xi, v, pen, C)["eta"] == pytest.approx(math.exp(-tau0**2 / v), rel=1e-12)


def test_large_penalty_silences():
    e = rs_expectations(1.0, 1.0, Penalty(lam=1e9), C)
    assert e["second_moment"] < 1e-15
    assert rs_expectations(1.0, 1.0, Penalty(lam1=1e3), C)["eta"] < 1e-12


@pytest.mark.parametrize("pen,sup", [(Penalty(lam=0.3, lam1=0.8), C), (Penalty(lam=0.1, lam0=0.6), Support.disc(1.5))])
def test_radial_reduction_matches_polar_grid(pen, sup):
    xi, v = 1.4, 1.1
    e = rs_expectations(xi, v, pen, sup, n_radial=400)
    s, w = quadrature.complex_polar(v, 400, 16, breaks=breakpoints(xi, pen, sup))
    x = solve_scalar(s, xi, pen, sup)
    assert w @ np.abs(x) ** 2 == pytest.approx(e["second_moment"], rel=1e-6)
    assert w @ np.real(np.conj(x) * s) == pytest.approx(e["correlation"], rel=1e-6)


def test_bpsk_real_reduction_closed_form():
    # x = +-1 iff |Re s| > (1 + xi lam)/2 with Re s ~ N(0, v/2)
    pen, sup = Penalty(lam=0.2), Support.psk_zero(1.0, 2)
    e = rs_expectations(2.0, 1.2, pen, sup)
    tau = (1 + 2.0 * 0.2) / 2
    assert e["second_moment"] == pytest.approx(math.erfc(tau / math.sqrt(1.2)), rel=1e-12)
    assert e["eta"] == pytest.approx(e["second_moment"], rel=1e-12)
    assert e["correlation"] == pytest.approx(2 * math.sqrt(0.6 / (2 * math.pi)) * math.exp(-tau**2 / 1.2), rel=1e-12)


def test_distortion_zero_state():
    for model in (MP(0.5), SpectralModel.point_mass(2.0)):
        assert rs_distortion(0.0, 0.0, 1.3, model) == pytest.approx(1.3)


@settings(max_examples=40, deadline=None)
@given(chi=st.floats(0.01, 20), p=st.floats(0, 5), rho=st.floats(0.1, 3), alpha=st.floats(0.2, 3))
def test_distortion_derivative_sign(chi, p, rho, alpha):
    # the bracket is d/dchi [(p - rho chi) chi R(-chi)] at fixed p
    model = MP(alpha)
    g = lambda c: (p - rho * c) * c * r_transform(model, -c)
    h = 1e-6 * max(1.0, chi)
    fd = (g(chi + h) - g(chi - h)) / (2 * h)
    assert distortion(chi, p, rho, model) == pytest.approx(rho + fd / alpha, rel=1e-6, abs=1e-8)


def test_large_ridge_transmits_nothing():
    sol = rs_solve(1.0, Penalty(lam=1e8), C, MP(0.5))
    assert sol.distortion == pytest.approx(1.0, rel=1e-6)
    assert sol.distortion_db == pytest.approx(0.0, abs=1e-5)


def test_ridge_fixed_point_pair():
    lam, alpha = 0.3, 0.4
    sol = rs_solve(1.0, Penalty(lam=lam), C, MP(alpha))
    xi = (1 + sol.chi) / alpha
    assert sol.xi == pytest.approx(xi)
    assert sol.chi == pytest.approx(xi / (1 + xi * lam), rel=1e-8)
    assert sol.p == pytest.approx(sol.rho_rs / (1 + xi * lam) ** 2, rel=1e-8)


def test_unregularised_underdetermined_diverges():
    with pytest.raises(DivergenceError):
        rs_solve(1.0, Penalty(), C, MP(0.5))


@pytest.mark.parametrize("pen,sup", [
    (Penalty(lam=0.1, lam1=1.0), C), (Penalty(lam=0.1, lam0=0.3), C),
    (Penalty(lam=0.2, lam0=0.2), Support.disc(1.0)), (Penalty(lam=0.3), Support.psk_zero(1.0, 2)),
    (Penalty(lam=0.3), Support.psk_zero(1.0, 4)),
])
def test_solution_invariants(pen, sup):
    sol = rs_solve(1.0, pen, sup, MP(0.5))
    assert sol.converged
    e = rs_expectations(sol.xi, sol.rho_rs, pen, sup)
    assert abs(sol.p - e["second_moment"]) < 1e-9 * max(sol.p, 1e-3)
    assert abs(sol.chi * sol.rho_rs - sol.xi * e["correlation"]) < 1e-9 * max(1, sol.chi * sol.rho_rs)
    assert sol.avg_power == pytest.approx(sol.p, rel=1e-9)
    assert 0 <= sol.eta <= 1
    assert 0 <= sol.distortion <= 1.0
    if sup.bounded:
        assert sol.papr == pytest.approx(sup.peak / sol.avg_power)
    else:
        assert sol.papr == math.inf


def test_activity_and_distortion_monotone_in_l1():
    etas, ds = [], []
    for lam1 in np.linspace(0.6, 1.8, 7):
        sol = rs_solve(1.0, Penalty(lam=0.1, lam1=lam1), C, MP(0.5))
        etas.append(sol.eta)
        ds.append(sol.distortion)
    assert np.all(np.diff(etas) < 0) and np.all(np.diff(ds) > 0)


def test_activity_decreasing_in_l0():
    etas = [rs_solve(1.0, Penalty(lam=0.1, lam0=l0), C, MP(0.5)).eta for l0 in (0.05, 0.1, 0.2, 0.4, 0.8)]
    assert np.all(np.diff(etas) < 0)


def test_multiple_inits_report_multiplicity():
    opts = SolverOptions(init=(1.0, 1.0), extra_inits=[(5.0, 0.1), (0.1, 3.0)])
    sol = rs_solve(1.0, Penalty(lam=0.1), C, MP(0.5), opts)
    assert sol.multiplicity == 1 and sol.converged


def test_random_tas_full_selection_is_ridge():
    full = rs_solve(1.0, Penalty(lam=0.2), C, MP(0.5))
    rt = random_tas_prediction(1.0, 0.2, 1.0, 0.5)
    assert rt.distortion == pytest.approx(full.distortion, rel=1e-10)
    with pytest.raises(ValueError):
        random_tas_prediction(1.0, 0.2, 0.0, 0.5)


def test_random_tas_distortion_decreases_with_selection():
    ds = [random_tas_prediction(1.0, 0.1, eta, 0.5).distortion for eta in (0.3, 0.5, 0.7, 1.0)]
    assert np.all(np.diff(ds) < 0)


def test_helpers():
    assert to_db(0.0) == -math.inf
    assert to_db(10.0) == pytest.approx(10.0)
    assert math.isnan(to_db(-1.0))
    assert papr(C, 0.3) == math.inf
    assert papr(Support.disc(2.0), 0.5) == pytest.approx(4.0)


def test_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(damping=0.0)
    with pytest.raises(ValueError):
        rs_solve(0.0, Penalty(lam=0.1), C, MP(0.5))
