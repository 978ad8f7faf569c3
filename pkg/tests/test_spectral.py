import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from replica_lse.spectral import (InversionError, SpectralDomainError, SpectralModel, r_derivative,
                                  r_integral, r_transform)


def mp_gram_eigenvalues(n, alpha, seed):
    """Eigenvalues of H^H H (n of them, n - k zeros) for H with CN(0, 1/n) entries."""
    rng = np.random.default_rng(seed)
    k = int(round(alpha * n))
    H = (rng.standard_normal((k, n)) + 1j * rng.standard_normal((k, n))) / math.sqrt(2 * n)
    nz = np.linalg.eigvalsh(H @ H.conj().T)
    return np.concatenate([np.zeros(n - k), nz])


@pytest.fixture(scope="module")
def empirical_half():
    return SpectralModel.empirical(mp_gram_eigenvalues(4096, 0.5, 11), 0.5)


def test_mp_limit_at_zero_is_mean():
    mp = SpectralModel.marchenko_pastur(0.5)
    assert r_transform(mp, -1e-12) == pytest.approx(0.5, rel=1e-10)
    assert mp.mean == 0.5


def test_point_mass_is_constant():
    pm = SpectralModel.point_mass(1.0)
    for w in (-10.0, -1.0, -0.1, 0.0, 0.5):
        assert r_transform(pm, w) == 1.0
        assert r_derivative(pm, w) == 0.0


def test_mp_closed_form_value():
    assert r_transform(SpectralModel.marchenko_pastur(1.0), -1.0) == pytest.approx(0.5)


def test_mp_derivative_at_zero():
    assert r_derivative(SpectralModel.marchenko_pastur(1.0), 0.0) == pytest.approx(1.0)


def test_mp_domain():
    mp = SpectralModel.marchenko_pastur(1.0)
    with pytest.raises(SpectralDomainError):
        r_transform(mp, 1.0)
    with pytest.raises(SpectralDomainError):
        r_derivative(mp, 2.0)


def test_empirical_derivative_matches_mp(empirical_half):
    assert r_derivative(empirical_half, -1.0) == pytest.approx(0.125, rel=0.02)


def test_empirical_matches_mp_on_interval(empirical_half):
    for w in np.linspace(-3, -0.1, 15):
        assert r_transform(empirical_half, w) == pytest.approx(0.5 / (1 - w), rel=0.02)


def test_empirical_zero_argument_is_mean(empirical_half):
    assert r_transform(empirical_half, 0.0) == pytest.approx(empirical_half.mean)


def test_empirical_of_point_mass_sample():
    ev = np.full(50, 2.0)
    model = SpectralModel.empirical(ev, 1.0)
    assert r_transform(model, -0.7) == pytest.approx(2.0)


def test_empirical_two_atoms_closed_form():
    # eigenvalues {0, 2} equally likely; at w = -1/2 the condition
    # mean(1/(1 + w (r - ev))) = 1 reads 1/(1 - r/2) + 1/(2 - r/2) = 2,
    # i.e. r^2 - 4r + 2 = 0, with root r = 2 - sqrt(2) on the branch r < 2
    model = SpectralModel.empirical([0.0, 2.0], 1.0)
    assert r_transform(model, -0.5) == pytest.approx(2 - math.sqrt(2), rel=1e-12)


def test_with_grid_interpolant_is_close(empirical_half):
    grid = np.linspace(-4, 0, 81)
    cached = empirical_half.with_grid(grid)
    for w in (-3.33, -1.01, -0.05):
        assert r_transform(cached, w) == pytest.approx(r_transform(empirical_half, w), rel=1e-5)


def test_r_integral_examples():
    assert r_integral(SpectralModel.marchenko_pastur(1.0), 0.0, math.e - 1) == pytest.approx(1.0)
    assert r_integral(SpectralModel.marchenko_pastur(0.5), 1.0, 3.0) == pytest.approx(0.5 * math.log(2))
    for model in (SpectralModel.marchenko_pastur(0.3), SpectralModel.point_mass(2.0),
                  SpectralModel.empirical([0.5, 1.0, 3.0], 1.0)):
        assert r_integral(model, 0.7, 0.7) == 0.0
    with pytest.raises(ValueError):
        r_integral(SpectralModel.marchenko_pastur(1.0), 2.0, 1.0)


def test_empirical_integral_matches_mp(empirical_half):
    assert r_integral(empirical_half, 0.2, 1.5) == pytest.approx(0.5 * math.log(2.5 / 1.2), rel=0.02)


def test_file_round_trip(tmp_path, empirical_half):
    path = tmp_path / "eig.txt"
    empirical_half.save(path)
    back = SpectralModel.from_file(path, 0.5)
    np.testing.assert_array_equal(back.eigenvalues, empirical_half.eigenvalues)
    with pytest.raises(ValueError):
        SpectralModel.marchenko_pastur(1.0).save(path)


def test_invalid_models():
    with pytest.raises(ValueError):
        SpectralModel.marchenko_pastur(0.0)
    with pytest.raises(ValueError):
        SpectralModel.empirical([-1.0, 1.0], 1.0)
    with pytest.raises(ValueError):
        SpectralModel.empirical([], 1.0)
    with pytest.raises(ValueError):
        SpectralModel.point_mass(-1.0)
    with pytest.raises(SpectralDomainError):
        r_transform(SpectralModel.empirical([1.0, 2.0], 1.0), 0.5)


def test_inversion_error_carries_residual():
    err = InversionError("no", 1e-3)
    assert err.residual == 1e-3 and "1.000e-03" in str(err)


@settings(max_examples=100, deadline=None)
@given(alpha=st.floats(0.05, 5.0), chi=st.floats(0.0, 1e3))
def test_mp_identity(alpha, chi):
    mp = SpectralModel.marchenko_pastur(alpha)
    assert r_transform(mp, -chi) == pytest.approx(alpha / (1 + chi), rel=1e-14)


@settings(max_examples=100, deadline=None)
@given(w=st.floats(-5.0, -0.01))
def test_derivative_matches_difference_quotient(w):
    mp = SpectralModel.marchenko_pastur(0.7)
    h = 1e-5
    fd = (r_transform(mp, w + h) - r_transform(mp, w - h)) / (2 * h)
    assert r_derivative(mp, w) == pytest.approx(fd, rel=1e-6)


_SMALL = SpectralModel.empirical(mp_gram_eigenvalues(200, 0.5, 3), 0.5)


@settings(max_examples=25, deadline=None)
@given(w=st.floats(-5.0, -0.01))
def test_empirical_derivative_matches_difference_quotient(w):
    h = 1e-5 * max(1.0, abs(w))
    fd = (r_transform(_SMALL, w + h) - r_transform(_SMALL, w - h)) / (2 * h)
    assert r_derivative(_SMALL, w) == pytest.approx(fd, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0.0, 3.0), d1=st.floats(0.0, 3.0), d2=st.floats(0.0, 3.0))
def test_integral_additivity(a, d1, d2):
    b, c = a + d1, a + d1 + d2
    for model in (SpectralModel.marchenko_pastur(0.8), _SMALL):
        whole = r_integral(model, a, c)
        assert whole == pytest.approx(r_integral(model, a, b) + r_integral(model, b, c), abs=1e-9)
