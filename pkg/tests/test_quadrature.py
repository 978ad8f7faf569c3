import math

import numpy as np
import pytest

from replica_lse import quadrature


def test_piecewise_legendre_integrates_polynomials():
    x, w = quadrature.piecewise_legendre([0.0, 0.3, 1.0, 2.5], 60)
    assert w @ x**5 == pytest.approx(2.5**6 / 6, rel=1e-13)


def test_min_nodes_per_piece():
    x, _ = quadrature.piecewise_legendre(np.linspace(0, 1, 11), 10, min_per_piece=12)
    assert x.size == 120


@pytest.mark.parametrize("var", [0.3, 1.0, 7.0])
def test_rayleigh_moments(var):
    r, w = quadrature.rayleigh(var, 200, breaks=[0.5 * math.sqrt(var)])
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert w @ r**2 == pytest.approx(var, rel=1e-12)
    assert w @ r == pytest.approx(math.sqrt(math.pi * var) / 2, rel=1e-12)


def test_real_gaussian_moments():
    x, w = quadrature.real_gaussian(0.4, 200, breaks=[0.2, 0.9])
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert w @ x**2 == pytest.approx(0.4, rel=1e-12)
    assert w @ x**4 == pytest.approx(3 * 0.4**2, rel=1e-12)
    assert w @ (x > 0.2) == pytest.approx(0.5 * math.erfc(0.2 / math.sqrt(0.8)), rel=1e-10)


def test_complex_rules_agree():
    f = lambda z: np.abs(z) ** 4 + np.real(z) ** 2
    expected = 2 * 1.5**2 + 1.5 / 2
    for nodes, w in (quadrature.complex_polar(1.5, 100, 32), quadrature.complex_hermite(1.5, 40)):
        assert w @ f(nodes) == pytest.approx(expected, rel=1e-10)
