import mpmath as mp
import numpy as np
import pytest
from numpy.testing import assert_allclose

from bsmkit.errors import DomainError
from bsmkit.sphmath import (
    legendre_p,
    sph_derivative,
    spherical_bessel_j,
    spherical_hankel_h1,
)


def mp_sph_jn(n, x):
    x = mp.mpf(x)
    return mp.sqrt(mp.pi / (2 * x)) * mp.besselj(n + mp.mpf(1) / 2, x)


def mp_sph_yn(n, x):
    x = mp.mpf(x)
    return mp.sqrt(mp.pi / (2 * x)) * mp.bessely(n + mp.mpf(1) / 2, x)


def test_bessel_j_origin_limits():
    assert spherical_bessel_j(0, 0.0) == 1.0
    assert spherical_bessel_j(1, 0.0) == 0.0
    assert spherical_bessel_j(7, 1e-13) == 0.0


def test_bessel_j_at_pi():
    # j0(x) = sin(x)/x vanishes at pi
    assert abs(spherical_bessel_j(0, np.pi)) < 1e-15


def test_hankel_closed_forms():
    h = spherical_hankel_h1(0, 1.0)
    assert_allclose(h.real, np.sin(1.0), rtol=1e-15)
    assert_allclose(h.imag, -np.cos(1.0), rtol=1e-15)
    h = spherical_hankel_h1(0, np.pi / 2)
    assert_allclose(h.real, np.sin(np.pi / 2) / (np.pi / 2), rtol=1e-15)
    assert abs(h.imag) < 1e-15


def test_hankel_against_high_precision_oracle():
    """h_2^(1)(5) against an independent 40-digit half-order evaluation."""
    mp.mp.dps = 40
    want = mp.mpc(mp_sph_jn(2, 5), mp_sph_yn(2, 5))
    got = spherical_hankel_h1(2, 5.0)
    assert abs(got - complex(want)) < 1e-14 * abs(complex(want))


@pytest.mark.parametrize("x", [0.5, 1.0, 2.0])
def test_derivative_identity_j0(x):
    assert_allclose(
        sph_derivative("bessel_j", 0, x), -spherical_bessel_j(1, x), rtol=1e-14
    )


def test_derivative_finite_difference():
    h = 1e-6
    fd = (spherical_bessel_j(1, 1 + h) - spherical_bessel_j(1, 1 - h)) / (2 * h)
    assert abs(sph_derivative("bessel_j", 1, 1.0) - fd) < 1e-8
    fd_c = (spherical_hankel_h1(1, 1 + h) - spherical_hankel_h1(1, 1 - h)) / (2 * h)
    assert abs(sph_derivative("hankel_h1", 1, 1.0) - fd_c) < 1e-8


def test_derivative_origin_limits():
    assert sph_derivative("bessel_j", 0, 0.0) == 0.0
    assert_allclose(sph_derivative("bessel_j", 1, 0.0), 1.0 / 3.0, rtol=1e-15)
    assert sph_derivative("bessel_j", 5, 0.0) == 0.0


def test_legendre_values():
    for n in range(8):
        assert_allclose(legendre_p(n, 1.0), 1.0, rtol=1e-14)
    assert legendre_p(1, 0.5) == 0.5
    assert_allclose(legendre_p(2, 0.0), -0.5, rtol=1e-15)


def test_legendre_orthogonality():
    x, w = np.polynomial.legendre.leggauss(200)
    for m in range(11):
        pm = np.array([legendre_p(m, xi) for xi in x])
        for n in range(m, 11):
            pn = np.array([legendre_p(n, xi) for xi in x])
            integral = np.sum(w * pm * pn)
            want = 2.0 / (2 * n + 1) if m == n else 0.0
            assert abs(integral - want) < 1e-8


def test_wronskian():
    # j_n y_n' - j_n' y_n = 1/x^2
    for n in [0, 1, 2, 5, 10, 20, 40]:
        for x in [0.1, 0.5, 2.0, 10.0, 37.0, 50.0]:
            jn = spherical_bessel_j(n, x)
            jp = sph_derivative("bessel_j", n, x)
            yn = spherical_hankel_h1(n, x).imag
            yp = sph_derivative("hankel_h1", n, x).imag
            w = jn * yp - jp * yn
            assert abs(w - 1.0 / x**2) <= 1e-10 / x**2


def test_three_term_recurrence():
    # f_{n+1} = ((2n+1)/x) f_n - f_{n-1}, residual measured against the
    # dominant magnitude (the identity cancels severely for j_n at n >> x)
    for x in [0.3, 1.0, 5.0, 20.0, 50.0]:
        for n in [1, 2, 5, 10, 30]:
            for f in (
                spherical_bessel_j,
                lambda k, xx: spherical_hankel_h1(k, xx),
            ):
                lhs = f(n + 1, x)
                t1 = ((2 * n + 1) / x) * f(n, x)
                t2 = f(n - 1, x)
                scale = max(abs(lhs), abs(t1), abs(t2))
                assert abs(lhs - (t1 - t2)) <= 1e-9 * scale


def test_domain_errors():
    with pytest.raises(DomainError):
        spherical_bessel_j(-1, 1.0)
    with pytest.raises(DomainError):
        spherical_bessel_j(201, 1.0)
    with pytest.raises(DomainError):
        spherical_bessel_j(0, -0.5)
    with pytest.raises(DomainError):
        spherical_hankel_h1(0, 0.0)
    with pytest.raises(DomainError):
        legendre_p(2, 1.5)
    with pytest.raises(DomainError):
        sph_derivative("bessel_y", 0, 1.0)


def test_domain_error_is_value_error():
    with pytest.raises(ValueError):
        legendre_p(2, -1.0001)
