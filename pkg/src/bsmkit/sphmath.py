"""Spherical Bessel/Hankel functions and Legendre polynomials.

These are the scalar building blocks of the rigid-sphere scattering model:
``j_n`` and ``h_n^(1)`` (with derivatives) enter the radial part, ``P_n`` the
angular part of the plane-wave expansion.

Sign and phase conventions follow the time dependence ``e^{-i 2 pi f t}``,
under which *outgoing* spherical waves are carried by the Hankel function of
the first kind.  This convention is fixed project-wide; nothing else in the
package is convention-dependent once this choice is made.

Orders are capped at 200, comfortably above anything reachable by a 10 cm
sphere below 20 kHz (ka of about 37 needs orders below 80).
"""

from __future__ import annotations

import numpy as np
from scipy import special as _sp

from .errors import DomainError

ORDER_CAP = 200

# Below this argument the small-x limits are substituted for j_n and its
# derivative; the series terms beyond the limit are O(x^2) < 1e-24.
_SMALL_X = 1e-12


def _check_order(n: int) -> int:
    if not float(n).is_integer() or n < 0 or n > ORDER_CAP:
        raise DomainError(f"order must be an integer in [0, {ORDER_CAP}], got {n!r}")
    return int(n)


def spherical_bessel_j(n: int, x: float) -> float:
    """Spherical Bessel function of the first kind, j_n(x).

    Parameters
    ----------
    n : int
        Order, 0 <= n <= 200.
    x : float
        Argument, x >= 0.

    Returns
    -------
    float
        j_n(x).  For x below 1e-12 the origin limit is returned:
        1 for n = 0 and 0 otherwise.
    """
    n = _check_order(n)
    x = float(x)
    if not np.isfinite(x) or x < 0:
        raise DomainError(f"argument must be finite and >= 0, got {x!r}")
    if x < _SMALL_X:
        return 1.0 if n == 0 else 0.0
    return float(_sp.spherical_jn(n, x))


def spherical_hankel_h1(n: int, x: float) -> complex:
    """Spherical Hankel function of the first kind, h_n^(1)(x) = j_n + i y_n.

    Under the ``e^{-i 2 pi f t}`` time convention this is the outgoing
    radial wave.  Singular at the origin, hence x > 0 is required.
    """
    n = _check_order(n)
    x = float(x)
    if not np.isfinite(x) or x <= 0:
        raise DomainError(f"argument must be finite and > 0, got {x!r}")
    return complex(_sp.spherical_jn(n, x) + 1j * _sp.spherical_yn(n, x))


def sph_derivative(kind: str, n: int, x: float):
    """Derivative of a spherical Bessel-family function.

    Uses the recurrence ``f_n'(x) = f_{n-1}(x) - ((n+1)/x) f_n(x)`` with
    ``f_0'(x) = -f_1(x)``, which holds for j_n, y_n and their combinations.

    Parameters
    ----------
    kind : {"bessel_j", "hankel_h1"}
        Which function family to differentiate.
    n, x :
        Order and argument, with the same domain rules as the underlying
        function.

    Returns
    -------
    float or complex
        f_n'(x); float for ``bessel_j``, complex for ``hankel_h1``.
    """
    if kind == "bessel_j":
        f = spherical_bessel_j
        if 0 <= float(x) < _SMALL_X:
            _check_order(n)
            # Origin limits of j_n': only n=1 is nonzero (j_1 ~ x/3).
            return 1.0 / 3.0 if n == 1 else 0.0
    elif kind == "hankel_h1":
        f = spherical_hankel_h1
    else:
        raise DomainError(f"unknown kind {kind!r}")
    n = _check_order(n)
    if n == 0:
        return -f(1, x)
    return f(n - 1, x) - ((n + 1) / float(x)) * f(n, x)


def legendre_p(n: int, x: float) -> float:
    """Legendre polynomial P_n(x) on [-1, 1], by the Bonnet recurrence."""
    n = _check_order(n)
    x = float(x)
    if not np.isfinite(x) or abs(x) > 1.0:
        raise DomainError(f"argument must lie in [-1, 1], got {x!r}")
    if n == 0:
        return 1.0
    p_prev, p = 1.0, x
    for k in range(1, n):
        p_prev, p = p, ((2 * k + 1) * x * p - k * p_prev) / (k + 1)
    return p


# ---------------------------------------------------------------------------
# Vectorized internals used by the array model.  Same conventions as the
# scalar API; not part of the public surface.
# ---------------------------------------------------------------------------

def _jn_all(nmax: int, x: float) -> np.ndarray:
    """j_0..j_nmax at a single argument, with the origin limit built in."""
    if x < _SMALL_X:
        out = np.zeros(nmax + 1)
        out[0] = 1.0
        return out
    return _sp.spherical_jn(np.arange(nmax + 1), x)


def _h1_derivative_all(nmax: int, x: float) -> np.ndarray:
    """(h_n^(1))'(x) for n = 0..nmax.  May overflow to inf for n >> x."""
    n = np.arange(nmax + 1)
    with np.errstate(over="ignore", invalid="ignore"):
        return _sp.spherical_jn(n, x, derivative=True) + 1j * _sp.spherical_yn(
            n, x, derivative=True
        )


def _legendre_all(nmax: int, x: np.ndarray) -> np.ndarray:
    """P_0..P_nmax evaluated on an array, stacked along a new first axis."""
    x = np.asarray(x, dtype=float)
    out = np.empty((nmax + 1,) + x.shape)
    out[0] = 1.0
    if nmax >= 1:
        out[1] = x
    for n in range(1, nmax):
        out[n + 1] = ((2 * n + 1) * x * out[n] - n * out[n - 1]) / (n + 1)
    return out
