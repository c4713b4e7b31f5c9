"""Microphone-array geometry and analytic plane-wave steering vectors.

A plane wave arriving from direction ``(theta, phi)`` and impinging on a
sphere of radius ``a`` produces the surface pressure

    v_m = sum_n b_n(ka) ((2n+1)/4pi) P_n(cos Theta_m)

at microphone m, where ``Theta_m`` is the angle between the microphone and
source directions and ``b_n`` is the radial scattering term.  Directions
always point from the origin *toward* the source, so under the project-wide
``e^{-i 2 pi f t}`` time convention the incident field is
``e^{-i k r cos Theta}`` and a microphone facing the source sits on the
illuminated side of the sphere.  Pressure is referenced to the incident unit
plane wave at the sphere origin, so all entries tend to 1 in the
long-wavelength limit.

Angles: ``theta`` is colatitude measured from the positive vertical axis,
``phi`` azimuth counterclockwise from the front, in [-pi, pi).
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, DomainError
from .sphmath import _h1_derivative_all, _jn_all, _legendre_all

#: Speed of sound used throughout (m/s, dry air near 20 C).
SPEED_OF_SOUND_M_S = 343.0

#: Hard ceiling on the expansion order chosen by :func:`truncation_order`.
ORDER_LIMIT = 120

_BAFFLES = ("rigid_sphere", "open")


@dataclass(frozen=True)
class Direction:
    """A direction on the sphere: colatitude ``theta``, azimuth ``phi``."""

    theta: float
    phi: float

    def __post_init__(self):
        if not (0.0 <= self.theta <= math.pi):
            raise DomainError(f"theta must lie in [0, pi], got {self.theta!r}")
        if not (-math.pi <= self.phi < math.pi):
            raise DomainError(f"phi must lie in [-pi, pi), got {self.phi!r}")

    @classmethod
    def from_degrees(cls, theta_deg: float, phi_deg: float) -> "Direction":
        return cls(math.radians(theta_deg), wrap_phi(math.radians(phi_deg)))


def wrap_phi(phi: float) -> float:
    """Wrap an azimuth into [-pi, pi)."""
    out = math.remainder(phi, 2.0 * math.pi)
    if out >= math.pi:
        out -= 2.0 * math.pi
    elif out < -math.pi:
        out += 2.0 * math.pi
    return out


@dataclass(frozen=True)
class ArrayGeometry:
    """Microphone positions on a spherical baffle (or in free field)."""

    radius_m: float
    mic_directions: tuple
    baffle: str = "rigid_sphere"

    def __post_init__(self):
        if not (np.isfinite(self.radius_m) and self.radius_m > 0):
            raise DomainError(f"radius must be finite and > 0, got {self.radius_m!r}")
        if self.baffle not in _BAFFLES:
            raise DomainError(f"baffle must be one of {_BAFFLES}, got {self.baffle!r}")
        object.__setattr__(self, "mic_directions", tuple(self.mic_directions))
        if len(self.mic_directions) < 1:
            raise DomainError("geometry needs at least one microphone")

    @property
    def n_mics(self) -> int:
        return len(self.mic_directions)

    def thetas(self) -> np.ndarray:
        return np.array([d.theta for d in self.mic_directions])

    def phis(self) -> np.ndarray:
        return np.array([d.phi for d in self.mic_directions])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.baffle.encode())
        h.update(np.float64(self.radius_m).tobytes())
        h.update(self.thetas().astype("<f8").tobytes())
        h.update(self.phis().astype("<f8").tobytes())
        return h.hexdigest()[:16]


def semicircular6() -> ArrayGeometry:
    """Six microphones on a horizontal semicircle of a 10 cm rigid sphere.

    Azimuths +-22, +-45 and +-65 degrees, all at colatitude 90 degrees.
    """
    mics = tuple(
        Direction.from_degrees(90.0, phi) for phi in (22.0, -22.0, 45.0, -45.0, 65.0, -65.0)
    )
    return ArrayGeometry(radius_m=0.10, mic_directions=mics, baffle="rigid_sphere")


def load_geometry(path) -> ArrayGeometry:
    """Read a geometry from a plain-text file.

    The format is line-oriented: ``radius_m = 0.1``, ``baffle = rigid_sphere``
    and one ``mic = theta_deg, phi_deg`` line per microphone.  ``#`` starts a
    comment.
    """
    radius = None
    baffle = "rigid_sphere"
    mics = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key == "radius_m":
                radius = float(value)
            elif key == "baffle":
                baffle = value
            elif key == "mic":
                parts = [p.strip() for p in value.split(",")]
                if len(parts) != 2:
                    raise DataError(f"{path}:{lineno}: mic line needs 'theta_deg, phi_deg'")
                mics.append(Direction.from_degrees(float(parts[0]), float(parts[1])))
            else:
                raise DataError(f"{path}:{lineno}: unknown key {key!r}")
    if radius is None:
        raise DataError(f"{path}: missing radius_m")
    if not mics:
        raise DataError(f"{path}: no microphones defined")
    try:
        return ArrayGeometry(radius_m=radius, mic_directions=tuple(mics), baffle=baffle)
    except DomainError as exc:
        raise DataError(f"{path}: {exc}") from exc


@dataclass
class SteeringMatrix:
    """Per-frequency M x K steering matrix with provenance fingerprints."""

    frequency_hz: float
    entries: np.ndarray
    geometry_fingerprint: str
    grid_fingerprint: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.complex128)
        if self.entries.ndim != 2:
            raise DataError("steering entries must be a 2-D (mics x directions) array")
        if not np.all(np.isfinite(self.entries)):
            raise DataError("steering entries must be finite")


def radial_function_bn(n: int, ka: float, baffle: str = "rigid_sphere") -> complex:
    """Radial term b_n(ka) of the plane-wave expansion on a sphere.

    For the rigid sphere the textbook combination
    ``4 pi (-i)^n [ j_n - (j_n'/h_n') h_n ]`` (with ``h_n = h_n^(1)``, the
    outgoing wave of the ``e^{-i 2 pi f t}`` convention, and ``(-i)^n`` from
    the arriving-wave expansion ``e^{-i k r cos Theta}``) is evaluated in the
    equivalent Wronskian form ``4 pi (-i)^n i / ((ka)^2 h_n'(ka))``, which
    avoids the cancellation of the direct difference at large ``ka``.  The
    open (unbaffled) case is ``4 pi (-i)^n j_n(ka)``.  At ``ka = 0`` the
    analytic limit is returned: ``4 pi`` for n = 0, zero otherwise.
    """
    if baffle not in _BAFFLES:
        raise DomainError(f"baffle must be one of {_BAFFLES}, got {baffle!r}")
    if not float(n).is_integer() or n < 0:
        raise DomainError(f"order must be a non-negative integer, got {n!r}")
    n = int(n)
    ka = float(ka)
    if not np.isfinite(ka) or ka < 0:
        raise DomainError(f"ka must be finite and >= 0, got {ka!r}")
    if ka == 0.0:
        return complex(4.0 * math.pi) if n == 0 else 0.0j
    if baffle == "open":
        return complex(4.0 * math.pi * ((-1j) ** n) * _jn_all(n, ka)[n])
    hp = _h1_derivative_all(n, ka)[n]
    with np.errstate(over="ignore", invalid="ignore"):
        value = 4.0 * math.pi * ((-1j) ** n) * 1j / (ka**2 * hp)
    if not np.isfinite(value):
        # h_n' has overflowed (n far beyond ka); the mode carries no energy.
        return 0.0j
    return complex(value)


def _bn_profile(nmax: int, ka: float, baffle: str) -> np.ndarray:
    """b_0..b_nmax at a single ka (vectorized version of radial_function_bn)."""
    if ka == 0.0:
        out = np.zeros(nmax + 1, dtype=np.complex128)
        out[0] = 4.0 * math.pi
        return out
    n = np.arange(nmax + 1)
    if baffle == "open":
        return 4.0 * math.pi * ((-1j) ** n) * _jn_all(nmax, ka)
    with np.errstate(over="ignore", invalid="ignore"):
        out = 4.0 * math.pi * ((-1j) ** n) * 1j / (ka**2 * _h1_derivative_all(nmax, ka))
    return np.where(np.isfinite(out), out, 0.0)


def truncation_order(ka: float) -> int:
    """Expansion order sufficient for spectral convergence at this ka.

    Smallest ``N >= ceil(ka) + 10`` whose radial term has decayed below
    1e-12 of the largest one, capped at :data:`ORDER_LIMIT`.
    """
    if not np.isfinite(ka) or ka < 0:
        raise DomainError(f"ka must be finite and >= 0, got {ka!r}")
    floor_n = int(math.ceil(ka)) + 10
    if floor_n >= ORDER_LIMIT:
        return ORDER_LIMIT
    profile = np.abs(_bn_profile(ORDER_LIMIT, ka, "rigid_sphere"))
    peak = profile.max()
    for n in range(floor_n, ORDER_LIMIT + 1):
        if profile[n] < 1e-12 * peak:
            return n
    return ORDER_LIMIT


def _cos_angles(th1, ph1, th2, ph2) -> np.ndarray:
    """cos of the great-circle angle between two direction sets, clamped."""
    c = np.cos(th1) * np.cos(th2) + np.sin(th1) * np.sin(th2) * np.cos(ph1 - ph2)
    return np.clip(c, -1.0, 1.0)


def _grid_fingerprint(theta: np.ndarray, phi: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(theta, dtype="<f8").tobytes())
    h.update(np.asarray(phi, dtype="<f8").tobytes())
    return h.hexdigest()[:16]


def steering_matrix(
    geometry: ArrayGeometry,
    frequency_hz: float,
    grid: Sequence[Direction],
    order: int | None = None,
) -> SteeringMatrix:
    """Steering matrix V(f): response of every mic to every grid direction.

    Column k corresponds to ``grid[k]``.  ``order`` defaults to
    :func:`truncation_order`; passing one below ``ceil(ka)`` is allowed but
    flagged (``metadata["truncated"]``) and reported as a warning, since the
    expansion is then not converged.
    """
    if frequency_hz < 0 or not np.isfinite(frequency_hz):
        raise DomainError(f"frequency must be finite and >= 0, got {frequency_hz!r}")
    src_th = np.array([d.theta for d in grid])
    src_ph = np.array([d.phi for d in grid])
    if src_th.size == 0:
        raise DataError("steering grid is empty")
    ka = 2.0 * math.pi * frequency_hz * geometry.radius_m / SPEED_OF_SOUND_M_S
    meta: dict = {"ka": ka}
    if order is None:
        order = truncation_order(ka)
    else:
        order = int(order)
        if order < math.ceil(ka):
            meta["truncated"] = True
            warnings.warn(
                f"steering order {order} below ceil(ka)={math.ceil(ka)}; "
                "expansion not converged",
                RuntimeWarning,
                stacklevel=2,
            )
    meta["order"] = order
    cos_t = _cos_angles(
        geometry.thetas()[:, None], geometry.phis()[:, None], src_th[None, :], src_ph[None, :]
    )
    legendre = _legendre_all(order, cos_t)  # (order+1, M, K)
    bn = _bn_profile(order, ka, geometry.baffle)
    n = np.arange(order + 1)
    coeff = bn * (2 * n + 1) / (4.0 * math.pi)
    entries = np.tensordot(coeff, legendre, axes=(0, 0))
    return SteeringMatrix(
        frequency_hz=float(frequency_hz),
        entries=entries,
        geometry_fingerprint=geometry.fingerprint(),
        grid_fingerprint=_grid_fingerprint(src_th, src_ph),
        metadata=meta,
    )


def steering_vector(
    geometry: ArrayGeometry,
    frequency_hz: float,
    source: Direction,
    order: int | None = None,
) -> np.ndarray:
    """Steering vector for a single source direction (length M)."""
    return steering_matrix(geometry, frequency_hz, [source], order).entries[:, 0]
