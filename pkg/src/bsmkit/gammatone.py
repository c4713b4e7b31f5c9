"""Auditory frequency weighting: ERB scale and gammatone magnitude windows.

Interaural level differences are computed from band powers, each band shaped
by the magnitude-squared response of a 4th-order gammatone filter.  Only the
zero-phase magnitude weighting is needed (the integrals weight power
spectra), so no time-domain filterbank is involved and every quantity here
is an exact closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

#: Conventional ratio between a gammatone's -3 dB-ish scale parameter and
#: the equivalent rectangular bandwidth of the same auditory filter.
BANDWIDTH_FACTOR = 1.019


def erb_bandwidth(f0_hz):
    """Equivalent rectangular bandwidth at center f0: 24.7 (4.37 f/1000 + 1)."""
    f0 = np.asarray(f0_hz, dtype=float)
    if np.any(f0 <= 0) or not np.all(np.isfinite(f0)):
        raise DomainError("center frequency must be positive and finite")
    out = 24.7 * (4.37 * f0 / 1000.0 + 1.0)
    return float(out) if np.isscalar(f0_hz) else out


def erb_rate(f_hz):
    """Position of a frequency on the ERB-rate scale: 21.4 log10(4.37 f/1000 + 1)."""
    f = np.asarray(f_hz, dtype=float)
    if np.any(f < 0) or not np.all(np.isfinite(f)):
        raise DomainError("frequency must be non-negative and finite")
    out = 21.4 * np.log10(4.37 * f / 1000.0 + 1.0)
    return float(out) if np.isscalar(f_hz) else out


def erb_rate_inverse(rate):
    """Frequency whose ERB-rate is ``rate`` (inverse of :func:`erb_rate`)."""
    r = np.asarray(rate, dtype=float)
    out = 1000.0 / 4.37 * (10.0 ** (r / 21.4) - 1.0)
    return float(out) if np.isscalar(rate) else out


def gammatone_weight(f0_hz: float, f_hz):
    """Peak-normalized magnitude-squared 4th-order gammatone response.

    ``[1 + ((f - f0)/b)^2]^-4`` with ``b = 1.019 erb_bandwidth(f0)``;
    equals 1 exactly at ``f = f0`` and is even in the detuning.
    """
    b = BANDWIDTH_FACTOR * erb_bandwidth(f0_hz)
    f = np.asarray(f_hz, dtype=float)
    if np.any(f < 0) or not np.all(np.isfinite(f)):
        raise DomainError("frequency must be non-negative and finite")
    out = (1.0 + ((f - f0_hz) / b) ** 2) ** -4
    return float(out) if np.isscalar(f_hz) else out


def erb_spaced_centers(f_lo_hz: float, f_hi_hz: float, step_erb: float = 1.0) -> np.ndarray:
    """Center frequencies at integer multiples of ``step_erb`` on the ERB-rate
    scale, restricted to [f_lo, f_hi].

    A degenerate bracket narrower than one step still yields a single center
    at the ERB-rate midpoint, so downstream band metrics never come back
    empty.
    """
    if not (0 < f_lo_hz < f_hi_hz):
        raise DomainError(f"need 0 < f_lo < f_hi, got ({f_lo_hz!r}, {f_hi_hz!r})")
    if step_erb <= 0:
        raise DomainError(f"step must be positive, got {step_erb!r}")
    e_lo, e_hi = erb_rate(f_lo_hz), erb_rate(f_hi_hz)
    k_lo = math.ceil(e_lo / step_erb - 1e-12)
    k_hi = math.floor(e_hi / step_erb + 1e-12)
    if k_lo > k_hi:
        return np.array([erb_rate_inverse(0.5 * (e_lo + e_hi))])
    centers = erb_rate_inverse(step_erb * np.arange(k_lo, k_hi + 1))
    return np.clip(centers, f_lo_hz, f_hi_hz)


@dataclass(frozen=True)
class IldSpec:
    """Where and how to measure interaural level differences.

    ``centers_hz`` are the gammatone centers f0, the band edges bound the
    power integrals, and ``horizontal_directions`` are the L evaluation
    angles on the horizon.
    """

    centers_hz: np.ndarray
    band_lo_hz: float
    band_hi_hz: float
    horizontal_directions: tuple

    def __post_init__(self):
        object.__setattr__(
            self, "centers_hz", np.asarray(self.centers_hz, dtype=float)
        )
        object.__setattr__(
            self, "horizontal_directions", tuple(self.horizontal_directions)
        )
        if not self.band_lo_hz < self.band_hi_hz:
            raise DomainError("band_lo must be below band_hi")
        c = self.centers_hz
        if c.ndim != 1 or c.size < 1:
            raise DomainError("need at least one center frequency")
        if np.any(np.diff(c) <= 0):
            raise DomainError("centers must be strictly increasing")
        if c[0] < self.band_lo_hz or c[-1] > self.band_hi_hz:
            raise DomainError("centers must lie within the band")
        if len(self.horizontal_directions) < 1:
            raise DomainError("need at least one horizontal direction")

    @classmethod
    def default(
        cls,
        horizontal_directions,
        band_lo_hz: float = 1500.0,
        band_hi_hz: float = 20000.0,
        step_erb: float = 1.0,
    ) -> "IldSpec":
        return cls(
            centers_hz=erb_spaced_centers(band_lo_hz, band_hi_hz, step_erb),
            band_lo_hz=band_lo_hz,
            band_hi_hz=band_hi_hz,
            horizontal_directions=tuple(horizontal_directions),
        )
