"""SOFA (AES69) HRTF archive to BSMD container conversion.

Reads the ``SimpleFreeFieldHRIR`` convention (impulse responses over a
measurement grid), DFTs the responses onto an rfft frequency grid, maps
coordinates to the container convention (colatitude from vertical, azimuth
counterclockwise from the front in [-pi, pi)), and writes the flat binary
container:

    magic ``BSMD``, u32 version = 1, u32 K, u32 F, f64 sample_rate,
    f64 theta[K], f64 phi[K], f64 weight[K], f64 freq[F],
    left then right ear spectra as (K, F) complex128,
    u32-length-prefixed UTF-8 JSON metadata.

The writer is deliberately self-contained so this tool depends on the
container *format*, not on the package that consumes it.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
import warnings
from dataclasses import dataclass, field

import h5py
import numpy as np

MAGIC = b"BSMD"
VERSION = 1

REQUIRED_CONVENTION = "SimpleFreeFieldHRIR"


class ConversionError(Exception):
    """The archive cannot be converted as-is."""

    exit_code = 3


class UnsupportedConvention(ConversionError):
    """The archive follows a SOFA convention this tool does not handle."""


@dataclass
class ConversionManifest:
    """Everything needed to validate the emitted container against its source."""

    source_sha256: str
    n_directions: int
    n_frequencies: int
    sample_rate_hz: float
    grid_summary: dict
    conventions: dict
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "source_sha256": self.source_sha256,
            "n_directions": self.n_directions,
            "n_frequencies": self.n_frequencies,
            "sample_rate_hz": self.sample_rate_hz,
            "grid_summary": dict(self.grid_summary),
            "conventions": dict(self.conventions),
            "warnings": list(self.warnings),
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")


def wrap_azimuth(phi: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    out = math.remainder(phi, 2.0 * math.pi)
    if out >= math.pi:
        out -= 2.0 * math.pi
    elif out < -math.pi:
        out += 2.0 * math.pi
    return out


def sofa_to_native(azimuth_rad: float, elevation_rad: float):
    """SOFA (azimuth, elevation) to native (colatitude, azimuth), radians."""
    return math.pi / 2.0 - elevation_rad, wrap_azimuth(azimuth_rad)


def native_to_sofa(theta: float, phi: float):
    """Native (colatitude, azimuth) to SOFA (azimuth, elevation), radians.

    The SOFA azimuth lands in [0, 2*pi)."""
    return phi % (2.0 * math.pi), math.pi / 2.0 - theta


def _attr(node, name):
    value = node.attrs.get(name)
    if isinstance(value, bytes):
        return value.decode("utf-8", "replace")
    if value is None:
        return None
    return str(value)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _receiver_order(handle, note):
    """Map receiver indices to ears; the left ear sits at positive y."""
    pos = handle.get("ReceiverPosition")
    if pos is None:
        note("archive has no ReceiverPosition; assuming receiver 0 is the left ear")
        return 0, 1
    coords = np.asarray(pos[()], dtype=float)
    coords = coords.reshape(coords.shape[0], -1)[:, :3]
    kind = _attr(pos, "Type") or "cartesian"
    if kind.strip().lower() != "cartesian":
        note(f"ReceiverPosition type {kind!r} not understood; assuming receiver 0 "
             "is the left ear")
        return 0, 1
    y = coords[:, 1]
    if abs(y[0] - y[1]) < 1e-12:
        note("receiver positions do not separate the ears; assuming receiver 0 "
             "is the left ear")
        return 0, 1
    left = int(np.argmax(y))
    return left, 1 - left


def _angle_scale(units, note):
    if units is None:
        note("SourcePosition has no Units attribute; assuming degrees")
        return math.pi / 180.0
    first = units.split(",")[0].strip().lower()
    if first.startswith("degree"):
        return math.pi / 180.0
    if first.startswith("radian"):
        return 1.0
    raise UnsupportedConvention(f"unsupported SourcePosition units {units!r}")


def _duplicate_count(theta, phi, tolerance) -> int:
    d_theta = np.abs(theta[:, None] - theta[None, :])
    d_phi = np.abs(phi[:, None] - phi[None, :])
    d_phi = np.minimum(d_phi, 2.0 * math.pi - d_phi)
    close = (d_theta < tolerance) & (d_phi < tolerance)
    return int((np.triu(close, k=1)).sum())


def _write_bsmd(path, theta, phi, weights, freqs, left, right, rate, metadata):
    blob = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIId", VERSION, theta.size, freqs.size, rate))
        fh.write(theta.astype("<f8").tobytes())
        fh.write(phi.astype("<f8").tobytes())
        fh.write(weights.astype("<f8").tobytes())
        fh.write(freqs.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(left, dtype="<c16").tobytes())
        fh.write(np.ascontiguousarray(right, dtype="<c16").tobytes())
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)


def convert(
    sofa_path,
    out_path,
    fft_size: int = 2048,
    target_grid_tolerance: float = 1e-9,
) -> ConversionManifest:
    """Convert one SOFA archive to a BSMD container.

    Parameters
    ----------
    sofa_path, out_path
        Input archive and output container paths.
    fft_size : int
        DFT length; the container holds the ``fft_size // 2 + 1`` rfft bins.
    target_grid_tolerance : float
        Angular tolerance (radians) used to flag duplicated measurement
        directions.

    Returns
    -------
    ConversionManifest
        Counts, grid summary, detected conventions, and warnings.
    """
    if fft_size < 2:
        raise ConversionError(f"fft_size must be >= 2, got {fft_size}")
    notes = []

    def note(message):
        notes.append(message)
        warnings.warn(message, RuntimeWarning, stacklevel=3)

    try:
        handle = h5py.File(sofa_path, "r")
    except OSError as exc:
        raise ConversionError(f"cannot open {sofa_path}: {exc}") from exc
    with handle:
        convention = _attr(handle, "SOFAConventions")
        if convention != REQUIRED_CONVENTION:
            raise UnsupportedConvention(
                f"{sofa_path}: convention {convention!r}, need {REQUIRED_CONVENTION!r}"
            )
        data_type = _attr(handle, "DataType")
        if data_type != "FIR":
            raise UnsupportedConvention(
                f"{sofa_path}: data type {data_type!r}, need 'FIR'"
            )
        if "Data.IR" not in handle:
            raise ConversionError(f"{sofa_path}: missing Data.IR")
        ir = np.asarray(handle["Data.IR"][()], dtype=float)
        if ir.ndim != 3:
            raise ConversionError(
                f"{sofa_path}: Data.IR must be (measurements, receivers, samples), "
                f"got shape {ir.shape}"
            )
        n_meas, n_recv, n_samples = ir.shape
        if n_recv != 2:
            raise ConversionError(
                f"{sofa_path}: need exactly 2 receivers (the two ears), got {n_recv}"
            )

        rates = np.asarray(handle["Data.SamplingRate"][()], dtype=float).ravel()
        if np.unique(rates).size != 1:
            raise ConversionError(
                f"{sofa_path}: inconsistent sampling rates {np.unique(rates)}"
            )
        rate = float(rates[0])
        if not (rate > 0 and np.isfinite(rate)):
            raise ConversionError(f"{sofa_path}: bad sampling rate {rate!r}")

        if "SourcePosition" not in handle:
            raise ConversionError(f"{sofa_path}: missing SourcePosition")
        source = handle["SourcePosition"]
        kind = _attr(source, "Type")
        if kind is not None and kind.strip().lower() != "spherical":
            raise UnsupportedConvention(
                f"{sofa_path}: SourcePosition type {kind!r}, need 'spherical'"
            )
        if kind is None:
            note("SourcePosition has no Type attribute; assuming spherical")
        scale = _angle_scale(_attr(source, "Units"), note)
        positions = np.asarray(source[()], dtype=float)
        if positions.shape != (n_meas, 3):
            raise ConversionError(
                f"{sofa_path}: SourcePosition shape {positions.shape} does not "
                f"match {n_meas} measurements"
            )

        left_idx, right_idx = _receiver_order(handle, note)

        delay = np.zeros((n_meas, 2))
        if "Data.Delay" in handle:
            d = np.asarray(handle["Data.Delay"][()], dtype=float)
            d = d.reshape(-1, n_recv)
            delay = np.broadcast_to(d, (n_meas, n_recv)).astype(float)
            if np.any(delay != 0.0):
                note("applying nonzero Data.Delay as extra linear phase")

    theta = math.pi / 2.0 - positions[:, 1] * scale
    overshoot = np.maximum(theta - math.pi, -theta).max()
    if overshoot > 1e-9:
        raise ConversionError(
            f"{sofa_path}: elevations leave [-90, 90] degrees by {overshoot:.3g} rad"
        )
    theta = np.clip(theta, 0.0, math.pi)
    phi = np.array([wrap_azimuth(a) for a in positions[:, 0] * scale])

    distances = positions[:, 2]
    if np.any(distances <= 0):
        note("some measurement distances are not positive")
    elif np.ptp(distances) > 1e-3 * distances.max():
        note("measurement distance varies across directions; treating all "
             "responses as far-field")

    duplicates = _duplicate_count(theta, phi, target_grid_tolerance)
    if duplicates:
        note(f"{duplicates} direction pair(s) coincide within "
             f"{target_grid_tolerance:g} rad")

    if n_samples > fft_size:
        note(f"truncating {n_samples}-sample responses to fft_size={fft_size}")
        ir = ir[:, :, :fft_size]

    spectra = np.fft.rfft(ir, n=fft_size, axis=2)
    freqs = np.fft.rfftfreq(fft_size, d=1.0 / rate)
    phase = np.exp(
        -2j * math.pi * delay[:, :, None] * freqs[None, None, :] / rate
    )
    spectra = spectra * phase
    left = spectra[:, left_idx, :]
    right = spectra[:, right_idx, :]

    note("archive carries no quadrature weights; assuming uniform 1/K")
    weights = np.full(n_meas, 1.0 / n_meas)

    source_hash = _sha256(sofa_path)
    metadata = {
        "kind": "sofa_import",
        "source": os.path.basename(str(sofa_path)),
        "source_sha256": source_hash,
        "sofa_conventions": convention,
        "fft_size": fft_size,
        "ir_samples": n_samples,
        "receiver_order": ["left", "right"] if left_idx == 0 else ["right", "left"],
    }
    _write_bsmd(out_path, theta, phi, weights, freqs, left, right, rate, metadata)

    return ConversionManifest(
        source_sha256=source_hash,
        n_directions=n_meas,
        n_frequencies=freqs.size,
        sample_rate_hz=rate,
        grid_summary={
            "theta_min_rad": float(theta.min()),
            "theta_max_rad": float(theta.max()),
            "phi_min_rad": float(phi.min()),
            "phi_max_rad": float(phi.max()),
        },
        conventions={
            "sofa_conventions": convention,
            "data_type": data_type,
            "source_position_units": "radians" if scale == 1.0 else "degrees",
            "receiver_order": metadata["receiver_order"],
        },
        warnings=notes,
    )
