"""Time-domain side of the toolkit: FIR synthesis and audio rendering.

Filter banks live on a frequency grid; playback needs impulse responses.
``filters_to_fir`` resamples each bank response onto an FFT grid, inverse
transforms the Hermitian extension, applies a half-length circular shift
(so the filters are causal with a documented ``taps/2`` sample latency) and
a Hann window.  ``render_binaural`` convolves microphone channels with such
filters; ``simulate_mic_signals`` runs the reverse direction, synthesizing
what a spherical array would record for a free-field source.

The defaults (48 kHz, 1024 taps) are plumbing choices, recorded in file
metadata; the evaluation pipeline upstream of them is purely spectral.
"""

from __future__ import annotations

import json
import math
import struct
import wave
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile
from scipy.signal import oaconvolve

from .array_model import ArrayGeometry, Direction, steering_vector
from .bsm_core import BANK_MAGIC, FilterBank
from .errors import (
    BadMagic,
    DataError,
    DimensionMismatch,
    DomainError,
    InsufficientTaps,
    TruncatedPayload,
)

DEFAULT_TAPS = 1024
FIR_VERSION = 1

WAV_FORMATS = ("float32", "pcm16", "pcm24")


@dataclass
class MultichannelAudio:
    """A block of aligned audio channels, one row per channel."""

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] < 1:
            raise DimensionMismatch(
                f"samples must be (channels, frames), got shape {self.samples.shape}"
            )
        if not np.all(np.isfinite(self.samples)):
            raise DataError("samples must be finite")
        if not (self.sample_rate_hz > 0 and math.isfinite(self.sample_rate_hz)):
            raise DomainError(f"bad sample rate {self.sample_rate_hz!r}")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_frames(self) -> int:
        return self.samples.shape[1]


def crossover_merge(
    low: FilterBank, high: FilterBank, crossover_hz: float
) -> FilterBank:
    """Blend two banks: ``low`` below the crossover, ``high`` above.

    The crossfade is a raised cosine over one octave centered on the
    crossover (fully ``low`` at ``crossover/sqrt(2)``, fully ``high`` at
    ``crossover*sqrt(2)``), applied to the complex coefficients so phase
    transitions smoothly.  A crossover whose octave falls entirely outside
    the grid degenerates to one input unchanged.
    """
    if not np.array_equal(low.frequencies_hz, high.frequencies_hz):
        raise DimensionMismatch("banks are defined on different frequency grids")
    if low.coeffs.shape != high.coeffs.shape:
        raise DimensionMismatch(
            f"bank shapes differ: {low.coeffs.shape} vs {high.coeffs.shape}"
        )
    if not (crossover_hz > 0 and math.isfinite(crossover_hz)):
        raise DomainError(f"crossover must be positive and finite, got {crossover_hz!r}")
    f = low.frequencies_hz
    with np.errstate(divide="ignore"):
        s = np.clip(np.log2(f / crossover_hz) + 0.5, 0.0, 1.0)
    alpha = (0.5 - 0.5 * np.cos(math.pi * s))[:, None, None]
    coeffs = (1.0 - alpha) * low.coeffs + alpha * high.coeffs
    return FilterBank(
        frequencies_hz=f.copy(),
        coeffs=coeffs,
        design_kind=high.design_kind,
        crossover_hz=float(np.clip(crossover_hz, f[0], f[-1])),
        metadata={
            "merged_from": [low.design_kind, high.design_kind],
            "crossover_hz": crossover_hz,
            "blend": "raised cosine over one octave in log frequency",
        },
    )


def _check_taps(taps: int) -> None:
    if taps < 128:
        raise InsufficientTaps(f"need at least 128 taps, got {taps}")
    if taps & (taps - 1):
        raise DomainError(f"taps must be a power of two, got {taps}")


def _fir_from_spectra(spectra: np.ndarray, taps: int) -> np.ndarray:
    """Hermitian inverse DFT, shift to taps/2, Hann window (last axis)."""
    ir = np.fft.irfft(spectra, n=taps, axis=-1)
    ir = np.roll(ir, taps // 2, axis=-1)
    return ir * np.hanning(taps)


def _resample_responses(
    frequencies_hz: np.ndarray, responses: np.ndarray, grid_hz: np.ndarray
) -> np.ndarray:
    """Linear interpolation of complex responses onto a new grid, 0 outside."""
    flat = responses.reshape(-1, frequencies_hz.size)
    out = np.empty((flat.shape[0], grid_hz.size), dtype=complex)
    for i, row in enumerate(flat):
        out[i] = np.interp(grid_hz, frequencies_hz, row.real, left=0.0, right=0.0)
        out[i] += 1j * np.interp(grid_hz, frequencies_hz, row.imag, left=0.0, right=0.0)
    return out.reshape(responses.shape[:-1] + (grid_hz.size,))


def filters_to_fir(
    bank: FilterBank,
    taps: int = DEFAULT_TAPS,
    sample_rate_hz: float = 48000.0,
    conjugate: bool = False,
) -> np.ndarray:
    """Causal FIR filters for every (mic, ear) pair, shape (M, 2, taps).

    The bank's per-bin responses are treated as literal transfer functions;
    pass ``conjugate=True`` when the bank holds inner-product coefficients
    (outputs formed as ``conj(c) . x``), which is how designed banks are
    applied.  Responses outside the bank's grid are taken as zero.  The
    filters carry a flat ``taps/2`` sample delay.
    """
    _check_taps(taps)
    grid = np.fft.rfftfreq(taps, 1.0 / sample_rate_hz)
    coeffs = np.conj(bank.coeffs) if conjugate else bank.coeffs
    responses = coeffs.transpose(1, 2, 0)  # (M, 2, F)
    spectra = _resample_responses(bank.frequencies_hz, responses, grid)
    return _fir_from_spectra(spectra, taps)


def render_binaural(audio: MultichannelAudio, fir: np.ndarray) -> np.ndarray:
    """Convolve and sum microphone channels into stereo, (2, N + taps - 1)."""
    fir = np.asarray(fir, dtype=np.float64)
    if fir.ndim != 3 or fir.shape[1] != 2:
        raise DimensionMismatch(f"fir must be (M, 2, taps), got {fir.shape}")
    if fir.shape[0] != audio.n_channels:
        raise DimensionMismatch(
            f"{audio.n_channels} audio channels vs {fir.shape[0]} filter channels"
        )
    out = np.zeros((2, audio.n_frames + fir.shape[2] - 1))
    for m in range(fir.shape[0]):
        for e in range(2):
            out[e] += oaconvolve(audio.samples[m], fir[m, e])
    return out


def simulate_mic_signals(
    geometry: ArrayGeometry,
    source: np.ndarray,
    direction: Direction,
    sample_rate_hz: float = 48000.0,
    taps: int = DEFAULT_TAPS,
) -> MultichannelAudio:
    """What the array records for a free-field source from ``direction``.

    Each microphone channel is the source convolved with an FIR realization
    of that mic's steering response, built with the same inverse-DFT, shift
    and window as :func:`filters_to_fir` (so the channels share the flat
    ``taps/2`` delay).
    """
    _check_taps(taps)
    source = np.asarray(source, dtype=np.float64)
    if source.ndim != 1 or source.size < 1:
        raise DimensionMismatch(f"source must be 1-D, got shape {source.shape}")
    if not np.all(np.isfinite(source)):
        raise DataError("source samples must be finite")
    grid = np.fft.rfftfreq(taps, 1.0 / sample_rate_hz)
    spectra = np.empty((len(geometry.mic_directions), grid.size), dtype=complex)
    for i, f in enumerate(grid):
        spectra[:, i] = steering_vector(geometry, f, direction)
    fir = _fir_from_spectra(spectra, taps)
    channels = np.stack([oaconvolve(source, fir[m]) for m in range(fir.shape[0])])
    return MultichannelAudio(samples=channels, sample_rate_hz=sample_rate_hz)


def save_fir_set(fir: np.ndarray, sample_rate_hz: float, path, metadata=None) -> None:
    """Write an FIR set container (same framing as filter banks, kind "fir")."""
    fir = np.asarray(fir, dtype=np.float64)
    if fir.ndim != 3 or fir.shape[1] != 2:
        raise DimensionMismatch(f"fir must be (M, 2, taps), got {fir.shape}")
    meta = dict(metadata or {})
    meta["kind"] = "fir"
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(BANK_MAGIC)
        fh.write(struct.pack("<IIId", FIR_VERSION, fir.shape[0], fir.shape[2], sample_rate_hz))
        fh.write(np.ascontiguousarray(fir, dtype="<f8").tobytes())
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)


def load_fir_set(path):
    """Read back an FIR set container: (fir, sample_rate_hz, metadata)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise TruncatedPayload(
                f"need {pos + n} bytes, container has only {len(blob)}"
            )
        out = blob[pos : pos + n]
        pos += n
        return out

    if take(4) != BANK_MAGIC:
        raise BadMagic(f"not a filter container: magic {blob[:4]!r}")
    version, m, taps, rate = struct.unpack("<IIId", take(20))
    if version != FIR_VERSION:
        raise DataError(f"unsupported container version {version}")
    if m < 1 or taps < 1:
        raise DimensionMismatch(f"bad FIR dimensions M={m}, taps={taps}")
    fir = np.frombuffer(take(m * 2 * taps * 8), dtype="<f8").reshape(m, 2, taps)
    (length,) = struct.unpack("<I", take(4))
    try:
        meta = json.loads(take(length).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: bad metadata blob: {exc}") from exc
    if pos != len(blob):
        raise DataError(f"{len(blob) - pos} trailing bytes after payload")
    if meta.get("kind") != "fir":
        raise DataError(f"container holds kind {meta.get('kind')!r}, expected 'fir'")
    return fir.copy(), rate, meta


def write_wav(path, samples: np.ndarray, sample_rate_hz: float, fmt: str = "float32"):
    """Write (channels, frames) audio as RIFF/WAVE.

    ``fmt`` is one of "float32", "pcm16" or "pcm24"; integer formats are
    clipped to [-1, 1] before quantization.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[None, :]
    if samples.ndim != 2:
        raise DimensionMismatch(f"samples must be (channels, frames), got {samples.shape}")
    if fmt not in WAV_FORMATS:
        raise DomainError(f"fmt must be one of {WAV_FORMATS}, got {fmt!r}")
    rate = int(round(sample_rate_hz))
    frames = samples.T
    if fmt == "float32":
        wavfile.write(path, rate, frames.astype("<f4"))
    elif fmt == "pcm16":
        q = np.round(np.clip(frames, -1.0, 1.0) * 32767.0).astype("<i2")
        wavfile.write(path, rate, q)
    else:  # pcm24 via the stdlib wave module (scipy cannot write 3-byte PCM)
        q = np.round(np.clip(frames, -1.0, 1.0) * 8388607.0).astype("<i4")
        raw = q.tobytes()
        packed = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 4)[:, :3].tobytes()
        with wave.open(str(path), "wb") as fh:
            fh.setnchannels(samples.shape[0])
            fh.setsampwidth(3)
            fh.setframerate(rate)
            fh.writeframes(packed)


def read_wav(path):
    """Read a WAV file as (sample_rate_hz, (channels, frames) float64).

    PCM data is scaled to [-1, 1]; float data is passed through.
    """
    rate, data = wavfile.read(path)
    if data.ndim == 1:
        data = data[:, None]
    samples = data.T
    if samples.dtype == np.int16:
        samples = samples / 32768.0
    elif samples.dtype == np.int32:
        samples = samples / 2147483648.0
    elif samples.dtype == np.uint8:
        samples = (samples.astype(np.float64) - 128.0) / 128.0
    else:
        samples = samples.astype(np.float64)
    return float(rate), samples
