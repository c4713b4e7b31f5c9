"""HRTF dataset model, native binary container, and spherical grids.

The native container keeps the primary tool free of archive-format
dependencies: a converter (shipped separately) turns measurement archives
into this format, and everything here loads it bit-exactly.

Layout (little-endian): magic ``BSMD``, u32 version = 1, u32 K, u32 F,
f64 sample_rate, f64 theta[K], f64 phi[K] (radians), f64 weight[K],
f64 freq[F] (Hz), left then right ear responses as interleaved (re, im)
f64 of length K*F in (direction, frequency) row-major order, then a
u32-length-prefixed UTF-8 JSON metadata blob.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from .array_model import Direction, steering_matrix, ArrayGeometry, _cos_angles
from .errors import (
    BadMagic,
    DataError,
    DimensionMismatch,
    DomainError,
    NoHorizontalDirections,
    NonMonotoneFrequencies,
    TruncatedPayload,
)

MAGIC = b"BSMD"
VERSION = 1


@dataclass(frozen=True)
class SphericalGrid:
    """Directions on the sphere with quadrature weights summing to one."""

    directions: tuple
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "directions", tuple(self.directions))
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if len(self.directions) < 1:
            raise DomainError("grid needs at least one direction")
        if w.shape != (len(self.directions),):
            raise DomainError("weights length must match directions")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise DomainError("weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise DomainError(f"weights must sum to 1, got {w.sum()!r}")

    @classmethod
    def with_uniform_weights(cls, directions) -> "SphericalGrid":
        directions = tuple(directions)
        warnings.warn(
            "no quadrature weights available; assuming uniform 1/K",
            RuntimeWarning,
            stacklevel=2,
        )
        k = len(directions)
        return cls(directions, np.full(k, 1.0 / k))

    def __len__(self) -> int:
        return len(self.directions)

    def thetas(self) -> np.ndarray:
        return np.array([d.theta for d in self.directions])

    def phis(self) -> np.ndarray:
        return np.array([d.phi for d in self.directions])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.thetas().astype("<f8").tobytes())
        h.update(self.phis().astype("<f8").tobytes())
        h.update(self.weights.astype("<f8").tobytes())
        return h.hexdigest()[:16]


def gauss_ring_grid(n_rings: int, n_azimuths: int) -> SphericalGrid:
    """Rings of equally spaced azimuths at Gauss-Legendre colatitudes.

    Exact for spherical harmonics up to degree ``n_rings - 1`` in colatitude
    and order ``n_azimuths/2`` in azimuth.  With an odd ring count the middle
    ring lies exactly on the equator, which the horizontal-plane metrics rely
    on.
    """
    if n_rings < 1 or n_azimuths < 1:
        raise DomainError("ring and azimuth counts must be >= 1")
    nodes, gl_weights = np.polynomial.legendre.leggauss(n_rings)
    # The odd-count middle node is analytically zero; snap away rounding fuzz
    # so the equator ring sits at exactly theta = pi/2.
    nodes = np.where(np.abs(nodes) < 1e-14, 0.0, nodes)
    phis = -math.pi + 2.0 * math.pi * np.arange(n_azimuths) / n_azimuths
    directions = []
    weights = np.empty(n_rings * n_azimuths)
    for i, (x, gw) in enumerate(zip(nodes, gl_weights)):
        theta = math.acos(x)
        for j, phi in enumerate(phis):
            directions.append(Direction(theta, float(phi)))
            weights[i * n_azimuths + j] = gw / 2.0 / n_azimuths
    return SphericalGrid(tuple(directions), weights)


@dataclass
class HrtfSet:
    """Left/right ear responses over a spherical grid and frequency axis."""

    grid: SphericalGrid
    frequencies_hz: np.ndarray
    left: np.ndarray
    right: np.ndarray
    sample_rate_hz: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frequencies_hz = np.asarray(self.frequencies_hz, dtype=float)
        self.left = np.asarray(self.left, dtype=np.complex128)
        self.right = np.asarray(self.right, dtype=np.complex128)
        k, f = len(self.grid), self.frequencies_hz.size
        if self.frequencies_hz.ndim != 1 or f < 1:
            raise DimensionMismatch("frequency axis must be a non-empty 1-D array")
        if self.left.shape != (k, f) or self.right.shape != (k, f):
            raise DimensionMismatch(
                f"ear responses must be shaped ({k}, {f}); "
                f"got {self.left.shape} and {self.right.shape}"
            )
        if np.any(np.diff(self.frequencies_hz) <= 0):
            raise NonMonotoneFrequencies("frequencies must be strictly increasing")
        if not (np.all(np.isfinite(self.left)) and np.all(np.isfinite(self.right))):
            raise DataError("ear responses must be finite")
        if not (np.isfinite(self.sample_rate_hz) and self.sample_rate_hz > 0):
            raise DataError(f"bad sample rate {self.sample_rate_hz!r}")

    @property
    def n_directions(self) -> int:
        return len(self.grid)

    @property
    def n_frequencies(self) -> int:
        return self.frequencies_hz.size


def save_native(hrtf: HrtfSet, path) -> None:
    """Write the native container.  Byte-for-byte deterministic."""
    k, f = hrtf.n_directions, hrtf.n_frequencies
    meta = json.dumps(hrtf.metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIId", VERSION, k, f, hrtf.sample_rate_hz))
        fh.write(hrtf.grid.thetas().astype("<f8").tobytes())
        fh.write(hrtf.grid.phis().astype("<f8").tobytes())
        fh.write(hrtf.grid.weights.astype("<f8").tobytes())
        fh.write(hrtf.frequencies_hz.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(hrtf.left, dtype="<c16").tobytes())
        fh.write(np.ascontiguousarray(hrtf.right, dtype="<c16").tobytes())
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)


class _Cursor:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise TruncatedPayload(
                f"{self.path}: needed {n} bytes at offset {self.pos}, "
                f"file has {len(self.blob)}"
            )
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def floats(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").copy()

    def complexes(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(16 * n), dtype="<c16").copy()


def load_native(path) -> HrtfSet:
    """Load and fully validate a native container."""
    with open(path, "rb") as fh:
        cur = _Cursor(fh.read(), path)
    if cur.take(4) != MAGIC:
        raise BadMagic(f"{path}: not a {MAGIC.decode()} container")
    version, k, f = struct.unpack("<III", cur.take(12))
    if version != VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    if k < 1 or f < 1:
        raise DimensionMismatch(f"{path}: declared K={k}, F={f}")
    (sample_rate,) = struct.unpack("<d", cur.take(8))
    theta = cur.floats(k)
    phi = cur.floats(k)
    weight = cur.floats(k)
    freq = cur.floats(f)
    left = cur.complexes(k * f).reshape(k, f)
    right = cur.complexes(k * f).reshape(k, f)
    (meta_len,) = struct.unpack("<I", cur.take(4))
    try:
        metadata = json.loads(cur.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: bad metadata blob: {exc}") from exc
    if cur.pos != len(cur.blob):
        raise DataError(f"{path}: {len(cur.blob) - cur.pos} trailing bytes after payload")
    try:
        directions = tuple(Direction(t, p) for t, p in zip(theta, phi))
        grid = SphericalGrid(directions, weight)
    except DomainError as exc:
        raise DataError(f"{path}: bad grid: {exc}") from exc
    return HrtfSet(
        grid=grid,
        frequencies_hz=freq,
        left=left,
        right=right,
        sample_rate_hz=sample_rate,
        metadata=metadata,
    )


def horizontal_subset(hrtf: HrtfSet, tolerance_deg: float = 0.0):
    """Indices and directions within ``tolerance_deg`` of the equator.

    Returned sorted by azimuth ascending.  Raises
    :class:`NoHorizontalDirections` when nothing qualifies.
    """
    if tolerance_deg < 0:
        raise DomainError("tolerance must be >= 0")
    theta = hrtf.grid.thetas()
    tol = math.radians(tolerance_deg)
    idx = np.flatnonzero(np.abs(theta - math.pi / 2.0) <= tol + 1e-12)
    if idx.size == 0:
        raise NoHorizontalDirections(
            f"no directions within {tolerance_deg} deg of the horizontal plane"
        )
    phi = hrtf.grid.phis()[idx]
    order = np.argsort(phi, kind="stable")
    idx = idx[order]
    return idx, [hrtf.grid.directions[i] for i in idx]


def nearest_direction(grid: SphericalGrid, query: Direction) -> int:
    """Index of the grid direction closest on the great circle to ``query``."""
    cos_t = _cos_angles(grid.thetas(), grid.phis(), query.theta, query.phi)
    return int(np.argmax(cos_t))


def exact_direction_indices(
    grid: SphericalGrid, directions, tolerance_rad: float = 1e-9
) -> np.ndarray:
    """Grid index of each direction, requiring an (almost) exact match.

    Unlike :func:`nearest_direction` this refuses to snap: a direction whose
    angles differ from every grid point by more than ``tolerance_rad`` raises
    :class:`DataError`, which catches grids and specs that drifted apart.
    """
    theta, phi = grid.thetas(), grid.phis()
    directions = tuple(directions)
    idx = np.empty(len(directions), dtype=int)
    for i, d in enumerate(directions):
        hits = np.flatnonzero(
            (np.abs(theta - d.theta) < tolerance_rad)
            & (np.abs(phi - d.phi) < tolerance_rad)
        )
        if hits.size == 0:
            raise DataError(
                "direction (theta=%.6f, phi=%.6f) not present in the grid"
                % (d.theta, d.phi)
            )
        idx[i] = hits[0]
    return idx


DEFAULT_EAR_DIRECTIONS = (
    Direction.from_degrees(90.0, 100.0),
    Direction.from_degrees(90.0, -100.0),
)


def synthetic_sphere_hrtf(
    radius_m: float,
    grid: SphericalGrid,
    frequencies_hz,
    ear_directions=DEFAULT_EAR_DIRECTIONS,
    sample_rate_hz: float = 48000.0,
) -> HrtfSet:
    """Analytic rigid-sphere stand-in for a measured HRTF set.

    The two "ears" are points on a rigid sphere (by default at azimuth
    +-100 degrees on the horizon, left first), and each response is the
    scattering solution used for array steering.  This gives physically
    plausible level differences and a fully closed-form reference, so the
    whole pipeline can run and be tested without measurement data.
    """
    left_dir, right_dir = ear_directions
    head = ArrayGeometry(
        radius_m=radius_m, mic_directions=(left_dir, right_dir), baffle="rigid_sphere"
    )
    freq = np.asarray(frequencies_hz, dtype=float)
    k, f = len(grid), freq.size
    left = np.empty((k, f), dtype=np.complex128)
    right = np.empty((k, f), dtype=np.complex128)
    for i, fz in enumerate(freq):
        sm = steering_matrix(head, fz, grid.directions)
        left[:, i] = sm.entries[0]
        right[:, i] = sm.entries[1]
    return HrtfSet(
        grid=grid,
        frequencies_hz=freq,
        left=left,
        right=right,
        sample_rate_hz=sample_rate_hz,
        metadata={
            "kind": "synthetic_rigid_sphere",
            "radius_m": radius_m,
            "ear_phi_deg": [
                round(math.degrees(left_dir.phi), 9),
                round(math.degrees(right_dir.phi), 9),
            ],
        },
    )
