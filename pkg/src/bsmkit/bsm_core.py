"""Baseline per-frequency filter design: closed-form MSE and MagLS.

Filters map M microphone signals to the two ear signals, one M x 2 complex
matrix per frequency bin.  The MSE design solves regularized weighted normal
equations in closed form under a diffuse-field model (sources spatially
white over the evaluation grid, noise white across mics); MagLS keeps only
the magnitude of the target response and finds the phase by variable
exchange, which matches perception better above the frequency where phase
errors stop mattering.

The signal-to-noise model enters only through the Tikhonov weight
``1/snr_ratio`` on the filter energy.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .array_model import ArrayGeometry, SteeringMatrix, steering_matrix
from .errors import (
    BadMagic,
    DataError,
    DimensionMismatch,
    DomainError,
    NonMonotoneFrequencies,
    SingularSystem,
    TruncatedPayload,
)
from .hrtf import HrtfSet

BANK_MAGIC = b"BSMF"
BANK_VERSION = 1

DESIGN_KINDS = ("mse", "magls", "imagls")

#: Escalating relative diagonal loading tried when a per-bin Cholesky fails.
_LOADING_STEPS = (1e-12, 1e-8)


@dataclass
class DesignProblem:
    """Everything a per-frequency filter solve needs, pre-validated.

    ``snr_ratio`` is the source-to-noise variance ratio; the normal
    equations are regularized by its reciprocal.  ``math.inf`` means a
    noiseless model (no regularization), 0 means noise only (filters
    collapse to zero).
    """

    hrtf: HrtfSet
    steering: list
    snr_ratio: float = 1e4

    def __post_init__(self):
        if math.isnan(self.snr_ratio) or self.snr_ratio < 0:
            raise DomainError(f"snr_ratio must be >= 0, got {self.snr_ratio!r}")
        if len(self.steering) != self.hrtf.n_frequencies:
            raise DimensionMismatch(
                f"{len(self.steering)} steering matrices for "
                f"{self.hrtf.n_frequencies} frequency bins"
            )
        k = self.hrtf.n_directions
        grid_fp = None
        m = None
        for sm, freq in zip(self.steering, self.hrtf.frequencies_hz):
            if not isinstance(sm, SteeringMatrix):
                raise DataError("steering entries must be SteeringMatrix instances")
            if sm.entries.shape[1] != k:
                raise DimensionMismatch(
                    f"steering at {sm.frequency_hz} Hz has {sm.entries.shape[1]} "
                    f"columns for a {k}-direction grid"
                )
            if m is None:
                m = sm.entries.shape[0]
            elif sm.entries.shape[0] != m:
                raise DimensionMismatch("steering matrices disagree on mic count")
            if grid_fp is None:
                grid_fp = sm.grid_fingerprint
            elif sm.grid_fingerprint != grid_fp:
                raise DataError("steering matrices were built on different grids")
            if abs(sm.frequency_hz - freq) > 1e-6:
                raise DataError(
                    f"steering frequency {sm.frequency_hz} does not match "
                    f"HRTF bin {freq}"
                )
        # Dense views used by the solvers.
        self._v = np.stack([sm.entries for sm in self.steering])  # (F, M, K)
        self._target = np.stack([self.hrtf.left, self.hrtf.right], axis=-1).transpose(
            1, 0, 2
        )  # (F, K, 2)

    @property
    def n_mics(self) -> int:
        return self._v.shape[1]

    @property
    def n_directions(self) -> int:
        return self._v.shape[2]

    @property
    def frequencies_hz(self) -> np.ndarray:
        return self.hrtf.frequencies_hz

    @property
    def steering_array(self) -> np.ndarray:
        """All steering matrices stacked as (F, M, K)."""
        return self._v

    @property
    def target_array(self) -> np.ndarray:
        """Ear responses stacked as (F, K, 2), left in column 0."""
        return self._target

    @property
    def weights(self) -> np.ndarray:
        return self.hrtf.grid.weights

    @property
    def regularization(self) -> float:
        if self.snr_ratio == 0.0:
            return math.inf
        return 1.0 / self.snr_ratio


def build_design_problem(
    geometry: ArrayGeometry, hrtf: HrtfSet, snr_ratio: float = 1e4
) -> DesignProblem:
    """Compute steering for every HRTF bin and bundle it into a problem."""
    steering = [
        steering_matrix(geometry, f, hrtf.grid.directions)
        for f in hrtf.frequencies_hz
    ]
    return DesignProblem(hrtf=hrtf, steering=steering, snr_ratio=snr_ratio)


@dataclass
class FilterBank:
    """Per-frequency M x 2 filter coefficients plus design provenance."""

    frequencies_hz: np.ndarray
    coeffs: np.ndarray
    design_kind: str
    crossover_hz: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frequencies_hz = np.asarray(self.frequencies_hz, dtype=float)
        self.coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        if self.design_kind not in DESIGN_KINDS:
            raise DomainError(f"design_kind must be one of {DESIGN_KINDS}")
        if self.frequencies_hz.ndim != 1 or self.frequencies_hz.size < 1:
            raise DimensionMismatch("frequency axis must be non-empty and 1-D")
        if np.any(np.diff(self.frequencies_hz) <= 0):
            raise NonMonotoneFrequencies("frequencies must be strictly increasing")
        f = self.frequencies_hz.size
        if self.coeffs.ndim != 3 or self.coeffs.shape[0] != f or self.coeffs.shape[2] != 2:
            raise DimensionMismatch(
                f"coefficients must be (F, M, 2) with F={f}, got {self.coeffs.shape}"
            )
        if not np.all(np.isfinite(self.coeffs)):
            raise DataError("filter coefficients must be finite")
        lo, hi = self.frequencies_hz[0], self.frequencies_hz[-1]
        if not (lo <= self.crossover_hz <= hi):
            raise DomainError(
                f"crossover {self.crossover_hz} Hz outside bank range [{lo}, {hi}]"
            )

    @property
    def n_mics(self) -> int:
        return self.coeffs.shape[1]

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.frequencies_hz.astype("<f8").tobytes())
        h.update(np.ascontiguousarray(self.coeffs, dtype="<c16").tobytes())
        return h.hexdigest()[:16]


def _normal_matrices(problem: DesignProblem) -> tuple[np.ndarray, np.ndarray]:
    """A = V W V^H + reg I and right-hand side V W conj(H), all bins."""
    v = problem.steering_array
    w = problem.weights
    a = np.einsum("fmk,k,fnk->fmn", v, w, np.conj(v))
    a += problem.regularization * np.eye(problem.n_mics)
    rhs = np.einsum("fmk,k,fke->fme", v, w, np.conj(problem.target_array))
    return a, rhs


def _solve_hermitian(a: np.ndarray, rhs: np.ndarray, reg: float, metadata: dict):
    """Cholesky solve per bin with escalating diagonal loading on failure."""
    out = np.empty_like(rhs)
    m = a.shape[1]
    loaded: dict[int, float] = {}
    for i in range(a.shape[0]):
        ai = a[i]
        for attempt, eps in enumerate((0.0,) + _LOADING_STEPS):
            load = eps * np.trace(ai).real / m
            try:
                chol = np.linalg.cholesky(ai + load * np.eye(m))
            except np.linalg.LinAlgError:
                continue
            if eps:
                loaded[i] = eps
            y = np.linalg.solve(chol, rhs[i])
            out[i] = np.linalg.solve(chol.conj().T, y)
            break
        else:
            if reg == 0.0:
                raise SingularSystem(f"normal equations singular at bin {i}")
            raise SingularSystem(
                f"normal equations unsolvable at bin {i} despite regularization"
            )
    if loaded:
        metadata["diagonal_loading"] = {str(k): v for k, v in sorted(loaded.items())}
    return out


def mse_filters(problem: DesignProblem) -> FilterBank:
    """Closed-form least-squares filters under the diffuse-field model."""
    meta: dict = {"snr_ratio": problem.snr_ratio}
    if problem.regularization == math.inf:
        coeffs = np.zeros((problem.hrtf.n_frequencies, problem.n_mics, 2), complex)
    else:
        a, rhs = _normal_matrices(problem)
        coeffs = _solve_hermitian(a, rhs, problem.regularization, meta)
    return FilterBank(
        frequencies_hz=problem.frequencies_hz.copy(),
        coeffs=coeffs,
        design_kind="mse",
        crossover_hz=float(problem.frequencies_hz[0]),
        metadata=meta,
    )


def rendered_responses(coeffs: np.ndarray, steering: np.ndarray) -> np.ndarray:
    """Ear responses z[f, k, e] = sum_m conj(c[f, m, e]) v[f, m, k]."""
    return np.swapaxes(steering, 1, 2) @ np.conj(coeffs)


def magls_filters(
    problem: DesignProblem,
    init_phase_rad: float = math.pi / 2.0,
    tol: float = 1e-20,
    max_iter: int = 100_000,
) -> FilterBank:
    """Magnitude-matched filters via per-bin variable exchange.

    Each iteration re-targets the phase to that of the current rendered
    response and re-solves the quadratic problem.  The monitored loss is the
    exchange objective (magnitude mismatch plus the Tikhonov energy term),
    normalized per bin by target power; alternating exact minimization over
    phase and coefficients makes it non-increasing, which is asserted.
    Stops per bin once the decrease falls below ``tol``.
    """
    if tol <= 0:
        raise DomainError(f"tolerance must be positive, got {tol!r}")
    if max_iter < 1:
        raise DomainError(f"max_iter must be >= 1, got {max_iter!r}")
    n_f, n_m = problem.hrtf.n_frequencies, problem.n_mics
    meta: dict = {
        "snr_ratio": problem.snr_ratio,
        "init_phase_rad": init_phase_rad,
        "tol": tol,
        "max_iter": int(max_iter),
    }
    if problem.regularization == math.inf:
        coeffs = np.zeros((n_f, n_m, 2), complex)
        meta.update(iterations=[0] * n_f, final_loss=[0.0] * n_f, exchange_monotone=True)
        return FilterBank(
            frequencies_hz=problem.frequencies_hz.copy(),
            coeffs=coeffs,
            design_kind="magls",
            crossover_hz=float(problem.frequencies_hz[0]),
            metadata=meta,
        )

    v = problem.steering_array
    w = problem.weights
    reg = problem.regularization
    mag = np.abs(problem.target_array)  # (F, K, 2)
    target_power = np.einsum("k,fke->f", w, mag**2)
    if np.any(target_power <= 0):
        target_power = np.maximum(target_power, np.finfo(float).tiny)
    a, _ = _normal_matrices(problem)
    a_inv = np.linalg.inv(a)
    vw = v * w[None, None, :]  # V diag(w), reused for every right-hand side

    def solve_for_phase(sel, phase):
        rhs = vw[sel] @ np.conj(mag[sel] * np.exp(1j * phase))
        return a_inv[sel] @ rhs

    coeffs = solve_for_phase(slice(None), np.full(mag.shape, init_phase_rad))
    loss = np.full(n_f, np.inf)
    iterations = np.zeros(n_f, dtype=int)
    active = np.arange(n_f)
    monotone = True
    sweep = 0
    while active.size and sweep < max_iter:
        sweep += 1
        z = rendered_responses(coeffs[active], v[active])
        j_now = (
            np.einsum("k,fke->f", w, (mag[active] - np.abs(z)) ** 2)
            + reg * np.einsum("fme->f", np.abs(coeffs[active]) ** 2)
        ) / target_power[active]
        if np.any(j_now > loss[active] * (1 + 1e-12) + 1e-15):
            monotone = False
        improved = j_now < loss[active]
        decrease = loss[active] - j_now
        loss[active] = np.where(improved, j_now, loss[active])
        iterations[active] = sweep
        candidate = solve_for_phase(active, np.angle(z))
        coeffs[active] = np.where(improved[:, None, None], candidate, coeffs[active])
        active = active[decrease >= tol]
    meta.update(
        iterations=iterations.tolist(),
        final_loss=loss.tolist(),
        exchange_monotone=bool(monotone),
    )
    return FilterBank(
        frequencies_hz=problem.frequencies_hz.copy(),
        coeffs=coeffs,
        design_kind="magls",
        crossover_hz=float(problem.frequencies_hz[0]),
        metadata=meta,
    )


def apply_covariance_constraint(bank: FilterBank, problem: DesignProblem) -> FilterBank:
    """Force the rendered diffuse-field covariance to match the target's.

    Per bin the 2x2 covariances R_t (target ears over the weighted grid) and
    R_e (rendered ears) are Cholesky-factored and the rendered ear pair
    post-mixed by ``X = L_e^{-H} L_t^{H}``, so that afterwards
    X^H R_e X = R_t.  Because rendering applies the conjugated coefficients,
    the filters themselves are multiplied by ``conj(X)``.  Restores
    diffuse-field energy and interaural coherence that magnitude-only
    designs do not control.
    """
    if bank.coeffs.shape[0] != problem.hrtf.n_frequencies:
        raise DimensionMismatch("bank and problem disagree on bin count")
    v = problem.steering_array
    w = problem.weights
    h = problem.target_array  # (F, K, 2)
    z = rendered_responses(bank.coeffs, v)
    r_t = np.einsum("fke,k,fkg->feg", np.conj(h), w, h)
    r_e = np.einsum("fke,k,fkg->feg", np.conj(z), w, z)
    loaded: dict[str, float] = {}

    def chol(mat, bin_idx, label):
        for eps in (0.0,) + _LOADING_STEPS + (1e-6,):
            try:
                out = np.linalg.cholesky(mat + (eps * np.trace(mat).real / 2) * np.eye(2))
            except np.linalg.LinAlgError:
                continue
            if eps:
                loaded[f"{label}{bin_idx}"] = eps
            return out
        raise SingularSystem(f"covariance not factorable at bin {bin_idx}")

    coeffs = np.empty_like(bank.coeffs)
    for i in range(bank.coeffs.shape[0]):
        l_t = chol(r_t[i], i, "target_bin_")
        l_e = chol(r_e[i], i, "rendered_bin_")
        x = np.linalg.solve(l_e.conj().T, l_t.conj().T)
        coeffs[i] = bank.coeffs[i] @ np.conj(x)
    meta = dict(bank.metadata)
    meta["covariance_constraint"] = True
    if loaded:
        meta["covariance_loading"] = loaded
    return FilterBank(
        frequencies_hz=bank.frequencies_hz.copy(),
        coeffs=coeffs,
        design_kind=bank.design_kind,
        crossover_hz=bank.crossover_hz,
        metadata=meta,
    )


def save_bank(bank: FilterBank, path) -> None:
    """Write a filter bank container.  Byte-for-byte deterministic."""
    meta = dict(bank.metadata)
    meta["design_kind"] = bank.design_kind
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    f, m = bank.frequencies_hz.size, bank.n_mics
    with open(path, "wb") as fh:
        fh.write(BANK_MAGIC)
        fh.write(struct.pack("<IIId", BANK_VERSION, f, m, bank.crossover_hz))
        fh.write(bank.frequencies_hz.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(bank.coeffs, dtype="<c16").tobytes())
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)


def load_bank(path) -> FilterBank:
    """Load and validate a filter bank container."""
    with open(path, "rb") as fh:
        blob = fh.read()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise TruncatedPayload(
                f"{path}: needed {n} bytes at offset {pos}, file has {len(blob)}"
            )
        out = blob[pos : pos + n]
        pos += n
        return out

    if take(4) != BANK_MAGIC:
        raise BadMagic(f"{path}: not a {BANK_MAGIC.decode()} container")
    version, f, m = struct.unpack("<III", take(12))
    if version != BANK_VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    if f < 1 or m < 1:
        raise DimensionMismatch(f"{path}: declared F={f}, M={m}")
    (crossover,) = struct.unpack("<d", take(8))
    freqs = np.frombuffer(take(8 * f), dtype="<f8").copy()
    coeffs = np.frombuffer(take(16 * f * m * 2), dtype="<c16").copy().reshape(f, m, 2)
    (meta_len,) = struct.unpack("<I", take(4))
    try:
        meta = json.loads(take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: bad metadata blob: {exc}") from exc
    if pos != len(blob):
        raise DataError(f"{path}: {len(blob) - pos} trailing bytes after payload")
    kind = meta.pop("design_kind", None)
    if kind not in DESIGN_KINDS:
        raise DataError(f"{path}: missing or unknown design_kind {kind!r}")
    return FilterBank(
        frequencies_hz=freqs,
        coeffs=coeffs,
        design_kind=kind,
        crossover_hz=crossover,
        metadata=meta,
    )
