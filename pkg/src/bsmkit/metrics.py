"""Evaluation metrics: complex error, magnitude error, and ILD error curves.

All three metrics compare rendered ear spectra against a target set over a
weighted direction grid.  Complex and magnitude errors are normalized per
frequency bin by the weighted target power, averaged over the two ears in
the linear domain, then converted to dB with a floor so perfect fits stay
finite.  ILD errors are band-integrated level-difference gaps on the
horizontal plane, aggregated either over directions (one value per
gammatone center) or over centers (one value per direction, folded onto
the half circle).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .bsm_core import FilterBank, rendered_responses
from .errors import DataError, DegeneratePower, DimensionMismatch
from .gammatone import IldSpec
from .hrtf import HrtfSet, exact_direction_indices
from .imagls import ild_curve

DB_FLOOR = -300.0
_LINEAR_FLOOR = 10.0 ** (DB_FLOOR / 10.0)


@dataclass
class EvalReport:
    """Per-method error curves plus the underlying ILD data.

    Dictionary values are keyed by method name and aligned with the axis
    arrays: ``nmse_db``/``mag_error_db`` with ``frequencies_hz``,
    ``ild_error_db_vs_freq`` with ``centers_hz``, ``ild_error_db_vs_angle``
    with ``angles_deg``.  ``ild_curves`` holds the directions-by-centers dB
    matrices for the target (key ``"target"``) and every method.
    """

    frequencies_hz: np.ndarray
    centers_hz: np.ndarray
    angles_deg: np.ndarray
    nmse_db: dict
    mag_error_db: dict
    ild_error_db_vs_freq: dict
    ild_error_db_vs_angle: dict
    ild_curves: dict
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        axes = {
            "nmse_db": (self.nmse_db, self.frequencies_hz.size),
            "mag_error_db": (self.mag_error_db, self.frequencies_hz.size),
            "ild_error_db_vs_freq": (self.ild_error_db_vs_freq, self.centers_hz.size),
            "ild_error_db_vs_angle": (self.ild_error_db_vs_angle, self.angles_deg.size),
        }
        for label, (table, length) in axes.items():
            for name, values in table.items():
                v = np.asarray(values)
                if v.shape != (length,):
                    raise DimensionMismatch(
                        f"{label}[{name!r}] has shape {v.shape}, expected ({length},)"
                    )
                if not np.all(np.isfinite(v)):
                    raise DataError(f"{label}[{name!r}] contains non-finite values")
        for name, curve in self.ild_curves.items():
            c = np.asarray(curve)
            if c.ndim != 2 or c.shape[1] != self.centers_hz.size:
                raise DimensionMismatch(
                    f"ild_curves[{name!r}] has shape {c.shape}, expected "
                    f"(directions, {self.centers_hz.size})"
                )
            if not np.all(np.isfinite(c)):
                raise DataError(f"ild_curves[{name!r}] contains non-finite values")

    @property
    def method_names(self):
        return list(self.nmse_db.keys())


def _steering_array(steering) -> np.ndarray:
    if isinstance(steering, np.ndarray):
        if steering.ndim != 3:
            raise DimensionMismatch(
                f"steering must be (F, M, K), got shape {steering.shape}"
            )
        return steering
    return np.stack([s.entries for s in steering])


def estimated_binaural(bank: FilterBank, steering) -> np.ndarray:
    """Ear spectra for a unit plane wave from every direction, (K, F, 2)."""
    v = _steering_array(steering)
    if v.shape[0] != bank.frequencies_hz.size or v.shape[1] != bank.coeffs.shape[1]:
        raise DimensionMismatch(
            f"steering {v.shape} does not match bank {bank.coeffs.shape}"
        )
    return rendered_responses(bank.coeffs, v).transpose(1, 0, 2)


def _normalized_error_db(num: np.ndarray, target: np.ndarray, weights: np.ndarray):
    """Weighted, target-power-normalized error per bin, ear-averaged, in dB."""
    power = np.einsum("k,kfe->fe", weights, np.abs(target) ** 2)
    if np.any(power <= 0):
        bad = int(np.flatnonzero(np.any(power <= 0, axis=1))[0])
        raise DegeneratePower(f"target has zero weighted power in bin {bad}")
    ratio = np.einsum("k,kfe->fe", weights, num) / power
    return 10.0 * np.log10(np.maximum(ratio.mean(axis=1), _LINEAR_FLOOR))


def _check_pair(z: np.ndarray, p: np.ndarray, weights: np.ndarray):
    z, p, w = np.asarray(z), np.asarray(p), np.asarray(weights)
    if z.shape != p.shape or z.ndim != 3 or z.shape[2] != 2:
        raise DimensionMismatch(
            f"spectra must share a (K, F, 2) shape, got {z.shape} vs {p.shape}"
        )
    if w.shape != (z.shape[0],):
        raise DimensionMismatch(
            f"weights shape {w.shape} does not match {z.shape[0]} directions"
        )
    return z, p, w


def nmse_db(z, p, weights) -> np.ndarray:
    """Complex normalized error per frequency bin in dB.

    ``10 log10`` of the weighted mean of ``|p - z|^2`` over directions,
    divided by the weighted target power, averaged over ears before the log.
    A perfect match hits the floor at -300 dB; zero output gives 0 dB.
    """
    z, p, w = _check_pair(z, p, weights)
    return _normalized_error_db(np.abs(p - z) ** 2, p, w)


def magnitude_error_db(z, p, weights) -> np.ndarray:
    """Like :func:`nmse_db` but phase-blind: ``(|p| - |z|)^2`` on top."""
    z, p, w = _check_pair(z, p, weights)
    return _normalized_error_db((np.abs(p) - np.abs(z)) ** 2, p, w)


def _fold_angles(phi_deg: np.ndarray):
    """Group horizontal azimuths by |phi|: returns (angles, index groups)."""
    folded = np.round(np.abs(phi_deg), 9)
    angles = np.unique(folded)
    groups = [np.flatnonzero(folded == a) for a in angles]
    return angles, groups


def ild_error_report(
    target: HrtfSet,
    banks,
    spec: IldSpec,
    steering,
    names=None,
) -> EvalReport:
    """Evaluate every bank against the target and assemble all error curves.

    ``names`` defaults to each bank's ``design_kind`` (deduplicated with
    numeric suffixes).  The angle axis is folded onto [0, 180] degrees:
    level curves keep the sample from the phi >= 0 hemisphere, error curves
    average the two hemispheres.
    """
    banks = list(banks)
    if names is None:
        names = []
        seen = {}
        for bank in banks:
            base = bank.design_kind
            seen[base] = seen.get(base, 0) + 1
            names.append(base if seen[base] == 1 else f"{base}_{seen[base]}")
    names = list(names)
    if len(names) != len(banks) or len(set(names)) != len(names):
        raise DataError("method names must be unique and one per bank")

    v = _steering_array(steering)
    weights = target.grid.weights
    p = np.stack([target.left, target.right], axis=-1)  # (K, F, 2)
    freqs = target.frequencies_hz
    hor = exact_direction_indices(target.grid, spec.horizontal_directions)
    phi_deg = np.degrees(target.grid.phis()[hor])
    angles, groups = _fold_angles(phi_deg)
    positive = [
        g[np.argmax(phi_deg[g] >= -1e-9)] if np.any(phi_deg[g] >= -1e-9) else g[0]
        for g in groups
    ]

    target_curve = ild_curve(target.left[hor], target.right[hor], spec, freqs)
    nmse, mag, vs_freq, vs_angle = {}, {}, {}, {}
    curves = {"target": target_curve}
    for name, bank in zip(names, banks):
        z = estimated_binaural(bank, v)
        nmse[name] = nmse_db(z, p, weights)
        mag[name] = magnitude_error_db(z, p, weights)
        est = ild_curve(z[hor, :, 0], z[hor, :, 1], spec, freqs)
        curves[name] = est
        err = np.abs(target_curve - est)  # (L, centers)
        vs_freq[name] = err.mean(axis=0)
        per_dir = err.mean(axis=1)
        vs_angle[name] = np.array([per_dir[g].mean() for g in groups])

    meta = {
        "method_names": names,
        "design_kinds": [b.design_kind for b in banks],
        "n_directions": int(target.n_directions),
        "n_horizontal": int(hor.size),
        "band_hz": [spec.band_lo_hz, spec.band_hi_hz],
        "half_circle_levels": {
            "target": target_curve[positive].mean(axis=1),
            **{n: curves[n][positive].mean(axis=1) for n in names},
        },
    }
    return EvalReport(
        frequencies_hz=freqs.copy(),
        centers_hz=spec.centers_hz.copy(),
        angles_deg=angles,
        nmse_db=nmse,
        mag_error_db=mag,
        ild_error_db_vs_freq=vs_freq,
        ild_error_db_vs_angle=vs_angle,
        ild_curves=curves,
        metadata=meta,
    )


def _write_rows(path, header, axis, columns):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, x in enumerate(axis):
            writer.writerow([repr(float(x))] + [repr(float(c[i])) for c in columns])


def write_report_csvs(report: EvalReport, directory) -> list:
    """Write the four report tables as CSV files; returns their paths.

    Files: ``nmse_db.csv`` (freq_hz, nmse_db_<method>...),
    ``magnitude_error_db.csv`` (freq_hz, mag_err_db_<method>...),
    ``ild_error_vs_frequency.csv`` (f0_hz, ild_err_db_<method>...) and
    ``ild_vs_angle.csv`` (phi_deg, ild_db_target, ild_db_<method>...,
    ild_err_db_<method>...).  Identical reports produce identical bytes.
    """
    names = report.method_names
    paths = []

    path = os.path.join(directory, "nmse_db.csv")
    _write_rows(
        path,
        ["freq_hz"] + [f"nmse_db_{n}" for n in names],
        report.frequencies_hz,
        [report.nmse_db[n] for n in names],
    )
    paths.append(path)

    path = os.path.join(directory, "magnitude_error_db.csv")
    _write_rows(
        path,
        ["freq_hz"] + [f"mag_err_db_{n}" for n in names],
        report.frequencies_hz,
        [report.mag_error_db[n] for n in names],
    )
    paths.append(path)

    path = os.path.join(directory, "ild_error_vs_frequency.csv")
    _write_rows(
        path,
        ["f0_hz"] + [f"ild_err_db_{n}" for n in names],
        report.centers_hz,
        [report.ild_error_db_vs_freq[n] for n in names],
    )
    paths.append(path)

    levels = report.metadata["half_circle_levels"]
    path = os.path.join(directory, "ild_vs_angle.csv")
    _write_rows(
        path,
        ["phi_deg", "ild_db_target"]
        + [f"ild_db_{n}" for n in names]
        + [f"ild_err_db_{n}" for n in names],
        report.angles_deg,
        [levels["target"]]
        + [levels[n] for n in names]
        + [report.ild_error_db_vs_angle[n] for n in names],
    )
    paths.append(path)
    return paths
