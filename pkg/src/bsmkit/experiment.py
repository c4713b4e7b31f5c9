"""Configuration handling and the end-to-end experiment pipelines.

A single INI-style config file describes an experiment: array geometry,
target set, frequency band, solver settings, and output location.  The
drivers here turn that into artifacts on disk — filter banks, error-curve
CSVs, and JSON manifests recording every resolved setting plus content
hashes of inputs and outputs.  Nothing here depends on wall-clock time or
randomness, so rerunning a driver with the same config reproduces every
output byte for byte.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .array_model import (
    ArrayGeometry,
    Direction,
    load_geometry,
    semicircular6,
)
from .bsm_core import (
    DesignProblem,
    FilterBank,
    apply_covariance_constraint,
    build_design_problem,
    load_bank,
    magls_filters,
    mse_filters,
    rendered_responses,
    save_bank,
)
from .errors import ConfigError, DataError
from .gammatone import IldSpec, erb_spaced_centers
from .hrtf import (
    HrtfSet,
    exact_direction_indices,
    gauss_ring_grid,
    horizontal_subset,
    load_native,
    synthetic_sphere_hrtf,
)
from .imagls import ImaglsConfig, ild_curve, optimize_imagls, write_history_csv
from .metrics import (
    estimated_binaural,
    ild_error_report,
    magnitude_error_db,
    write_report_csvs,
)
from .render import (
    MultichannelAudio,
    crossover_merge,
    filters_to_fir,
    read_wav,
    render_binaural,
    simulate_mic_signals,
    write_wav,
)

#: Section -> key -> (parser, default).  The parser turns the raw string
#: into a typed value and doubles as the validator.
def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_float_list(raw: str):
    raw = raw.strip()
    if not raw:
        return []
    return [float(tok) for tok in raw.replace(",", " ").split()]


_SCHEMA = {
    "array": {
        "geometry": (str, "semicircular6"),
    },
    "hrtf": {
        "source": (str, "synthetic"),
        "head_radius_m": (float, 0.0875),
        "grid_rings": (int, 5),
        "grid_azimuths": (int, 360),
        "ear_phi_deg": (float, 100.0),
    },
    "band": {
        "sample_rate_hz": (float, 48000.0),
        "n_dft": (int, 2048),
        "lo_hz": (float, 1500.0),
        "hi_hz": (float, 20000.0),
    },
    "design": {
        "snr_ratio": (float, 1e4),
        "crossover_hz": (float, 1500.0),
    },
    "magls": {
        "init_phase_rad": (float, math.pi / 2.0),
        "tol": (float, 1e-20),
        "max_iter": (int, 100_000),
        "covariance_constraint": (_parse_bool, True),
    },
    "imagls": {
        "lambda": (float, 0.1),
        "sweep": (_parse_float_list, []),
        "max_iter": (int, 500),
        "grad_tol": (float, 1e-6),
        "lbfgs_memory": (int, 10),
        "smoothing_eps": (float, 1e-12),
        "init": (str, "magls"),
        "covariance_constraint": (_parse_bool, False),
    },
    "ild": {
        "lo_hz": (float, 1500.0),
        "hi_hz": (float, 20000.0),
        "step_erb": (float, 1.0),
    },
    "output": {
        "directory": (str, "out"),
        "seed": (int, 0),
    },
}


@dataclass
class ExperimentConfig:
    """Fully resolved, typed experiment settings (one attribute per key)."""

    values: dict
    source_path: str | None = None

    def __getattr__(self, name):
        for section in self.values:
            key = name[len(section) + 1 :] if name.startswith(section + "_") else None
            if key and key in self.values[section]:
                return self.values[section][key]
        raise AttributeError(name)

    def section(self, name: str) -> dict:
        return dict(self.values[name])

    def as_dict(self) -> dict:
        return {s: dict(kv) for s, kv in self.values.items()}


def default_config() -> ExperimentConfig:
    values = {
        section: {key: default for key, (_, default) in keys.items()}
        for section, keys in _SCHEMA.items()
    }
    return ExperimentConfig(values=values)


def load_config(path, overrides=None) -> ExperimentConfig:
    """Parse and validate an INI config file; unknown keys are rejected.

    ``overrides`` is a flat dict of ``section.key`` -> value applied after
    the file (used for CLI flags like ``--lambda``).
    """
    parser = configparser.ConfigParser(
        strict=True, interpolation=None, inline_comment_prefixes=("#", ";")
    )
    try:
        with open(path, "r") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc

    config = default_config()
    config.source_path = str(path)
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            cast, _ = _SCHEMA[section][key]
            try:
                config.values[section][key] = cast(raw)
            except ValueError as exc:
                raise ConfigError(
                    f"{path}: bad value for {section}.{key}: {exc}"
                ) from exc
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ConfigError(f"unknown override {dotted!r}")
        config.values[section][key] = value
    _validate(config)
    return config


def _validate(config: ExperimentConfig) -> None:
    v = config.values
    band = v["band"]
    if band["sample_rate_hz"] <= 0 or band["n_dft"] < 8:
        raise ConfigError("band: need sample_rate_hz > 0 and n_dft >= 8")
    if not (0 < band["lo_hz"] < band["hi_hz"] <= band["sample_rate_hz"] / 2):
        raise ConfigError(
            "band: need 0 < lo_hz < hi_hz <= Nyquist, got "
            f"[{band['lo_hz']}, {band['hi_hz']}] at fs {band['sample_rate_hz']}"
        )
    if v["hrtf"]["grid_rings"] < 1 or v["hrtf"]["grid_azimuths"] < 1:
        raise ConfigError("hrtf: grid_rings and grid_azimuths must be >= 1")
    if v["hrtf"]["head_radius_m"] <= 0:
        raise ConfigError("hrtf: head_radius_m must be positive")
    if v["design"]["snr_ratio"] < 0:
        raise ConfigError("design: snr_ratio must be >= 0")
    if v["design"]["crossover_hz"] <= 0:
        raise ConfigError("design: crossover_hz must be positive")
    if not (0 < v["ild"]["lo_hz"] < v["ild"]["hi_hz"]):
        raise ConfigError("ild: need 0 < lo_hz < hi_hz")
    if any(l < 0 for l in v["imagls"]["sweep"]):
        raise ConfigError("imagls: sweep values must be >= 0")


def design_grid(config: ExperimentConfig):
    """Full DFT-aligned frequency grid up to the band top, plus band start bin."""
    df = config.band_sample_rate_hz / config.band_n_dft
    hi_bin = min(int(math.floor(config.band_hi_hz / df + 1e-9)), config.band_n_dft // 2)
    lo_bin = int(math.ceil(config.band_lo_hz / df - 1e-9))
    if lo_bin > hi_bin:
        raise ConfigError("band: no DFT bins inside [lo_hz, hi_hz]")
    return df * np.arange(hi_bin + 1), lo_bin


@dataclass
class Scene:
    """Config turned into concrete objects: geometry, target set, grids."""

    geometry: ArrayGeometry
    hrtf: HrtfSet
    frequencies_hz: np.ndarray
    band_start: int
    ild_spec: IldSpec
    input_hashes: dict = field(default_factory=dict)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _load_geometry(spec: str) -> ArrayGeometry:
    if spec == "semicircular6":
        return semicircular6()
    if not os.path.exists(spec):
        raise DataError(f"geometry {spec!r} is neither a builtin name nor a file")
    return load_geometry(spec)


def _subset_to_frequencies(hrtf: HrtfSet, freqs: np.ndarray) -> HrtfSet:
    idx = np.empty(freqs.size, dtype=int)
    for i, f in enumerate(freqs):
        hits = np.flatnonzero(np.abs(hrtf.frequencies_hz - f) < 1e-6)
        if hits.size == 0:
            raise DataError(
                f"target set lacks the {f:.3f} Hz bin required by the design grid"
            )
        idx[i] = hits[0]
    return HrtfSet(
        grid=hrtf.grid,
        frequencies_hz=freqs.copy(),
        left=hrtf.left[:, idx],
        right=hrtf.right[:, idx],
        sample_rate_hz=hrtf.sample_rate_hz,
        metadata=dict(hrtf.metadata),
    )


def build_scene(config: ExperimentConfig) -> Scene:
    """Materialize geometry, target set, and the ILD spec from a config."""
    freqs, band_start = design_grid(config)
    geometry = _load_geometry(config.array_geometry)
    # hash the resolved values, not the file, so a run rebuilt from a
    # manifest's embedded config reproduces the manifest bit for bit
    canonical = json.dumps(_jsonable(config.as_dict()), sort_keys=True)
    hashes = {"config": hashlib.sha256(canonical.encode()).hexdigest()}
    if config.array_geometry != "semicircular6":
        hashes["geometry"] = _sha256(config.array_geometry)

    if config.hrtf_source == "synthetic":
        grid = gauss_ring_grid(config.hrtf_grid_rings, config.hrtf_grid_azimuths)
        ears = (
            Direction.from_degrees(90.0, config.hrtf_ear_phi_deg),
            Direction.from_degrees(90.0, -config.hrtf_ear_phi_deg),
        )
        hrtf = synthetic_sphere_hrtf(
            config.hrtf_head_radius_m,
            grid,
            freqs,
            ear_directions=ears,
            sample_rate_hz=config.band_sample_rate_hz,
        )
    else:
        if not os.path.exists(config.hrtf_source):
            raise DataError(f"HRTF container not found: {config.hrtf_source}")
        hashes["hrtf"] = _sha256(config.hrtf_source)
        hrtf = _subset_to_frequencies(load_native(config.hrtf_source), freqs)

    _, hor_dirs = horizontal_subset(hrtf)
    centers = erb_spaced_centers(
        config.ild_lo_hz, config.ild_hi_hz, config.ild_step_erb
    )
    spec = IldSpec(
        centers_hz=centers,
        band_lo_hz=config.ild_lo_hz,
        band_hi_hz=config.ild_hi_hz,
        horizontal_directions=hor_dirs,
    )
    return Scene(
        geometry=geometry,
        hrtf=hrtf,
        frequencies_hz=freqs,
        band_start=band_start,
        ild_spec=spec,
        input_hashes=hashes,
    )


def _band_slice(scene: Scene, problem: DesignProblem) -> DesignProblem:
    lo = scene.band_start
    hrtf = scene.hrtf
    band_hrtf = HrtfSet(
        grid=hrtf.grid,
        frequencies_hz=hrtf.frequencies_hz[lo:],
        left=hrtf.left[:, lo:],
        right=hrtf.right[:, lo:],
        sample_rate_hz=hrtf.sample_rate_hz,
        metadata=dict(hrtf.metadata),
    )
    return DesignProblem(
        hrtf=band_hrtf, steering=problem.steering[lo:], snr_ratio=problem.snr_ratio
    )


def _splice_full(full: FilterBank, band: FilterBank, lo: int, crossover: float) -> FilterBank:
    coeffs = full.coeffs.copy()
    coeffs[lo:] = band.coeffs
    spliced = FilterBank(
        frequencies_hz=full.frequencies_hz.copy(),
        coeffs=coeffs,
        design_kind=band.design_kind,
        crossover_hz=float(
            np.clip(crossover, full.frequencies_hz[0], full.frequencies_hz[-1])
        ),
        metadata={"band_start_bin": lo},
    )
    return crossover_merge(full, spliced, crossover)


def _band_mag_curve(bank: FilterBank, problem: DesignProblem) -> np.ndarray:
    z = estimated_binaural(bank, problem.steering_array)
    p = np.stack([problem.hrtf.left, problem.hrtf.right], axis=-1)
    return magnitude_error_db(z, p, problem.weights)


def _mean_band_error(curve: np.ndarray, freqs: np.ndarray, lo: float, hi: float) -> float:
    mask = (freqs >= lo) & (freqs <= hi)
    return float(curve[mask].mean())


def _mean_ild_error(bank: FilterBank, problem: DesignProblem, spec: IldSpec) -> float:
    hor = exact_direction_indices(problem.hrtf.grid, spec.horizontal_directions)
    z = rendered_responses(bank.coeffs, problem.steering_array)
    freqs = problem.frequencies_hz
    target = ild_curve(
        problem.hrtf.left[hor], problem.hrtf.right[hor], spec, freqs
    )
    est = ild_curve(z[:, hor, 0].T, z[:, hor, 1].T, spec, freqs)
    return float(np.mean(np.abs(target - est)))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _write_manifest(path, payload: dict) -> None:
    blob = json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n"
    with open(path, "w") as fh:
        fh.write(blob)


#: Aggregation window for the lambda selection rule, in Hz.
SELECTION_BAND = (1500.0, 5000.0)

#: Largest tolerated loss of magnitude accuracy when trading for ILD, in dB.
SELECTION_MAX_DEGRADATION_DB = 1.0


def run_design(config: ExperimentConfig, log=lambda msg: None) -> dict:
    """Design all filter banks described by the config and write artifacts.

    Writes ``mse.bsmf``, ``magls.bsmf``, ``imagls.bsmf`` (plus one bank per
    sweep candidate), the octave-blended full-range banks
    ``merged_magls.bsmf`` / ``merged_imagls.bsmf``, the selected optimizer
    history CSV, and ``manifest.json``.  Returns the manifest dict.
    """
    scene = build_scene(config)
    out_dir = config.output_directory
    os.makedirs(out_dir, exist_ok=True)

    log(f"computing steering for {scene.frequencies_hz.size} bins")
    full_problem = build_design_problem(
        scene.geometry, scene.hrtf, config.design_snr_ratio
    )
    band_problem = _band_slice(scene, full_problem)

    log("solving the regularized least-squares bank")
    mse_full = mse_filters(full_problem)

    log("running the magnitude exchange")
    magls_plain = magls_filters(
        band_problem,
        init_phase_rad=config.magls_init_phase_rad,
        tol=config.magls_tol,
        max_iter=config.magls_max_iter,
    )
    if config.magls_covariance_constraint:
        magls_final = apply_covariance_constraint(magls_plain, band_problem)
    else:
        magls_final = magls_plain

    spec = scene.ild_spec
    base_mag_curve = _band_mag_curve(magls_final, band_problem)
    base_mag = _mean_band_error(
        base_mag_curve, band_problem.frequencies_hz, *SELECTION_BAND
    )
    base_ild = _mean_ild_error(magls_final, band_problem, spec)

    lams = list(config.imagls_sweep) or [config.values["imagls"]["lambda"]]
    imagls_section = config.section("imagls")
    candidates = []
    for lam in lams:
        log(f"joint optimization at lambda {lam:g}")
        icfg = ImaglsConfig(
            lam=lam,
            ild_spec=spec,
            smoothing_eps=imagls_section["smoothing_eps"],
            max_iter=imagls_section["max_iter"],
            grad_tol=imagls_section["grad_tol"],
            lbfgs_memory=imagls_section["lbfgs_memory"],
            init=imagls_section["init"],
            covariance_constraint=imagls_section["covariance_constraint"],
        )
        init_bank = magls_plain if imagls_section["init"] == "magls" else None
        bank = optimize_imagls(band_problem, icfg, init_bank=init_bank)
        mag_curve = _band_mag_curve(bank, band_problem)
        mag = _mean_band_error(mag_curve, band_problem.frequencies_hz, *SELECTION_BAND)
        ild = _mean_ild_error(bank, band_problem, spec)
        candidates.append(
            {
                "lambda": lam,
                "bank": bank,
                "mean_band_mag_db": mag,
                "mag_degradation_db": mag - base_mag,
                "mean_ild_error_db": ild,
                "ild_improvement_db": base_ild - ild,
            }
        )

    qualified = [
        c for c in candidates if c["mag_degradation_db"] <= SELECTION_MAX_DEGRADATION_DB
    ]
    if qualified:
        selected = max(qualified, key=lambda c: c["ild_improvement_db"])
    else:
        selected = min(candidates, key=lambda c: c["mag_degradation_db"])

    crossover = config.design_crossover_hz
    lo = scene.band_start
    merged_magls = _splice_full(mse_full, magls_final, lo, crossover)
    merged_imagls = _splice_full(mse_full, selected["bank"], lo, crossover)

    files = {
        "mse.bsmf": mse_full,
        "magls.bsmf": magls_final,
        "imagls.bsmf": selected["bank"],
        "merged_magls.bsmf": merged_magls,
        "merged_imagls.bsmf": merged_imagls,
    }
    for cand in candidates:
        tag = f"{cand['lambda']:g}".replace(".", "p").replace("-", "m")
        files[f"imagls_lam_{tag}.bsmf"] = cand["bank"]
    for name, bank in files.items():
        save_bank(bank, os.path.join(out_dir, name))
    history_path = os.path.join(out_dir, "imagls_history.csv")
    write_history_csv(selected["bank"], history_path)

    manifest = {
        "tool": {"name": "bsmkit", "version": __version__},
        "command": "design",
        "config": config.as_dict(),
        "inputs": scene.input_hashes,
        "grid": {
            "n_bins": int(scene.frequencies_hz.size),
            "band_start_bin": int(scene.band_start),
            "bin_spacing_hz": float(scene.frequencies_hz[1] - scene.frequencies_hz[0]),
            "n_directions": int(scene.hrtf.n_directions),
            "n_horizontal": len(spec.horizontal_directions),
            "n_mics": len(scene.geometry.mic_directions),
        },
        "losses": {
            "magls": {
                "iterations_max": max(magls_plain.metadata["iterations"]),
                "final_loss_mean": float(
                    np.mean(magls_plain.metadata["final_loss"])
                ),
                "exchange_monotone": magls_plain.metadata["exchange_monotone"],
                "covariance_constraint": config.magls_covariance_constraint,
            },
            "baseline_mean_band_mag_db": base_mag,
            "baseline_mean_ild_error_db": base_ild,
        },
        "sweep": [
            {k: v for k, v in cand.items() if k != "bank"} for cand in candidates
        ],
        "selected_lambda": selected["lambda"],
        "selection_rule": (
            "largest ILD improvement with magnitude degradation at most "
            f"{SELECTION_MAX_DEGRADATION_DB} dB over "
            f"{SELECTION_BAND[0]:g}-{SELECTION_BAND[1]:g} Hz; "
            "fallback: least degradation"
        ),
        "outputs": {
            name: _sha256(os.path.join(out_dir, name))
            for name in sorted([*files, "imagls_history.csv"])
        },
    }
    _write_manifest(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


EVALUATED_BANKS = ("mse", "magls", "imagls")

#: ILD-error improvement bracket (dB) observed when the target set is a
#: dense measured ear response; synthetic sphere surrogates land lower.
REFERENCE_ILD_IMPROVEMENT_DB = (3.8 - 1.5, 3.8 + 1.5)


def run_evaluate(config: ExperimentConfig, banks_dir=None, log=lambda msg: None) -> dict:
    """Compare designed banks against the target and write the CSV reports.

    Expects the full-range banks from :func:`run_design` in ``banks_dir``
    (default: the config's output directory): ``mse.bsmf`` plus the merged
    banks for the other two methods.
    """
    scene = build_scene(config)
    out_dir = config.output_directory
    directory = banks_dir or out_dir
    os.makedirs(out_dir, exist_ok=True)

    banks = []
    bank_hashes = {}
    for name in EVALUATED_BANKS:
        file_name = f"{name}.bsmf" if name == "mse" else f"merged_{name}.bsmf"
        path = os.path.join(directory, file_name)
        if not os.path.exists(path):
            raise DataError(f"missing bank file {path}; run the design step first")
        bank = load_bank(path)
        if not np.array_equal(bank.frequencies_hz, scene.frequencies_hz):
            raise DataError(
                f"{path}: bank grid does not match the config's design grid"
            )
        banks.append(bank)
        bank_hashes[file_name] = _sha256(path)

    log(f"computing steering for {scene.frequencies_hz.size} bins")
    full_problem = build_design_problem(
        scene.geometry, scene.hrtf, config.design_snr_ratio
    )
    log("assembling error curves")
    report = ild_error_report(
        scene.hrtf,
        banks,
        scene.ild_spec,
        full_problem.steering_array,
        names=list(EVALUATED_BANKS),
    )
    paths = write_report_csvs(report, out_dir)

    mean_ild = {
        name: float(report.ild_error_db_vs_freq[name].mean())
        for name in EVALUATED_BANKS
    }
    improvement = mean_ild["magls"] - mean_ild["imagls"]
    lo_ref, hi_ref = REFERENCE_ILD_IMPROVEMENT_DB
    manifest = {
        "tool": {"name": "bsmkit", "version": __version__},
        "command": "evaluate",
        "config": config.as_dict(),
        "inputs": {**scene.input_hashes, **bank_hashes},
        "ild": {
            "mean_error_db": mean_ild,
            "improvement_db": improvement,
            "reference_improvement_db": list(REFERENCE_ILD_IMPROVEMENT_DB),
            "within_reference_band": bool(lo_ref <= improvement <= hi_ref),
        },
        "outputs": {os.path.basename(p): _sha256(p) for p in sorted(paths)},
    }
    _write_manifest(os.path.join(out_dir, "evaluate_manifest.json"), manifest)
    return manifest


def run_render(bank_path, wav_in, wav_out, taps: int = 1024, fmt: str = "float32") -> None:
    """Render a multichannel recording to stereo with a designed bank."""
    bank = load_bank(bank_path)
    rate, samples = read_wav(wav_in)
    if samples.shape[0] != bank.coeffs.shape[1]:
        raise DataError(
            f"{wav_in}: {samples.shape[0]} channels but the bank expects "
            f"{bank.coeffs.shape[1]}"
        )
    fir = filters_to_fir(bank, taps=taps, sample_rate_hz=rate, conjugate=True)
    audio = MultichannelAudio(samples=samples, sample_rate_hz=rate)
    stereo = render_binaural(audio, fir)
    write_wav(wav_out, stereo, rate, fmt=fmt)


def run_simulate(
    config: ExperimentConfig,
    theta_deg: float,
    phi_deg: float,
    wav_in,
    wav_out,
    taps: int = 1024,
    fmt: str = "float32",
) -> None:
    """Simulate the array recording of a mono source from one direction."""
    geometry = _load_geometry(config.array_geometry)
    rate, samples = read_wav(wav_in)
    if samples.shape[0] != 1:
        raise DataError(f"{wav_in}: simulation input must be mono")
    direction = Direction.from_degrees(theta_deg, phi_deg)
    audio = simulate_mic_signals(
        geometry, samples[0], direction, sample_rate_hz=rate, taps=taps
    )
    write_wav(wav_out, audio.samples, rate, fmt=fmt)


REPORT_TABLES = (
    "nmse_db.csv",
    "magnitude_error_db.csv",
    "ild_error_vs_frequency.csv",
    "ild_vs_angle.csv",
)


def run_report(directory) -> dict:
    """Merge the evaluation CSVs into one long-format table plus a summary.

    Writes ``report_long.csv`` (columns: table, x, series, value) and
    ``summary.json`` (per-series means) into the same directory.
    """
    rows = []
    summary = {}
    for table in REPORT_TABLES:
        path = os.path.join(directory, table)
        if not os.path.exists(path):
            raise DataError(f"missing report table {path}; run the evaluate step")
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            data = [[float(v) for v in row] for row in reader]
        name = table[:-4]
        for row in data:
            for series, value in zip(header[1:], row[1:]):
                rows.append((name, row[0], series, value))
        summary[name] = {
            series: float(np.mean([row[i + 1] for row in data]))
            for i, series in enumerate(header[1:])
        }

    long_path = os.path.join(directory, "report_long.csv")
    with open(long_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["table", "x", "series", "value"])
        for table, x, series, value in rows:
            writer.writerow([table, repr(x), series, repr(value)])
    _write_manifest(os.path.join(directory, "summary.json"), summary)
    return summary
