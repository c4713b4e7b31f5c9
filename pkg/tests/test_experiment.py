import csv
import hashlib
import json
import math
import os
import textwrap

import numpy as np
import pytest

from bsmkit.bsm_core import load_bank
from bsmkit.errors import ConfigError, DataError
from bsmkit.experiment import (
    EVALUATED_BANKS,
    SELECTION_MAX_DEGRADATION_DB,
    build_scene,
    default_config,
    design_grid,
    load_config,
    run_design,
    run_evaluate,
    run_render,
    run_report,
    run_simulate,
)
from bsmkit.render import read_wav, write_wav

TINY_CFG = textwrap.dedent(
    """\
    [hrtf]
    grid_rings = 3
    grid_azimuths = 16

    [band]
    n_dft = 128          # 375 Hz bins keep the run fast
    hi_hz = 7000

    [magls]
    max_iter = 2000

    [imagls]
    sweep = 0.05, 0.2
    max_iter = 40

    [ild]
    hi_hz = 6500
    """
)


def write_tiny_cfg(directory, out_dir):
    path = os.path.join(directory, "tiny.cfg")
    with open(path, "w") as fh:
        fh.write(TINY_CFG)
        fh.write(f"\n[output]\ndirectory = {out_dir}\n")
    return path


@pytest.fixture(scope="module")
def designed(tmp_path_factory):
    """One tiny design run shared by the pipeline tests."""
    root = tmp_path_factory.mktemp("experiment")
    out_dir = str(root / "out")
    cfg_path = write_tiny_cfg(str(root), out_dir)
    config = load_config(cfg_path)
    manifest = run_design(config)
    return config, manifest, out_dir, cfg_path


def sha256_file(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def read_table(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader])
    return header, rows


# ---------------------------------------------------------------------------
# configuration


def test_default_config_values():
    config = default_config()
    assert config.band_sample_rate_hz == 48000.0
    assert config.band_n_dft == 2048
    assert config.band_lo_hz == 1500.0
    assert config.band_hi_hz == 20000.0
    assert config.hrtf_grid_rings == 5
    assert config.hrtf_grid_azimuths == 360
    assert config.magls_init_phase_rad == pytest.approx(math.pi / 2)
    assert config.magls_tol == 1e-20
    assert config.magls_max_iter == 100_000
    assert config.values["imagls"]["lambda"] == 0.1
    assert config.imagls_sweep == []
    assert config.output_seed == 0


def test_config_attribute_errors():
    config = default_config()
    with pytest.raises(AttributeError):
        config.band_nonsense
    with pytest.raises(AttributeError):
        config.not_a_section_at_all


def test_load_config_types_and_overrides(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text(
        "[imagls]\nsweep = 0.1 0.2, 0.3\ncovariance_constraint = yes\n"
        "[band]\nhi_hz = 18000  ; trailing comment\n"
    )
    config = load_config(path, overrides={"imagls.lambda": 0.7, "output.seed": 3})
    assert config.imagls_sweep == [0.1, 0.2, 0.3]
    assert config.imagls_covariance_constraint is True
    assert config.band_hi_hz == 18000.0
    assert config.values["imagls"]["lambda"] == 0.7
    assert config.output_seed == 3
    # untouched keys keep their defaults
    assert config.band_n_dft == 2048


def test_load_config_rejections(tmp_path):
    cases = [
        "[nosuchsection]\nx = 1\n",
        "[band]\nnosuchkey = 1\n",
        "[band]\nn_dft = not_an_int\n",
        "[imagls]\ncovariance_constraint = maybe\n",
    ]
    for text in cases:
        path = tmp_path / "bad.cfg"
        path.write_text(text)
        with pytest.raises(ConfigError):
            load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")
    ok = tmp_path / "ok.cfg"
    ok.write_text("[band]\nhi_hz = 12000\n")
    with pytest.raises(ConfigError):
        load_config(ok, overrides={"band.nope": 1})


def test_config_validation(tmp_path):
    cases = [
        "[band]\nlo_hz = 9000\nhi_hz = 4000\n",
        "[band]\nhi_hz = 30000\n",
        "[hrtf]\nhead_radius_m = -0.1\n",
        "[design]\ncrossover_hz = 0\n",
        "[imagls]\nsweep = 0.1, -0.2\n",
    ]
    for text in cases:
        path = tmp_path / "bad.cfg"
        path.write_text(text)
        with pytest.raises(ConfigError):
            load_config(path)


def test_design_grid_default_layout():
    freqs, band_start = design_grid(default_config())
    assert freqs[1] - freqs[0] == pytest.approx(48000.0 / 2048)
    assert freqs.size == 854
    assert band_start == 64
    assert freqs[band_start] == pytest.approx(1500.0)
    assert freqs[-1] <= 20000.0 < freqs[-1] + 23.4375


def test_design_grid_empty_band(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text("[band]\nn_dft = 128\nlo_hz = 6800\nhi_hz = 7100\n")
    with pytest.raises(ConfigError):
        design_grid(load_config(path))


def test_build_scene_tiny(tmp_path):
    cfg_path = write_tiny_cfg(str(tmp_path), str(tmp_path / "out"))
    scene = build_scene(load_config(cfg_path))
    assert scene.frequencies_hz.size == 19
    assert scene.band_start == 4
    assert scene.hrtf.n_directions == 3 * 16
    assert len(scene.ild_spec.horizontal_directions) == 16
    assert scene.ild_spec.centers_hz[0] >= 1500.0
    assert scene.ild_spec.centers_hz[-1] <= 6500.0
    assert "config" in scene.input_hashes


# ---------------------------------------------------------------------------
# design


def test_design_writes_expected_files(designed):
    _, manifest, out_dir, _ = designed
    expected = {
        "mse.bsmf",
        "magls.bsmf",
        "imagls.bsmf",
        "merged_magls.bsmf",
        "merged_imagls.bsmf",
        "imagls_lam_0p05.bsmf",
        "imagls_lam_0p2.bsmf",
        "imagls_history.csv",
    }
    assert expected <= set(os.listdir(out_dir))
    # recorded hashes match the bytes on disk
    for name, digest in manifest["outputs"].items():
        assert sha256_file(os.path.join(out_dir, name)) == digest


def test_design_manifest_structure(designed):
    config, manifest, _, _ = designed
    assert manifest["tool"]["name"] == "bsmkit"
    assert manifest["command"] == "design"
    assert manifest["config"] == json.loads(json.dumps(config.as_dict()))
    assert manifest["grid"]["n_bins"] == 19
    assert manifest["grid"]["band_start_bin"] == 4
    assert manifest["grid"]["n_mics"] == 6
    assert manifest["losses"]["magls"]["iterations_max"] >= 1
    assert manifest["losses"]["magls"]["exchange_monotone"] is True
    assert len(manifest["sweep"]) == 2
    for row in manifest["sweep"]:
        assert set(row) == {
            "lambda",
            "mean_band_mag_db",
            "mag_degradation_db",
            "mean_ild_error_db",
            "ild_improvement_db",
        }
        assert all(np.isfinite(v) for v in row.values())
    on_disk = json.load(open(os.path.join(designed[2], "manifest.json")))
    assert on_disk == manifest


def test_design_selection_rule(designed):
    _, manifest, _, _ = designed
    rows = manifest["sweep"]
    qualified = [
        r for r in rows if r["mag_degradation_db"] <= SELECTION_MAX_DEGRADATION_DB
    ]
    pool = qualified or rows
    key = "ild_improvement_db" if qualified else "mag_degradation_db"
    best = max(pool, key=lambda r: r[key]) if qualified else min(pool, key=lambda r: r[key])
    assert manifest["selected_lambda"] == best["lambda"]
    # the bank saved as imagls.bsmf is the selected sweep candidate
    tag = f"{best['lambda']:g}".replace(".", "p")
    out_dir = designed[2]
    assert sha256_file(os.path.join(out_dir, "imagls.bsmf")) == sha256_file(
        os.path.join(out_dir, f"imagls_lam_{tag}.bsmf")
    )


def test_merged_bank_splices_and_blends(designed):
    _, _, out_dir, _ = designed
    mse = load_bank(os.path.join(out_dir, "mse.bsmf"))
    magls = load_bank(os.path.join(out_dir, "magls.bsmf"))
    merged = load_bank(os.path.join(out_dir, "merged_magls.bsmf"))
    assert merged.frequencies_hz.shape == mse.frequencies_hz.shape
    freqs = merged.frequencies_hz
    low = freqs < 1500.0 / math.sqrt(2.0)
    high = freqs >= 1500.0 * math.sqrt(2.0)
    assert np.array_equal(merged.coeffs[low], mse.coeffs[low])
    # band banks start at bin 4, so bin i of the full grid is row i - 4
    band_rows = np.flatnonzero(high) - 4
    assert np.array_equal(merged.coeffs[high], magls.coeffs[band_rows])
    mid = ~low & ~high & (freqs >= 1500.0)
    assert not np.allclose(merged.coeffs[mid], mse.coeffs[mid])
    assert not np.allclose(merged.coeffs[mid], magls.coeffs[np.flatnonzero(mid) - 4])


def test_design_rerun_is_byte_identical(designed):
    config, _, out_dir, _ = designed
    before = {n: sha256_file(os.path.join(out_dir, n)) for n in os.listdir(out_dir)}
    run_design(config)
    after = {n: sha256_file(os.path.join(out_dir, n)) for n in os.listdir(out_dir)}
    assert before == after


# ---------------------------------------------------------------------------
# evaluate / report


def test_evaluate_reports_and_method_ordering(designed):
    config, _, out_dir, _ = designed
    manifest = run_evaluate(config)
    assert set(manifest["outputs"]) == {
        "nmse_db.csv",
        "magnitude_error_db.csv",
        "ild_error_vs_frequency.csv",
        "ild_vs_angle.csv",
    }
    header, rows = read_table(os.path.join(out_dir, "magnitude_error_db.csv"))
    assert header[0] == "freq_hz"
    cols = {name: rows[:, i] for i, name in enumerate(header)}
    band = cols["freq_hz"] >= 1500.0
    mag = {m: cols[f"mag_err_db_{m}"][band].mean() for m in EVALUATED_BANKS}
    # phase-free designs beat the least-squares bank on magnitude
    assert mag["magls"] < mag["mse"]
    assert mag["imagls"] < mag["mse"]

    header, rows = read_table(os.path.join(out_dir, "nmse_db.csv"))
    cols = {name: rows[:, i] for i, name in enumerate(header)}
    band = cols["freq_hz"] >= 1500.0
    nmse = {m: cols[f"nmse_db_{m}"][band].mean() for m in EVALUATED_BANKS}
    # ...and lose to it on full complex error, which it minimizes
    assert nmse["mse"] < nmse["magls"]
    assert nmse["mse"] < nmse["imagls"]

    header, rows = read_table(os.path.join(out_dir, "ild_error_vs_frequency.csv"))
    cols = {name: rows[:, i] for i, name in enumerate(header)}
    ild = {m: cols[f"ild_err_db_{m}"].mean() for m in EVALUATED_BANKS}
    assert ild["imagls"] < ild["magls"] < ild["mse"]


def test_evaluate_missing_bank(tmp_path):
    cfg_path = write_tiny_cfg(str(tmp_path), str(tmp_path / "empty"))
    with pytest.raises(DataError):
        run_evaluate(load_config(cfg_path))


def test_evaluate_grid_mismatch(designed, tmp_path):
    _, _, out_dir, _ = designed
    cfg_path = write_tiny_cfg(str(tmp_path), str(tmp_path / "out"))
    other = load_config(cfg_path, overrides={"band.hi_hz": 6000.0})
    with pytest.raises(DataError):
        run_evaluate(other, banks_dir=out_dir)


def test_report_bundle(designed):
    config, _, out_dir, _ = designed
    run_evaluate(config)
    summary = run_report(out_dir)
    assert set(summary) == {
        "nmse_db",
        "magnitude_error_db",
        "ild_error_vs_frequency",
        "ild_vs_angle",
    }
    with open(os.path.join(out_dir, "report_long.csv"), newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        long_rows = list(reader)
    assert header == ["table", "x", "series", "value"]
    # summary means agree with a recomputation from the long table
    values = {}
    for table, _, series, value in long_rows:
        values.setdefault((table, series), []).append(float(value))
    for table, per_series in summary.items():
        for series, mean in per_series.items():
            assert mean == pytest.approx(np.mean(values[(table, series)]), rel=1e-12)


def test_report_missing_table(tmp_path):
    with pytest.raises(DataError):
        run_report(str(tmp_path))


# ---------------------------------------------------------------------------
# render / simulate

def test_simulate_then_render(designed, tmp_path):
    config, _, out_dir, _ = designed
    rng = np.random.default_rng(11)
    mono = 0.1 * rng.standard_normal(4000)
    src = str(tmp_path / "mono.wav")
    mics = str(tmp_path / "mics.wav")
    out = str(tmp_path / "binaural.wav")
    write_wav(src, mono[None, :], 48000.0, fmt="float32")
    run_simulate(config, 90.0, 30.0, src, mics, taps=256)
    rate, mic_samples = read_wav(mics)
    assert rate == 48000.0
    assert mic_samples.shape == (6, 4000 + 255)
    run_render(os.path.join(out_dir, "merged_imagls.bsmf"), mics, out, taps=256)
    rate, stereo = read_wav(out)
    assert stereo.shape == (2, mic_samples.shape[1] + 255)
    assert np.all(np.isfinite(stereo))
    assert np.sqrt((stereo**2).mean()) > 1e-4


def test_simulate_rejects_multichannel(designed, tmp_path):
    config = designed[0]
    stereo = str(tmp_path / "stereo.wav")
    write_wav(stereo, np.zeros((2, 100)), 48000.0, fmt="float32")
    with pytest.raises(DataError):
        run_simulate(config, 90.0, 0.0, stereo, str(tmp_path / "x.wav"))


def test_render_rejects_wrong_channel_count(designed, tmp_path):
    _, _, out_dir, _ = designed
    mono = str(tmp_path / "mono.wav")
    write_wav(mono, np.zeros((1, 100)), 48000.0, fmt="float32")
    with pytest.raises(DataError):
        run_render(os.path.join(out_dir, "mse.bsmf"), mono, str(tmp_path / "y.wav"))
