import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chanrobust.audio_io import Manifest, TrialRecord, Waveform, read_wav, write_wav
from chanrobust.channel import (
    ChannelSpec,
    ImpulseResponse,
    SpectrumCurve,
    apply_ir,
    average_magnitude_spectrum,
    default_irs,
    design_response_db,
    load_ir,
    make_parametric_ir,
    save_ir,
    simulate_dataset,
)
from chanrobust.errors import (
    DuplicateChannelId,
    EmptyInput,
    InfeasibleSpec,
    RateMismatch,
    TooShort,
    ValidationError,
)

from oracles import naive_convolve_same


@pytest.fixture
def noise():
    return Waveform(np.random.default_rng(0).uniform(-0.5, 0.5, 16000))


@pytest.mark.parametrize("n_taps", [1, 64, 256, 1024])
def test_delta_ir_identity(noise, n_taps):
    taps = np.zeros(n_taps)
    taps[0] = 1.0
    out = apply_ir(noise, ImpulseResponse(taps, "d"))
    np.testing.assert_array_equal(out.samples, noise.samples)


def test_gain_ir_is_noop(noise):
    out = apply_ir(noise, ImpulseResponse([0.5], "g"))
    np.testing.assert_array_equal(out.samples, noise.samples)


@pytest.mark.parametrize("n_taps", [16, 64, 65, 300])
def test_fft_and_direct_paths_match_naive(noise, n_taps):
    taps = np.random.default_rng(n_taps).standard_normal(n_taps)
    out = apply_ir(noise, ImpulseResponse(taps, "r"))
    ref = naive_convolve_same(noise.samples, taps)
    ref *= np.max(np.abs(noise.samples)) / np.max(np.abs(ref))
    assert np.max(np.abs(out.samples - ref)) < 1e-9
    assert len(out) == len(noise)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 100.0), st.integers(1, 200))
def test_ir_scale_homogeneity(c, n_taps):
    x = Waveform(np.random.default_rng(1).standard_normal(2000))
    taps = np.random.default_rng(n_taps).standard_normal(n_taps)
    a = apply_ir(x, ImpulseResponse(taps, "a")).samples
    b = apply_ir(x, ImpulseResponse(c * taps, "a")).samples
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_rate_mismatch(noise):
    with pytest.raises(RateMismatch):
        apply_ir(noise, ImpulseResponse([1.0], "x", sample_rate_hz=8000))


def test_ir_validation():
    with pytest.raises(ValidationError):
        ImpulseResponse([0.0, 0.0], "z")
    with pytest.raises(ValidationError):
        ImpulseResponse(np.ones(16001), "long")
    with pytest.raises(ValidationError):
        ImpulseResponse([np.inf], "inf")


def test_flat_tilt_is_near_delta():
    ir = make_parametric_ir(ChannelSpec("spectral_tilt", {"tilt_db_per_octave": 0.0}, 128), 0)
    f = np.linspace(50, 7950, 200)
    assert np.max(np.abs(ir.magnitude_db(f))) < 1.0
    assert np.argmax(np.abs(ir.taps)) == 64
    assert np.sum(np.abs(ir.taps) > 1e-9) == 1


def test_lowpass_attenuation():
    ir = make_parametric_ir(ChannelSpec("lowpass", {"cutoff_hz": 4000.0}, 256), 0)
    r = ir.magnitude_db(np.array([1000.0, 6000.0]))
    assert r[1] <= r[0] - 20


@pytest.mark.parametrize("spec,band", [
    (ChannelSpec("spectral_tilt", {"tilt_db_per_octave": 3.0}, 256), (250, 7500)),
    (ChannelSpec("band_notch", {"center_hz": 3000.0, "width_hz": 800.0, "depth_db": 12.0}, 256), (100, 7900)),
    (ChannelSpec("multi_peak", {"n_peaks": 4, "max_gain_db": 8.0}, 256), (100, 7900)),
    (ChannelSpec("highpass", {"cutoff_hz": 500.0, "order": 2}, 512), (300, 7900)),
])
def test_response_within_one_db(spec, band):
    ir = make_parametric_ir(spec, 42)
    f = np.linspace(band[0], band[1], 300)
    err = ir.magnitude_db(f) - design_response_db(spec, f, 42)
    assert np.max(np.abs(err)) < 1.0


def test_parametric_determinism_and_seed_dependence():
    spec = ChannelSpec("multi_peak", {"n_peaks": 5})
    a = make_parametric_ir(spec, 9).taps
    np.testing.assert_array_equal(a, make_parametric_ir(spec, 9).taps)
    assert not np.array_equal(a, make_parametric_ir(spec, 10).taps)


def test_infeasible_and_invalid_specs():
    with pytest.raises(InfeasibleSpec):
        make_parametric_ir(ChannelSpec("band_notch", {"center_hz": 2000.0, "width_hz": 100.0}, 32))
    with pytest.raises(ValidationError):
        ChannelSpec("lowpass", {"cutoff_hz": 9000.0})
    with pytest.raises(ValidationError):
        ChannelSpec("lowpass", {"cutoff_hz": 1000.0}, length_taps=8)
    with pytest.raises(ValidationError):
        ChannelSpec("reverb", {})


def test_ir_file_roundtrip(tmp_path):
    ir = default_irs()[0]
    save_ir(ir, tmp_path / "CH01.wav")
    back = load_ir(tmp_path / "CH01.wav")
    assert back.channel_id == "CH01" and back.source == "file"
    scale = np.max(np.abs(back.taps)) / np.max(np.abs(ir.taps))
    np.testing.assert_allclose(back.taps, ir.taps * scale, atol=1 / 32768)


def _manifest(tmp_path, n=10):
    rng = np.random.default_rng(0)
    recs = []
    (tmp_path / "src").mkdir()
    for i in range(n):
        tid = f"T_{i + 1:04d}"
        p = tmp_path / "src" / f"{tid}.wav"
        write_wav(Waveform(rng.uniform(-0.5, 0.5, 1600)), p)
        recs.append(TrialRecord(tid, str(p), "bonafide" if i % 3 else "spoof", None if i % 3 else "A01"))
    return Manifest(recs, "eval")


def test_simulate_dataset(tmp_path):
    m = _manifest(tmp_path)
    irs = default_irs()
    sim = simulate_dataset(m, irs, tmp_path / "sim")
    assert len(sim) == 120
    rec = next(r for r in sim if r.trial_id == "T_0001__CH03")
    assert rec.key == m[0].key and rec.attack_id == m[0].attack_id and rec.channel_id == "CH03"
    assert rec.source_id == "T_0001"
    assert (tmp_path / "sim" / "T_0001__CH03.wav").exists()
    assert len(set(sim.trial_ids)) == 120
    ratio = lambda mm: sum(r.key == "bonafide" for r in mm) / len(mm)
    assert ratio(sim) == ratio(m)
    w = read_wav(rec.audio_path)
    assert len(w) == 1600


def test_simulate_rejects_bad_channel_ids(tmp_path):
    m = _manifest(tmp_path, 2)
    with pytest.raises(DuplicateChannelId):
        simulate_dataset(m, [ImpulseResponse([1.0], "A"), ImpulseResponse([1.0], "A")], tmp_path / "o")
    with pytest.raises(DuplicateChannelId):
        simulate_dataset(m, [ImpulseResponse([1.0], "orig")], tmp_path / "o")


def test_spectrum_sine_and_zeros():
    fs, k = 16000, 40
    t = np.arange(8000) / fs
    w = Waveform(np.sin(2 * np.pi * k * fs / 512 * t))
    curve = average_magnitude_spectrum([w])
    assert np.argmax(curve.magnitude_db) == k
    assert curve.bin_freqs_hz.size == 257
    z = average_magnitude_spectrum([Waveform(np.zeros(800))])
    np.testing.assert_allclose(z.magnitude_db, -240.0)


def test_spectrum_white_noise_flat():
    rng = np.random.default_rng(11)
    ws = [Waveform(rng.standard_normal(16000) * 0.1) for _ in range(100)]
    d = average_magnitude_spectrum(ws).magnitude_db[5:251]
    assert d.max() - d.mean() <= 1.5 and d.mean() - d.min() <= 1.5


def test_spectrum_errors(caplog):
    with pytest.raises(EmptyInput):
        average_magnitude_spectrum([])
    with pytest.raises(TooShort):
        average_magnitude_spectrum([Waveform(np.ones(100))])
    c = average_magnitude_spectrum([Waveform(np.ones(100)), Waveform(np.ones(1000))])
    assert "skipping" in caplog.text
    assert np.all(np.isfinite(c.magnitude_db))


def test_spectrum_difference_tracks_ir_response():
    rng = np.random.default_rng(12)
    ws = [Waveform(rng.standard_normal(16000) * 0.1) for _ in range(30)]
    spec = ChannelSpec("spectral_tilt", {"tilt_db_per_octave": -3.0}, 256)
    ir = make_parametric_ir(spec, 0, "CHT")
    base = average_magnitude_spectrum(ws)
    shifted = average_magnitude_spectrum([apply_ir(w, ir) for w in ws])
    diff = shifted.magnitude_db - base.magnitude_db
    resp = ir.magnitude_db(base.bin_freqs_hz)
    # peak renormalisation adds a common gain offset; compare shapes
    sel = slice(8, 250)
    offset = np.median(diff[sel] - resp[sel])
    assert np.max(np.abs(diff[sel] - resp[sel] - offset)) < 2.0


def test_lowpass_channel_spectrum_attenuates_highband():
    rng = np.random.default_rng(13)
    ws = [Waveform(rng.standard_normal(8000) * 0.1) for _ in range(10)]
    ir = make_parametric_ir(ChannelSpec("lowpass", {"cutoff_hz": 3000.0}), 0, "LP")
    base = average_magnitude_spectrum(ws)
    lp = average_magnitude_spectrum([apply_ir(w, ir) for w in ws])
    hi = base.bin_freqs_hz > 5000
    lo = base.bin_freqs_hz < 2000
    drop_hi = np.mean(base.magnitude_db[hi] - lp.magnitude_db[hi])
    drop_lo = np.mean(base.magnitude_db[lo] - lp.magnitude_db[lo])
    assert drop_hi - drop_lo > 20


def test_spectrum_csv_roundtrip(tmp_path):
    c = SpectrumCurve(np.array([0.0, 31.25]), np.array([-3.0, -4.5]))
    c.to_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "freq_hz,magnitude_db"
    back = SpectrumCurve.from_csv(tmp_path / "s.csv")
    np.testing.assert_allclose(back.magnitude_db, c.magnitude_db)


def test_default_bank():
    irs = default_irs()
    assert [ir.channel_id for ir in irs] == [f"CH{i:02d}" for i in range(1, 13)]
    assert all(ir.taps.size == 256 for ir in irs)
