"""Channel simulation with device impulse responses, plus spectrum diagnostics.

Convolution keeps the input length and rescales the output to the input's
peak amplitude, so an IR changes spectral shape only: pure-gain IRs are
no-ops and loudness stays comparable across channels.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import get_window, oaconvolve

from .audio_io import (
    CHANNEL_SEP,
    ORIG_CHANNEL,
    SAMPLE_RATE,
    Manifest,
    TrialRecord,
    Waveform,
    read_wav,
    write_wav,
)
from .dsp import LfccConfig, frame_signal
from .errors import (
    DuplicateChannelId,
    EmptyInput,
    InfeasibleSpec,
    RateMismatch,
    TooShort,
    ValidationError,
)

log = logging.getLogger(__name__)

MAX_IR_TAPS = 16000
DIRECT_CONV_MAX_TAPS = 64
SPECTRUM_FLOOR = 1e-12
CHANNEL_KINDS = ("spectral_tilt", "band_notch", "lowpass", "highpass", "multi_peak")


@dataclass(frozen=True)
class ImpulseResponse:
    taps: np.ndarray
    channel_id: str
    source: str = "parametric"
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64).ravel()
        if not 1 <= taps.size <= MAX_IR_TAPS:
            raise ValidationError(f"IR length {taps.size} outside [1, {MAX_IR_TAPS}]")
        if not np.all(np.isfinite(taps)):
            raise ValidationError("IR taps must be finite")
        if not np.any(taps):
            raise ValidationError("IR taps are all zero")
        if self.source not in ("file", "parametric"):
            raise ValidationError(f"unknown IR source {self.source!r}")
        object.__setattr__(self, "taps", taps)

    def magnitude_db(self, freqs_hz, n_fft: int = 8192) -> np.ndarray:
        """Magnitude response in dB, interpolated at ``freqs_hz``."""
        n_fft = max(n_fft, 1 << (self.taps.size - 1).bit_length())
        h = np.abs(np.fft.rfft(self.taps, n=n_fft))
        grid = np.fft.rfftfreq(n_fft, 1.0 / self.sample_rate_hz)
        return 20 * np.log10(np.interp(freqs_hz, grid, h) + SPECTRUM_FLOOR)


@dataclass(frozen=True)
class ChannelSpec:
    """Recipe for a parametric device response.

    Parameters by kind (all frequencies in Hz, gains in dB):

    - spectral_tilt: ``tilt_db_per_octave``, ``ref_hz`` (1000)
    - band_notch: ``center_hz``, ``width_hz``, ``depth_db`` (20)
    - lowpass / highpass: ``cutoff_hz``, ``order`` (8), ``floor_db`` (-60)
    - multi_peak: ``n_peaks`` (4), ``max_gain_db`` (8), widths drawn per seed
    """

    kind: str
    params: dict = field(default_factory=dict)
    length_taps: int = 256
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise ValidationError(f"unknown channel kind {self.kind!r}")
        if self.length_taps < 16 or self.length_taps > MAX_IR_TAPS:
            raise ValidationError("length_taps must be in [16, 16000]")
        nyq = self.sample_rate_hz / 2
        for name in ("ref_hz", "center_hz", "cutoff_hz"):
            if name in self.params and not 0 < self.params[name] < nyq:
                raise ValidationError(f"{name}={self.params[name]} outside (0, {nyq}) Hz")
        if self.kind == "band_notch":
            for name in ("center_hz", "width_hz"):
                if name not in self.params:
                    raise ValidationError(f"band_notch needs {name}")
        if self.kind in ("lowpass", "highpass") and "cutoff_hz" not in self.params:
            raise ValidationError(f"{self.kind} needs cutoff_hz")
        if self.kind == "spectral_tilt" and "tilt_db_per_octave" not in self.params:
            raise ValidationError("spectral_tilt needs tilt_db_per_octave")

    def target_db(self, freqs_hz, rng: np.random.Generator | None = None) -> np.ndarray:
        """Desired magnitude response in dB on ``freqs_hz``.

        ``multi_peak`` needs the same generator state used for the design.
        """
        f = np.asarray(freqs_hz, dtype=np.float64)
        p = self.params
        if self.kind == "spectral_tilt":
            ref = p.get("ref_hz", 1000.0)
            lo = p.get("min_hz", 62.5)
            return p["tilt_db_per_octave"] * np.log2(np.maximum(f, lo) / ref)
        if self.kind == "band_notch":
            sigma = p["width_hz"] / 2.0
            return -p.get("depth_db", 20.0) * np.exp(-0.5 * ((f - p["center_hz"]) / sigma) ** 2)
        if self.kind in ("lowpass", "highpass"):
            fc, order = p["cutoff_hz"], p.get("order", 8)
            ratio = np.maximum(f, 1e-3) / fc
            if self.kind == "highpass":
                ratio = 1.0 / ratio
            db = -10.0 * np.log10(1.0 + ratio ** (2 * order))
            return np.maximum(db, p.get("floor_db", -60.0))
        # multi_peak
        if rng is None:
            raise ValidationError("multi_peak response depends on a seeded generator")
        n_peaks = int(p.get("n_peaks", 4))
        max_gain = p.get("max_gain_db", 8.0)
        nyq = self.sample_rate_hz / 2
        centers = rng.uniform(200.0, nyq - 200.0, size=n_peaks)
        gains = rng.uniform(-max_gain, max_gain, size=n_peaks)
        widths = rng.uniform(p.get("min_width_hz", 300.0), p.get("max_width_hz", 1500.0), size=n_peaks)
        db = np.zeros_like(f)
        for c, g, wd in zip(centers, gains, widths):
            db += g * np.exp(-0.5 * ((f - c) / (wd / 2.0)) ** 2)
        return db


def make_parametric_ir(spec: ChannelSpec, rng: np.random.Generator | int | None = 0,
                       channel_id: str = "CH") -> ImpulseResponse:
    """Windowed frequency-sampling FIR design for a ChannelSpec.

    The desired zero-phase response is sampled on the length-N DFT grid,
    inverted, centred and tapered with a periodic Hamming window, giving a
    linear-phase IR with group delay N//2 samples.
    """
    rng = np.random.default_rng(rng)
    n = spec.length_taps
    resolution = spec.sample_rate_hz / n
    if spec.kind == "band_notch" and spec.params["width_hz"] < resolution:
        raise InfeasibleSpec(
            f"notch width {spec.params['width_hz']} Hz below the {resolution:.1f} Hz "
            f"resolution of a {n}-tap filter"
        )
    if spec.kind in ("lowpass", "highpass") and spec.params["cutoff_hz"] < 2 * resolution:
        raise InfeasibleSpec(f"cutoff below the resolution of a {n}-tap filter")
    freqs = np.fft.rfftfreq(n, 1.0 / spec.sample_rate_hz)
    mag = 10.0 ** (spec.target_db(freqs, rng) / 20.0)
    h = np.fft.irfft(mag, n=n)
    h = np.roll(h, n // 2) * get_window("hamming", n, fftbins=True)
    return ImpulseResponse(h, channel_id, "parametric", spec.sample_rate_hz)


def design_response_db(spec: ChannelSpec, freqs_hz, rng: np.random.Generator | int | None = 0):
    """Target response of ``spec`` as drawn by ``make_parametric_ir`` with the same seed."""
    return spec.target_db(freqs_hz, np.random.default_rng(rng))


def load_ir(path, channel_id: str | None = None) -> ImpulseResponse:
    w = read_wav(path)
    cid = channel_id or Path(path).stem
    return ImpulseResponse(w.samples, cid, "file", w.sample_rate_hz)


def save_ir(ir: ImpulseResponse, path) -> None:
    """Write IR taps as a PCM16 WAV, scaled so the largest tap fits."""
    peak = np.max(np.abs(ir.taps))
    scale = min(1.0, (32767 / 32768) / peak)
    write_wav(Waveform(ir.taps * scale, ir.sample_rate_hz), path)


def convolve_same(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Linear convolution truncated to len(x)."""
    # trailing zero taps add nothing; dropping them keeps a padded delta exact
    taps = np.trim_zeros(taps, "b")
    if taps.size <= DIRECT_CONV_MAX_TAPS:
        return np.convolve(x, taps)[: x.size]
    return oaconvolve(x, taps)[: x.size]


def apply_ir(w: Waveform, ir: ImpulseResponse) -> Waveform:
    if w.sample_rate_hz != ir.sample_rate_hz:
        raise RateMismatch(f"waveform at {w.sample_rate_hz} Hz, IR at {ir.sample_rate_hz} Hz")
    y = convolve_same(w.samples, ir.taps)
    in_peak = np.max(np.abs(w.samples))
    out_peak = np.max(np.abs(y))
    if out_peak > 0:
        y = y * (in_peak / out_peak)
    return Waveform(y, w.sample_rate_hz)


def simulated_trial_id(trial_id: str, channel_id: str) -> str:
    return f"{trial_id}{CHANNEL_SEP}{channel_id}"


def check_channel_ids(irs: Sequence[ImpulseResponse]) -> None:
    ids = [ir.channel_id for ir in irs]
    if len(set(ids)) != len(ids):
        raise DuplicateChannelId(f"channel ids not unique: {ids}")
    if ORIG_CHANNEL in ids:
        raise DuplicateChannelId(f"{ORIG_CHANNEL!r} is reserved for unprocessed data")


def simulate_dataset(m: Manifest, irs: Sequence[ImpulseResponse], out_dir,
                     waveforms: dict | None = None) -> Manifest:
    """Pass every trial of ``m`` through every IR and write the results.

    ``waveforms`` optionally maps trial_id to an already loaded Waveform.
    Output records are grouped by trial, then by IR order.
    """
    check_channel_ids(irs)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for r in m:
        w = waveforms[r.trial_id] if waveforms and r.trial_id in waveforms else read_wav(r.audio_path)
        for ir in irs:
            tid = simulated_trial_id(r.trial_id, ir.channel_id)
            path = out_dir / f"{tid}.wav"
            write_wav(apply_ir(w, ir), path)
            records.append(
                TrialRecord(
                    trial_id=tid,
                    audio_path=str(path),
                    key=r.key,
                    attack_id=r.attack_id,
                    channel_id=ir.channel_id,
                    speaker_id=r.speaker_id,
                )
            )
    return Manifest(records, m.split)


@dataclass(frozen=True)
class SpectrumCurve:
    bin_freqs_hz: np.ndarray
    magnitude_db: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.bin_freqs_hz, dtype=np.float64)
        d = np.asarray(self.magnitude_db, dtype=np.float64)
        if f.shape != d.shape:
            raise ValidationError("frequency and magnitude arrays differ in length")
        if not np.all(np.isfinite(d)):
            raise ValidationError("non-finite magnitude")
        object.__setattr__(self, "bin_freqs_hz", f)
        object.__setattr__(self, "magnitude_db", d)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("freq_hz,magnitude_db\n")
            for f, d in zip(self.bin_freqs_hz, self.magnitude_db):
                fh.write(f"{f:.4f},{d:.6f}\n")

    @classmethod
    def from_csv(cls, path) -> "SpectrumCurve":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1])


def average_magnitude_spectrum(ws: Sequence[Waveform], fft_size: int = 512,
                               frame_cfg: LfccConfig | None = None) -> SpectrumCurve:
    """Frame-averaged |FFT| per waveform, then averaged over waveforms, in dB."""
    if len(ws) == 0:
        raise EmptyInput("no waveforms")
    rates = {w.sample_rate_hz for w in ws}
    if len(rates) != 1:
        raise RateMismatch(f"mixed sample rates {sorted(rates)}")
    rate = rates.pop()
    cfg = frame_cfg or LfccConfig(sample_rate_hz=rate, fft_size=fft_size)
    acc = np.zeros(fft_size // 2 + 1)
    used = 0
    for w in ws:
        try:
            frames = frame_signal(w, cfg)
        except TooShort:
            log.warning("skipping waveform of %d samples (shorter than one frame)", len(w))
            continue
        acc += np.abs(np.fft.rfft(frames, n=fft_size, axis=1)).mean(axis=0)
        used += 1
    if used == 0:
        raise TooShort("every waveform was shorter than one frame")
    mag = acc / used
    freqs = np.fft.rfftfreq(fft_size, 1.0 / rate)
    return SpectrumCurve(freqs, 20 * np.log10(mag + SPECTRUM_FLOOR))


def default_channel_bank(length_taps: int = 256) -> list:
    """Twelve parametric device channels, CH01..CH12.

    A mix of tilts, band-limits, notches and resonant peaks. CH11/CH12
    are intended as held-out channels.
    """
    specs = [
        ChannelSpec("spectral_tilt", {"tilt_db_per_octave": -4.0}),
        ChannelSpec("spectral_tilt", {"tilt_db_per_octave": 3.0}),
        ChannelSpec("lowpass", {"cutoff_hz": 5500.0, "order": 4}),
        ChannelSpec("highpass", {"cutoff_hz": 400.0, "order": 2}),
        ChannelSpec("band_notch", {"center_hz": 2500.0, "width_hz": 800.0, "depth_db": 15.0}),
        ChannelSpec("multi_peak", {"n_peaks": 4, "max_gain_db": 8.0}),
        ChannelSpec("spectral_tilt", {"tilt_db_per_octave": -2.0}),
        ChannelSpec("band_notch", {"center_hz": 6000.0, "width_hz": 1200.0, "depth_db": 12.0}),
        ChannelSpec("multi_peak", {"n_peaks": 5, "max_gain_db": 6.0}),
        ChannelSpec("highpass", {"cutoff_hz": 800.0, "order": 3}),
        ChannelSpec("lowpass", {"cutoff_hz": 6500.0, "order": 3}),
        ChannelSpec("multi_peak", {"n_peaks": 4, "max_gain_db": 7.0}),
    ]
    return [
        ChannelSpec(s.kind, s.params, length_taps) for s in specs
    ]


def default_irs(length_taps: int = 256, seed: int = 1234) -> list:
    bank = default_channel_bank(length_taps)
    return [
        make_parametric_ir(spec, np.random.default_rng([seed, i]), f"CH{i + 1:02d}")
        for i, spec in enumerate(bank)
    ]
