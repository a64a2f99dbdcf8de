"""Deterministic two-class synthetic corpus with a controllable spoofing cue.

Bona fide utterances are a harmonic source with a wandering f0 plus
aspiration noise, shaped by a random formant filter and a syllabic
envelope. Spoofs come from the same generator with one cue applied:

- ``highband_deficit``: energy above 4 kHz scaled by (1 - cue_strength)
- ``buzz_harmonic``: a faint 50 Hz comb added at relative level cue_strength
- ``spectral_notch``: a 3 kHz band attenuated by cue_strength

The default highband cue is deliberately confusable with a low-pass
device channel.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .audio_io import SAMPLE_RATE, Manifest, TrialRecord, Waveform, write_protocol, write_wav
from .errors import ValidationError

CUES = ("highband_deficit", "buzz_harmonic", "spectral_notch")
SPLIT_INDEX = {"train": 0, "dev": 1, "eval": 2}
ATTACKS = ("A01", "A02", "A03")
# per-attack multiplier on cue_strength
ATTACK_SCALE = {"A01": 1.0, "A02": 0.8, "A03": 1.2}
CUE_EDGE_HZ = 4000.0


@dataclass(frozen=True)
class SynthConfig:
    n_train: int = 100
    n_dev: int = 30
    n_eval: int = 100
    duration_s: float = 2.0
    f0_range_hz: tuple = (100.0, 300.0)
    spoof_cue: str = "highband_deficit"
    cue_strength: float = 0.5
    seed: int = 0
    sample_rate_hz: int = SAMPLE_RATE
    n_speakers: int = 8

    def __post_init__(self):
        if min(self.n_train, self.n_dev, self.n_eval) < 1:
            raise ValidationError("per-class counts must be >= 1")
        if self.duration_s < 0.5:
            raise ValidationError("duration must be at least 0.5 s")
        if not self.cue_strength > 0:
            raise ValidationError("cue_strength must be positive")
        if self.spoof_cue not in CUES:
            raise ValidationError(f"spoof_cue must be one of {CUES}")
        lo, hi = self.f0_range_hz
        if not 0 < lo < hi < self.sample_rate_hz / 4:
            raise ValidationError("bad f0 range")

    def count(self, split: str) -> int:
        return {"train": self.n_train, "dev": self.n_dev, "eval": self.n_eval}[split]


def _resonator(freq, bw, fs):
    r = np.exp(-np.pi * bw / fs)
    theta = 2 * np.pi * freq / fs
    a = [1.0, -2 * r * np.cos(theta), r * r]
    b = [1.0 - r]  # rough gain normalisation
    return b, a


def _bonafide_source(rng, cfg: SynthConfig) -> np.ndarray:
    fs = cfg.sample_rate_hz
    n = int(round(cfg.duration_s * fs))
    t = np.arange(n) / fs
    lo, hi = cfg.f0_range_hz
    f_start = rng.uniform(lo, hi)
    f_end = np.clip(f_start * rng.uniform(0.8, 1.2), lo, hi)
    vib_rate, vib_depth = rng.uniform(3.5, 6.5), rng.uniform(0.01, 0.04)
    f0 = np.linspace(f_start, f_end, n) * (1 + vib_depth * np.sin(2 * np.pi * vib_rate * t + rng.uniform(0, 2 * np.pi)))
    phase = 2 * np.pi * np.cumsum(f0) / fs

    nyq_guard = 0.48 * fs
    slope = rng.uniform(0.9, 1.3)
    n_harm = int(nyq_guard // lo)
    voiced = np.zeros(n)
    for k in range(1, n_harm + 1):
        fk = k * f0
        alive = fk < nyq_guard
        if not alive.any():
            break
        voiced += alive * np.sin(k * phase + rng.uniform(0, 2 * np.pi)) / k ** slope

    noise = rng.standard_normal(n) * rng.uniform(0.02, 0.06)
    src = voiced + noise

    # formant filter, F1..F4
    centers = [rng.uniform(300, 900), rng.uniform(900, 2400), rng.uniform(2200, 3400), rng.uniform(3300, 4600)]
    y = src
    for c in centers:
        b, a = _resonator(c, rng.uniform(80, 250), fs)
        y = y + 0.6 * lfilter(b, a, src)

    # syllabic envelope
    rate = rng.uniform(2.5, 5.0)
    env = 0.35 + 0.65 * np.abs(np.sin(np.pi * rate * t + rng.uniform(0, np.pi))) ** 1.5
    return y * env


def _apply_cue(x, cue, strength, fs, rng):
    if cue == "highband_deficit":
        spec = np.fft.rfft(x)
        f = np.fft.rfftfreq(x.size, 1.0 / fs)
        # 200 Hz raised-cosine transition centred on the edge
        ramp = np.clip((f - (CUE_EDGE_HZ - 100.0)) / 200.0, 0.0, 1.0)
        gain = 1.0 - min(strength, 1.0) * 0.5 * (1 - np.cos(np.pi * ramp))
        return np.fft.irfft(spec * gain, n=x.size)
    if cue == "buzz_harmonic":
        t = np.arange(x.size) / fs
        buzz = sum(np.sin(2 * np.pi * 50.0 * k * t) / k for k in range(1, 40))
        return x + strength * np.std(x) * buzz / np.std(buzz)
    if cue == "spectral_notch":
        spec = np.fft.rfft(x)
        f = np.fft.rfftfreq(x.size, 1.0 / fs)
        gain = 1.0 - min(strength, 1.0) * np.exp(-0.5 * ((f - 3000.0) / 300.0) ** 2)
        return np.fft.irfft(spec * gain, n=x.size)
    raise ValidationError(f"unknown cue {cue!r}")


def synth_utterance(cfg: SynthConfig, rng: np.random.Generator, spoof: bool = False,
                    attack_id: str | None = None) -> Waveform:
    x = _bonafide_source(rng, cfg)
    if spoof:
        strength = cfg.cue_strength * ATTACK_SCALE.get(attack_id or "A01", 1.0)
        x = _apply_cue(x, cfg.spoof_cue, strength, cfg.sample_rate_hz, rng)
    peak = rng.uniform(0.3, 0.9)
    x = x * (peak / np.max(np.abs(x)))
    return Waveform(x, cfg.sample_rate_hz)


def _trial_id(split, i):
    return f"{split[0].upper()}_{i:05d}"


def generate_split(cfg: SynthConfig, split: str, out_dir=None) -> tuple:
    """Return (Manifest, {trial_id: Waveform}); writes WAVs if ``out_dir`` is given.

    Bona fide trials come first, then spoofs. Every utterance has its
    own generator derived from (seed, split, class, index).
    """
    s_idx = SPLIT_INDEX[split]
    n = cfg.count(split)
    audio_dir = None
    if out_dir is not None:
        audio_dir = Path(out_dir) / split
        audio_dir.mkdir(parents=True, exist_ok=True)
    records, waves = [], {}
    i = 0
    for cls, spoof in ((0, False), (1, True)):
        for j in range(n):
            rng = np.random.default_rng([cfg.seed, s_idx, cls, j])
            attack = ATTACKS[j % len(ATTACKS)] if spoof else None
            w = synth_utterance(cfg, rng, spoof, attack)
            tid = _trial_id(split, i)
            path = audio_dir / f"{tid}.wav" if audio_dir is not None else Path(f"{tid}.wav")
            if audio_dir is not None:
                write_wav(w, path)
            speaker = f"SPK{s_idx}{int(rng.integers(cfg.n_speakers)):02d}"
            records.append(TrialRecord(tid, str(path), "spoof" if spoof else "bonafide", attack,
                                       speaker_id=speaker))
            waves[tid] = w
            i += 1
    return Manifest(records, split), waves


def generate_corpus(cfg: SynthConfig, out_dir) -> dict:
    """Write train/dev/eval WAVs and protocol files; return {split: Manifest}."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifests = {}
    for split in ("train", "dev", "eval"):
        m, _ = generate_split(cfg, split, out_dir)
        write_protocol(m, out_dir / f"protocol_{split}.txt")
        manifests[split] = m
    return manifests
