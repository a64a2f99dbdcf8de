"""LFCC front-end: framing, linear filterbank cepstra, deltas, length fixing.

Per frame: Hamming window, |FFT|^2, 20 linearly spaced triangular filters
over [0, Nyquist], log with a 1e-10 floor, orthonormal DCT-II. Statics
plus regression deltas and delta-deltas give 60 dims. No pre-emphasis and
no mean normalisation, so channel shaping reaches the model untouched.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .audio_io import SAMPLE_RATE, Waveform
from .errors import MalformedWav, TooShort, ValidationError

FEATURE_MAGIC = b"LFCC"
FEATURE_VERSION = 1


@dataclass(frozen=True)
class LfccConfig:
    sample_rate_hz: int = SAMPLE_RATE
    frame_len_ms: float = 20.0
    hop_ms: float = 10.0
    fft_size: int | None = None
    n_filters: int = 20
    n_ceps: int = 20
    log_floor: float = 1e-10
    window: str = "hamming"
    delta_window: int = 2

    def __post_init__(self):
        if self.n_ceps > self.n_filters:
            raise ValidationError("n_ceps must not exceed n_filters")
        if self.log_floor <= 0:
            raise ValidationError("log_floor must be positive")
        if self.nfft < self.frame_len:
            raise ValidationError("fft_size smaller than the frame length")
        if self.hop < 1 or self.delta_window < 1:
            raise ValidationError("hop and delta window must be positive")

    @property
    def frame_len(self) -> int:
        return int(round(self.sample_rate_hz * self.frame_len_ms / 1000.0))

    @property
    def hop(self) -> int:
        return int(round(self.sample_rate_hz * self.hop_ms / 1000.0))

    @property
    def nfft(self) -> int:
        if self.fft_size is not None:
            return self.fft_size
        return 1 << (self.frame_len - 1).bit_length()

    @property
    def dims(self) -> int:
        return 3 * self.n_ceps


DEFAULT_LFCC = LfccConfig()


def window_fn(name: str, n: int) -> np.ndarray:
    # symmetric windows, as in np.hamming / np.hanning
    if name == "hamming":
        return np.hamming(n)
    if name in ("hann", "hanning"):
        return np.hanning(n)
    if name in ("rect", "boxcar", "none"):
        return np.ones(n)
    raise ValidationError(f"unknown window {name!r}")


def num_frames(n_samples: int, frame_len: int, hop: int) -> int:
    if n_samples < frame_len:
        return 0
    return 1 + (n_samples - frame_len) // hop


def frame_signal(w: Waveform, cfg: LfccConfig = DEFAULT_LFCC) -> np.ndarray:
    """Return windowed frames, shape (n_frames, frame_len)."""
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    n = num_frames(x.size, cfg.frame_len, cfg.hop)
    if n == 0:
        raise TooShort(f"{x.size} samples is shorter than one {cfg.frame_len}-sample frame")
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.frame_len)[:: cfg.hop][:n]
    return frames * window_fn(cfg.window, cfg.frame_len)


@lru_cache(maxsize=16)
def _linear_filterbank(n_filters: int, nfft: int, sample_rate: int) -> np.ndarray:
    nyq = sample_rate / 2.0
    edges = np.linspace(0.0, nyq, n_filters + 2)
    bin_freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    fb = np.zeros((n_filters, bin_freqs.size))
    for m in range(n_filters):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rise = (bin_freqs - lo) / (mid - lo)
        fall = (hi - bin_freqs) / (hi - mid)
        fb[m] = np.clip(np.minimum(rise, fall), 0.0, None)
    fb.setflags(write=False)
    return fb


def linear_filterbank(cfg: LfccConfig = DEFAULT_LFCC) -> np.ndarray:
    """Triangular filters, shape (n_filters, nfft//2 + 1)."""
    return _linear_filterbank(cfg.n_filters, cfg.nfft, cfg.sample_rate_hz)


def filterbank_energies(w: Waveform, cfg: LfccConfig = DEFAULT_LFCC) -> np.ndarray:
    frames = frame_signal(w, cfg)
    power = np.abs(np.fft.rfft(frames, n=cfg.nfft, axis=1)) ** 2
    return power @ linear_filterbank(cfg).T


def lfcc(w: Waveform, cfg: LfccConfig = DEFAULT_LFCC) -> np.ndarray:
    """Static LFCCs, shape (n_frames, n_ceps)."""
    energies = filterbank_energies(w, cfg)
    logs = np.log(np.maximum(energies, cfg.log_floor))
    return dct(logs, type=2, norm="ortho", axis=1)[:, : cfg.n_ceps]


def add_deltas(static: np.ndarray, window: int = 2) -> np.ndarray:
    """Append regression deltas and delta-deltas (edges replicated)."""
    static = np.asarray(static, dtype=np.float64)
    if static.ndim != 2 or static.shape[0] < 1:
        raise ValidationError("need a (frames, dims) matrix with at least one frame")
    d = _delta(static, window)
    dd = _delta(d, window)
    return np.concatenate([static, d, dd], axis=1)


def _delta(x: np.ndarray, window: int) -> np.ndarray:
    t = x.shape[0]
    padded = np.pad(x, ((window, window), (0, 0)), mode="edge")
    num = np.zeros_like(x)
    for n in range(1, window + 1):
        num += n * (padded[window + n : window + n + t] - padded[window - n : window - n + t])
    return num / (2.0 * sum(n * n for n in range(1, window + 1)))


def extract_features(w: Waveform, cfg: LfccConfig = DEFAULT_LFCC) -> np.ndarray:
    """Full 60-d feature matrix for one waveform."""
    if w.sample_rate_hz != cfg.sample_rate_hz:
        raise ValidationError(
            f"waveform at {w.sample_rate_hz} Hz, front-end configured for {cfg.sample_rate_hz} Hz"
        )
    return add_deltas(lfcc(w, cfg), cfg.delta_window)


def fix_length(f: np.ndarray, target: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Repeat-pad or crop a feature matrix to exactly ``target`` rows.

    Longer inputs are cropped at a uniformly random start drawn from
    ``rng``; with ``rng=None`` the crop is centred (deterministic scoring).
    """
    if target < 1:
        raise ValidationError("target must be >= 1")
    n = f.shape[0]
    if n < 1:
        raise ValidationError("empty feature matrix")
    if n == target:
        return f
    if n < target:
        return f[np.arange(target) % n]
    if rng is None:
        start = (n - target) // 2
    else:
        start = int(rng.integers(0, n - target + 1))
    return f[start : start + target]


# Feature cache: magic, u32 version, u32 rows, u32 cols, row-major <f4.

def write_feature_file(f: np.ndarray, path) -> None:
    f = np.ascontiguousarray(f, dtype="<f4")
    if f.ndim != 2:
        raise ValidationError("feature matrix must be 2-d")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, f.shape[0], f.shape[1]))
        fh.write(f.tobytes())


def read_feature_file(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16 or blob[:4] != FEATURE_MAGIC:
        raise MalformedWav(f"{path}: not an LFCC cache file")
    version, rows, cols = struct.unpack("<III", blob[4:16])
    if version != FEATURE_VERSION:
        raise MalformedWav(f"{path}: unsupported cache version {version}")
    body = blob[16:]
    if len(body) != rows * cols * 4:
        raise MalformedWav(f"{path}: truncated feature data")
    return np.frombuffer(body, dtype="<f4").reshape(rows, cols).astype(np.float64)


class FeatureStore:
    """Mapping trial_id -> feature matrix, backed by memory and/or a cache dir."""

    def __init__(self, cache_dir=None, features=None):
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self._mem = dict(features or {})

    def __contains__(self, trial_id):
        if trial_id in self._mem:
            return True
        return self.cache_dir is not None and self.path(trial_id).exists()

    def __getitem__(self, trial_id) -> np.ndarray:
        if trial_id in self._mem:
            return self._mem[trial_id]
        if self.cache_dir is not None:
            p = self.path(trial_id)
            if p.exists():
                f = read_feature_file(p)
                self._mem[trial_id] = f
                return f
        raise KeyError(trial_id)

    def __setitem__(self, trial_id, f):
        self._mem[trial_id] = f

    def __len__(self):
        return len(self._mem)

    def path(self, trial_id) -> Path:
        return self.cache_dir / f"{trial_id}.lfcc"

    def put(self, trial_id, f, persist=True):
        if persist and self.cache_dir is not None:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            write_feature_file(f, self.path(trial_id))
            # keep the float32-rounded copy so memory and disk agree
            f = np.asarray(f, dtype=np.float32).astype(np.float64)
        self._mem[trial_id] = f
