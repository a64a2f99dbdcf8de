"""Waveform and manifest I/O.

WAV files are RIFF/PCM16/mono. Samples are scaled by 1/32768 on read, so
PCM -32768 maps to exactly -1.0 and PCM 32767 to 32767/32768. Writing
clips to [-1, 1] and saturates 1.0 to 32767.

Protocol files are whitespace-delimited text, one trial per line::

    speaker_id trial_id ignored attack_id key [channel_id]

The sixth column is only present in manifests produced by channel
simulation. A ``-`` attack id means "none".
"""
from __future__ import annotations

import logging
import os
import wave
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .errors import DuplicateTrial, MalformedWav, ParseError, UnsupportedFormat

log = logging.getLogger(__name__)

SAMPLE_RATE = 16000
ORIG_CHANNEL = "orig"
KEYS = ("bonafide", "spoof")
SPLITS = ("train", "dev", "eval")
PCM_SCALE = 32768.0
# separates source trial id from channel id in simulated trial ids
CHANNEL_SEP = "__"


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("waveform must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(s)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class TrialRecord:
    trial_id: str
    audio_path: str
    key: str
    attack_id: Optional[str] = None
    channel_id: str = ORIG_CHANNEL
    speaker_id: str = "-"

    def __post_init__(self):
        if not self.trial_id:
            raise ValueError("empty trial_id")
        if self.key not in KEYS:
            raise ValueError(f"key must be one of {KEYS}, got {self.key!r}")

    @property
    def is_bonafide(self) -> bool:
        return self.key == "bonafide"

    @property
    def source_id(self) -> str:
        """Trial id of the original utterance this record was derived from."""
        if self.channel_id != ORIG_CHANNEL and self.trial_id.endswith(CHANNEL_SEP + self.channel_id):
            return self.trial_id[: -len(CHANNEL_SEP + self.channel_id)]
        return self.trial_id


@dataclass
class Manifest:
    records: list = field(default_factory=list)
    split: str = "train"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        seen = set()
        for r in self.records:
            if r.trial_id in seen:
                raise DuplicateTrial(f"duplicate trial id {r.trial_id!r}")
            seen.add(r.trial_id)

    def __len__(self):
        return len(self.records)

    def __iter__(self) -> Iterator[TrialRecord]:
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def trial_ids(self) -> list:
        return [r.trial_id for r in self.records]

    @property
    def channels(self) -> list:
        """Channel ids in order of first appearance."""
        return list(dict.fromkeys(r.channel_id for r in self.records))

    def filter(self, channel_id=None, key=None) -> "Manifest":
        recs = [
            r for r in self.records
            if (channel_id is None or r.channel_id == channel_id)
            and (key is None or r.key == key)
        ]
        return Manifest(recs, self.split)

    def concat(self, other: "Manifest") -> "Manifest":
        return Manifest(self.records + other.records, self.split)

    def check_paths(self):
        missing = [r.audio_path for r in self.records if not os.path.exists(r.audio_path)]
        if missing:
            raise FileNotFoundError(f"{len(missing)} audio files missing, first: {missing[0]}")


def read_wav(path, expected_rate: Optional[int] = SAMPLE_RATE) -> Waveform:
    """Read a PCM16 mono WAV file into a Waveform.

    ``expected_rate=None`` accepts any sample rate.
    """
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except wave.Error as exc:
        msg = str(exc)
        if "unknown format" in msg:
            raise UnsupportedFormat(f"{path}: not PCM ({msg})") from exc
        raise MalformedWav(f"{path}: {msg}") from exc
    except EOFError as exc:
        raise MalformedWav(f"{path}: truncated header") from exc

    if width != 2:
        raise UnsupportedFormat(f"{path}: sample width {8 * width} bits, need 16")
    if n_channels != 1:
        raise UnsupportedFormat(f"{path}: {n_channels} channels, need mono")
    if expected_rate is not None and rate != expected_rate:
        raise UnsupportedFormat(f"{path}: sample rate {rate} Hz, need {expected_rate} Hz")
    if len(raw) != n_frames * 2:
        raise MalformedWav(f"{path}: truncated data ({len(raw)} of {n_frames * 2} bytes)")
    if n_frames == 0:
        raise MalformedWav(f"{path}: no samples")
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / PCM_SCALE, rate)


def to_pcm16(samples) -> np.ndarray:
    s = np.asarray(samples, dtype=np.float64)
    if np.any(np.abs(s) > 1.0):
        log.warning("clipping %d samples outside [-1, 1]", int(np.sum(np.abs(s) > 1.0)))
    scaled = np.round(np.clip(s, -1.0, 1.0) * PCM_SCALE)
    return np.clip(scaled, -32768, 32767).astype("<i2")


def write_wav(w: Waveform, path) -> None:
    path = Path(path)
    pcm = to_pcm16(w.samples)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(w.sample_rate_hz))
        wf.writeframes(pcm.tobytes())


def _audio_path(audio_root, trial_id):
    return str(Path(audio_root) / f"{trial_id}.wav")


def parse_protocol(path, audio_root, split: str = "train") -> Manifest:
    """Parse an ASVspoof-style protocol file into a Manifest.

    Lines with five fields get channel ``orig``; a sixth field sets the
    channel id. Blank lines and ``#`` comments are skipped.
    """
    path = Path(path)
    records = []
    seen = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = stripped.split()
            if len(fields) not in (5, 6):
                raise ParseError(f"expected 5 or 6 fields, got {len(fields)}", lineno, path)
            speaker, trial_id, _unused, attack, key = fields[:5]
            if key not in KEYS:
                raise ParseError(f"unknown key {key!r}", lineno, path)
            if trial_id in seen:
                raise DuplicateTrial(
                    f"{path}:{lineno}: trial {trial_id!r} already defined on line {seen[trial_id]}"
                )
            seen[trial_id] = lineno
            channel = fields[5] if len(fields) == 6 else ORIG_CHANNEL
            records.append(
                TrialRecord(
                    trial_id=trial_id,
                    audio_path=_audio_path(audio_root, trial_id),
                    key=key,
                    attack_id=None if attack == "-" else attack,
                    channel_id=channel,
                    speaker_id=speaker,
                )
            )
    return Manifest(records, split)


def format_protocol_line(r: TrialRecord, with_channel: bool) -> str:
    fields = [r.speaker_id or "-", r.trial_id, "-", r.attack_id or "-", r.key]
    if with_channel:
        fields.append(r.channel_id)
    return " ".join(fields)


def write_protocol(m: Manifest, path, with_channel: Optional[bool] = None) -> None:
    """Write a manifest in protocol format.

    The channel column is written when any record is not on the original
    channel, unless ``with_channel`` forces it either way.
    """
    if with_channel is None:
        with_channel = any(r.channel_id != ORIG_CHANNEL for r in m)
    with open(path, "w", encoding="utf-8") as fh:
        for r in m:
            fh.write(format_protocol_line(r, with_channel) + "\n")


def load_waveforms(m: Manifest | Iterable[TrialRecord]) -> list:
    return [read_wav(r.audio_path) for r in m]


def relocate(m: Manifest, audio_root) -> Manifest:
    """Point every record at ``<audio_root>/<trial_id>.wav``."""
    return Manifest([replace(r, audio_path=_audio_path(audio_root, r.trial_id)) for r in m], m.split)


def merge(manifests: Sequence[Manifest]) -> Manifest:
    if not manifests:
        raise ValueError("nothing to merge")
    recs = []
    for m in manifests:
        recs.extend(m.records)
    return Manifest(recs, manifests[0].split)
