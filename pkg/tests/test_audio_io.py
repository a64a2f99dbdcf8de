import struct
import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chanrobust.audio_io import (
    Manifest,
    TrialRecord,
    Waveform,
    parse_protocol,
    read_wav,
    write_protocol,
    write_wav,
)
from chanrobust.errors import DuplicateTrial, MalformedWav, ParseError, UnsupportedFormat


def _write_raw(path, pcm, rate=16000, channels=1, width=2):
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(width)
        wf.setframerate(rate)
        wf.writeframes(np.asarray(pcm).tobytes())


def test_zero_file(tmp_path):
    p = tmp_path / "z.wav"
    _write_raw(p, np.zeros(16, dtype="<i2"))
    w = read_wav(p)
    assert len(w) == 16
    assert np.all(w.samples == 0)
    assert w.sample_rate_hz == 16000


def test_pcm_scaling(tmp_path):
    p = tmp_path / "s.wav"
    _write_raw(p, np.array([32767, -32768, 1], dtype="<i2"))
    w = read_wav(p)
    assert w.samples[0] == 32767 / 32768
    assert w.samples[1] == -1.0
    assert w.samples[2] == 1 / 32768


def test_write_saturates_and_zeros(tmp_path):
    p = tmp_path / "c.wav"
    write_wav(Waveform(np.array([1.0, 0.0, -1.0, 0.0])), p)
    with wave.open(str(p)) as wf:
        pcm = np.frombuffer(wf.readframes(4), dtype="<i2")
    assert pcm.tolist() == [32767, 0, -32768, 0]


def test_write_clips_out_of_range(tmp_path, caplog):
    p = tmp_path / "c.wav"
    write_wav(Waveform(np.array([2.0, -3.0])), p)
    assert read_wav(p).samples.tolist() == [32767 / 32768, -1.0]
    assert "clipping" in caplog.text


def test_roundtrip_seeded_noise(tmp_path):
    rng = np.random.default_rng(7)
    x = rng.uniform(-1, 1, 16000)
    p = tmp_path / "n.wav"
    write_wav(Waveform(x), p)
    y = read_wav(p).samples
    assert np.max(np.abs(x - y)) <= 1 / 32768


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=200))
def test_roundtrip_property(tmp_path_factory, samples):
    p = tmp_path_factory.mktemp("rt") / "x.wav"
    write_wav(Waveform(np.array(samples)), p)
    assert np.max(np.abs(read_wav(p).samples - np.array(samples))) <= 1 / 32768


def test_rejects_stereo_rate_width(tmp_path):
    p = tmp_path / "st.wav"
    _write_raw(p, np.zeros(8, dtype="<i2"), channels=2)
    with pytest.raises(UnsupportedFormat):
        read_wav(p)
    p = tmp_path / "r.wav"
    _write_raw(p, np.zeros(8, dtype="<i2"), rate=8000)
    with pytest.raises(UnsupportedFormat):
        read_wav(p)
    assert read_wav(p, expected_rate=None).sample_rate_hz == 8000
    p = tmp_path / "w.wav"
    _write_raw(p, np.zeros(8, dtype="u1"), width=1)
    with pytest.raises(UnsupportedFormat):
        read_wav(p)


def test_rejects_float_wav(tmp_path):
    p = tmp_path / "f.wav"
    data = np.zeros(4, dtype="<f4").tobytes()
    fmt = struct.pack("<HHIIHH", 3, 1, 16000, 64000, 4, 32)
    blob = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(data)) + data
    p.write_bytes(b"RIFF" + struct.pack("<I", len(blob)) + blob)
    with pytest.raises(UnsupportedFormat):
        read_wav(p)


def test_malformed(tmp_path):
    p = tmp_path / "bad.wav"
    p.write_bytes(b"not a wav file at all")
    with pytest.raises(MalformedWav):
        read_wav(p)
    good = tmp_path / "g.wav"
    _write_raw(good, np.arange(100, dtype="<i2"))
    truncated = tmp_path / "t.wav"
    truncated.write_bytes(good.read_bytes()[:-50])
    with pytest.raises(MalformedWav):
        read_wav(truncated)


PROTOCOL = """LA_0079 T_0001 - - bonafide
LA_0079 T_0002 - A01 spoof
LA_0080 T_0003 - A02 spoof
"""


def test_parse_protocol(tmp_path):
    p = tmp_path / "proto.txt"
    p.write_text(PROTOCOL)
    m = parse_protocol(p, tmp_path / "wav", "dev")
    assert m.split == "dev"
    assert [r.trial_id for r in m] == ["T_0001", "T_0002", "T_0003"]
    r0, r1 = m[0], m[1]
    assert r0.key == "bonafide" and r0.attack_id is None and r0.channel_id == "orig"
    assert r1.key == "spoof" and r1.attack_id == "A01"
    assert r0.audio_path.endswith("wav/T_0001.wav")
    assert parse_protocol(p, tmp_path / "wav", "dev") == m


def test_parse_protocol_errors(tmp_path):
    p = tmp_path / "p.txt"
    p.write_text("LA_0079 T_0001 - bonafide\n")
    with pytest.raises(ParseError, match=":1:"):
        parse_protocol(p, tmp_path)
    p.write_text(PROTOCOL + "LA_0079 T_0009 - - genuine\n")
    with pytest.raises(ParseError, match=":4:"):
        parse_protocol(p, tmp_path)
    p.write_text(PROTOCOL + "LA_0079 T_0001 - - bonafide\n")
    with pytest.raises(DuplicateTrial):
        parse_protocol(p, tmp_path)


def test_protocol_roundtrip_with_channel(tmp_path):
    recs = [
        TrialRecord("T_0001__CH01", "x", "bonafide", None, "CH01", "S1"),
        TrialRecord("T_0002__CH01", "x", "spoof", "A01", "CH01", "S1"),
    ]
    m = Manifest(recs, "eval")
    p = tmp_path / "sim.txt"
    write_protocol(m, p)
    assert p.read_text().splitlines()[1] == "S1 T_0002__CH01 - A01 spoof CH01"
    back = parse_protocol(p, tmp_path, "eval")
    assert [(r.trial_id, r.key, r.attack_id, r.channel_id) for r in back] == \
        [(r.trial_id, r.key, r.attack_id, r.channel_id) for r in recs]
    assert back[0].source_id == "T_0001"


def test_manifest_invariants():
    r = TrialRecord("a", "x", "bonafide")
    with pytest.raises(DuplicateTrial):
        Manifest([r, r])
    with pytest.raises(ValueError):
        TrialRecord("b", "x", "fake")
    with pytest.raises(ValueError):
        Waveform(np.array([np.nan]))
    with pytest.raises(ValueError):
        Waveform(np.array([]))
