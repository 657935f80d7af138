import numpy as np
import pytest

from ftmkit.errors import FormatError, InsufficientAudioError, InvalidAudioError
from ftmkit.features import (
    FEATURE_DIM,
    LOG_FLOOR,
    AudioBuffer,
    FeatureSequence,
    compute_filterbank,
    load_features,
    mel_filterbank,
    num_frames,
    save_features,
)

from oracles import mel_band_response


def test_frame_count_one_second():
    audio = AudioBuffer(np.zeros(16000), 16000)
    seq = compute_filterbank(audio)
    assert seq.num_frames == 98
    assert seq.frames.shape == (98, FEATURE_DIM)
    assert seq.frames.dtype == np.float32


def test_frame_count_formula():
    for n in [400, 401, 559, 560, 561, 16000, 16160, 87040]:
        audio = AudioBuffer(np.zeros(n), 16000)
        assert compute_filterbank(audio).num_frames == 1 + (n - 400) // 160
        assert num_frames(n) == 1 + (n - 400) // 160


def test_silence_hits_log_floor():
    audio = AudioBuffer(np.zeros(16000), 16000)
    seq = compute_filterbank(audio)
    assert np.allclose(seq.frames, np.log(LOG_FLOOR))


def test_pure_tone_band_matches_triangle_oracle():
    # 1 kHz tone: the analytic triangle responses say which band wins.
    t = np.arange(16000) / 16000.0
    audio = AudioBuffer(0.5 * np.sin(2 * np.pi * 1000.0 * t), 16000)
    seq = compute_filterbank(audio)
    expected = int(np.argmax(mel_band_response(1000.0)))
    got = int(np.argmax(np.mean(seq.frames, axis=0)))
    assert got == expected


def test_amplitude_scaling_shifts_log_energy():
    rng = np.random.default_rng(7)
    samples = rng.standard_normal(16000) * 0.1
    base = compute_filterbank(AudioBuffer(samples, 16000)).frames.astype(np.float64)
    scaled = compute_filterbank(AudioBuffer(4.0 * samples, 16000)).frames.astype(np.float64)
    # power scales by 16, log energy shifts by ln 16, wherever the floor is inactive
    active = base > np.log(LOG_FLOOR) + 1e-3
    assert np.allclose(scaled[active] - base[active], np.log(16.0), atol=1e-4)


def test_determinism():
    rng = np.random.default_rng(3)
    samples = rng.standard_normal(8000) * 0.2
    a = compute_filterbank(AudioBuffer(samples.copy(), 16000))
    b = compute_filterbank(AudioBuffer(samples.copy(), 16000))
    assert np.array_equal(a.frames, b.frames)


def test_filterbank_shape_and_peaks():
    fb = mel_filterbank()
    assert fb.shape == (40, 257)
    # unit height: every filter peaks at (approximately) 1 at its center bin
    assert np.all(fb.max(axis=1) > 0.5)
    assert np.all(fb.max(axis=1) <= 1.0 + 1e-12)
    assert np.all(fb >= 0.0)


def test_rejects_wrong_sample_rate():
    with pytest.raises(InvalidAudioError):
        compute_filterbank(AudioBuffer(np.zeros(8000), 8000))
    with pytest.raises(InvalidAudioError):
        compute_filterbank(AudioBuffer(np.zeros(44100), 44100))


def test_rejects_short_and_bad_audio():
    with pytest.raises(InsufficientAudioError):
        compute_filterbank(AudioBuffer(np.zeros(399), 16000))
    with pytest.raises(InvalidAudioError):
        AudioBuffer(np.zeros((2, 100)), 16000)
    with pytest.raises(InvalidAudioError):
        AudioBuffer(np.array([0.0, np.nan]), 16000)


def test_feature_sequence_validation():
    with pytest.raises(FormatError):
        FeatureSequence(np.zeros((10, 39), dtype=np.float32))
    with pytest.raises(FormatError):
        FeatureSequence(np.full((10, 40), np.inf, dtype=np.float32))
    with pytest.raises(FormatError):
        FeatureSequence(np.zeros((10, 40), dtype=np.float32), onset_frame=10)
    seq = FeatureSequence(np.zeros((10, 40), dtype=np.float32))
    assert seq.onset_frame == 0
    assert seq.duration_s == pytest.approx(0.1)


def test_feature_file_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    frames = rng.standard_normal((57, 40)).astype(np.float32)
    seq = FeatureSequence(frames)
    path = tmp_path / "f.ftmf"
    save_features(seq, path)
    back = load_features(path)
    assert np.array_equal(back.frames, frames)
    assert back.frames.dtype == np.float32


def test_feature_file_layout(tmp_path):
    frames = np.arange(80, dtype=np.float32).reshape(2, 40)
    path = tmp_path / "f.ftmf"
    save_features(FeatureSequence(frames), path)
    raw = path.read_bytes()
    assert raw[:4] == b"FTMF"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert int.from_bytes(raw[8:12], "little") == 2
    assert int.from_bytes(raw[12:16], "little") == 40
    assert len(raw) == 16 + 4 * 80
    assert np.frombuffer(raw[16:], dtype="<f4")[40] == 40.0  # row-major


def test_feature_file_rejects_corruption(tmp_path):
    frames = np.zeros((3, 40), dtype=np.float32)
    good = tmp_path / "good.ftmf"
    save_features(FeatureSequence(frames), good)
    raw = bytearray(good.read_bytes())

    bad_magic = tmp_path / "magic.ftmf"
    bad_magic.write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(FormatError):
        load_features(bad_magic)

    truncated = tmp_path / "trunc.ftmf"
    truncated.write_bytes(bytes(raw[:-8]))
    with pytest.raises(FormatError):
        load_features(truncated)

    trailing = tmp_path / "trail.ftmf"
    trailing.write_bytes(bytes(raw) + b"\x00")
    with pytest.raises(FormatError):
        load_features(trailing)

    empty = tmp_path / "empty.ftmf"
    empty.write_bytes(b"")
    with pytest.raises(FormatError):
        load_features(empty)

    bad_dim = bytearray(raw)
    bad_dim[12:16] = (39).to_bytes(4, "little")
    wrong_dim = tmp_path / "dim.ftmf"
    wrong_dim.write_bytes(bytes(bad_dim))
    with pytest.raises(FormatError):
        load_features(wrong_dim)
