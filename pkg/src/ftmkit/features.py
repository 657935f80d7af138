"""Log mel filterbank frontend.

Converts 16 kHz mono PCM into 40-dimensional log filterbank energy
frames at a 10 ms shift: 25 ms Hann window, 512-point FFT, 40
triangular mel filters (HTK mel scale) spanning 0-8000 Hz, natural log
with an absolute floor. No pre-emphasis and no mean normalization.

Frame clock conventions used throughout the package:

* frames advance at ``FRAME_RATE`` = 100 frames/s;
* the trigger-phrase detection event sits ``PREFIX_FRAMES`` = 50 frames
  (0.5 s) after the start of an utterance, i.e. sequences begin with
  0.5 s of pre-detection padding. ``FeatureSequence.onset_frame`` marks
  where that padding begins (0 for all synthetic and freshly computed
  sequences); monitoring and labeling start at ``onset_frame +
  PREFIX_FRAMES``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    FormatError,
    InsufficientAudioError,
    InvalidAudioError,
    MissingFileError,
)

SAMPLE_RATE = 16000
WINDOW_SAMPLES = 400  # 25 ms
HOP_SAMPLES = 160  # 10 ms
N_FFT = 512
FEATURE_DIM = 40
MEL_LOW_HZ = 0.0
MEL_HIGH_HZ = 8000.0
LOG_FLOOR = 1e-10

FRAME_RATE = 100  # frames per second
FRAME_SHIFT_S = 0.010
PREFIX_FRAMES = 50  # unlabeled / unmonitored 0.5 s prefix

FEATURE_MAGIC = b"FTMF"
FEATURE_FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIII")


def hz_to_mel(hz):
    """HTK mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_grid_hz() -> np.ndarray:
    """The 42 filter edge/center frequencies in Hz (filter k spans grid[k-1:k+2])."""
    mels = np.linspace(hz_to_mel(MEL_LOW_HZ), hz_to_mel(MEL_HIGH_HZ), FEATURE_DIM + 2)
    return mel_to_hz(mels)


_FILTERBANK: np.ndarray | None = None


def mel_filterbank() -> np.ndarray:
    """Triangular mel filter matrix of shape (40, N_FFT // 2 + 1), unit peak height."""
    global _FILTERBANK
    if _FILTERBANK is None:
        grid = mel_grid_hz()
        bin_hz = np.arange(N_FFT // 2 + 1) * (SAMPLE_RATE / N_FFT)
        fb = np.zeros((FEATURE_DIM, N_FFT // 2 + 1), dtype=np.float64)
        for k in range(FEATURE_DIM):
            left, center, right = grid[k], grid[k + 1], grid[k + 2]
            rising = (bin_hz - left) / (center - left)
            falling = (right - bin_hz) / (right - center)
            fb[k] = np.clip(np.minimum(rising, falling), 0.0, None)
        _FILTERBANK = fb
    return _FILTERBANK


@dataclass
class AudioBuffer:
    """Mono PCM audio. Amplitudes are nominally in [-1, 1] but are not clipped."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InvalidAudioError("invalid audio: expected mono (1-D) samples")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidAudioError("invalid audio: non-finite samples")
        if int(self.sample_rate) <= 0:
            raise InvalidAudioError("invalid audio: sample_rate must be positive")
        self.sample_rate = int(self.sample_rate)


@dataclass
class FeatureSequence:
    """T x 40 log filterbank energies at a 10 ms frame shift.

    ``onset_frame`` is where the utterance's 0.5 s pre-detection padding
    begins; the detection event itself falls ``PREFIX_FRAMES`` frames
    later. It defaults to 0, the convention for every synthetic and
    freshly computed sequence.
    """

    frames: np.ndarray
    frame_shift_s: float = FRAME_SHIFT_S
    onset_frame: int = 0

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[1] != FEATURE_DIM:
            raise FormatError(
                f"format error: features must be T x {FEATURE_DIM}, got {self.frames.shape}"
            )
        if not np.all(np.isfinite(self.frames)):
            raise FormatError("format error: non-finite feature values")
        if self.frame_shift_s != FRAME_SHIFT_S:
            raise FormatError(f"format error: frame shift must be {FRAME_SHIFT_S} s")
        if not 0 <= self.onset_frame < self.num_frames:
            raise FormatError("format error: onset_frame out of range")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def duration_s(self) -> float:
        return self.num_frames / FRAME_RATE


def num_frames(n_samples: int) -> int:
    """Closed-form frame count for n_samples >= WINDOW_SAMPLES."""
    return 1 + (n_samples - WINDOW_SAMPLES) // HOP_SAMPLES


def _hann_window() -> np.ndarray:
    # periodic Hann, the usual STFT analysis window
    n = np.arange(WINDOW_SAMPLES)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / WINDOW_SAMPLES)


def compute_filterbank(audio: AudioBuffer) -> FeatureSequence:
    """Compute the 40-dim log mel filterbank energy sequence of an audio buffer.

    Inputs at rates other than 16 kHz are rejected rather than resampled.
    """
    if audio.sample_rate != SAMPLE_RATE:
        raise InvalidAudioError(
            f"invalid audio: unsupported sample rate {audio.sample_rate}, expected {SAMPLE_RATE}"
        )
    n = audio.samples.shape[0]
    if n < WINDOW_SAMPLES:
        raise InsufficientAudioError(
            f"insufficient audio: {n} samples < one {WINDOW_SAMPLES}-sample window"
        )
    t = num_frames(n)
    starts = np.arange(t) * HOP_SAMPLES
    idx = starts[:, None] + np.arange(WINDOW_SAMPLES)[None, :]
    windowed = audio.samples[idx] * _hann_window()[None, :]
    spectrum = np.fft.rfft(windowed, n=N_FFT, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    energies = power @ mel_filterbank().T
    frames = np.log(np.maximum(energies, LOG_FLOOR))
    return FeatureSequence(frames.astype(np.float32))


def save_features(seq: FeatureSequence, path: str | Path) -> None:
    """Write the FTMF raw-feature file: 16-byte header then float32 LE row-major frames."""
    arr = np.ascontiguousarray(seq.frames, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(FEATURE_MAGIC, FEATURE_FORMAT_VERSION, arr.shape[0], arr.shape[1])
        )
        fh.write(arr.tobytes())


def load_features(path: str | Path) -> FeatureSequence:
    """Read an FTMF file. Round-trips bit-exactly with :func:`save_features`."""
    if not Path(path).is_file():
        raise MissingFileError(f"missing file: {path}")
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise FormatError(f"format error: truncated header in {path}")
        magic, version, t, dim = _HEADER.unpack(header)
        if magic != FEATURE_MAGIC:
            raise FormatError(f"format error: bad magic {magic!r} in {path}")
        if version != FEATURE_FORMAT_VERSION:
            raise FormatError(f"format error: unsupported version {version} in {path}")
        if dim != FEATURE_DIM:
            raise FormatError(f"format error: dim {dim} != {FEATURE_DIM} in {path}")
        if t < 1:
            raise FormatError(f"format error: empty feature matrix in {path}")
        payload = fh.read(4 * t * dim)
        if len(payload) != 4 * t * dim:
            raise FormatError(f"format error: truncated payload in {path}")
        if fh.read(1):
            raise FormatError(f"format error: trailing bytes in {path}")
    frames = np.frombuffer(payload, dtype="<f4").reshape(t, dim)
    return FeatureSequence(frames)
