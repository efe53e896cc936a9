"""Audio ingestion and log-mel feature extraction.

Feature parameters default to 16 kHz audio, 512-point FFT, 400-sample
Hamming window, 160-sample hop and 80 mel bands.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import (
    AudioFormatError,
    DegenerateFilterbankError,
    EmptyAudioError,
    InvalidArgumentError,
    TooShortError,
    UnsupportedEncodingError,
)

TARGET_RATE_HZ = 16000

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int
    source_id: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 1:
            raise InvalidArgumentError(f"expected mono samples, got shape {samples.shape}")
        if self.sample_rate_hz <= 0:
            raise InvalidArgumentError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(samples)):
            raise InvalidArgumentError("samples contain NaN or Inf")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz

    def replace(self, samples: np.ndarray, sample_rate_hz: int | None = None) -> "AudioClip":
        return AudioClip(samples, sample_rate_hz or self.sample_rate_hz, self.source_id)


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 512
    win_length: int = 400
    hop_length: int = 160
    window: str = "hamming"

    def __post_init__(self):
        if not 0 < self.hop_length <= self.win_length <= self.n_fft:
            raise InvalidArgumentError(
                f"need 0 < hop ({self.hop_length}) <= win ({self.win_length}) <= n_fft ({self.n_fft})"
            )
        if self.window != "hamming":
            raise InvalidArgumentError(f"unsupported window {self.window!r}")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.win_length:
            return 0
        return (n_samples - self.win_length) // self.hop_length + 1


@dataclass(frozen=True)
class MelConfig:
    n_mels: int = 80
    f_min_hz: float = 0.0
    f_max_hz: float | None = None  # None means Nyquist
    log_floor: float = 1e-10
    # per-utterance mean/variance normalisation of the log-mels; off by default
    cmvn: bool = False

    def __post_init__(self):
        if self.n_mels < 1:
            raise InvalidArgumentError("n_mels must be >= 1")
        if self.log_floor <= 0:
            raise InvalidArgumentError("log_floor must be positive")

    def f_max(self, sample_rate_hz: int) -> float:
        return sample_rate_hz / 2 if self.f_max_hz is None else self.f_max_hz


@dataclass(frozen=True, eq=False)
class LogMelSpectrogram:
    frames: np.ndarray  # [n_frames, n_mels]
    stft_config: StftConfig = field(default_factory=StftConfig)
    mel_config: MelConfig = field(default_factory=MelConfig)
    sample_rate_hz: int = TARGET_RATE_HZ

    @property
    def frame_rate_hz(self) -> float:
        return self.sample_rate_hz / self.stft_config.hop_length

    @property
    def shape(self):
        return self.frames.shape


# ---------------------------------------------------------------- WAV I/O


def _parse_fmt(body: bytes):
    if len(body) < 16:
        raise AudioFormatError("fmt chunk shorter than 16 bytes")
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", body[:16])
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(body) < 40:
            raise AudioFormatError("truncated WAVE_FORMAT_EXTENSIBLE fmt chunk")
        tag = struct.unpack("<H", body[24:26])[0]
    return tag, channels, rate, block_align, bits


def load_wav(path) -> AudioClip:
    """Read a PCM16 or float32 RIFF/WAVE file as a mono clip in [-1, 1].

    Stereo input is downmixed by the channel mean. The file's sample rate is
    kept as-is; call :func:`resample` to bring it to 16 kHz.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise AudioFormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        size = struct.unpack("<I", raw[pos + 4 : pos + 8])[0]
        body = raw[pos + 8 : pos + 8 + size]
        if len(body) < size and chunk_id != b"data":
            raise AudioFormatError(f"{path}: truncated {chunk_id!r} chunk")
        if chunk_id == b"fmt ":
            fmt = _parse_fmt(body)
        elif chunk_id == b"data":
            data = body
            break
        pos += 8 + size + (size & 1)

    if fmt is None:
        raise AudioFormatError(f"{path}: missing fmt chunk")
    if data is None:
        raise AudioFormatError(f"{path}: missing data chunk")

    tag, channels, rate, block_align, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedEncodingError(f"{path}: {channels} channels not supported")
    if rate == 0:
        raise AudioFormatError(f"{path}: zero sample rate")
    if tag == WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 1.0 / 32768.0
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedEncodingError(f"{path}: format tag {tag:#06x} with {bits} bits")
    if block_align != channels * dtype.itemsize:
        raise AudioFormatError(f"{path}: block align {block_align} inconsistent with format")

    n_frames = len(data) // block_align
    if n_frames == 0:
        raise EmptyAudioError(f"{path}: no audio frames")
    pcm = np.frombuffer(data[: n_frames * block_align], dtype=dtype).reshape(n_frames, channels)
    samples = pcm.astype(np.float64).mean(axis=1) * scale
    if not np.all(np.isfinite(samples)):
        raise AudioFormatError(f"{path}: non-finite samples")
    return AudioClip(samples, int(rate), source_id=str(path))


def write_wav(path, clip: AudioClip, encoding: str = "pcm16") -> None:
    """Write a mono clip as PCM16 (clipped to [-1, 1)) or float32."""
    if encoding == "pcm16":
        pcm = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
        tag, bits = WAVE_FORMAT_PCM, 16
    elif encoding == "float32":
        pcm = clip.samples.astype("<f4")
        tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise InvalidArgumentError(f"unknown encoding {encoding!r}")
    write_wav_frames(path, pcm.reshape(-1, 1), clip.sample_rate_hz, tag, bits)


def write_wav_frames(path, frames: np.ndarray, rate: int, tag: int, bits: int) -> None:
    """Low-level writer for already-encoded interleaved frames [n, channels]."""
    channels = frames.shape[1]
    block_align = channels * bits // 8
    data = np.ascontiguousarray(frames).tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(data), b"WAVE",
        b"fmt ", 16, tag, channels, rate, rate * block_align, block_align, bits,
        b"data", len(data),
    )
    Path(path).write_bytes(header + data)


# ------------------------------------------------------------- resampling

ZERO_CROSSINGS = 32
KAISER_BETA = 12.0


@lru_cache(maxsize=128)
def _resample_filter(up: int, down: int) -> np.ndarray:
    ratio = max(up, down)
    half = ZERO_CROSSINGS * ratio
    # resample_poly applies the gain of `up` itself
    return signal.firwin(2 * half + 1, 1.0 / ratio, window=("kaiser", KAISER_BETA))


def resample(clip: AudioClip, target_hz: int) -> AudioClip:
    """Band-limited polyphase resampling with a Kaiser-windowed sinc."""
    if target_hz <= 0:
        raise InvalidArgumentError(f"target rate must be positive, got {target_hz}")
    if len(clip) == 0:
        raise EmptyAudioError("cannot resample an empty clip")
    if target_hz == clip.sample_rate_hz:
        return clip.replace(clip.samples.copy())
    frac = Fraction(target_hz, clip.sample_rate_hz)
    up, down = frac.numerator, frac.denominator
    out = signal.resample_poly(clip.samples, up, down, window=_resample_filter(up, down))
    return clip.replace(out, target_hz)


def ensure_rate(clip: AudioClip, target_hz: int = TARGET_RATE_HZ) -> AudioClip:
    return clip if clip.sample_rate_hz == target_hz else resample(clip, target_hz)


# ----------------------------------------------------------------- STFT


@lru_cache(maxsize=8)
def _window(kind: str, length: int) -> np.ndarray:
    # symmetric Hamming
    w = np.hamming(length)
    w.flags.writeable = False
    return w


def frame_signal(samples: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Fully covered frames [n_frames, win_length]; no end padding."""
    if len(samples) < cfg.win_length:
        raise TooShortError(
            f"need at least {cfg.win_length} samples for one frame, got {len(samples)}"
        )
    view = np.lib.stride_tricks.sliding_window_view(samples, cfg.win_length)
    return view[:: cfg.hop_length]


def stft(clip: AudioClip | np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Complex spectrogram [n_frames, n_fft // 2 + 1] of Hamming-windowed frames."""
    samples = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip)
    frames = frame_signal(samples.astype(np.float64, copy=False), cfg)
    return np.fft.rfft(frames * _window(cfg.window, cfg.win_length), n=cfg.n_fft, axis=1)


# ------------------------------------------------------------------ mel


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: MelConfig, sample_rate_hz: int) -> np.ndarray:
    """Band edges and centres: n_mels + 2 points equally spaced in mel."""
    lo, hi = hz_to_mel(cfg.f_min_hz), hz_to_mel(cfg.f_max(sample_rate_hz))
    return mel_to_hz(np.linspace(lo, hi, cfg.n_mels + 2))


@lru_cache(maxsize=16)
def mel_filterbank(
    cfg: MelConfig = MelConfig(),
    stft_cfg: StftConfig = StftConfig(),
    sample_rate_hz: int = TARGET_RATE_HZ,
) -> np.ndarray:
    """HTK-style triangular filters [n_mels, n_fft // 2 + 1], peak weight 1."""
    f_max = cfg.f_max(sample_rate_hz)
    if not 0 <= cfg.f_min_hz < f_max <= sample_rate_hz / 2:
        raise InvalidArgumentError(f"bad mel band [{cfg.f_min_hz}, {f_max}] Hz")
    points = mel_center_frequencies(cfg, sample_rate_hz)
    bins = np.arange(stft_cfg.n_bins) * sample_rate_hz / stft_cfg.n_fft
    left, center, right = points[:-2, None], points[1:-1, None], points[2:, None]
    rising = (bins - left) / (center - left)
    falling = (right - bins) / (right - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.sum(axis=1) == 0)
    if empty.size:
        raise DegenerateFilterbankError(
            f"{empty.size} of {cfg.n_mels} mel filters cover no FFT bin "
            f"(first: filter {empty[0]}); reduce n_mels or raise n_fft"
        )
    fb.flags.writeable = False
    return fb


def log_mel(
    clip: AudioClip,
    stft_cfg: StftConfig = StftConfig(),
    mel_cfg: MelConfig = MelConfig(),
) -> LogMelSpectrogram:
    """log(max(mel power, floor)) per frame, shape [n_frames, n_mels]."""
    if clip.sample_rate_hz != TARGET_RATE_HZ:
        raise InvalidArgumentError(
            f"log_mel expects {TARGET_RATE_HZ} Hz audio, got {clip.sample_rate_hz}; resample first"
        )
    spec = stft(clip, stft_cfg)
    power = spec.real**2 + spec.imag**2
    mel = power @ mel_filterbank(mel_cfg, stft_cfg, clip.sample_rate_hz).T
    feats = np.log(np.maximum(mel, mel_cfg.log_floor))
    if mel_cfg.cmvn:
        feats = (feats - feats.mean(axis=0)) / (feats.std(axis=0) + 1e-8)
    return LogMelSpectrogram(feats, stft_cfg, mel_cfg, clip.sample_rate_hz)
