"""Waveform-domain training augmentation.

With probability ``prob`` exactly one of four transforms is applied:
background-music mixing, stationary Gaussian noise, impulsive clicks, or a
pitch shift done by resampling (duration changes; the caller re-crops).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..audio import TARGET_RATE_HZ, AudioClip, ensure_rate, load_wav, resample

log = logging.getLogger(__name__)

KINDS = ("background", "stationary_noise", "impulsive_noise", "pitch_shift")


@dataclass
class AugmentAssets:
    background: list = field(default_factory=list)  # 16 kHz float arrays

    @classmethod
    def from_dir(cls, path) -> "AugmentAssets":
        stems = [ensure_rate(load_wav(p)).samples for p in sorted(Path(path).glob("*.wav"))]
        return cls(stems)


def power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x, dtype=np.float64)))


def mix_at_snr(signal: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    """signal + g * noise with g chosen so that P(signal) / P(g * noise) = snr_db."""
    ps, pn = power(signal), power(noise)
    if ps == 0 or pn == 0:
        return signal.copy()
    gain = np.sqrt(ps / (pn * 10 ** (snr_db / 10)))
    return signal + gain * noise


def fit_length(x: np.ndarray, n: int, offset: int = 0) -> np.ndarray:
    """Crop to ``n`` samples starting at ``offset``, tiling when too short."""
    if len(x) < n + offset:
        x = np.tile(x, int(np.ceil((n + offset) / len(x))))
    return x[offset : offset + n]


def pitch_shift(samples: np.ndarray, semitones: float, rate: int = TARGET_RATE_HZ) -> np.ndarray:
    """Shift pitch by reinterpreting the sample rate, then resampling back.

    The virtual rate is snapped to a 50 Hz grid (under 0.03 semitone of
    error) so the polyphase ratio stays small and its filter is reused.
    """
    virtual = int(round(rate * 2 ** (semitones / 12) / 50.0)) * 50
    return resample(AudioClip(samples, virtual), rate).samples


def impulsive_noise(n: int, rng: np.random.Generator, rate_hz: float = 20.0, sr: int = TARGET_RATE_HZ) -> np.ndarray:
    clicks = np.zeros(n)
    count = max(1, rng.poisson(rate_hz * n / sr))
    pos = rng.integers(0, n, size=count)
    clicks[pos] = rng.choice([-1.0, 1.0], size=count) * rng.uniform(0.5, 1.0, size=count)
    # a few samples of decay so clicks have some bandwidth
    return np.convolve(clicks, np.exp(-np.arange(8) / 2.0))[:n]


def augment(
    samples: np.ndarray,
    rng: np.random.Generator,
    assets: AugmentAssets | None = None,
    prob: float = 0.35,
    max_semitones: float = 2.0,
    snr_db: tuple[float, float] = (5.0, 20.0),
) -> tuple[np.ndarray, str | None]:
    """Return (augmented samples, kind) or (samples, None) when not drawn.

    The random stream is consumed identically whether or not assets exist,
    so a missing background pool only changes the affected examples.
    """
    if rng.random() >= prob:
        return samples, None
    kind = KINDS[rng.integers(len(KINDS))]
    snr = rng.uniform(*snr_db)
    if kind == "background" and not (assets and assets.background):
        log.info("no background stems available; falling back to stationary noise")
        kind = "stationary_noise"

    if kind == "background":
        stem = assets.background[rng.integers(len(assets.background))]
        offset = int(rng.integers(0, max(1, len(stem) - len(samples))))
        return mix_at_snr(samples, fit_length(stem, len(samples), offset), snr), kind
    if kind == "stationary_noise":
        return mix_at_snr(samples, rng.standard_normal(len(samples)), snr), kind
    if kind == "impulsive_noise":
        return mix_at_snr(samples, impulsive_noise(len(samples), rng), snr), kind
    semitones = rng.uniform(-max_semitones, max_semitones)
    return pitch_shift(samples, semitones), kind
