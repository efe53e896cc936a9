"""Energy-based voice activity detection and non-vocal segment removal."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .audio import AudioClip
from .errors import EmptyResultError, InvalidArgumentError, TooShortError


@dataclass(frozen=True)
class VadConfig:
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    # offset (dB) from the clip's median frame energy; frames above it are active
    energy_threshold_db: float = -30.0
    # frames quieter than this absolute level (dBFS) are never active
    absolute_floor_db: float = -70.0
    smoothing_frames: int = 5
    hangover_frames: int = 5
    min_segment_ms: float = 200.0
    crossfade_ms: float = 10.0

    def __post_init__(self):
        if not self.frame_ms >= self.hop_ms > 0:
            raise InvalidArgumentError("need frame_ms >= hop_ms > 0")
        if self.hangover_frames < 0 or self.smoothing_frames < 1:
            raise InvalidArgumentError("hangover_frames >= 0 and smoothing_frames >= 1 required")

    def frame_samples(self, rate: int) -> tuple[int, int]:
        return int(round(self.frame_ms * rate / 1000)), int(round(self.hop_ms * rate / 1000))


@dataclass(frozen=True, eq=False)
class ActivityMask:
    active: np.ndarray  # bool per frame
    frame_length: int
    hop_length: int
    sample_rate_hz: int
    n_samples: int

    def __len__(self):
        return len(self.active)

    @property
    def active_fraction(self) -> float:
        return float(self.active.mean()) if len(self.active) else 0.0

    def segments(self) -> list[tuple[int, int, bool]]:
        """Runs of equal activity as (first_frame, end_frame_exclusive, active)."""
        runs = []
        if len(self.active) == 0:
            return runs
        edges = np.flatnonzero(np.diff(self.active.astype(np.int8))) + 1
        starts = np.concatenate([[0], edges])
        ends = np.concatenate([edges, [len(self.active)]])
        for s, e in zip(starts, ends):
            runs.append((int(s), int(e), bool(self.active[s])))
        return runs

    def span_of(self, first: int, end: int) -> tuple[int, int]:
        """Sample range of frames [first, end); the last frame also owns the uncovered tail."""
        stop = self.n_samples if end == len(self.active) else (end - 1) * self.hop_length + self.frame_length
        return first * self.hop_length, min(self.n_samples, stop)

    def sample_spans(self) -> list[tuple[int, int]]:
        """Active regions in samples; a frame covers [i*hop, i*hop + frame).

        Frames overlap, so runs separated by a gap shorter than
        frame/hop frames would overlap in samples; those are merged.
        """
        spans = []
        for s, e, on in self.segments():
            if not on:
                continue
            lo, hi = self.span_of(s, e)
            if spans and lo <= spans[-1][1]:
                spans[-1] = (spans[-1][0], max(spans[-1][1], hi))
            else:
                spans.append((lo, hi))
        return spans


class TrimResult(NamedTuple):
    clip: AudioClip
    removed_fraction: float


def frame_energy_db(samples: np.ndarray, frame: int, hop: int) -> np.ndarray:
    frames = np.lib.stride_tricks.sliding_window_view(samples, frame)[::hop]
    power = np.mean(np.square(frames, dtype=np.float64), axis=1)
    return 10.0 * np.log10(power + 1e-20)


def _apply_hangover(active: np.ndarray, n: int) -> np.ndarray:
    if n == 0 or not active.any():
        return active
    out = active.copy()
    # each active frame keeps the following n frames active
    for k in range(1, n + 1):
        out[k:] |= active[:-k]
    return out


def _drop_short(active: np.ndarray, min_frames: int) -> np.ndarray:
    out = active.copy()
    mask = ActivityMask(active, 1, 1, 1, len(active))
    for s, e, on in mask.segments():
        if on and e - s < min_frames:
            out[s:e] = False
    return out


def detect_activity(clip: AudioClip, cfg: VadConfig = VadConfig()) -> ActivityMask:
    """Per-frame activity from smoothed log-energy relative to the clip median."""
    frame, hop = cfg.frame_samples(clip.sample_rate_hz)
    if len(clip) < frame:
        raise TooShortError(f"clip of {len(clip)} samples is shorter than one VAD frame ({frame})")
    energy = frame_energy_db(clip.samples, frame, hop)
    if cfg.smoothing_frames > 1:
        kernel = np.ones(cfg.smoothing_frames) / cfg.smoothing_frames
        padded = np.pad(energy, cfg.smoothing_frames // 2, mode="edge")
        energy = np.convolve(padded, kernel, mode="valid")[: len(energy)]
    threshold = np.median(energy) + cfg.energy_threshold_db
    active = (energy > threshold) & (energy > cfg.absolute_floor_db)
    active = _apply_hangover(active, cfg.hangover_frames)
    min_frames = int(np.ceil(cfg.min_segment_ms / cfg.hop_ms))
    active = _drop_short(active, min_frames)
    return ActivityMask(active, frame, hop, clip.sample_rate_hz, len(clip))


def trim_nonvocal(clip: AudioClip, mask: ActivityMask, crossfade_ms: float = 10.0) -> TrimResult:
    """Concatenate active regions with linear crossfades at each join."""
    if mask.n_samples != len(clip):
        raise InvalidArgumentError("mask was computed for a different clip")
    spans = mask.sample_spans()
    if not spans:
        raise EmptyResultError("no active frames; nothing left after trimming")
    kept = sum(e - s for s, e in spans)
    removed = 1.0 - kept / len(clip)
    if len(spans) == 1 and spans[0] == (0, len(clip)):
        return TrimResult(clip, 0.0)

    fade = int(round(crossfade_ms * clip.sample_rate_hz / 1000))
    out = clip.samples[spans[0][0] : spans[0][1]].copy()
    for s, e in spans[1:]:
        piece = clip.samples[s:e]
        n = min(fade, len(out), len(piece))
        if n > 0:
            ramp = (np.arange(n) + 1.0) / (n + 1.0)
            out[-n:] = out[-n:] * (1.0 - ramp) + piece[:n] * ramp
        out = np.concatenate([out, piece[n:]])
    return TrimResult(clip.replace(out), removed)


def remove_nonvocal(clip: AudioClip, cfg: VadConfig = VadConfig()) -> TrimResult:
    return trim_nonvocal(clip, detect_activity(clip, cfg), cfg.crossfade_ms)


def export_mask(mask: ActivityMask, path) -> None:
    """Write the mask as lines of `start_s end_s active`."""
    rate = mask.sample_rate_hz
    lines = []
    for s, e, on in mask.segments():
        start, end = mask.span_of(s, e)
        lines.append(f"{start / rate:.3f}\t{end / rate:.3f}\t{int(on)}")
    Path(path).write_text("\n".join(lines) + "\n")
