"""Seeded synthetic singing corpus with two tiers of fakes.

Every singer is a small source-filter voice: a fundamental range, a vibrato
rate and depth, and a spectral envelope made of four formant resonances on
a tilted slope. Authentic tracks sing random note sequences with that voice.

* High-quality fakes keep the target's voice with a mild timbre
  perturbation (formants moved by a few percent) and carry a faint steady
  tone in the top octave, standing in for a vocoder's spectral artifact.
  They stay nearest to the real singer.
* Low-quality fakes scramble the harmonic amplitudes every note, drop the
  vibrato, pick an unrelated pitch range and carry a high-band hiss. They
  are easy to detect and say nothing about who they imitate.

Layout under the output directory::

    manifest.tsv
    audio/<singer_id>/{real,hq,lq}_<k>.wav
    background/bed_<k>.wav       accompaniment-like stems for augmentation
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from .audio import AudioClip, write_wav
from .errors import ConfigError
from .manifest import Manifest, ManifestRow

RATE = 16000
CONTROL_HOP = 80  # 5 ms envelope resolution
HQ_TAG, LQ_TAG = "HQ", "LQ"


@dataclass(frozen=True)
class SynthCorpusSpec:
    n_singers: int = 8
    tracks_per_singer: int = 20
    hq_fakes_per_singer: int = 5
    lq_fakes_per_singer: int = 5
    duration_s: float = 12.0
    silence_fraction: float = 0.15
    val_fraction: float = 0.1
    test_fraction: float = 0.2
    hq_formant_shift: float = 0.03
    lq_scramble: float = 1.0
    hq_tone_db: float = -30.0  # artifact level relative to the voice RMS
    n_background: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.n_singers < 2:
            raise ConfigError("a corpus needs at least 2 singers")
        if self.tracks_per_singer < 1:
            raise ConfigError("tracks_per_singer must be >= 1")
        if not 0 <= self.silence_fraction < 0.8:
            raise ConfigError("silence_fraction must be in [0, 0.8)")
        if self.val_fraction + self.test_fraction >= 1:
            raise ConfigError("val_fraction + test_fraction must leave training tracks")
        if not self.hq_formant_shift < self.lq_scramble:
            raise ConfigError("fake tiers need distinct perturbation strengths")
        if self.hq_tone_db >= 0:
            raise ConfigError("hq_tone_db must be below the voice level (< 0 dB)")


@dataclass(frozen=True)
class Voice:
    f0_center_hz: float
    f0_range_semitones: float
    formants_hz: tuple
    bandwidths_hz: tuple
    gains: tuple
    tilt_db_per_octave: float
    vibrato_hz: float
    vibrato_semitones: float
    breath: float

    def envelope(self, freqs: np.ndarray) -> np.ndarray:
        """Linear magnitude of the spectral envelope at ``freqs``."""
        f = np.maximum(freqs, 1.0)
        res = sum(g / (1.0 + ((f - fc) / bw) ** 2) for fc, bw, g in zip(self.formants_hz, self.bandwidths_hz, self.gains))
        return (0.02 + res) * (f / 200.0) ** (self.tilt_db_per_octave / 6.02)

    def perturbed(self, rng: np.random.Generator, shift: float) -> "Voice":
        scale = 1.0 + rng.normal(0.0, shift, size=len(self.formants_hz))
        return Voice(
            self.f0_center_hz, self.f0_range_semitones,
            tuple(float(f * s) for f, s in zip(self.formants_hz, scale)),
            self.bandwidths_hz, self.gains,
            self.tilt_db_per_octave + float(rng.normal(0.0, 0.5)),
            self.vibrato_hz * float(1.0 + rng.normal(0.0, 0.05)),
            self.vibrato_semitones, self.breath,
        )


def make_voices(n: int, rng: np.random.Generator) -> list[Voice]:
    # pitch centres spread over two octaves, shuffled so pitch alone doesn't order singers
    centres = 130.0 * 2 ** (rng.permutation(n) * 2.0 / max(1, n - 1) + rng.uniform(-0.05, 0.05, n))
    voices = []
    for i in range(n):
        formants = (
            rng.uniform(300, 900), rng.uniform(900, 2400),
            rng.uniform(2300, 3300), rng.uniform(3400, 4600),
        )
        voices.append(Voice(
            f0_center_hz=float(centres[i]),
            f0_range_semitones=float(rng.uniform(3, 5)),
            formants_hz=tuple(float(f) for f in formants),
            bandwidths_hz=tuple(float(b) for b in rng.uniform([60, 80, 120, 150], [120, 160, 220, 300])),
            gains=tuple(float(g) for g in rng.uniform([0.8, 0.4, 0.2, 0.1], [1.0, 0.9, 0.6, 0.4])),
            tilt_db_per_octave=float(rng.uniform(-9, -4)),
            vibrato_hz=float(rng.uniform(4.5, 7.0)),
            vibrato_semitones=float(rng.uniform(0.2, 0.7)),
            breath=float(rng.uniform(0.005, 0.03)),
        ))
    return voices


def _phrase_layout(n_ctrl: int, silence_fraction: float, rng) -> np.ndarray:
    """Boolean control-rate mask of sung regions with silent gaps between phrases."""
    sung = np.ones(n_ctrl, dtype=bool)
    n_gaps = int(rng.integers(2, 5))
    total = int(round(silence_fraction * n_ctrl))
    if total == 0:
        return sung
    lengths = np.maximum(1, np.round(rng.dirichlet(np.ones(n_gaps)) * total).astype(int))
    # gaps evenly distributed, jittered, never overlapping
    slots = np.linspace(0, n_ctrl, n_gaps + 1)
    for k, length in enumerate(lengths):
        lo, hi = int(slots[k]), int(slots[k + 1]) - length
        start = int(rng.integers(lo, max(lo + 1, hi)))
        sung[start : start + length] = False
    return sung


def _melody(n_ctrl: int, centre: float, span: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Control-rate f0 contour and per-note index for a random note sequence."""
    ctrl_rate = RATE / CONTROL_HOP
    f0 = np.empty(n_ctrl)
    note_id = np.empty(n_ctrl, dtype=int)
    pos, k = 0, 0
    while pos < n_ctrl:
        length = int(rng.uniform(0.25, 0.8) * ctrl_rate)
        semis = np.round(rng.uniform(-span, span))
        f0[pos : pos + length] = centre * 2 ** (semis / 12)
        note_id[pos : pos + length] = k
        pos += length
        k += 1
    # portamento: one-pole glide of ~30 ms between notes
    f0 = signal.lfilter([0.15], [1, -0.85], np.log(f0), zi=[0.85 * np.log(f0[0])])[0]
    return np.exp(f0), note_id


def _upsample(ctrl: np.ndarray, n: int) -> np.ndarray:
    """Linear interpolation from control rate to sample rate along axis 0."""
    t = (np.arange(n) + 0.5) / CONTROL_HOP - 0.5
    return np.interp(t, np.arange(len(ctrl)), ctrl) if ctrl.ndim == 1 else np.stack(
        [np.interp(t, np.arange(len(ctrl)), ctrl[:, j]) for j in range(ctrl.shape[1])], axis=1)


def render(voice: Voice, duration_s: float, rng: np.random.Generator, silence_fraction: float = 0.15,
           scramble: bool = False, vibrato: bool = True) -> np.ndarray:
    """Sing a random melody with ``voice``; returns float64 samples at 16 kHz."""
    n = int(round(duration_s * RATE))
    n_ctrl = n // CONTROL_HOP + 2
    f0_ctrl, notes = _melody(n_ctrl, voice.f0_center_hz, voice.f0_range_semitones, rng)
    t_ctrl = np.arange(n_ctrl) * CONTROL_HOP / RATE
    if vibrato:
        onset = np.clip(t_ctrl % 0.8 / 0.3, 0, 1)  # vibrato fades in within each note
        f0_ctrl = f0_ctrl * 2 ** (onset * voice.vibrato_semitones / 12 * np.sin(2 * np.pi * voice.vibrato_hz * t_ctrl))

    n_harm = int(7800 // (f0_ctrl.min()))
    k = np.arange(1, n_harm + 1)
    amps = voice.envelope(np.outer(f0_ctrl, k))
    amps[np.outer(f0_ctrl, k) >= 7800] = 0.0
    if scramble:
        # each note gets its own random ordering of harmonic strengths
        for note in np.unique(notes):
            rows = notes == note
            audible = int(np.sum(amps[rows][0] > 0))
            perm = rng.permutation(audible)
            amps[np.ix_(rows, np.arange(audible))] = amps[np.ix_(rows, perm)] * rng.uniform(0.3, 3.0, audible)

    sung = _phrase_layout(n_ctrl, silence_fraction, rng).astype(float)
    # 40 ms attack/release around phrases
    ramp = np.ones(8) / 8
    accent = rng.uniform(0.7, 1.0, notes.max() + 1)[notes]
    level = np.convolve(sung, ramp, mode="same") * accent

    f0 = _upsample(f0_ctrl, n)
    phase = 2 * np.pi * np.cumsum(f0) / RATE
    out = np.zeros(n)
    t = (np.arange(n) + 0.5) / CONTROL_HOP - 0.5
    idx = np.clip(np.floor(t).astype(int), 0, n_ctrl - 2)
    frac = np.clip(t - idx, 0.0, 1.0)[:, None]
    for lo in range(0, n_harm, 16):
        block = amps[:, lo : lo + 16]
        a = block[idx] * (1 - frac) + block[idx + 1] * frac
        kk = k[lo : lo + 16]
        out += np.sum(a * np.sin(np.outer(phase, kk) + kk * 0.7), axis=1)
    out *= _upsample(level, n)

    breath = signal.lfilter([1.0], [1.0, -0.6], rng.standard_normal(n)) * voice.breath
    out += breath * _upsample(level, n) * np.sqrt(np.mean(out**2) + 1e-12) / 0.05
    out += rng.standard_normal(n) * 1e-3 * np.sqrt(np.mean(out**2) + 1e-12)  # -60 dB floor
    return out


def _band_noise(n: int, lo: float, hi: float, rng) -> np.ndarray:
    sos = signal.butter(6, [lo, hi], btype="bandpass", fs=RATE, output="sos")
    return signal.sosfilt(sos, rng.standard_normal(n))


def _artifact_tone(x: np.ndarray, level_db: float, rng) -> np.ndarray:
    freq = rng.uniform(6500.0, 7500.0)
    t = np.arange(len(x)) / RATE
    amp = np.sqrt(2 * np.mean(x**2)) * 10 ** (level_db / 20)
    return x + amp * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))


def _normalize(x: np.ndarray, rng) -> np.ndarray:
    return x * (rng.uniform(0.3, 0.7) / (np.max(np.abs(x)) + 1e-12))


def render_background(duration_s: float, rng) -> np.ndarray:
    """A chord pad with a kick-like pulse, standing in for accompaniment."""
    n = int(round(duration_s * RATE))
    t = np.arange(n) / RATE
    root = rng.uniform(80, 160)
    pad = sum(signal.sawtooth(2 * np.pi * root * r * t) * 0.3 for r in (1.0, 1.26, 1.5))
    pad = signal.sosfilt(signal.butter(2, 1500, fs=RATE, output="sos"), pad)
    beat = np.zeros(n)
    period = int(RATE * 60 / rng.uniform(80, 130))
    beat[::period] = 1.0
    kick = np.convolve(beat, np.sin(2 * np.pi * 55 * np.arange(2000) / RATE) * np.exp(-np.arange(2000) / 400))[:n]
    return _normalize(pad + kick, rng)


def _split_counts(n: int, val: float, test: float) -> list[str]:
    n_test = int(round(n * test))
    n_val = int(round(n * val))
    if n >= 3:
        n_test, n_val = max(1, n_test), max(1, n_val)
    n_train = n - n_test - n_val
    return ["train"] * n_train + ["val"] * n_val + ["test"] * n_test


def generate_synth_corpus(spec: SynthCorpusSpec, out_dir) -> Manifest:
    """Write WAVs, background stems and ``manifest.tsv``; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    voices = make_voices(spec.n_singers, np.random.default_rng([spec.seed, 0]))
    rows = []
    for i, voice in enumerate(voices):
        sid = f"singer{i + 1:02d}"
        (out / "audio" / sid).mkdir(parents=True, exist_ok=True)
        plan = []
        for kind, count in (("real", spec.tracks_per_singer), ("hq", spec.hq_fakes_per_singer),
                            ("lq", spec.lq_fakes_per_singer)):
            splits = _split_counts(count, spec.val_fraction, spec.test_fraction)
            order = np.random.default_rng([spec.seed, 1, i, len(kind), count]).permutation(count)
            plan += [(kind, j, splits[order[j]]) for j in range(count)]
        for kind, j, split in plan:
            rng = np.random.default_rng([spec.seed, 2, i, ("real", "hq", "lq").index(kind), j])
            if kind == "real":
                x = render(voice, spec.duration_s, rng, spec.silence_fraction)
            elif kind == "hq":
                x = render(voice.perturbed(rng, spec.hq_formant_shift), spec.duration_s, rng, spec.silence_fraction)
                x = _artifact_tone(x, spec.hq_tone_db, rng)
            else:
                other = Voice(float(rng.uniform(110, 500)), 6.0, voice.formants_hz, voice.bandwidths_hz,
                              voice.gains, voice.tilt_db_per_octave, 0.0, 0.0, voice.breath)
                x = render(other, spec.duration_s, rng, spec.silence_fraction, scramble=spec.lq_scramble > 0,
                           vibrato=False)
                hiss = _band_noise(len(x), 5000, 7800, rng)
                x = x + hiss * np.sqrt(np.mean(x**2) / np.mean(hiss**2)) * 0.1
            rel = f"audio/{sid}/{kind}_{j:02d}.wav"
            write_wav(out / rel, AudioClip(_normalize(x, rng), RATE))
            fake = kind != "real"
            rows.append(ManifestRow(rel, sid, "deepfake" if fake else "authentic",
                                    {"real": "", "hq": HQ_TAG, "lq": LQ_TAG}[kind], split, "vocals"))
    if spec.n_background:
        (out / "background").mkdir(exist_ok=True)
        for b in range(spec.n_background):
            bed = render_background(max(spec.duration_s, 20.0), np.random.default_rng([spec.seed, 3, b]))
            write_wav(out / "background" / f"bed_{b}.wav", AudioClip(bed, RATE))
    manifest = Manifest(rows, out)
    manifest.write(out / "manifest.tsv")
    return manifest
