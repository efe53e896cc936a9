"""
From a waveform to log-mel windows
==================================

One synthetic singer, one track: we look at what the front end sees and
how much the energy VAD cuts away before the embedder gets the audio.
"""

import numpy as np

from vocalprint.audio import AudioClip, MelConfig, StftConfig, log_mel, stft
from vocalprint.identity import extract_windows
from vocalprint.synth import make_voices, render
from vocalprint.vad import detect_activity, remove_nonvocal

rng = np.random.default_rng(0)
voice = make_voices(1, rng)[0]
print(f"voice: f0 around {voice.f0_center_hz:.0f} Hz, vibrato {voice.vibrato_hz:.1f} Hz")

# %%
# A 25 s track with roughly 40% of it silent.
clip = AudioClip(render(voice, 25.0, rng, silence_fraction=0.4), 16000, "demo")

spec = stft(clip.samples)
print(f"STFT: {spec.shape[0]} frames x {spec.shape[1]} bins (n_fft {StftConfig().n_fft}, hop 160)")

feats = log_mel(clip)
print(f"log-mel: {feats.frames.shape}, range {feats.frames.min():.1f} .. {feats.frames.max():.1f}")

# %%
# Energy VAD relative to the clip's median frame energy.
mask = detect_activity(clip)
trimmed = remove_nonvocal(clip)
print(f"active frames: {100 * mask.active_fraction:.1f}%")
print(f"removed {100 * trimmed.removed_fraction:.1f}% of samples: "
      f"{clip.duration_s:.1f} s -> {trimmed.clip.duration_s:.1f} s")

# Running the VAD again on its own output should find almost nothing left to cut.
again = remove_nonvocal(trimmed.clip)
print(f"second pass removes {100 * again.removed_fraction:.2f}%")

# %%
# Inference sees five evenly spaced 10 s windows of the trimmed track.
windows = extract_windows(trimmed.clip)
starts = [np.flatnonzero(trimmed.clip.samples == w.samples[0])[0] / 16000 for w in windows]
print("window starts (s):", ", ".join(f"{s:.2f}" for s in starts))
print("per-window log-mel:", log_mel(windows[0], mel_cfg=MelConfig()).frames.shape)
