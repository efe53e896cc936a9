"""Two-stage inference: the discriminator screens a track, survivors are identified.

Verdict file: JSON lines, one object per track, sorted by ``track_id``,
keys sorted::

    {"distance_to_best": 0.08, "distances": {"singer01": 0.08, ...},
     "error": null, "predicted_singer": "singer01", "stage1_label": "authentic",
     "stage1_score": 0.03, "track_id": "audio/singer01/real_03.wav",
     "windows_used": 5}
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

from .audio import TARGET_RATE_HZ, ensure_rate, load_wav
from .errors import ConfigError, VocalprintError
from .identity import Embedding, ProfileDB, TrackVerdict, extract_windows, rank_profiles
from .manifest import Manifest, ManifestRow
from .models.architectures import Discriminator, Embedder, load_discriminator, load_embedder, window_features

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    discriminator_path: str | None = None
    embedder_path: str | None = None
    db_path: str | None = None
    tau: float = 0.5
    n_windows: int = 5
    window_s: float = 10.0
    # "probability" averages window P(deepfake); "logit" averages logits, then squashes
    average: str = "probability"
    output_path: str | None = None
    threads: int = 1

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must be in [0, 1], got {self.tau}")
        if self.average not in ("probability", "logit"):
            raise ConfigError("average must be 'probability' or 'logit'")
        if self.n_windows < 1 or self.window_s <= 0:
            raise ConfigError("need n_windows >= 1 and window_s > 0")


def stage1_score(probs: np.ndarray, average: str = "probability") -> float:
    if average == "logit":
        return float(expit(np.mean(logit(np.clip(probs, 1e-12, 1 - 1e-12)))))
    return float(np.mean(probs))


class TwoStagePipeline:
    def __init__(self, discriminator: Discriminator | None, embedder: Embedder | None, db: ProfileDB | None,
                 cfg: PipelineConfig = PipelineConfig()):
        self.discriminator, self.embedder, self.db, self.cfg = discriminator, embedder, db, cfg

    @classmethod
    def from_config(cls, cfg: PipelineConfig) -> "TwoStagePipeline":
        for name in ("discriminator_path", "embedder_path", "db_path"):
            path = getattr(cfg, name)
            if path is None or not Path(path).exists():
                raise ConfigError(f"{name} does not point to an existing file: {path}")
        return cls(load_discriminator(cfg.discriminator_path), load_embedder(cfg.embedder_path),
                   ProfileDB.load(cfg.db_path), cfg)

    def features(self, path) -> np.ndarray:
        clip = ensure_rate(load_wav(path), TARGET_RATE_HZ)
        return window_features(extract_windows(clip, self.cfg.n_windows, self.cfg.window_s))

    def process(self, track_id: str, path) -> TrackVerdict:
        """Verdict for one track; failures are recorded on the verdict."""
        verdict = TrackVerdict(track_id)
        try:
            feats = self.features(path)
            verdict.windows_used = len(feats)
            if self.discriminator is not None:
                probs = self.discriminator.predict(feats)
                verdict.stage1_score = stage1_score(probs, self.cfg.average)
                is_fake = verdict.stage1_score >= self.cfg.tau
                verdict.stage1_label = "deepfake" if is_fake else "authentic"
                if is_fake:
                    return verdict
            if self.embedder is not None and self.db is not None:
                e = Embedding(self.embedder.embed(feats).mean(axis=0), track_id, self.embedder.fingerprint)
                ranking = rank_profiles(e, self.db)
                verdict.distances = dict(ranking)
                verdict.predicted_singer, verdict.distance_to_best = ranking[0]
        except (VocalprintError, OSError) as exc:
            log.warning("%s: %s", track_id, exc)
            verdict.error = f"{type(exc).__name__}: {exc}"
        return verdict

    def run(self, items: list[tuple[str, Path]]) -> list[TrackVerdict]:
        if self.cfg.threads > 1:
            with ThreadPoolExecutor(self.cfg.threads) as pool:
                verdicts = list(pool.map(lambda it: self.process(*it), items))
        else:
            verdicts = [self.process(*it) for it in items]
        return sorted(verdicts, key=lambda v: v.track_id)


def manifest_items(manifest: Manifest, split: str | None = "test") -> list[tuple[str, Path]]:
    rows = manifest.select(split=split)
    if not rows:
        raise ConfigError(f"manifest has no rows in split {split!r}")
    return [(r.track_id, manifest.resolve(r)) for r in rows]


def run_pipeline(manifest: Manifest, cfg: PipelineConfig, split: str | None = "test",
                 pipeline: TwoStagePipeline | None = None) -> list[TrackVerdict]:
    """D then S over a manifest split; writes verdicts when ``cfg.output_path`` is set."""
    pipeline = pipeline or TwoStagePipeline.from_config(cfg)
    if pipeline.cfg is not cfg:
        pipeline = TwoStagePipeline(pipeline.discriminator, pipeline.embedder, pipeline.db, cfg)
    verdicts = pipeline.run(manifest_items(manifest, split))
    if cfg.output_path:
        write_verdicts(verdicts, cfg.output_path)
    return verdicts


def apply_threshold(verdicts: list[TrackVerdict], tau: float) -> list[TrackVerdict]:
    """Re-screen pass-all verdicts at ``tau``: flagged tracks lose their stage-2 result."""
    if not 0.0 <= tau <= 1.0:
        raise ConfigError(f"tau must be in [0, 1], got {tau}")
    out = []
    for v in verdicts:
        if v.stage1_score is None or v.error:
            out.append(v)
        elif v.stage1_score >= tau:
            out.append(replace(v, stage1_label="deepfake", predicted_singer=None, distance_to_best=None,
                               distances={}))
        else:
            out.append(replace(v, stage1_label="authentic"))
    return out


def verdicts_to_text(verdicts: list[TrackVerdict]) -> str:
    return "".join(json.dumps(v.to_dict(), sort_keys=True) + "\n" for v in sorted(verdicts, key=lambda v: v.track_id))


def write_verdicts(verdicts: list[TrackVerdict], path) -> None:
    Path(path).write_text(verdicts_to_text(verdicts))


def read_verdicts(path) -> list[TrackVerdict]:
    return [TrackVerdict.from_dict(json.loads(line)) for line in Path(path).read_text().splitlines() if line.strip()]


def truth_table(manifest: Manifest) -> dict[str, ManifestRow]:
    return manifest.by_track()
