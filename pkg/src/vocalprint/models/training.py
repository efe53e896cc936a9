"""Training loop for the discriminator (D) and the singer embedder (S).

Training log schema (text, tab-separated)::

    # vocalprint training log kind=<D|S> seed=<int>
    epoch  step  lr  train_loss  val_metric  val_loss
    1      7     9.97e-05  0.6931  0.5  0.69
    ...

``step`` counts optimizer updates so far; ``lr`` is the rate used by the
epoch's last update; ``val_metric`` is balanced window accuracy for D and
top-1 window accuracy for S; ``val_loss`` is the mean validation loss.

An epoch counts as an improvement when it raises ``val_metric``, or matches
the best metric with a lower ``val_loss`` (so a saturated metric still lets
training settle on better-calibrated weights).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Iterator

import numpy as np

from ..audio import AudioClip, MelConfig, StftConfig, ensure_rate, load_wav, log_mel
from ..errors import CannotBalanceError, ConfigError, EmptyResultError, InvalidArgumentError, InvalidTaskError
from ..identity import extract_windows
from ..manifest import Manifest, ManifestRow
from ..nn import AdamW, Network
from ..nn.archive import encode_archive, fingerprint
from ..nn.functional import bce_with_logits, cross_entropy
from ..nn.tensor import as_tensor
from ..vad import VadConfig, remove_nonvocal
from .architectures import ModelConfig, build_lcnn, build_tdnn
from .augment import AugmentAssets, augment, fit_length

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "step", "lr", "train_loss", "val_metric", "val_loss")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    lr_start: float = 1e-4
    lr_end: float = 1e-7
    # None selects the per-model default: 1e-4 for D, 1e-5 for S
    weight_decay: float | None = None
    early_stop_patience: int = 10
    max_epochs: int = 30
    augment_prob: float = 0.35
    pitch_shift_semitones: float = 2.0
    snr_db_low: float = 5.0
    snr_db_high: float = 20.0
    window_s: float = 10.0
    windows_per_track: int = 4
    val_windows: int = 5
    trim_nonvocal_for_s: bool = True
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if not 0 < self.lr_end < self.lr_start:
            raise ConfigError("need 0 < lr_end < lr_start")
        if not 0.0 <= self.augment_prob <= 1.0:
            raise ConfigError("augment_prob must be in [0, 1]")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.weight_decay is not None and self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.early_stop_patience < 1 or self.max_epochs < 1:
            raise ConfigError("early_stop_patience and max_epochs must be >= 1")

    def decay_for(self, kind: str) -> float:
        if self.weight_decay is not None:
            return self.weight_decay
        return 1e-4 if kind == "D" else 1e-5

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                continue
            default = known[key].default
            if isinstance(default, bool):
                kwargs[key] = str(raw).lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int) and not isinstance(default, bool):
                kwargs[key] = int(raw)
            else:
                kwargs[key] = None if str(raw).lower() == "none" else float(raw)
        return cls(**kwargs)


def cosine_lr(step: int, total_steps: int, cfg: TrainConfig = TrainConfig()) -> float:
    """lr_end + (lr_start - lr_end) * (1 + cos(pi * step / total)) / 2."""
    if total_steps <= 0:
        raise InvalidArgumentError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise InvalidArgumentError(f"step {step} outside [0, {total_steps}]")
    return cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + math.cos(math.pi * step / total_steps))


def oversample_balanced(
    labels, rng: np.random.Generator, batch_size: int = 64, n_batches: int | None = None
) -> Iterator[np.ndarray]:
    """Yield index batches holding exactly batch_size/2 examples of each class.

    The larger class is walked through reshuffled permutations; the smaller
    one is drawn uniformly with replacement. With equal class sizes both are
    walked as permutations.
    """
    labels = np.asarray(labels).astype(bool)
    if batch_size % 2:
        raise InvalidArgumentError("balanced batches need an even batch_size")
    pos, neg = np.flatnonzero(labels), np.flatnonzero(~labels)
    if len(pos) == 0 or len(neg) == 0:
        raise CannotBalanceError(f"need both classes, got {len(neg)} negatives and {len(pos)} positives")
    half = batch_size // 2

    def cycle(pool):
        while True:
            yield from rng.permutation(pool)

    def draw(pool, minority, stream):
        if minority:
            return rng.choice(pool, size=half, replace=True)
        return np.fromiter((next(stream) for _ in range(half)), dtype=np.int64, count=half)

    pos_min = len(pos) < len(neg)
    neg_min = len(neg) < len(pos)
    pos_stream, neg_stream = cycle(pos), cycle(neg)
    made = 0
    while n_batches is None or made < n_batches:
        batch = np.concatenate([draw(neg, neg_min, neg_stream), draw(pos, pos_min, pos_stream)])
        yield batch
        made += 1


@dataclass
class _Track:
    row: ManifestRow
    label: int
    samples: np.ndarray
    feats: np.ndarray  # full-track log-mel, float32


@dataclass
class TrainResult:
    network: Network
    archive: bytes
    log_text: str
    best_epoch: int
    best_metric: float
    history: list = field(default_factory=list)
    classes: list = field(default_factory=list)

    @property
    def fingerprint(self) -> int:
        return fingerprint(self.archive)


def balanced_accuracy(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = np.asarray(pred, bool), np.asarray(truth, bool)
    tpr = np.mean(pred[truth]) if truth.any() else np.nan
    tnr = np.mean(~pred[~truth]) if (~truth).any() else np.nan
    return float(np.nanmean([tpr, tnr]))


class Trainer:
    def __init__(self, kind: str, manifest: Manifest, cfg: TrainConfig = TrainConfig(),
                 model_cfg: ModelConfig = ModelConfig(), assets: AugmentAssets | None = None,
                 stft_cfg: StftConfig = StftConfig(), mel_cfg: MelConfig = MelConfig(),
                 vad_cfg: VadConfig = VadConfig()):
        if kind not in ("D", "S"):
            raise InvalidArgumentError(f"model kind must be 'D' or 'S', got {kind!r}")
        self.kind, self.cfg, self.model_cfg = kind, cfg, model_cfg
        self.manifest = manifest
        self.assets = assets
        self.stft_cfg, self.mel_cfg, self.vad_cfg = stft_cfg, mel_cfg, vad_cfg
        self.rate = 16000
        self.window_samples = int(round(cfg.window_s * self.rate))
        self.window_frames = stft_cfg.n_frames(self.window_samples)

        train_rows, val_rows = self._task_rows()
        if self.kind == "S":
            self.classes = sorted({r.singer_id for r in train_rows})
            if len(self.classes) < 2:
                raise InvalidTaskError(f"singer identification needs >= 2 singers, got {len(self.classes)}")
            unknown = {r.singer_id for r in val_rows} - set(self.classes)
            if unknown:
                raise InvalidTaskError(f"validation singers absent from training: {sorted(unknown)}")
        else:
            self.classes = ["authentic", "deepfake"]
        self.train_tracks = self._load(train_rows)
        self.val_tracks = self._load(val_rows)

    # -- data

    def _task_rows(self):
        rows = self.manifest.rows
        if self.kind == "S":
            # S only ever sees authentic material
            rows = [r for r in rows if not r.is_fake]
        train = [r for r in rows if r.split == "train"]
        val = [r for r in rows if r.split == "val"]
        if not train:
            raise ConfigError("manifest has no training rows for this task")
        if not val:
            raise ConfigError("manifest has no validation rows; early stopping needs a 'val' split")
        return train, val

    def _label(self, row: ManifestRow) -> int:
        if self.kind == "D":
            return int(row.is_fake)
        return self.classes.index(row.singer_id)

    def _prepare(self, row: ManifestRow) -> _Track:
        clip = ensure_rate(load_wav(self.manifest.resolve(row)))
        if self.kind == "S" and self.cfg.trim_nonvocal_for_s:
            try:
                clip = remove_nonvocal(clip, self.vad_cfg).clip
            except EmptyResultError:
                log.warning("%s: VAD found no activity; training on the untrimmed track", row.path)
        samples = clip.samples
        if len(samples) < self.window_samples:
            samples = fit_length(samples, self.window_samples)
        feats = log_mel(AudioClip(samples, self.rate), self.stft_cfg, self.mel_cfg).frames.astype(np.float32)
        return _Track(row, self._label(row), samples, feats)

    def _load(self, rows) -> list[_Track]:
        return self._map(self._prepare, rows)

    def _map(self, fn, items):
        if self.cfg.threads > 1:
            with ThreadPoolExecutor(self.cfg.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(i) for i in items]

    def example_features(self, track: _Track, offset_frames: int, aug_seed: int | None) -> np.ndarray:
        """Log-mel window starting at ``offset_frames``; augmented when a seed is given."""
        if aug_seed is None:
            return track.feats[offset_frames : offset_frames + self.window_frames]
        rng = np.random.default_rng(aug_seed)
        hop = self.stft_cfg.hop_length
        # extra source material so an upward pitch shift still fills the window
        source = fit_length(track.samples, int(self.window_samples * 1.2), offset_frames * hop)
        cfg = self.cfg
        out, _ = augment(source, rng, self.assets, prob=1.0, max_semitones=cfg.pitch_shift_semitones,
                         snr_db=(cfg.snr_db_low, cfg.snr_db_high))
        out = fit_length(out, self.window_samples)
        return log_mel(AudioClip(out, self.rate), self.stft_cfg, self.mel_cfg).frames.astype(np.float32)

    def _val_set(self):
        feats, labels = [], []
        for track in self.val_tracks:
            clip = AudioClip(track.samples, self.rate)
            for w in extract_windows(clip, self.cfg.val_windows, self.cfg.window_s):
                feats.append(log_mel(w, self.stft_cfg, self.mel_cfg).frames.astype(np.float32))
                labels.append(track.label)
        return np.stack(feats), np.asarray(labels)

    # -- model

    def build(self) -> Network:
        if self.kind == "D":
            return build_lcnn(self.model_cfg, seed=self.cfg.seed)
        return build_tdnn(len(self.classes), self.model_cfg, seed=self.cfg.seed)

    def _logits(self, net: Network, x: np.ndarray):
        if self.kind == "D":
            return net.forward(x[:, None, :, :], until="out")
        return net.forward(x.transpose(0, 2, 1), until="classifier")

    def _loss(self, logits, labels):
        if self.kind == "D":
            return bce_with_logits(logits, labels.astype(np.float32))
        return cross_entropy(logits, labels)

    def evaluate(self, net: Network, feats: np.ndarray, labels: np.ndarray, batch: int = 32) -> tuple[float, float]:
        """(validation metric, mean validation loss) in inference mode."""
        net.eval()
        outs = [self._logits(net, feats[i : i + batch]).data for i in range(0, len(feats), batch)]
        net.train()
        logits = np.concatenate(outs)
        loss = float(self._loss(as_tensor(logits), labels).data)
        if self.kind == "D":
            return balanced_accuracy(logits[:, 0] >= 0.0, labels.astype(bool)), loss
        return float(np.mean(np.argmax(logits, axis=1) == labels)), loss

    def _batches(self, rng, steps: int):
        labels = np.array([t.label for t in self.train_tracks])
        if self.kind == "D":
            yield from oversample_balanced(labels, rng, self.cfg.batch_size, steps)
            return
        pool = np.repeat(np.arange(len(labels)), self.cfg.windows_per_track)
        order = rng.permutation(pool)
        for i in range(steps):
            batch = order[i * self.cfg.batch_size : (i + 1) * self.cfg.batch_size]
            if len(batch) >= 2:
                yield batch

    def run(self) -> TrainResult:
        cfg = self.cfg
        data_seed, _ = np.random.SeedSequence(cfg.seed).spawn(2)
        rng = np.random.default_rng(data_seed)
        net = self.build().train()
        opt = AdamW(net.parameters(), lr=cfg.lr_start, weight_decay=cfg.decay_for(self.kind))
        val_x, val_y = self._val_set()

        per_epoch = max(1, math.ceil(len(self.train_tracks) * cfg.windows_per_track / cfg.batch_size))
        total = cfg.max_epochs * per_epoch
        lines = [f"# vocalprint training log kind={self.kind} seed={cfg.seed}", "\t".join(LOG_COLUMNS)]
        history = []
        best_metric, best_loss, best_epoch, best_state, stale = -np.inf, np.inf, 0, None, 0
        step = 0
        lr = cfg.lr_start
        for epoch in range(1, cfg.max_epochs + 1):
            losses = []
            for idx in self._batches(rng, per_epoch):
                jobs = []
                for i in idx:
                    track = self.train_tracks[i]
                    n_off = track.feats.shape[0] - self.window_frames + 1
                    offset = int(rng.integers(0, n_off))
                    aug_seed = int(rng.integers(2**63)) if rng.random() < cfg.augment_prob else None
                    jobs.append((track, offset, aug_seed))
                x = np.stack(self._map(lambda job: self.example_features(*job), jobs))
                y = np.array([t.label for t, _, _ in jobs])
                lr = cosine_lr(step, total, cfg)
                opt.zero_grad()
                loss = self._loss(self._logits(net, x), y)
                loss.backward()
                opt.step(lr)
                step += 1
                losses.append(float(loss.data))
            metric, val_loss = self.evaluate(net, val_x, val_y)
            record = {"epoch": epoch, "step": step, "lr": lr,
                      "train_loss": float(np.mean(losses)), "val_metric": metric, "val_loss": val_loss}
            history.append(record)
            lines.append("\t".join(repr(record[c]) for c in LOG_COLUMNS))
            log.info("%s epoch %d loss %.4f val %.4f", self.kind, epoch, record["train_loss"], metric)
            if (metric, -val_loss) > (best_metric, -best_loss):
                best_metric, best_loss, best_epoch, stale = metric, val_loss, epoch, 0
                best_state = {k: v.copy() for k, v in net.state_dict().items()}
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    break

        net.load_state_dict(best_state)
        net.eval()
        archive = encode_archive(net.state_dict())
        net.fingerprint = fingerprint(archive)
        lines.append(f"# best_epoch={best_epoch} best_val_metric={best_metric!r}")
        return TrainResult(net, archive, "\n".join(lines) + "\n", best_epoch, best_metric, history, self.classes)


def train(kind: str, manifest: Manifest, cfg: TrainConfig = TrainConfig(), model_cfg: ModelConfig = ModelConfig(),
          assets: AugmentAssets | None = None) -> TrainResult:
    """Train D (authentic vs deepfake, BCE) or S (singer classes, cross-entropy)."""
    return Trainer(kind, manifest, cfg, model_cfg, assets).run()
