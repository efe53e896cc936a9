import logging
import math

import numpy as np
import pytest

from conftest import SR, peak_hz, tone
from vocalprint.errors import CannotBalanceError, ConfigError, InvalidArgumentError, InvalidTaskError
from vocalprint.manifest import Manifest
from vocalprint.models.architectures import ModelConfig, build_lcnn, build_tdnn
from vocalprint.models.augment import AugmentAssets, augment, mix_at_snr, pitch_shift, power
from vocalprint.models.training import TrainConfig, Trainer, cosine_lr, oversample_balanced, train

SMALL = ModelConfig(lcnn_channels=(4, 8, 8, 8), tdnn_channels=8, attention_dim=4, embed_dim=8)
FAST = TrainConfig(batch_size=4, max_epochs=2, window_s=2.0, windows_per_track=1, val_windows=2, augment_prob=0.5)


# -- architectures


def test_lcnn_emits_one_logit_per_window(rng):
    net = build_lcnn(SMALL).eval()
    out = net.forward(rng.standard_normal((3, 1, 198, 80)).astype(np.float32))
    assert out.shape == (3, 1)


def test_tdnn_embedding_and_logits(rng):
    net = build_tdnn(5, SMALL).eval()
    x = rng.standard_normal((2, 80, 198)).astype(np.float32)
    assert net.forward(x, until="embed").shape == (2, 8)
    assert net.forward(x, until="classifier").shape == (2, 5)


# -- schedule


def test_cosine_lr_endpoints_and_midpoint():
    assert cosine_lr(0, 100) == pytest.approx(1e-4)
    assert cosine_lr(100, 100) == pytest.approx(1e-7)
    assert cosine_lr(50, 100) == pytest.approx((1e-4 + 1e-7) / 2)


def test_cosine_lr_is_monotone():
    lrs = [cosine_lr(s, 37) for s in range(38)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_cosine_lr_rejects_zero_total():
    with pytest.raises(InvalidArgumentError):
        cosine_lr(0, 0)
    with pytest.raises(InvalidArgumentError):
        cosine_lr(5, 4)


# -- oversampling


def test_imbalanced_pool_gives_half_and_half(rng):
    labels = np.array([0] * 100 + [1] * 10)
    for batch in oversample_balanced(labels, rng, 64, 20):
        assert len(batch) == 64 and labels[batch].sum() == 32


def test_majority_class_is_walked_without_repeats_within_a_pass(rng):
    labels = np.array([0] * 96 + [1] * 10)
    negs = np.concatenate([b[:32] for b in oversample_balanced(labels, rng, 64, 3)])
    assert len(set(negs.tolist())) == 96


def test_minority_draws_are_uniform(rng):
    labels = np.array([0] * 200 + [1] * 8)
    counts = np.zeros(8)
    for batch in oversample_balanced(labels, rng, 64, 400):
        np.add.at(counts, batch[32:] - 200, 1)
    expected = counts.sum() / 8
    chi2 = np.sum((counts - expected) ** 2 / expected)
    assert chi2 < 24.3  # 99.9th percentile of chi-square with 7 dof


def test_balanced_pool_covers_every_example(rng):
    labels = np.array([0, 1] * 50)
    seen = np.concatenate(list(oversample_balanced(labels, rng, 20, 5)))
    assert set(seen.tolist()) == set(range(100))


def test_empty_class_cannot_be_balanced(rng):
    with pytest.raises(CannotBalanceError):
        next(oversample_balanced(np.zeros(10), rng))


# -- augmentation


def test_zero_probability_is_a_no_op(rng):
    x = rng.standard_normal(SR)
    out, kind = augment(x, rng, prob=0.0)
    assert out is x and kind is None


def test_pitch_shift_up_two_semitones():
    x = tone(440.0, 2.0)
    shifted = pitch_shift(x, 2.0)
    assert abs(peak_hz(shifted) - 440.0 * 2 ** (2 / 12)) <= SR / len(shifted)


def test_mix_at_ten_db(rng):
    voice, bed = tone(300.0, 1.0), rng.standard_normal(SR) * 0.01
    mixed = mix_at_snr(voice, bed, 10.0)
    assert abs(10 * np.log10(power(voice) / power(mixed - voice)) - 10.0) < 0.5


def test_missing_background_falls_back_to_noise(caplog):
    x = tone(300.0, 1.0)
    # find a seed that draws the background transform
    for seed in range(200):
        rng = np.random.default_rng(seed)
        rng.random()
        if rng.integers(4) == 0:
            break
    with caplog.at_level(logging.INFO):
        out, kind = augment(x, np.random.default_rng(seed), AugmentAssets([]), prob=1.0)
    assert kind == "stationary_noise"
    assert "falling back" in caplog.text
    assert not np.array_equal(out, x)


def test_background_mix_uses_the_stem(rng):
    x = tone(300.0, 1.0)
    stem = np.ones(3 * SR)
    for seed in range(200):
        out, kind = augment(x, np.random.default_rng(seed), AugmentAssets([stem]), prob=1.0)
        if kind == "background":
            break
    residual = out - x
    assert np.allclose(residual, residual[0])


# -- configuration


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr_start=1e-7, lr_end=1e-4)
    with pytest.raises(ConfigError):
        TrainConfig(augment_prob=1.5)


def test_config_from_mapping_coerces_types():
    cfg = TrainConfig.from_mapping({"batch_size": "32", "lr_start": "0.001", "trim_nonvocal_for_s": "no",
                                    "weight_decay": "none", "unrelated": "x"})
    assert cfg.batch_size == 32 and cfg.lr_start == 1e-3
    assert cfg.trim_nonvocal_for_s is False and cfg.weight_decay is None
    assert cfg.decay_for("D") == 1e-4 and cfg.decay_for("S") == 1e-5


# -- training


def test_one_singer_is_not_a_task(tiny_corpus):
    manifest, root = tiny_corpus
    rows = [r for r in manifest.rows if r.singer_id == "singer01"]
    with pytest.raises(InvalidTaskError):
        Trainer("S", Manifest(rows, root), FAST, SMALL)


def test_missing_validation_split(tiny_corpus):
    manifest, root = tiny_corpus
    rows = [r for r in manifest.rows if r.split != "val"]
    with pytest.raises(ConfigError):
        Trainer("D", Manifest(rows, root), FAST, SMALL)


def test_unknown_model_kind(tiny_corpus):
    manifest, _ = tiny_corpus
    with pytest.raises(InvalidArgumentError):
        Trainer("X", manifest, FAST, SMALL)


def test_unaugmented_example_is_a_slice_of_the_track(tiny_corpus):
    manifest, _ = tiny_corpus
    trainer = Trainer("D", manifest, FAST, SMALL)
    track = trainer.train_tracks[0]
    window = trainer.example_features(track, 3, None)
    assert window.shape == (trainer.window_frames, 80)
    assert np.array_equal(window, track.feats[3 : 3 + trainer.window_frames])


@pytest.mark.parametrize("kind", ["D", "S"])
def test_training_is_reproducible(tiny_corpus, kind):
    manifest, root = tiny_corpus
    assets = AugmentAssets.from_dir(root / "background")
    a = train(kind, manifest, FAST, SMALL, assets)
    b = train(kind, manifest, FAST, SMALL, assets)
    assert a.archive == b.archive and a.log_text == b.log_text
    lines = a.log_text.splitlines()
    assert lines[0].startswith("# vocalprint training log") and lines[-1].startswith("# best_epoch=")
    assert len(a.history) == 2 and all(math.isfinite(h["train_loss"]) for h in a.history)


def test_threaded_loading_gives_the_same_weights(tiny_corpus):
    manifest, _ = tiny_corpus
    one = train("D", manifest, FAST, SMALL)
    many = train("D", manifest, TrainConfig(**{**FAST.__dict__, "threads": 3}), SMALL)
    assert one.archive == many.archive
