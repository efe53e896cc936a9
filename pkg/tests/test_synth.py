import numpy as np
import pytest
from scipy.signal import welch

from conftest import TINY
from vocalprint.audio import load_wav
from vocalprint.errors import ConfigError
from vocalprint.manifest import Manifest
from vocalprint.synth import SynthCorpusSpec, generate_synth_corpus


def spectral_profile(path):
    """Mean-removed log Welch spectrum between 80 Hz and 5 kHz."""
    f, p = welch(load_wav(path).samples, 16000, nperseg=1024)
    v = np.log(p[(f > 80) & (f < 5000)] + 1e-12)
    return v - v.mean()


@pytest.fixture(scope="module")
def eight_singers(tmp_path_factory):
    spec = SynthCorpusSpec(n_singers=8, tracks_per_singer=8, hq_fakes_per_singer=3, lq_fakes_per_singer=3,
                           duration_s=4.0, n_background=0, seed=11)
    return generate_synth_corpus(spec, tmp_path_factory.mktemp("eight"))


@pytest.fixture(scope="module")
def nearest_centroid(eight_singers):
    m = eight_singers
    profiles = {r.path: spectral_profile(m.resolve(r)) for r in m.rows}
    train = [r for r in m.rows if not r.is_fake and r.split == "train"]
    cents = {s: np.mean([profiles[r.path] for r in train if r.singer_id == s], axis=0)
             for s in sorted({r.singer_id for r in train})}

    def accuracy(rows):
        hits = [min(cents, key=lambda s: np.linalg.norm(profiles[r.path] - cents[s])) == r.singer_id for r in rows]
        return float(np.mean(hits))

    return accuracy


def test_authentic_singers_are_separable_by_spectrum(eight_singers, nearest_centroid):
    held_out = [r for r in eight_singers.rows if not r.is_fake and r.split != "train"]
    assert nearest_centroid(held_out) > 0.95


def test_fake_tiers_differ_in_identifiability(eight_singers, nearest_centroid):
    hq = nearest_centroid([r for r in eight_singers.rows if r.algorithm == "HQ"])
    lq = nearest_centroid([r for r in eight_singers.rows if r.algorithm == "LQ"])
    assert hq > 0.9 and lq < 0.4


def test_manifest_counts_and_splits(tiny_corpus):
    manifest, root = tiny_corpus
    rows = manifest.rows
    assert sum(not r.is_fake for r in rows) == TINY["n_singers"] * TINY["tracks_per_singer"]
    assert sum(r.algorithm == "HQ" for r in rows) == TINY["n_singers"] * TINY["hq_fakes_per_singer"]
    assert sum(r.algorithm == "LQ" for r in rows) == TINY["n_singers"] * TINY["lq_fakes_per_singer"]
    for tier in ("", "HQ", "LQ"):
        assert {r.split for r in rows if r.algorithm == tier} == {"train", "val", "test"}
    back = Manifest.read(root / "manifest.tsv")
    assert back.rows == rows


def test_same_seed_same_bytes(tiny_corpus, tmp_path):
    manifest, root = tiny_corpus
    again = generate_synth_corpus(SynthCorpusSpec(**TINY), tmp_path)
    for r in again.rows:
        assert (tmp_path / r.path).read_bytes() == (root / r.path).read_bytes()
    assert (tmp_path / "manifest.tsv").read_bytes() == (root / "manifest.tsv").read_bytes()


def test_different_seed_different_audio(tiny_corpus, tmp_path):
    manifest, root = tiny_corpus
    other = generate_synth_corpus(SynthCorpusSpec(**{**TINY, "seed": 6, "n_background": 0}), tmp_path)
    path = other.rows[0].path
    assert (tmp_path / path).read_bytes() != (root / path).read_bytes()


def test_invalid_specs():
    with pytest.raises(ConfigError):
        SynthCorpusSpec(n_singers=1)
    with pytest.raises(ConfigError):
        SynthCorpusSpec(hq_formant_shift=0.5, lq_scramble=0.5)
    with pytest.raises(ConfigError):
        SynthCorpusSpec(hq_tone_db=0.0)


def test_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        generate_synth_corpus(SynthCorpusSpec(**TINY), blocker / "sub")
