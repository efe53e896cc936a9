import numpy as np
import pytest

from vocalprint.audio import AudioClip

SR = 16000


def tone(freq=440.0, seconds=1.0, sr=SR, amp=0.5, phase=0.0):
    t = np.arange(int(round(seconds * sr))) / sr
    return amp * np.sin(2 * np.pi * freq * t + phase)


def clip_of(samples, sr=SR, source_id=""):
    return AudioClip(np.asarray(samples, dtype=np.float64), sr, source_id)


def peak_hz(x, sr=SR):
    spec = np.abs(np.fft.rfft(x * np.hanning(len(x))))
    return np.argmax(spec) * sr / len(x)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY = dict(n_singers=3, tracks_per_singer=5, hq_fakes_per_singer=3, lq_fakes_per_singer=3, duration_s=3.0,
            n_background=1, seed=5)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Three singers, short tracks; every tier has train/val/test rows."""
    from vocalprint.synth import SynthCorpusSpec, generate_synth_corpus

    root = tmp_path_factory.mktemp("tiny")
    return generate_synth_corpus(SynthCorpusSpec(**TINY), root), root


# (number, title, passed, detail) per acceptance criterion, printed after the run
ACCEPTANCE = []


def record_criterion(number, title, passed, detail):
    ACCEPTANCE.append((number, title, bool(passed), detail))
    print(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}: {detail}")
