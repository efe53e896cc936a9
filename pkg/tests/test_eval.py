import numpy as np
import pytest

from oracles import enumerate_confusion, pair_count_auc, random_trial_set, root_found_eer
from vocalprint.errors import DegenerateTrialsError, MissingEmbeddingError
from vocalprint.eval import (
    ScoredTrial,
    auc,
    compare_pipelines,
    confusion_at,
    eer,
    evaluate_trials,
    format_report,
    identification_trials,
    per_algorithm_report,
    read_trials,
    roc,
    write_trials,
)
from vocalprint.identity import Embedding, ProfileDB, TrackVerdict
from vocalprint.manifest import ManifestRow


def pairs(targets, nontargets):
    return np.r_[targets, nontargets], np.r_[[True] * len(targets), [False] * len(nontargets)]


# -- curves


def test_perfect_separation():
    curve = roc(pairs([0.9, 0.8], [0.2, 0.1]))
    assert curve.auc == 1.0 and curve.eer == 0.0


def test_constant_scores():
    scores, labels = pairs([0.5] * 3, [0.5] * 5)
    assert auc((scores, labels)) == 0.5
    assert eer((scores, labels))[0] == pytest.approx(0.5)


def test_inverted_scorer():
    assert eer(pairs([0.1, 0.2], [0.8, 0.9]))[0] == pytest.approx(1.0)
    assert auc(pairs([0.1, 0.2], [0.8, 0.9])) == 0.0


def test_roc_is_monotone_from_origin_to_corner(rng):
    scores, labels = random_trial_set(rng)
    c = roc((scores, labels))
    assert c.fpr[0] == 0 and c.tpr[0] == 0 and c.fpr[-1] == 1 and c.tpr[-1] == 1
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)


def test_single_class_is_degenerate():
    with pytest.raises(DegenerateTrialsError):
        roc(pairs([0.3, 0.4], []))
    with pytest.raises(DegenerateTrialsError):
        roc(pairs([np.nan], [0.1]))


def test_scored_trials_and_arrays_agree(rng):
    scores, labels = random_trial_set(rng)
    trials = [ScoredTrial(float(s), bool(y), "d") for s, y in zip(scores, labels)]
    assert roc(trials).auc == roc((scores, labels)).auc


@pytest.mark.parametrize("seed", range(25))
def test_against_oracles(seed):
    scores, labels = random_trial_set(np.random.default_rng(seed))
    curve = roc((scores, labels))
    assert curve.auc == pair_count_auc(scores, labels)
    assert abs(curve.eer - root_found_eer(scores, labels)) < 1e-4


def test_auc_is_invariant_to_monotone_transforms(rng):
    scores, labels = random_trial_set(rng)
    assert auc((scores, labels)) == auc((np.tanh(scores) * 5 + 2, labels))


# -- confusion


def test_confusion_extremes(rng):
    scores, labels = random_trial_set(rng)
    low = confusion_at((scores, labels), scores.min() - 1)
    high = confusion_at((scores, labels), scores.max() + 1)
    assert low.fn == 0 and low.tn == 0
    assert high.tp == 0 and high.fp == 0


def test_six_trial_set_at_one_half():
    scores = [0.9, 0.6, 0.5, 0.4, 0.7, 0.1]
    labels = [True, True, False, True, False, False]
    cm = confusion_at((np.array(scores), np.array(labels)), 0.5)
    # 0.9 T, 0.6 T -> tp; 0.5 F, 0.7 F -> fp; 0.4 T -> fn; 0.1 F -> tn
    assert (cm.tp, cm.fp, cm.tn, cm.fn) == (2, 2, 1, 1)
    assert cm.fpr == pytest.approx(2 / 3) and cm.fnr == pytest.approx(1 / 3)
    assert cm.balanced_accuracy == pytest.approx(0.5)


@pytest.mark.parametrize("seed", range(10))
def test_confusion_matches_enumeration(seed):
    rng = np.random.default_rng(100 + seed)
    scores, labels = random_trial_set(rng)
    thr = float(rng.choice(scores))
    cm = confusion_at((scores, labels), thr)
    assert (cm.tp, cm.fp, cm.tn, cm.fn) == enumerate_confusion(scores, labels, thr)


def test_undefined_rates_are_none():
    cm = confusion_at(pairs([0.9], []), 0.5)
    assert cm.fpr is None and cm.tpr == 1.0


# -- identification trials and reports


def three_tracks():
    db = ProfileDB()
    for i in range(4):
        v = np.zeros(4)
        v[i] = 1
        db.enroll_embeddings(f"s{i}", [Embedding(v)])
    truth, verdicts = {}, []
    for i in range(3):
        truth[f"t{i}"] = ManifestRow(f"t{i}", f"s{i}", "authentic", "", "test", "vocals")
        dist = {f"s{j}": 0.1 if j == i else 0.9 for j in range(4)}
        verdicts.append(TrackVerdict(f"t{i}", 0.1, "authentic", f"s{i}", 0.1, dist, 5))
    return verdicts, db, truth


def test_trial_counts():
    trials = identification_trials(*three_tracks())
    assert len(trials) == 12 and sum(t.target for t in trials) == 3
    assert all(t.score == -0.1 for t in trials if t.target)


def test_flagged_tracks_are_skipped_and_missing_embeddings_raise():
    verdicts, db, truth = three_tracks()
    verdicts[0].stage1_label = "deepfake"
    assert len(identification_trials(verdicts, db, truth)) == 8
    verdicts[1].distances = {}
    with pytest.raises(MissingEmbeddingError):
        identification_trials(verdicts, db, truth)


def test_single_tag_report_equals_global(rng):
    scores, labels = random_trial_set(rng)
    trials = [ScoredTrial(float(s), bool(y), "d", "A01") for s, y in zip(scores, labels)]
    rows = per_algorithm_report(trials)
    assert len(rows) == 1 and rows[0]["eer"] == eer(trials)[0] and rows[0]["auc"] == auc(trials)


def test_one_class_group_is_not_computable():
    trials = [ScoredTrial(0.5, True, "d", "A"), ScoredTrial(0.1, False, "d", "B"), ScoredTrial(0.9, True, "d", "B")]
    rows = {r["algorithm"]: r for r in per_algorithm_report(trials)}
    assert rows["A"]["computable"] is False and rows["A"]["eer"] is None
    assert rows["B"]["computable"] is True
    assert "n/a" in format_report(list(rows.values()))


def test_pass_all_filter_changes_nothing(rng):
    scores, labels = random_trial_set(rng)
    trials = [ScoredTrial(float(s), bool(y), "d") for s, y in zip(scores, labels)]
    report = compare_pipelines(trials, list(trials))
    assert report["S"] == report["D+S"] and report["delta_eer"] == 0.0


def test_empty_filtered_set_is_diagnosed(rng):
    scores, labels = random_trial_set(rng)
    report = compare_pipelines([ScoredTrial(float(s), bool(y), "d") for s, y in zip(scores, labels)], [])
    assert report["delta_eer"] is None and "rejected every track" in report["D+S"]["note"]


def test_trials_file_roundtrip(tmp_path, rng):
    scores, labels = random_trial_set(rng)
    trials = [ScoredTrial(float(s), bool(y), "set", "A0" + str(i % 3), f"t{i}", "s") for i, (s, y) in
              enumerate(zip(scores, labels))]
    write_trials(trials, tmp_path / "t.tsv")
    back = read_trials(tmp_path / "t.tsv")
    assert back == trials
    assert evaluate_trials(back) == evaluate_trials(trials)
