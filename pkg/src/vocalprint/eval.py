"""Verification-style metrics: ROC, AUC, EER, confusion matrices, reports.

Scores follow "higher means more likely target" throughout. For singer
trials the score is the negated cosine distance; for the discriminator the
score is P(deepfake) and the positive class is "deepfake".

Trials file (tab-separated, header row)::

    score  label  dataset  algorithm  track_id  singer_id

``label`` is ``target`` or ``nontarget``; ``algorithm`` is a generator tag
or ``REAL``. Scores are written with ``repr`` so they read back exactly.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateTrialsError, MissingEmbeddingError
from .manifest import REAL_TAG

TRIAL_COLUMNS = ("score", "label", "dataset", "algorithm", "track_id", "singer_id")


@dataclass(frozen=True)
class ScoredTrial:
    score: float
    target: bool
    dataset: str = ""
    algorithm: str = REAL_TAG
    track_id: str = ""
    singer_id: str = ""


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray  # decreasing; first entry is +inf
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    eer: float
    eer_threshold: float

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))


@dataclass(frozen=True)
class ConfusionMatrix2x2:
    tp: int
    fp: int
    tn: int
    fn: int

    @staticmethod
    def _rate(num, den):
        return num / den if den else None

    @property
    def fpr(self):
        return self._rate(self.fp, self.fp + self.tn)

    @property
    def fnr(self):
        return self._rate(self.fn, self.fn + self.tp)

    @property
    def tpr(self):
        return self._rate(self.tp, self.tp + self.fn)

    @property
    def tnr(self):
        return self._rate(self.tn, self.tn + self.fp)

    @property
    def balanced_accuracy(self):
        rates = [r for r in (self.tpr, self.tnr) if r is not None]
        return sum(rates) / len(rates) if rates else None

    def to_dict(self) -> dict:
        return {**asdict(self), "fpr": self.fpr, "fnr": self.fnr, "balanced_accuracy": self.balanced_accuracy}


def _arrays(trials):
    if isinstance(trials, tuple) and len(trials) == 2:
        scores, labels = trials
        return np.asarray(scores, dtype=np.float64), np.asarray(labels, dtype=bool)
    trials = list(trials)
    scores = np.fromiter((t.score for t in trials), dtype=np.float64, count=len(trials))
    labels = np.fromiter((t.target for t in trials), dtype=bool, count=len(trials))
    return scores, labels


def roc(trials) -> RocCurve:
    """ROC from every distinct score as a threshold (score >= t is positive).

    ``trials`` is a sequence of ScoredTrial or a (scores, labels) pair.
    """
    scores, labels = _arrays(trials)
    if not np.all(np.isfinite(scores)):
        raise DegenerateTrialsError("scores must be finite")
    n_pos, n_neg = int(labels.sum()), int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateTrialsError(f"need both classes, got {n_pos} targets and {n_neg} nontargets")

    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    # last index of every run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.r_[0, np.cumsum(y)[ends]]
    fp = np.r_[0, np.cumsum(~y)[ends]]
    thresholds = np.r_[np.inf, s[ends]]

    # trapezoid in integer counts: equals #(target > nontarget) + #ties / 2
    numerator = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    auc = numerator / (2 * n_pos * n_neg)

    fpr, tpr = fp / n_neg, tp / n_pos
    eer, eer_thr = _eer_from_points(fpr, 1.0 - tpr, thresholds)
    return RocCurve(thresholds, fpr, tpr, auc, eer, eer_thr)


def _eer_from_points(fpr, fnr, thresholds):
    diff = fpr - fnr  # -1 at the first point, +1 at the last, nondecreasing
    i = int(np.argmax(diff >= 0))
    if diff[i] == 0 or i == 0:
        return float(fpr[i]), float(thresholds[i])
    t = -diff[i - 1] / (diff[i] - diff[i - 1])
    eer = fpr[i - 1] + t * (fpr[i] - fpr[i - 1])
    return float(eer), float(thresholds[i])


def eer(trials) -> tuple[float, float]:
    """(EER, threshold) where the interpolated FPR and FNR curves cross."""
    curve = roc(trials)
    return curve.eer, curve.eer_threshold


def auc(trials) -> float:
    return roc(trials).auc


def confusion_at(trials, threshold: float) -> ConfusionMatrix2x2:
    """Counts with ``score >= threshold`` predicted positive (target)."""
    scores, labels = _arrays(trials)
    pred = scores >= threshold
    return ConfusionMatrix2x2(
        tp=int(np.sum(pred & labels)),
        fp=int(np.sum(pred & ~labels)),
        tn=int(np.sum(~pred & ~labels)),
        fn=int(np.sum(~pred & labels)),
    )


def identification_trials(verdicts, db, truth: dict, dataset: str = "") -> list[ScoredTrial]:
    """All-pairs trials: every stage-2 track against every enrolled profile.

    ``truth`` maps track_id to a manifest row (or any object with
    ``singer_id`` and ``tag``). Tracks rejected at stage 1 are skipped; a
    track that should have reached stage 2 but has no distances raises.
    """
    singers = db.singer_ids() if hasattr(db, "singer_ids") else sorted(db)
    trials = []
    for v in sorted(verdicts, key=lambda v: v.track_id):
        if v.stage1_label == "deepfake":
            continue
        if not v.distances:
            raise MissingEmbeddingError(f"{v.track_id}: no embedding distances ({v.error or 'not embedded'})")
        row = truth[v.track_id]
        for sid in singers:
            if sid not in v.distances:
                raise MissingEmbeddingError(f"{v.track_id}: no distance to profile {sid!r}")
            trials.append(ScoredTrial(-float(v.distances[sid]), row.singer_id == sid, dataset,
                                      row.tag, v.track_id, sid))
    return trials


def _metrics(trials) -> dict:
    trials = list(trials)
    n_t = sum(t.target for t in trials)
    out = {"n_trials": len(trials), "n_target": n_t, "n_nontarget": len(trials) - n_t}
    try:
        curve = roc(trials)
    except DegenerateTrialsError as exc:
        return {**out, "eer": None, "auc": None, "computable": False, "note": str(exc)}
    return {**out, "eer": curve.eer, "auc": curve.auc, "computable": True, "note": ""}


def per_algorithm_report(trials) -> list[dict]:
    """One row per algorithm tag (REAL included), metrics on that tag's trials."""
    groups: dict[str, list] = {}
    for t in trials:
        groups.setdefault(t.algorithm, []).append(t)
    return [{"algorithm": tag, **_metrics(groups[tag])} for tag in sorted(groups)]


def compare_pipelines(trials_s, trials_ds) -> dict:
    """S alone versus D then S, with EER/AUC per condition and the deltas."""
    s, ds = _metrics(trials_s), _metrics(trials_ds)
    if not ds["n_trials"]:
        ds["note"] = "no trials survived stage 1: the discriminator rejected every track"
    report = {"S": s, "D+S": ds, "delta_eer": None, "delta_auc": None}
    if s["computable"] and ds["computable"]:
        report["delta_eer"] = ds["eer"] - s["eer"]
        report["delta_auc"] = ds["auc"] - s["auc"]
    return report


# -- files


def write_trials(trials, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(TRIAL_COLUMNS)
        for t in trials:
            w.writerow([repr(float(t.score)), "target" if t.target else "nontarget",
                        t.dataset, t.algorithm, t.track_id, t.singer_id])


def read_trials(path) -> list[ScoredTrial]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None or tuple(header[:2]) != TRIAL_COLUMNS[:2]:
            raise ConfigError(f"{path}: header must start with 'score\\tlabel'")
        trials = []
        for n, line in enumerate(reader, start=2):
            if not line:
                continue
            line = line + [""] * (len(TRIAL_COLUMNS) - len(line))
            if line[1] not in ("target", "nontarget"):
                raise ConfigError(f"{path}:{n}: label must be target or nontarget")
            try:
                score = float(line[0])
            except ValueError as exc:
                raise ConfigError(f"{path}:{n}: bad score {line[0]!r}") from exc
            trials.append(ScoredTrial(score, line[1] == "target", line[2], line[3] or REAL_TAG, line[4], line[5]))
    return trials


def evaluate_trials(trials) -> dict:
    """Global metrics, per-algorithm rows and plot-ready ROC points."""
    trials = list(trials)
    summary = {"global": _metrics(trials), "per_algorithm": per_algorithm_report(trials)}
    if summary["global"]["computable"]:
        curve = roc(trials)
        summary["global"]["eer_threshold"] = curve.eer_threshold
        summary["roc"] = [[f, t] for f, t in zip(curve.fpr.tolist(), curve.tpr.tolist())]
    return summary


def format_report(rows: list[dict]) -> str:
    """Tab-separated table of (algorithm, n_target, n_nontarget, EER %, AUC)."""
    lines = ["algorithm\tn_target\tn_nontarget\teer_pct\tauc"]
    for r in rows:
        eer_pct = "n/a" if r["eer"] is None else f"{100 * r['eer']:.2f}"
        auc_s = "n/a" if r["auc"] is None else f"{r['auc']:.4f}"
        lines.append(f"{r['algorithm']}\t{r['n_target']}\t{r['n_nontarget']}\t{eer_pct}\t{auc_s}")
    return "\n".join(lines) + "\n"


def write_summary(summary: dict, path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
