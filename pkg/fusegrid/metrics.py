"""
Classifier evaluation: SEN / SPEC / F1 at a threshold, ROC curve and AUC
(Fawcett's threshold sweep with trapezoid integration), plus the two score-level
fusion baselines (naive averaging and the ground-truth upper bound).

A case is predicted abnormal when p >= threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import ValidationError

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class Score:
    case_id: str
    p: float
    z: int


@dataclass
class EvalReport:
    scores: List[Score]
    threshold: float
    tp: int
    fp: int
    tn: int
    fn: int
    sen: float
    spec: float
    f1: float
    auc: Optional[float]
    roc: List[Tuple[float, float]] = field(default_factory=list)
    name: str = ""

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.tn + self.fp

    def to_dict(self, include_scores: bool = False) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "name": self.name,
            "threshold": self.threshold,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "sen": self.sen,
            "spec": self.spec,
            "f1": self.f1,
            "auc": self.auc,
            "n": len(self.scores),
        }
        if include_scores:
            data["scores"] = [{"case_id": s.case_id, "p": s.p, "z": s.z} for s in self.scores]
        return data


def _arrays(scores: Sequence[Score]) -> Tuple[np.ndarray, np.ndarray]:
    p = np.asarray([s.p for s in scores], dtype=np.float64)
    z = np.asarray([s.z for s in scores], dtype=np.int64)
    if np.any((z != 0) & (z != 1)):
        raise ValidationError("labels must be 0 or 1")
    return p, z


def _require_both_classes(z: np.ndarray, op: str) -> None:
    if not (np.any(z == 1) and np.any(z == 0)):
        raise ValidationError(f"{op}: needs at least one positive and one negative case")


def confusion_counts(scores: Sequence[Score], threshold: float = DEFAULT_THRESHOLD) -> Tuple[int, int, int, int]:
    """(tp, fp, tn, fn)"""
    p, z = _arrays(scores)
    predicted = p >= threshold
    tp = int(np.sum(predicted & (z == 1)))
    fp = int(np.sum(predicted & (z == 0)))
    tn = int(np.sum(~predicted & (z == 0)))
    fn = int(np.sum(~predicted & (z == 1)))
    return tp, fp, tn, fn


def metrics_from_counts(tp: int, fp: int, tn: int, fn: int) -> Tuple[float, float, float]:
    """(sen, spec, f1); F1 is 0 when nothing is flagged positive."""
    if tp + fn == 0 or tn + fp == 0:
        raise ValidationError("needs at least one positive and one negative case")
    sen = tp / (tp + fn)
    spec = tn / (tn + fp)
    if tp + fp == 0:
        return sen, spec, 0.0
    precision = tp / (tp + fp)
    f1 = 0.0 if precision + sen == 0 else 2 * precision * sen / (precision + sen)
    return sen, spec, f1


def confusion_metrics(scores: Sequence[Score], threshold: float = DEFAULT_THRESHOLD) -> Tuple[float, float, float]:
    return metrics_from_counts(*confusion_counts(scores, threshold))


def roc_auc(scores: Sequence[Score]) -> Tuple[float, List[Tuple[float, float]]]:
    """
    Sweep every distinct score from high to low; cases with equal scores move
    together. Counts stay integral so the area is exact up to the final division.
    """
    p, z = _arrays(scores)
    _require_both_classes(z, "roc_auc")
    positives = int(z.sum())
    negatives = len(z) - positives

    order = np.argsort(-p, kind="stable")
    p_sorted, z_sorted = p[order], z[order]
    # last index of each tie group
    boundaries = np.flatnonzero(np.diff(p_sorted) != 0)
    ends = np.append(boundaries, len(p_sorted) - 1)
    tps = np.cumsum(z_sorted)[ends]
    fps = (ends + 1) - tps

    tp_prev = fp_prev = 0
    area2 = 0  # twice the area in count units
    points = [(0.0, 0.0)]
    for tp, fp in zip(tps.tolist(), fps.tolist()):
        area2 += (fp - fp_prev) * (tp + tp_prev)
        points.append((fp / negatives, tp / positives))
        tp_prev, fp_prev = tp, fp
    return area2 / (2 * positives * negatives), points


def pairwise_auc(scores: Sequence[Score]) -> float:
    """Brute-force P(p_pos > p_neg) + 0.5 * P(p_pos == p_neg)."""
    p, z = _arrays(scores)
    _require_both_classes(z, "pairwise_auc")
    pos, neg = p[z == 1], p[z == 0]
    greater = int(np.sum(pos[:, None] > neg[None, :]))
    ties = int(np.sum(pos[:, None] == neg[None, :]))
    return (2 * greater + ties) / (2 * len(pos) * len(neg))


def evaluate(scores: Sequence[Score], threshold: float = DEFAULT_THRESHOLD, name: str = "") -> EvalReport:
    scores = list(scores)
    tp, fp, tn, fn = confusion_counts(scores, threshold)
    sen, spec, f1 = metrics_from_counts(tp, fp, tn, fn)
    auc, roc = roc_auc(scores)
    return EvalReport(scores, threshold, tp, fp, tn, fn, sen, spec, f1, auc, roc, name)


def _align(scores_mask: Sequence[Score], scores_image: Sequence[Score]) -> List[Tuple[Score, Score]]:
    by_id = {s.case_id: s for s in scores_image}
    if len(by_id) != len(scores_image) or len({s.case_id for s in scores_mask}) != len(scores_mask):
        raise ValidationError("duplicate case ids in score lists")
    if set(by_id) != {s.case_id for s in scores_mask}:
        raise ValidationError("score lists cover different case ids")
    pairs = []
    for s in scores_mask:
        other = by_id[s.case_id]
        if other.z != s.z:
            raise ValidationError(f"case {s.case_id}: labels disagree ({s.z} vs {other.z})")
        pairs.append((s, other))
    return pairs


def naive_fusion(scores_mask: Sequence[Score], scores_image: Sequence[Score]) -> List[Score]:
    """Per-case mean of the mask-model and image-model probabilities."""
    return [Score(m.case_id, (m.p + i.p) / 2.0, m.z) for m, i in _align(scores_mask, scores_image)]


def _gt_counts(scores_mask: Sequence[Score], scores_image: Sequence[Score], threshold: float) -> Tuple[int, int, int, int]:
    tp = fp = tn = fn = 0
    for m, i in _align(scores_mask, scores_image):
        correct = (int(m.p >= threshold) == m.z) or (int(i.p >= threshold) == i.z)
        if m.z == 1:
            tp, fn = (tp + 1, fn) if correct else (tp, fn + 1)
        else:
            tn, fp = (tn + 1, fp) if correct else (tn, fp + 1)
    return tp, fp, tn, fn


def gt_upper_bound(scores_mask: Sequence[Score], scores_image: Sequence[Score], threshold: float = DEFAULT_THRESHOLD) -> Tuple[float, float, float]:
    """A case counts as correct when either single-branch model gets it right."""
    return metrics_from_counts(*_gt_counts(scores_mask, scores_image, threshold))


def gt_upper_bound_report(scores_mask: Sequence[Score], scores_image: Sequence[Score], threshold: float = DEFAULT_THRESHOLD, name: str = "Mask+Image GT") -> EvalReport:
    # no single score per case exists, so AUC and ROC are undefined
    tp, fp, tn, fn = _gt_counts(scores_mask, scores_image, threshold)
    sen, spec, f1 = metrics_from_counts(tp, fp, tn, fn)
    return EvalReport([], threshold, tp, fp, tn, fn, sen, spec, f1, None, [], name)
