"""Per-frame detection metrics in the classic TP/FP/FN form.

TN is always 0 here: the box regime has no notion of a correct rejection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .matching import FrameMatchResult


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError(f"negative count in {self}")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def as_dict(self) -> dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float


def confusion_detection(frames: Iterable[FrameMatchResult]) -> ConfusionCounts:
    """Sum TP/FP/FN over frame results.

    Each result's ``unmatched_objects`` must already be restricted to the
    labelled objects visible in that frame.
    """
    tp = fp = fn = 0
    for fr in frames:
        tp += len(fr.pairs)
        fp += len(fr.unmatched_predictions)
        fn += len(fr.unmatched_objects)
    return ConfusionCounts(tp, fp, fn, 0)


def precision_recall(counts: ConfusionCounts, zero_division: float = 1.0) -> tuple[float, float]:
    """Precision and recall; an empty denominator yields ``zero_division``."""
    p_den = counts.tp + counts.fp
    r_den = counts.tp + counts.fn
    precision = counts.tp / p_den if p_den else zero_division
    recall = counts.tp / r_den if r_den else zero_division
    return precision, recall


def pr_curve(scores: Sequence[float], is_tp: Sequence[bool], n_positives: int) -> list[PRPoint]:
    """One precision/recall point per distinct confidence, highest first.

    The point for confidence c counts every prediction with score >= c.
    """
    scores = np.asarray(scores, dtype=float)
    hits = np.asarray(is_tp, dtype=bool)
    if scores.size == 0:
        return []
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    cum_tp = np.cumsum(hits[order])
    cum_n = np.arange(1, s.size + 1)
    # last position of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    points = []
    for e in ends:
        tp = int(cum_tp[e])
        recall = tp / n_positives if n_positives else 0.0
        points.append(PRPoint(float(s[e]), tp / int(cum_n[e]), recall))
    return points


def average_precision(
    scores: Sequence[float],
    is_tp: Sequence[bool],
    n_positives: int,
    zero_division: float = 1.0,
) -> float:
    """All-points interpolated AP.

    Precision is replaced by its running maximum from the high-recall end and
    integrated over recall as a step function. With no positives at all the
    result is ``zero_division`` when nothing was predicted and 0 otherwise.
    """
    if n_positives == 0:
        return zero_division if len(scores) == 0 else 0.0
    points = pr_curve(scores, is_tp, n_positives)
    if not points:
        return 0.0
    recall = np.array([0.0] + [p.recall for p in points])
    precision = np.array([0.0] + [p.precision for p in points])
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    return float(np.sum((recall[1:] - recall[:-1]) * envelope[1:]))
