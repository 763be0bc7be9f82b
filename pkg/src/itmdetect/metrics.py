"""Detection metrics: accuracy at a fixed threshold, average precision, PR curve.

Average precision is the mean of precision taken at each positive's rank in
the score-descending ordering; ties are broken deterministically by id
(ascending) so repeated runs and independent reimplementations agree to the
last bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .classifier import FAKE
from .errors import EmptyInput, NoPositives

ACC_THRESHOLD = 0.5


@dataclass(frozen=True)
class ScoredSample:
    id: str
    score: float  # prob_fake
    label: int  # 0 real, 1 fake

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError(f"score for {self.id!r} is not finite")


@dataclass(frozen=True)
class MetricsReport:
    acc: float
    ap: float
    n_real: int
    n_fake: int
    pr_points: list[tuple[float, float]]  # (recall, precision)


def accuracy(samples: list[ScoredSample], threshold: float = ACC_THRESHOLD) -> float:
    """Fraction of samples where (score >= threshold) matches the label.

    A score exactly at the threshold predicts fake.
    """
    if not samples:
        raise EmptyInput("no scored samples")
    correct = sum(1 for s in samples if (s.score >= threshold) == (s.label == FAKE))
    return correct / len(samples)


def _ranked(samples: list[ScoredSample]) -> list[ScoredSample]:
    return sorted(samples, key=lambda s: (-s.score, s.id))


def average_precision(samples: list[ScoredSample]) -> float:
    """Mean precision at the rank of each fake sample."""
    if not samples:
        raise EmptyInput("no scored samples")
    n_pos = sum(1 for s in samples if s.label == FAKE)
    if n_pos == 0:
        raise NoPositives("average precision needs at least one fake sample")
    total = 0.0
    tp = 0
    for rank, s in enumerate(_ranked(samples), start=1):
        if s.label == FAKE:
            tp += 1
            total += tp / rank
    return total / n_pos


def pr_curve(samples: list[ScoredSample]) -> list[tuple[float, float]]:
    """One (recall, precision) point per distinct score threshold, recall non-decreasing."""
    if not samples:
        raise EmptyInput("no scored samples")
    n_pos = sum(1 for s in samples if s.label == FAKE)
    if n_pos == 0:
        raise NoPositives("PR curve needs at least one fake sample")
    ranked = _ranked(samples)
    points = []
    tp = 0
    for i, s in enumerate(ranked):
        if s.label == FAKE:
            tp += 1
        last_of_threshold = i + 1 == len(ranked) or ranked[i + 1].score != s.score
        if last_of_threshold:
            points.append((tp / n_pos, tp / (i + 1)))
    return points


def report(samples: list[ScoredSample]) -> MetricsReport:
    return MetricsReport(
        acc=accuracy(samples),
        ap=average_precision(samples),
        n_real=sum(1 for s in samples if s.label != FAKE),
        n_fake=sum(1 for s in samples if s.label == FAKE),
        pr_points=pr_curve(samples),
    )
