"""Precision, recall and average precision over ranked labels in {-1, 0, +1}.

Label 0 marks an entry that is ignored: it counts neither as a hit nor as a miss.
"""

from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np

from patchbench.errors import MetricsError


@dataclass(frozen=True, eq=False)
class RankedLabels:
    """Labels sorted by decreasing score. `k` overrides the positive count (truncated AP)."""

    y: np.ndarray
    k: int | None = None

    def __post_init__(self) -> None:
        y = np.asarray(self.y)
        if y.ndim != 1 or not np.isin(y, (-1, 0, 1)).all():
            raise MetricsError("labels must be a 1-D sequence over {-1, 0, +1}")
        y = y.astype(np.int8)
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        if self.k is not None and self.k < self.n_positives:
            raise MetricsError(f"K={self.k} is smaller than the {self.n_positives} positives")

    @property
    def n_positives(self) -> int:
        return int(np.count_nonzero(self.y == 1))


def sort_by_score(
    scores: Iterable[float], labels: Iterable[int], k: int | None = None
) -> RankedLabels:
    """Order labels by decreasing score; equal scores keep their input order."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricsError(f"scores and labels differ in shape: {s.shape} vs {y.shape}")
    if not np.all(np.isfinite(s)):
        raise MetricsError("scores must be finite")
    return RankedLabels(y[np.argsort(-s, kind="stable")], k)


def _as_labels(y: RankedLabels | Iterable[int]) -> np.ndarray:
    return y.y if isinstance(y, RankedLabels) else RankedLabels(np.asarray(y)).y


def precision_at(y: RankedLabels | Iterable[int], i: int) -> float:
    """P_i over the first i entries (1-based); 0 when every entry so far is ignored."""
    labels = _as_labels(y)
    if not 1 <= i <= len(labels):
        raise MetricsError(f"rank {i} outside 1..{len(labels)}")
    head = labels[:i]
    judged = int(np.count_nonzero(head))
    return int(np.count_nonzero(head == 1)) / judged if judged else 0.0


def recall_at(y: RankedLabels | Iterable[int], i: int, k: int | None = None) -> float:
    labels = _as_labels(y)
    if not 1 <= i <= len(labels):
        raise MetricsError(f"rank {i} outside 1..{len(labels)}")
    if k is None and isinstance(y, RankedLabels):
        k = y.k
    total = int(np.count_nonzero(labels == 1)) if k is None else k
    if total <= 0:
        raise MetricsError("recall needs at least one positive")
    return int(np.count_nonzero(labels[:i] == 1)) / total


def average_precision(y: RankedLabels | Iterable[int], k: int | None = None) -> float:
    """Sum of P_i at the positive ranks, divided by K (the number of positives by default)."""
    if isinstance(y, RankedLabels):
        labels = y.y
        k = y.k if k is None else k
    else:
        labels = RankedLabels(np.asarray(y)).y
    positives = labels == 1
    n_pos = int(np.count_nonzero(positives))
    if k is None:
        if n_pos == 0:
            raise MetricsError("average precision of a list without positives needs an explicit K")
        k = n_pos
    elif k < n_pos:
        raise MetricsError(f"K={k} is smaller than the {n_pos} positives")
    elif k <= 0:
        raise MetricsError(f"K must be positive, got {k}")

    hits = np.cumsum(positives)
    judged = np.cumsum(labels != 0)
    precision = hits[positives] / judged[positives]
    return float(precision.sum() / k)


def mean_ap(ap_list: Iterable[float]) -> float:
    values = [float(v) for v in ap_list]
    if not values:
        raise MetricsError("mean AP of an empty list")
    return float(np.mean(values))
