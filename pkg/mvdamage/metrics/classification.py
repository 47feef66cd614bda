import enum
from typing import List, Sequence, Tuple

import numpy as np

from mvdamage.models import DamageState

from .schema import MetricError


class CoarseState(enum.IntEnum):
    MINOR = 0
    MODERATE = 1
    EXTREME = 2

    @property
    def label(self) -> str:
        return self.name.capitalize()


_COARSE = {
    DamageState.DS_0: CoarseState.MINOR,
    DamageState.DS_1: CoarseState.MINOR,
    DamageState.DS_2: CoarseState.MODERATE,
    DamageState.DS_3: CoarseState.MODERATE,
    DamageState.DS_4: CoarseState.EXTREME,
}


def remap_coarse(fine) -> CoarseState:
    return _COARSE[DamageState(int(fine))]


class ConfusionMatrix:
    """k×k counts; rows are true classes, columns predictions"""

    counts: np.ndarray

    def __init__(self, counts: np.ndarray):
        self.counts = np.asarray(counts, dtype=np.int64)
        assert self.counts.ndim == 2 and self.counts.shape[0] == self.counts.shape[1]

    @property
    def k(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total if self.total else 0.0

    def normalized(self) -> np.ndarray:
        """Row rates; empty rows stay zero"""
        rows = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, rows, out=np.zeros(self.counts.shape), where=rows > 0)

    def per_class_recall(self) -> List[float]:
        return [float(v) for v in np.diag(self.normalized())]

    def to_list(self) -> List[List[int]]:
        return self.counts.tolist()

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)


def confusion_and_accuracy(
    true_labels: Sequence[int],
    predicted_labels: Sequence[int],
    k: int,
) -> Tuple[ConfusionMatrix, float]:
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted_labels = np.asarray(predicted_labels, dtype=np.int64)
    if true_labels.shape != predicted_labels.shape or true_labels.ndim != 1:
        raise MetricError(f"label lists differ: {true_labels.shape} vs {predicted_labels.shape}")
    if true_labels.size == 0:
        raise MetricError("confusion matrix of no samples")
    for labels in (true_labels, predicted_labels):
        if np.any(labels < 0) or np.any(labels >= k):
            raise MetricError(f"label outside 0..{k - 1}: {labels.tolist()}")

    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (true_labels, predicted_labels), 1)
    matrix = ConfusionMatrix(counts)
    return matrix, matrix.accuracy


def coarse_confusion(true_labels: Sequence[int], predicted_labels: Sequence[int]) -> Tuple[ConfusionMatrix, float]:
    return confusion_and_accuracy(
        [remap_coarse(t) for t in true_labels],
        [remap_coarse(p) for p in predicted_labels],
        len(CoarseState),
    )
