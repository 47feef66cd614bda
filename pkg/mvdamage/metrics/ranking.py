import csv
from pathlib import Path
from typing import List, NamedTuple, Sequence, Tuple, Union

import numpy as np

from .schema import MetricError, PRPointDict

INTERPOLATIONS = ("all-point", "11point")


class PRPoint(NamedTuple):
    confidence: float
    precision: float
    recall: float


class PRCurve(NamedTuple):
    points: List[PRPoint]
    ap: float
    total_gt: int
    interpolation: str = "all-point"

    def to_dicts(self) -> List[PRPointDict]:
        return [PRPointDict(**p._asdict()) for p in self.points]

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="", encoding="utf8") as f:
            writer = csv.writer(f)
            writer.writerow(PRPoint._fields)
            for point in self.points:
                writer.writerow([f"{v:.6f}" for v in point])
        return path


def all_point_ap(precision: np.ndarray, recall: np.ndarray) -> float:
    """Area under the precision envelope, summed over recall increments"""
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def eleven_point_ap(precision: np.ndarray, recall: np.ndarray) -> float:
    total = 0.0
    for t in np.linspace(0.0, 1.0, 11):
        above = precision[recall >= t]
        total += above.max() if above.size else 0.0
    return total / 11.0


def pr_curve_and_ap(
    scored: Sequence[Tuple[float, bool]],
    total_gt: int,
    interpolation: str = "all-point",
) -> PRCurve:
    """scored: (confidence, is_tp) for every prediction of the split.
    Ranked by confidence, ties kept in input order."""
    if total_gt < 1:
        raise MetricError("PR curve needs at least one ground-truth instance")
    if interpolation not in INTERPOLATIONS:
        raise MetricError(f"interpolation must be one of {INTERPOLATIONS}, got {interpolation!r}")
    if not scored:
        return PRCurve([], 0.0, total_gt, interpolation)

    confidences = np.array([c for c, _ in scored], dtype=np.float64)
    flags = np.array([bool(t) for _, t in scored])
    order = np.argsort(-confidences, kind="stable")
    tp = np.cumsum(flags[order])
    fp = np.cumsum(~flags[order])
    if tp[-1] > total_gt:
        raise MetricError(f"{tp[-1]} true positives for {total_gt} ground-truth instances")
    precision = tp / (tp + fp)
    recall = tp / total_gt

    points = [
        PRPoint(float(c), float(p), float(r))
        for c, p, r in zip(confidences[order], precision, recall)
    ]
    if interpolation == "11point":
        ap = eleven_point_ap(precision, recall)
    else:
        ap = all_point_ap(precision, recall)
    return PRCurve(points, ap, total_gt, interpolation)


def mean_ap(per_class_ap: Sequence[float]) -> float:
    if len(per_class_ap) == 0:
        raise MetricError("mean_ap of no classes")
    return float(np.mean(per_class_ap))
