from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from skimage import measure

from .schema import MetricError

IOU_THRESHOLD = 0.5


def iou(mask_a: np.ndarray, mask_b: np.ndarray) -> float:
    """|A∩B| / |A∪B|; 1 when both masks are empty"""
    a = np.asarray(mask_a) > 0
    b = np.asarray(mask_b) > 0
    if a.shape != b.shape:
        raise MetricError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


class Instance(NamedTuple):
    mask: np.ndarray  # H×W bool
    confidence: float
    # first pixel in row-major order
    origin: Tuple[int, int]


def extract_instances(mask: np.ndarray, probabilities: Optional[np.ndarray] = None) -> List[Instance]:
    """4-connected components of a binary mask, ordered by their first
    row-major pixel. Confidence is the mean probability over the component."""
    mask = np.asarray(mask) > 0
    if probabilities is not None and np.shape(probabilities) != mask.shape:
        raise MetricError(f"probabilities {np.shape(probabilities)} do not match mask {mask.shape}")

    # label() numbers components in raster order of their first pixel
    labels, count = measure.label(mask, connectivity=1, return_num=True)
    instances = []
    for label in range(1, count + 1):
        component = labels == label
        first = int(np.flatnonzero(component)[0])
        origin = divmod(first, mask.shape[1])
        confidence = 1.0 if probabilities is None else float(np.mean(np.asarray(probabilities)[component]))
        instances.append(Instance(component, confidence, origin))
    instances.sort(key=lambda i: i.origin)
    return instances


class MatchResult(NamedTuple):
    tp: int
    fp: int
    fn: int
    # (prediction index, ground truth index, IoU) for every TP
    pairs: List[Tuple[int, int, float]]
    # per prediction, in input order
    confidences: List[float]
    is_tp: List[bool]

    def scored(self) -> List[Tuple[float, bool]]:
        return list(zip(self.confidences, self.is_tp))


def match_instances(
    predictions: Sequence[Instance],
    ground_truth: Sequence[Instance],
    iou_threshold: float = IOU_THRESHOLD,
) -> MatchResult:
    """Greedy matching in descending confidence: each prediction takes the
    unmatched ground truth it overlaps most, a TP when IoU ≥ threshold"""
    if not 0.0 < iou_threshold < 1.0:
        raise MetricError(f"iou_threshold must lie in (0, 1), got {iou_threshold}")

    confidences = [float(p.confidence) for p in predictions]
    order = np.argsort(-np.asarray(confidences, dtype=np.float64), kind="stable")
    unmatched = list(range(len(ground_truth)))
    is_tp = [False] * len(predictions)
    pairs = []

    for index in order:
        if not unmatched:
            break
        scores = [iou(predictions[index].mask, ground_truth[g].mask) for g in unmatched]
        best = int(np.argmax(scores))
        if scores[best] >= iou_threshold:
            is_tp[index] = True
            pairs.append((int(index), unmatched[best], scores[best]))
            del unmatched[best]

    tp = len(pairs)
    return MatchResult(
        tp=tp,
        fp=len(predictions) - tp,
        fn=len(ground_truth) - tp,
        pairs=pairs,
        confidences=confidences,
        is_tp=is_tp,
    )


def precision_recall_f1(match: MatchResult) -> Tuple[float, float, float]:
    precision = match.tp / (match.tp + match.fp) if match.tp + match.fp else 0.0
    recall = match.tp / (match.tp + match.fn) if match.tp + match.fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1
