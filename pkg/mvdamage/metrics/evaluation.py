import logging
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from mvdamage.data import ClassificationItem, SegmentationItem, run_sample_pipeline
from mvdamage.models import NUM_DAMAGE_STATES, ModelC, ModelL, binarize_mask

from .classification import ConfusionMatrix, coarse_confusion, confusion_and_accuracy
from .ranking import INTERPOLATIONS, PRCurve, mean_ap, pr_curve_and_ap
from .schema import MetricError, MetricsReportDict
from .segmentation import IOU_THRESHOLD, extract_instances, iou, match_instances, precision_recall_f1

logger = logging.getLogger(__name__)


class LocalizationReport(NamedTuple):
    mean_iou: float
    mean_precision: float
    mean_recall: float
    mean_f1: float
    curve: PRCurve
    map: float
    iou_threshold: float

    def to_dict(self) -> MetricsReportDict:
        return MetricsReportDict(
            iou_threshold=self.iou_threshold,
            interpolation=self.curve.interpolation,
            mean_iou=self.mean_iou,
            mean_precision=self.mean_precision,
            mean_recall=self.mean_recall,
            mean_f1=self.mean_f1,
            ap=[self.curve.ap],
            map=self.map,
        )


class ClassificationReport(NamedTuple):
    fine: ConfusionMatrix
    coarse: ConfusionMatrix
    accuracy_fine: float
    accuracy_coarse: float
    oracle_masks: bool
    predictions: List[int]

    def to_dict(self) -> MetricsReportDict:
        return MetricsReportDict(
            oracle_masks=self.oracle_masks,
            accuracy_fine=self.accuracy_fine,
            accuracy_coarse=self.accuracy_coarse,
            per_class_recall=self.fine.per_class_recall(),
            confusion_fine=self.fine.to_list(),
            confusion_coarse=self.coarse.to_list(),
            confusion_fine_normalized=self.fine.normalized().tolist(),
            confusion_coarse_normalized=self.coarse.normalized().tolist(),
        )


def evaluate_model_l(
    model: ModelL,
    items: Sequence[SegmentationItem],
    iou_threshold: float = IOU_THRESHOLD,
    threshold: float = 0.5,
    interpolation: str = "all-point",
) -> LocalizationReport:
    """Image-level IoU/P/R/F1 means plus the AP of all predicted instances
    pooled over the split. `model` only needs predict(image) → H×W."""
    if not items:
        raise MetricError("Cannot evaluate Model-L on an empty split")

    ious, precisions, recalls, f1s = [], [], [], []
    scored = []
    total_gt = 0
    for item in items:
        probabilities = np.asarray(model.predict(item.image))
        predicted = binarize_mask(probabilities, threshold)
        ious.append(iou(predicted, item.mask))

        match = match_instances(
            extract_instances(predicted, probabilities),
            extract_instances(item.mask),
            iou_threshold,
        )
        precision, recall, f1 = precision_recall_f1(match)
        precisions.append(precision)
        recalls.append(recall)
        f1s.append(f1)
        scored.extend(match.scored())
        total_gt += match.tp + match.fn

    if total_gt:
        curve = pr_curve_and_ap(scored, total_gt, interpolation)
    else:
        if interpolation not in INTERPOLATIONS:
            raise MetricError(f"interpolation must be one of {INTERPOLATIONS}, got {interpolation!r}")
        logger.warning("No ground-truth buildings in %d images; AP reported as 0", len(items))
        curve = PRCurve([], 0.0, 0, interpolation)
    report = LocalizationReport(
        mean_iou=float(np.mean(ious)),
        mean_precision=float(np.mean(precisions)),
        mean_recall=float(np.mean(recalls)),
        mean_f1=float(np.mean(f1s)),
        curve=curve,
        map=mean_ap([curve.ap]),
        iou_threshold=iou_threshold,
    )
    logger.info(
        "Model-L on %d images: mean IoU %.4f, P %.4f, R %.4f, F1 %.4f, mAP %.4f",
        len(items),
        report.mean_iou,
        report.mean_precision,
        report.mean_recall,
        report.mean_f1,
        report.map,
    )
    return report


def evaluate_model_c(
    model_l: Optional[ModelL],
    model_c: ModelC,
    items: Sequence[ClassificationItem],
    use_oracle_masks: bool = False,
    threshold: float = 0.5,
) -> ClassificationReport:
    if not items:
        raise MetricError("Cannot evaluate Model-C on an empty split")

    true_labels, predictions = [], []
    for item in items:
        result = run_sample_pipeline(model_l, model_c, item, use_oracle_masks=use_oracle_masks, threshold=threshold)
        true_labels.append(int(item.label))
        predictions.append(int(result.prediction))

    fine, accuracy_fine = confusion_and_accuracy(true_labels, predictions, NUM_DAMAGE_STATES)
    coarse, accuracy_coarse = coarse_confusion(true_labels, predictions)
    logger.info(
        "Model-C on %d buildings (%s masks): fine accuracy %.4f, coarse accuracy %.4f",
        len(items),
        "oracle" if use_oracle_masks else "Model-L",
        accuracy_fine,
        accuracy_coarse,
    )
    return ClassificationReport(fine, coarse, accuracy_fine, accuracy_coarse, use_oracle_masks, predictions)
