from .classification import (
    CoarseState,
    ConfusionMatrix,
    coarse_confusion,
    confusion_and_accuracy,
    remap_coarse,
)
from .evaluation import ClassificationReport, LocalizationReport, evaluate_model_c, evaluate_model_l
from .ranking import (
    INTERPOLATIONS,
    PRCurve,
    PRPoint,
    all_point_ap,
    eleven_point_ap,
    mean_ap,
    pr_curve_and_ap,
)
from .report import build_report, read_report, write_report
from .schema import MetricError, MetricsReportDict
from .segmentation import (
    IOU_THRESHOLD,
    Instance,
    MatchResult,
    extract_instances,
    iou,
    match_instances,
    precision_recall_f1,
)
