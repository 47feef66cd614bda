import typing


class MetricError(ValueError):
    pass


class PRPointDict(typing.TypedDict):
    confidence: float
    precision: float
    recall: float


class MetricsReportDict(typing.TypedDict, total=False):
    dataset_digest: str
    split: str
    iou_threshold: float
    interpolation: str
    # Model-L, image level means and pooled instance ranking
    mean_iou: float
    mean_precision: float
    mean_recall: float
    mean_f1: float
    ap: typing.List[float]
    map: float
    # Model-C, fine (DS-0..DS-4) and coarse (minor/moderate/extreme)
    oracle_masks: bool
    accuracy_fine: float
    accuracy_coarse: float
    per_class_recall: typing.List[float]
    confusion_fine: typing.List[typing.List[int]]
    confusion_coarse: typing.List[typing.List[int]]
    confusion_fine_normalized: typing.List[typing.List[float]]
    confusion_coarse_normalized: typing.List[typing.List[float]]
