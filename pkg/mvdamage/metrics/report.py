import json
import logging
from pathlib import Path
from typing import Optional, Union

from .evaluation import ClassificationReport, LocalizationReport
from .schema import MetricsReportDict

REPORT_NAME = "metrics.json"
PR_CURVE_NAME = "pr_curve.csv"

logger = logging.getLogger(__name__)


def build_report(
    localization: Optional[LocalizationReport] = None,
    classification: Optional[ClassificationReport] = None,
    dataset_digest: Optional[str] = None,
    split: str = "test",
) -> MetricsReportDict:
    report = MetricsReportDict(split=split)
    if dataset_digest is not None:
        report["dataset_digest"] = dataset_digest
    if localization is not None:
        report.update(localization.to_dict())
    if classification is not None:
        report.update(classification.to_dict())
    return report


def write_report(
    report: MetricsReportDict,
    out_dir: Union[str, Path],
    localization: Optional[LocalizationReport] = None,
) -> Path:
    """metrics.json, plus pr_curve.csv when a Model-L evaluation is given"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / REPORT_NAME
    path.write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf8")
    if localization is not None:
        localization.curve.write_csv(out_dir / PR_CURVE_NAME)
    logger.info("Metrics written to %s", path)
    return path


def read_report(path: Union[str, Path]) -> MetricsReportDict:
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_NAME
    return json.loads(path.read_text(encoding="utf8"))
