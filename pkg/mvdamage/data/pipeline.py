import logging
from typing import NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from mvdamage.models import VIEW_ROLES, DamageState, ModelC, ModelL, apply_mask, binarize_mask

from .dataset import ClassificationItem, Dataset
from .manifest import MultiViewSample

logger = logging.getLogger(__name__)


class PipelineResult(NamedTuple):
    masks: Tuple[np.ndarray, ...]  # binary building mask per view, VIEW_ROLES order
    prediction: DamageState
    probabilities: np.ndarray


def run_pipeline(
    model_l: Optional[ModelL],
    model_c: ModelC,
    images: Sequence[np.ndarray],
    oracle_masks: Optional[Sequence[np.ndarray]] = None,
    threshold: float = 0.5,
) -> PipelineResult:
    """Stacked assessment of one building from its five views (VIEW_ROLES
    order): Model-L masks each view, Model-C classifies the masked views it
    was built for. Passing oracle_masks bypasses Model-L."""
    if len(images) != len(VIEW_ROLES):
        raise ValueError(f"Expected {len(VIEW_ROLES)} views, got {len(images)}")

    if oracle_masks is not None:
        if len(oracle_masks) != len(images):
            raise ValueError(f"Expected {len(images)} masks, got {len(oracle_masks)}")
        masks = tuple(np.asarray(m, np.uint8) for m in oracle_masks)
    else:
        if model_l is None:
            raise ValueError("Model-L is required unless oracle masks are given")
        probabilities = model_l.predict(np.stack(images))
        masks = tuple(binarize_mask(p, threshold) for p in probabilities)

    masked = {role: apply_mask(image, mask) for role, image, mask in zip(VIEW_ROLES, images, masks)}
    probabilities = model_c.predict([masked[role] for role in model_c.roles])
    # argmax returns the first maximum, so ties go to the lower damage state
    prediction = DamageState(int(np.argmax(probabilities)))
    logger.debug("Pipeline prediction %s from %s", prediction.label, np.round(probabilities, 3))
    return PipelineResult(masks, prediction, probabilities)


def run_sample_pipeline(
    model_l: Optional[ModelL],
    model_c: ModelC,
    sample: Union[MultiViewSample, ClassificationItem],
    dataset: Optional[Dataset] = None,
    use_oracle_masks: bool = False,
    threshold: float = 0.5,
) -> PipelineResult:
    """run_pipeline on one building. A manifest sample is decoded through
    `dataset`; with use_oracle_masks its ground-truth masks replace Model-L."""
    if isinstance(sample, MultiViewSample):
        if dataset is None:
            raise ValueError(f"A dataset is required to decode building {sample.building_id}")
        sample = dataset.load(sample)
    return run_pipeline(
        None if use_oracle_masks else model_l,
        model_c,
        sample.images,
        oracle_masks=sample.masks if use_oracle_masks else None,
        threshold=threshold,
    )
