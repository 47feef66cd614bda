import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from mvdamage.data import ClassificationItem, SegmentationItem, random_augment
from mvdamage.metrics.segmentation import iou
from mvdamage.models import VIEW_ROLES, ModelC, ModelL, Module, apply_mask, binarize_mask
from mvdamage.tensor import Tensor, backward

from .losses import binary_focal_loss, focal_loss, inverse_frequency_alpha
from .optim import Adam
from .schema import (
    MODEL_C_PHASE1,
    MODEL_C_PHASE2,
    MODEL_L_TRAINING,
    EpochRecord,
    TrainConfig,
    TrainingError,
    TrainLog,
)

# model → (validation loss, validation metric)
Evaluator = Callable[[Module], Tuple[float, float]]
# model, batch, per-item augmentation seeds (None: no augmentation) → loss
BatchLoss = Callable[[Module, list, Optional[np.ndarray]], Tensor]

logger = logging.getLogger(__name__)


def set_trainable(model: Module, name_prefix: str, trainable: bool) -> Module:
    matched = [p for name, p in model.named_parameters() if name.startswith(name_prefix)]
    if not matched:
        raise TrainingError(f"No parameter name starts with {name_prefix!r}")
    for param in matched:
        param.frozen = not trainable
    logger.debug("%s %d parameters under %r", "Unfroze" if trainable else "Froze", len(matched), name_prefix)
    return model


class EarlyStopping:
    """Tracks the best validation loss and the parameters that produced it"""

    best_loss: float
    best_epoch: Optional[int]
    best_state: Optional[Dict[str, np.ndarray]]

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = None
        self.best_state = None
        self.stale = 0

    def update(self, epoch: int, val_loss: float, model: Module) -> bool:
        """Record one epoch; True once `patience` epochs passed without improvement"""
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.best_state = model.state()
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.patience


def _view_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), index]).generate_state(1)[0])


def _run_phase(
    model: Module,
    phase: str,
    config: TrainConfig,
    items: Sequence,
    batch_loss: BatchLoss,
    evaluate: Evaluator,
    log: TrainLog,
    rng: np.random.Generator,
) -> str:
    optimizer = Adam(model, config.learning_rate)
    stopper = EarlyStopping(config.early_stop_patience) if config.early_stopping else None
    stop_reason = "max-epochs"

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(items))
        losses: List[float] = []
        for start in range(0, len(order), config.batch_size):
            batch = [items[i] for i in order[start : start + config.batch_size]]
            seeds = rng.integers(2 ** 31, size=len(batch))
            optimizer.zero_grad()
            loss = batch_loss(model, batch, seeds if config.augment else None)
            backward(loss)
            optimizer.step()
            losses.append(loss.item())

        val_loss, val_metric = evaluate(model)
        record = EpochRecord(
            phase=phase,
            epoch=epoch,
            learning_rate=config.learning_rate,
            train_loss=float(np.mean(losses)),
            val_loss=float(val_loss),
            val_metric=float(val_metric),
        )
        log.append(record)
        logger.info(
            "%s epoch %d lr %g: train loss %.5f, val loss %.5f, val metric %.4f",
            phase,
            epoch,
            config.learning_rate,
            record.train_loss,
            record.val_loss,
            record.val_metric,
        )

        if stopper is not None and stopper.update(epoch, record.val_loss, model):
            stop_reason = "early-stop"
            break

    if stopper is not None and stopper.best_state is not None:
        model.load_state(stopper.best_state)
        logger.info("%s stopped (%s), restored epoch %d", phase, stop_reason, stopper.best_epoch)
    else:
        logger.info("%s stopped (%s)", phase, stop_reason)
    return stop_reason


def _focal_settings(config: TrainConfig, counts: Sequence[int]) -> Tuple[float, Optional[np.ndarray]]:
    if config.loss == "cross-entropy":
        return 0.0, None
    if config.focal_alpha is not None:
        return config.focal_gamma, np.asarray(config.focal_alpha)
    return config.focal_gamma, inverse_frequency_alpha(counts)


def _check_splits(train_items: Sequence, val_items: Sequence):
    if not train_items:
        raise TrainingError("Training split is empty")
    if not val_items:
        raise TrainingError("Validation split is empty")


def segmentation_evaluator(
    items: Sequence[SegmentationItem],
    gamma: float,
    alpha: Optional[np.ndarray],
    threshold: float = 0.5,
) -> Evaluator:
    """Mean per-image focal loss and mask IoU, in manifest order"""

    def evaluate(model: ModelL) -> Tuple[float, float]:
        losses, ious = [], []
        for item in items:
            probabilities = model(Tensor(item.image[None].astype(model.dtype)))
            losses.append(binary_focal_loss(probabilities, item.mask[None], gamma, alpha).item())
            ious.append(iou(binarize_mask(probabilities.data[0, 0], threshold), item.mask))
        return float(np.mean(losses)), float(np.mean(ious))

    return evaluate


def train_model_l(
    model: ModelL,
    train_items: Sequence[SegmentationItem],
    val_items: Sequence[SegmentationItem],
    config: TrainConfig = MODEL_L_TRAINING,
    evaluate: Optional[Evaluator] = None,
) -> Tuple[ModelL, TrainLog]:
    config.validate()
    _check_splits(train_items, val_items)

    building = sum(int(item.mask.sum()) for item in train_items)
    total = sum(item.mask.size for item in train_items)
    gamma, alpha = _focal_settings(config, [total - building, building])
    if alpha is not None:
        logger.info("Localization focal alpha (background, building) = %s", np.round(alpha, 4))

    def batch_loss(model: ModelL, batch: List[SegmentationItem], seeds: Optional[np.ndarray]) -> Tensor:
        images, masks = [], []
        for index, item in enumerate(batch):
            image, mask = item.image, item.mask
            if seeds is not None:
                image, mask = random_augment(image, mask, int(seeds[index]))
            images.append(image)
            masks.append(mask)
        probabilities = model(Tensor(np.stack(images).astype(model.dtype)))
        return binary_focal_loss(probabilities, np.stack(masks), gamma, alpha)

    evaluate = evaluate or segmentation_evaluator(val_items, gamma, alpha)
    log = TrainLog()
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    log.stop_reason = _run_phase(model, "localization", config, train_items, batch_loss, evaluate, log, rng)
    return model, log


def _classification_batch(
    model: ModelC,
    batch: Sequence[ClassificationItem],
    seeds: Optional[np.ndarray],
) -> List[Tensor]:
    """One N×3×H×W tensor of masked views per model role"""
    per_role: List[List[np.ndarray]] = [[] for _ in model.roles]
    for index, item in enumerate(batch):
        for slot, role in enumerate(model.roles):
            image, mask = item.view(role)
            if seeds is not None:
                image, mask = random_augment(image, mask, _view_seed(seeds[index], VIEW_ROLES.index(role)))
            per_role[slot].append(apply_mask(image, mask))
    return [Tensor(np.stack(views).astype(model.dtype)) for views in per_role]


def classification_evaluator(
    items: Sequence[ClassificationItem],
    gamma: float,
    alpha: Optional[np.ndarray],
) -> Evaluator:
    """Mean loss and accuracy over ground-truth-masked views"""

    def evaluate(model: ModelC) -> Tuple[float, float]:
        losses, correct = [], 0
        for item in items:
            probabilities = model(_classification_batch(model, [item], None))
            losses.append(focal_loss(probabilities, [int(item.label)], gamma, alpha).item())
            correct += int(np.argmax(probabilities.data[0]) == int(item.label))
        return float(np.mean(losses)), correct / len(items)

    return evaluate


def train_model_c(
    model: ModelC,
    train_items: Sequence[ClassificationItem],
    val_items: Sequence[ClassificationItem],
    phase1: TrainConfig = MODEL_C_PHASE1,
    phase2: TrainConfig = MODEL_C_PHASE2,
    evaluate: Optional[Evaluator] = None,
) -> Tuple[ModelC, TrainLog]:
    """Two-step schedule: head only with the backbones frozen, then every
    parameter at the fine-tuning learning rate"""
    phase1.validate()
    phase2.validate()
    _check_splits(train_items, val_items)

    counts = np.bincount([int(item.label) for item in train_items], minlength=model.config.num_classes)
    log = TrainLog()

    for index, (phase, config) in enumerate((("frozen-backbone", phase1), ("fine-tune", phase2))):
        gamma, alpha = _focal_settings(config, counts)

        def batch_loss(model: ModelC, batch, seeds, gamma=gamma, alpha=alpha) -> Tensor:
            probabilities = model(_classification_batch(model, batch, seeds))
            return focal_loss(probabilities, [int(item.label) for item in batch], gamma, alpha)

        if index == 0:
            set_trainable(model, "backbone.", False)
        else:
            set_trainable(model, "", True)

        phase_evaluate = evaluate or classification_evaluator(val_items, gamma, alpha)
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1, index]))
        log.stop_reason = _run_phase(model, phase, config, train_items, batch_loss, phase_evaluate, log, rng)

    return model, log
