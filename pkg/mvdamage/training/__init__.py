from .losses import (
    CLIP_EPSILON,
    binary_focal_loss,
    cross_entropy_loss,
    focal_loss,
    inverse_frequency_alpha,
)
from .loops import (
    EarlyStopping,
    classification_evaluator,
    segmentation_evaluator,
    set_trainable,
    train_model_c,
    train_model_l,
)
from .optim import Adam, AdamState, adam_step
from .schema import (
    MODEL_C_PHASE1,
    MODEL_C_PHASE2,
    MODEL_L_TRAINING,
    EpochRecord,
    TrainConfig,
    TrainingError,
    TrainLog,
)
