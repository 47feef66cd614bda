from .backbone import Backbone, build_backbone
from .checkpoint import CheckpointError, build_model, load_checkpoint, read_header, save_checkpoint
from .classification import ModelC, model_c_forward, multi_view_fuse
from .labels import (
    GROUND_ROLES,
    NUM_DAMAGE_STATES,
    VIEW_ROLES,
    DamageState,
    FusionMode,
    ViewRole,
)
from .layers import Module
from .localization import (
    ModelL,
    PyramidPooling,
    apply_mask,
    binarize_mask,
    model_l_forward,
    pyramid_pooling_forward,
)
from .schema import (
    CLASSIFIER_BACKBONE,
    LOCALIZATION_BACKBONE,
    ArchitectureError,
    BackboneConfig,
    BlockSpec,
    ClassifierConfig,
    LocalizationConfig,
)
