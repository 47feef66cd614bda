from .augment import (
    AUGMENT_KINDS,
    GEOMETRIC_KINDS,
    AugmentError,
    AugmentOp,
    augment,
    random_augment,
    sample_op,
    sample_ops,
)
from .dataset import ClassificationItem, Dataset, SegmentationItem
from .image import load_image, load_mask, save_image, save_mask
from .manifest import (
    MANIFEST_VERSION,
    SPLITS,
    DatasetManifest,
    ManifestError,
    MultiViewSample,
    ViewFiles,
    dataset_digest,
    largest_remainder,
    load_manifest,
    split_dataset,
)
from .pipeline import PipelineResult, run_pipeline, run_sample_pipeline
from .synthetic import (
    DAMAGE_FRACTIONS,
    MIN_IMAGE_SIZE,
    ROOF_DAMAGE_LEVEL,
    RenderedView,
    SyntheticSceneSpec,
    draw_scene_spec,
    generate_synthetic_dataset,
    render_view,
)
