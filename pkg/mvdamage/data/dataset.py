import logging
from pathlib import Path
from typing import Dict, List, NamedTuple, Sequence, Tuple, Union

import numpy as np

from mvdamage.models import NUM_DAMAGE_STATES, VIEW_ROLES, DamageState, ViewRole, apply_mask

from .image import load_image, load_mask
from .manifest import DatasetManifest, ManifestError, MultiViewSample, load_manifest

logger = logging.getLogger(__name__)


class SegmentationItem(NamedTuple):
    building_id: str
    role: ViewRole
    image: np.ndarray  # 3×H×W float32 in [0, 1]
    mask: np.ndarray  # H×W uint8 {0, 1}


class ClassificationItem(NamedTuple):
    building_id: str
    label: DamageState
    images: Tuple[np.ndarray, ...]  # VIEW_ROLES order
    masks: Tuple[np.ndarray, ...]

    def view(self, role: ViewRole) -> Tuple[np.ndarray, np.ndarray]:
        index = VIEW_ROLES.index(role)
        return self.images[index], self.masks[index]

    def masked_views(self, roles: Sequence[ViewRole] = VIEW_ROLES) -> List[np.ndarray]:
        """Views with the ground-truth building mask applied"""
        return [apply_mask(*self.view(role)) for role in roles]


class Dataset:
    """Decodes manifest samples lazily and keeps them in memory once read"""

    manifest: DatasetManifest
    _cache: Dict[str, ClassificationItem]

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self._cache = {}

    @classmethod
    def open(cls, path: Union[str, Path]) -> "Dataset":
        return cls(load_manifest(path))

    def load(self, sample: MultiViewSample) -> ClassificationItem:
        item = self._cache.get(sample.building_id)
        if item is not None:
            return item

        images, masks = [], []
        for view in sample.views:
            image = load_image(self.manifest.root / view.image)
            mask = load_mask(self.manifest.root / view.mask)
            if mask.shape != image.shape[1:]:
                raise ManifestError(
                    f"mask {mask.shape} does not match image {image.shape} in view {view.role.value}",
                    sample.building_id,
                )
            images.append(image)
            masks.append(mask)

        item = ClassificationItem(sample.building_id, sample.label, tuple(images), tuple(masks))
        self._cache[sample.building_id] = item
        return item

    def classification_items(self, split: str) -> List[ClassificationItem]:
        items = [self.load(s) for s in self.manifest.split(split)]
        logger.debug("Loaded %d buildings from %s split", len(items), split)
        return items

    def segmentation_items(self, split: str) -> List[SegmentationItem]:
        """Every view of every building in the split, as independent images"""
        items = []
        for building in self.classification_items(split):
            for role, image, mask in zip(VIEW_ROLES, building.images, building.masks):
                items.append(SegmentationItem(building.building_id, role, image, mask))
        return items

    def class_counts(self, split: str) -> np.ndarray:
        labels = [int(s.label) for s in self.manifest.split(split)]
        return np.bincount(labels, minlength=NUM_DAMAGE_STATES)
