from typing import Sequence, Tuple

import numpy as np

from mvdamage.tensor import Parameter, ShapeError, Tensor, ops

from .backbone import Backbone
from .layers import Conv2d, Module
from .schema import ArchitectureDict, LocalizationConfig

MODEL_L_KIND = "model-l"


def pyramid_pooling_forward(
    features: Tensor,
    bins: Sequence[int],
    params: Sequence[Tuple[Parameter, Parameter]],
) -> Tensor:
    """Pool to each b×b grid, project with a 1×1 conv, resize back and stack
    all levels after the input channels: N×C×S×S → N×2C×S×S"""
    if features.ndim != 4:
        raise ShapeError("pyramid pooling expects N×C×S×S features", features.shape)
    size_h, size_w = features.shape[2], features.shape[3]
    if len(params) != len(bins):
        raise ValueError(f"{len(bins)} bins but {len(params)} projection layers")

    levels = [features]
    for b, (weight, bias) in zip(bins, params):
        if b > min(size_h, size_w):
            raise ShapeError(f"pyramid bin {b} larger than feature map", features.shape)
        pooled = ops.adaptive_avg_pool(features, b)
        projected = ops.conv2d(pooled, weight, bias)
        levels.append(ops.bilinear_resize(projected, size_h, size_w))
    return ops.concat(levels, axis=1)


class PyramidPooling(Module):
    def __init__(self, channels: int, bins: Sequence[int], rng: np.random.Generator):
        super().__init__()
        self.bins = tuple(bins)
        reduced = channels // len(self.bins)
        self.levels = [
            self.add_module(f"bin{b}", Conv2d(channels, reduced, 1, rng, padding=0))
            for b in self.bins
        ]

    @property
    def out_channels(self) -> int:
        first = self.levels[0].weight
        return first.shape[1] + len(self.levels) * first.shape[0]

    def forward(self, features: Tensor) -> Tensor:
        return pyramid_pooling_forward(
            features, self.bins, [(level.weight, level.bias) for level in self.levels]
        )


class ModelL(Module):
    """Per-pixel building localization: backbone → pyramid pooling → 1×1 conv
    → bilinear upsample → sigmoid"""

    kind = MODEL_L_KIND
    config: LocalizationConfig

    def __init__(self, config: LocalizationConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
        self.backbone = self.add_module("backbone", Backbone(config.backbone, rng))
        self.ppm = self.add_module(
            "ppm", PyramidPooling(config.backbone.output_channels, config.bins, rng)
        )
        self.classifier = self.add_module(
            "classifier", Conv2d(self.ppm.out_channels, 1, 1, rng, padding=0)
        )
        self.assign_names()

    def describe(self) -> ArchitectureDict:
        return ArchitectureDict(kind=self.kind, config=self.config.to_dict())

    def forward(self, images: Tensor) -> Tensor:
        size = self.config.backbone.input_size
        features = self.backbone(images)
        logits = self.classifier(self.ppm(features))
        logits = ops.bilinear_resize(logits, size, size)
        return ops.sigmoid(logits)

    def predict(self, images: np.ndarray) -> np.ndarray:
        """Probabilities H×W for one 3×H×W image, or N×H×W for a batch"""
        single = images.ndim == 3
        batch = images[None] if single else images
        probabilities = self.forward(Tensor(batch.astype(self.dtype, copy=False))).data[:, 0]
        return probabilities[0] if single else probabilities

    @property
    def dtype(self) -> np.dtype:
        return self.classifier.weight.dtype


def model_l_forward(image, model: ModelL) -> Tensor:
    """3×H×W image → 1×H×W building probabilities"""
    image = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=model.dtype))
    if image.ndim != 3 or image.shape[0] != model.config.backbone.in_channels:
        raise ShapeError("model_l_forward expects a 3×H×W image", image.shape)
    return ops.reshape(model(ops.reshape(image, (1,) + image.shape)), (1,) + image.shape[1:])


def binarize_mask(probabilities: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    probabilities = np.asarray(probabilities)
    if probabilities.ndim == 3 and probabilities.shape[0] == 1:
        probabilities = probabilities[0]
    return (probabilities >= threshold).astype(np.uint8)


def apply_mask(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero every channel outside the mask; building pixels pass unchanged"""
    image = np.asarray(image)
    mask = np.asarray(mask)
    if image.ndim != 3 or mask.shape != image.shape[1:]:
        raise ShapeError("mask does not match image", image.shape, mask.shape)
    return np.where(mask[None] > 0, image, np.zeros_like(image))
