from typing import List, Sequence

import numpy as np

from mvdamage.tensor import ShapeError, Tensor, ops

from .backbone import Backbone
from .labels import FusionMode
from .layers import Dense, Module
from .schema import ArchitectureDict, ArchitectureError, ClassifierConfig

MODEL_C_KIND = "model-c"


def multi_view_fuse(per_view_features: Sequence[Tensor], mode: FusionMode) -> Tensor:
    """early-concat stacks view feature maps on the channel axis in view order;
    view-max takes their elementwise maximum"""
    if not per_view_features:
        raise ValueError("multi_view_fuse needs at least one view")
    reference = per_view_features[0].shape
    for features in per_view_features[1:]:
        if features.shape != reference:
            raise ShapeError("view feature maps disagree", reference, features.shape)

    mode = FusionMode(mode)
    if mode is FusionMode.EARLY_CONCAT:
        return ops.concat(list(per_view_features), axis=1)
    return ops.maximum(list(per_view_features))


class ModelC(Module):
    """Multi-view damage classifier: one backbone per view (or one shared),
    feature fusion, dense head, softmax over damage states"""

    kind = MODEL_C_KIND
    config: ClassifierConfig

    def __init__(self, config: ClassifierConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config

        backbones = Module()
        self.add_module("backbone", backbones)
        self.backbones: List[Backbone] = []
        if config.shared_backbone:
            rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
            shared = backbones.add_module("shared", Backbone(config.backbone, rng))
            self.backbones = [shared] * len(config.roles)
        else:
            for index, role in enumerate(config.roles):
                rng = np.random.default_rng(np.random.SeedSequence([seed, 0, index]))
                self.backbones.append(
                    backbones.add_module(role.value, Backbone(config.backbone, rng))
                )

        head = Module()
        self.add_module("head", head)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        self.layers: List[Dense] = []
        width = config.fused_features
        for index, hidden in enumerate(config.hidden + (config.num_classes,)):
            self.layers.append(head.add_module(f"fc{index + 1}", Dense(width, hidden, rng)))
            width = hidden
        self.assign_names()

    @property
    def roles(self):
        return self.config.roles

    @property
    def dtype(self) -> np.dtype:
        return self.layers[-1].weight.dtype

    def describe(self) -> ArchitectureDict:
        return ArchitectureDict(kind=self.kind, config=self.config.to_dict())

    def logits(self, views: Sequence[Tensor]) -> Tensor:
        if len(views) != len(self.roles):
            raise ArchitectureError(
                f"Model expects {len(self.roles)} views "
                f"({', '.join(r.value for r in self.roles)}), got {len(views)}"
            )
        features = [backbone(view) for backbone, view in zip(self.backbones, views)]
        out = ops.flatten(multi_view_fuse(features, self.config.fusion))
        for layer in self.layers[:-1]:
            out = ops.relu(layer(out))
        return self.layers[-1](out)

    def forward(self, views: Sequence[Tensor]) -> Tensor:
        """views: one N×3×H×W tensor per role → N×k probabilities"""
        return ops.softmax(self.logits(views))

    def predict(self, views: Sequence[np.ndarray]) -> np.ndarray:
        """One 3×H×W image per role → probability vector over damage states"""
        batch = [Tensor(np.asarray(v, dtype=self.dtype)[None]) for v in views]
        return self.forward(batch).data[0]


def model_c_forward(sample_views: Sequence, model: ModelC) -> Tensor:
    """n_V masked 3×H×W views in role order → probabilities over k states"""
    views = [
        (v if isinstance(v, Tensor) else Tensor(np.asarray(v, dtype=model.dtype)))
        for v in sample_views
    ]
    if len(views) != len(model.roles):
        raise ArchitectureError(f"Expected {len(model.roles)} views, got {len(views)}")
    batched = [ops.reshape(v, (1,) + v.shape) for v in views]
    return ops.reshape(model(batched), (model.config.num_classes,))
