import numpy as np

from mvdamage.tensor import ShapeError, Tensor, ops

from .layers import Conv2d, Module, SeparableBlock
from .schema import BackboneConfig


class Backbone(Module):
    """Toy MobileNet-style feature extractor: 3×3 stem conv, optional 2×2
    max-pool, then depthwise-separable blocks"""

    config: BackboneConfig

    def __init__(self, config: BackboneConfig, rng: np.random.Generator):
        super().__init__()
        config.validate()
        self.config = config
        self.stem = self.add_module(
            "stem",
            Conv2d(config.in_channels, config.stem_channels, 3, rng, stride=config.stem_stride),
        )
        self.blocks = []
        channels = config.stem_channels
        for index, spec in enumerate(config.blocks):
            block = SeparableBlock(channels, spec.out_channels, spec.stride, rng)
            self.blocks.append(self.add_module(f"block{index}", block))
            channels = spec.out_channels

    def forward(self, x: Tensor) -> Tensor:
        expected = (self.config.in_channels, self.config.input_size, self.config.input_size)
        if x.ndim != 4 or tuple(x.shape[1:]) != expected:
            raise ShapeError("backbone input does not match its config", x.shape, (-1,) + expected)

        out = ops.relu(self.stem(x))
        if self.config.stem_pool:
            out = ops.maxpool2d(out, 2, 2)
        for block in self.blocks:
            out = block(out)
        return out


def build_backbone(config: BackboneConfig, seed: int) -> Backbone:
    backbone = Backbone(config, np.random.default_rng(seed))
    backbone.assign_names()
    return backbone
