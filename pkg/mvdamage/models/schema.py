import typing
from typing import NamedTuple, Tuple

from .labels import VIEW_ROLES, FusionMode, NUM_DAMAGE_STATES, ViewRole


class ArchitectureError(ValueError):
    pass


class BlockSpecDict(typing.TypedDict):
    out_channels: int
    stride: int


class BackboneConfigDict(typing.TypedDict):
    in_channels: int
    input_size: int
    stem_channels: int
    stem_stride: int
    stem_pool: bool
    blocks: typing.List[BlockSpecDict]


class LocalizationConfigDict(typing.TypedDict):
    backbone: BackboneConfigDict
    bins: typing.List[int]


class ClassifierConfigDict(typing.TypedDict):
    backbone: BackboneConfigDict
    roles: typing.List[str]
    fusion: str
    hidden: typing.List[int]
    num_classes: int
    shared_backbone: bool


class ArchitectureDict(typing.TypedDict):
    """kind is "model-l" or "model-c"; config is the matching *ConfigDict"""

    kind: str
    config: dict


class BlockSpec(NamedTuple):
    out_channels: int
    stride: int


class BackboneConfig(NamedTuple):
    in_channels: int = 3
    input_size: int = 64
    stem_channels: int = 16
    stem_stride: int = 2
    stem_pool: bool = False
    blocks: Tuple[BlockSpec, ...] = ()

    @property
    def output_channels(self) -> int:
        return self.blocks[-1].out_channels if self.blocks else self.stem_channels

    def spatial_sizes(self) -> typing.List[int]:
        """Spatial size after the stem, the optional pool and every block"""
        self.validate()
        size = self.input_size // self.stem_stride
        sizes = [size]
        if self.stem_pool:
            size //= 2
            sizes.append(size)
        for block in self.blocks:
            size //= block.stride
            sizes.append(size)
        return sizes

    @property
    def output_size(self) -> int:
        return self.spatial_sizes()[-1]

    def validate(self):
        strides = [self.stem_stride] + ([2] if self.stem_pool else []) + [
            b.stride for b in self.blocks
        ]
        if any(s not in (1, 2) for s in strides):
            raise ArchitectureError(f"Strides must be 1 or 2, got {strides}")
        if self.in_channels < 1 or self.stem_channels < 1:
            raise ArchitectureError("Channel counts must be positive")
        if any(b.out_channels < 1 for b in self.blocks):
            raise ArchitectureError("Block channel counts must be positive")

        size = self.input_size
        for stride in strides:
            if size < stride or size % stride:
                raise ArchitectureError(
                    f"Stride sequence {strides} is incompatible with input size {self.input_size}"
                )
            size //= stride

    def to_dict(self) -> BackboneConfigDict:
        return BackboneConfigDict(
            in_channels=self.in_channels,
            input_size=self.input_size,
            stem_channels=self.stem_channels,
            stem_stride=self.stem_stride,
            stem_pool=self.stem_pool,
            blocks=[BlockSpecDict(out_channels=b.out_channels, stride=b.stride) for b in self.blocks],
        )

    @classmethod
    def from_dict(cls, data: BackboneConfigDict) -> "BackboneConfig":
        return cls(
            in_channels=int(data["in_channels"]),
            input_size=int(data["input_size"]),
            stem_channels=int(data["stem_channels"]),
            stem_stride=int(data["stem_stride"]),
            stem_pool=bool(data["stem_pool"]),
            blocks=tuple(BlockSpec(int(b["out_channels"]), int(b["stride"])) for b in data["blocks"]),
        )


# 64×64 → stem/2 → pool/2 → /2 → /2 → 64×4×4
CLASSIFIER_BACKBONE = BackboneConfig(
    stem_channels=16,
    stem_stride=2,
    stem_pool=True,
    blocks=(BlockSpec(32, 2), BlockSpec(64, 2), BlockSpec(64, 1)),
)

# 64×64 → stem/2 → /2 → 48×16×16, fine enough for bins {1, 2, 4}
LOCALIZATION_BACKBONE = BackboneConfig(
    stem_channels=16,
    stem_stride=2,
    stem_pool=False,
    blocks=(BlockSpec(32, 2), BlockSpec(48, 1), BlockSpec(48, 1)),
)


class LocalizationConfig(NamedTuple):
    backbone: BackboneConfig = LOCALIZATION_BACKBONE
    bins: Tuple[int, ...] = (1, 2, 4)

    def validate(self):
        self.backbone.validate()
        size = self.backbone.output_size
        channels = self.backbone.output_channels
        if not self.bins:
            raise ArchitectureError("Pyramid pooling needs at least one bin")
        if any(b < 1 or b > size for b in self.bins):
            raise ArchitectureError(f"Pyramid bins {self.bins} do not fit feature size {size}")
        if channels % len(self.bins):
            raise ArchitectureError(
                f"Feature channels {channels} are not divisible by {len(self.bins)} pyramid levels"
            )

    def to_dict(self) -> LocalizationConfigDict:
        return LocalizationConfigDict(backbone=self.backbone.to_dict(), bins=list(self.bins))

    @classmethod
    def from_dict(cls, data: LocalizationConfigDict) -> "LocalizationConfig":
        return cls(
            backbone=BackboneConfig.from_dict(data["backbone"]),
            bins=tuple(int(b) for b in data["bins"]),
        )


class ClassifierConfig(NamedTuple):
    backbone: BackboneConfig = CLASSIFIER_BACKBONE
    roles: Tuple[ViewRole, ...] = VIEW_ROLES
    fusion: FusionMode = FusionMode.EARLY_CONCAT
    hidden: Tuple[int, ...] = (128,)
    num_classes: int = NUM_DAMAGE_STATES
    shared_backbone: bool = False

    @property
    def fused_channels(self) -> int:
        channels = self.backbone.output_channels
        if self.fusion is FusionMode.EARLY_CONCAT:
            return len(self.roles) * channels
        return channels

    @property
    def fused_features(self) -> int:
        return self.fused_channels * self.backbone.output_size ** 2

    def validate(self):
        self.backbone.validate()
        if not self.roles:
            raise ArchitectureError("A classifier needs at least one view")
        if len(set(self.roles)) != len(self.roles):
            raise ArchitectureError(f"Duplicate view roles {[r.value for r in self.roles]}")
        if self.num_classes < 2 or any(h < 1 for h in self.hidden):
            raise ArchitectureError("Invalid head sizes")

    def to_dict(self) -> ClassifierConfigDict:
        return ClassifierConfigDict(
            backbone=self.backbone.to_dict(),
            roles=[r.value for r in self.roles],
            fusion=self.fusion.value,
            hidden=list(self.hidden),
            num_classes=self.num_classes,
            shared_backbone=self.shared_backbone,
        )

    @classmethod
    def from_dict(cls, data: ClassifierConfigDict) -> "ClassifierConfig":
        return cls(
            backbone=BackboneConfig.from_dict(data["backbone"]),
            roles=tuple(ViewRole(r) for r in data["roles"]),
            fusion=FusionMode(data["fusion"]),
            hidden=tuple(int(h) for h in data["hidden"]),
            num_classes=int(data["num_classes"]),
            shared_backbone=bool(data["shared_backbone"]),
        )
