import json
import typing
from pathlib import Path
from typing import List, NamedTuple, Optional, Tuple, Union

LOSS_KINDS = ("focal", "cross-entropy")
STOP_REASONS = ("max-epochs", "early-stop")


class TrainingError(RuntimeError):
    pass


class TrainConfigDict(typing.TypedDict):
    learning_rate: float
    batch_size: int
    max_epochs: int
    early_stop_patience: int
    early_stopping: bool
    loss: str
    seed: int
    focal_gamma: float
    focal_alpha: typing.Optional[typing.List[float]]
    augment: bool


class TrainConfig(NamedTuple):
    learning_rate: float = 1e-4
    batch_size: int = 1
    max_epochs: int = 50
    early_stop_patience: int = 3
    early_stopping: bool = True
    loss: str = "focal"
    seed: int = 0
    focal_gamma: float = 2.0
    # None: inverse class frequency of the training split, normalized to mean 1
    focal_alpha: Optional[Tuple[float, ...]] = None
    augment: bool = True

    def validate(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.early_stop_patience < 1:
            raise ValueError(f"early_stop_patience must be >= 1, got {self.early_stop_patience}")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.focal_gamma < 0:
            raise ValueError(f"focal_gamma must be >= 0, got {self.focal_gamma}")
        if self.focal_alpha is not None and any(a <= 0 for a in self.focal_alpha):
            raise ValueError(f"focal_alpha components must be > 0, got {self.focal_alpha}")

    def to_dict(self) -> TrainConfigDict:
        data = self._asdict()
        data["focal_alpha"] = None if self.focal_alpha is None else list(self.focal_alpha)
        return TrainConfigDict(**data)

    @classmethod
    def from_dict(cls, data: TrainConfigDict) -> "TrainConfig":
        alpha = data.get("focal_alpha")
        config = cls(
            learning_rate=float(data["learning_rate"]),
            batch_size=int(data["batch_size"]),
            max_epochs=int(data["max_epochs"]),
            early_stop_patience=int(data["early_stop_patience"]),
            early_stopping=bool(data["early_stopping"]),
            loss=str(data["loss"]),
            seed=int(data["seed"]),
            focal_gamma=float(data["focal_gamma"]),
            focal_alpha=None if alpha is None else tuple(float(a) for a in alpha),
            augment=bool(data["augment"]),
        )
        config.validate()
        return config


# Localization: focal loss, Adam 1e-4, batch 1, 50 epochs, early stopping
MODEL_L_TRAINING = TrainConfig()

# Classification step (a): backbones frozen, 25 epochs at 1e-3
MODEL_C_PHASE1 = TrainConfig(
    learning_rate=1e-3,
    batch_size=4,
    max_epochs=25,
    early_stopping=False,
    loss="cross-entropy",
)

# Classification step (b): everything trainable, fine-tuned at 1e-4
MODEL_C_PHASE2 = TrainConfig(
    learning_rate=1e-4,
    batch_size=4,
    max_epochs=25,
    early_stopping=True,
    loss="cross-entropy",
)


class EpochRecord(NamedTuple):
    phase: str
    epoch: int
    learning_rate: float
    train_loss: float
    val_loss: float
    val_metric: float


class TrainLog:
    entries: List[EpochRecord]
    stop_reason: Optional[str]

    def __init__(self):
        self.entries = []
        self.stop_reason = None

    def append(self, record: EpochRecord):
        self.entries.append(record)

    def phase(self, name: str) -> List[EpochRecord]:
        return [e for e in self.entries if e.phase == name]

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return (
            isinstance(other, TrainLog)
            and self.entries == other.entries
            and self.stop_reason == other.stop_reason
        )

    def to_lines(self) -> List[str]:
        lines = [json.dumps(e._asdict(), sort_keys=True) for e in self.entries]
        lines.append(json.dumps({"stop_reason": self.stop_reason}, sort_keys=True))
        return lines

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.to_lines()) + "\n", encoding="utf8")
        return path

    @classmethod
    def read(cls, path: Union[str, Path]) -> "TrainLog":
        log = cls()
        for line in Path(path).read_text(encoding="utf8").splitlines():
            if not line.strip():
                continue
            item = json.loads(line)
            if "stop_reason" in item:
                log.stop_reason = item["stop_reason"]
            else:
                log.append(EpochRecord(**item))
        return log
