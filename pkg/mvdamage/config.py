"""Run configuration: one JSON document describing the dataset, both models,
the three training schedules, the run seed and the output root."""

import json
import logging
import os
import typing
from pathlib import Path
from typing import NamedTuple, Optional, Tuple, Union

import numpy as np

from mvdamage.data.manifest import DEFAULT_FRACTIONS, SPLITS, _check_fractions
from mvdamage.data.synthetic import MIN_IMAGE_SIZE
from mvdamage.models import NUM_DAMAGE_STATES, ClassifierConfig, LocalizationConfig
from mvdamage.models.schema import ClassifierConfigDict, LocalizationConfigDict
from mvdamage.training import (
    MODEL_C_PHASE1,
    MODEL_C_PHASE2,
    MODEL_L_TRAINING,
    TrainConfig,
)
from mvdamage.training.schema import TrainConfigDict

ENV_OUTPUT_ROOT = "MVDAMAGE_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "runs"
CONFIG_NAME = "run_config.json"
TRAIN_SECTIONS = ("train_l", "train_c_phase1", "train_c_phase2")

# SeedSequence stream ids, one per consumer of the run seed
STREAM_MODEL_L = 1
STREAM_MODEL_C = 2
STREAM_TRAIN = 3
STREAM_ABLATE = 4

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class DatasetSectionDict(typing.TypedDict):
    path: typing.Optional[str]
    n_buildings: int
    class_mix: typing.List[float]
    directional_fraction: float
    split_fractions: typing.List[float]
    image_size: int


class RunConfigDict(typing.TypedDict):
    dataset: DatasetSectionDict
    model_l: LocalizationConfigDict
    model_c: ClassifierConfigDict
    train_l: TrainConfigDict
    train_c_phase1: TrainConfigDict
    train_c_phase2: TrainConfigDict
    seed: int
    output: typing.Optional[str]


class DatasetSection(NamedTuple):
    # existing dataset root; None means generate from the fields below
    path: Optional[str] = None
    n_buildings: int = 40
    class_mix: Tuple[float, ...] = (0.2,) * NUM_DAMAGE_STATES
    directional_fraction: float = 0.3
    split_fractions: Tuple[float, ...] = DEFAULT_FRACTIONS
    image_size: int = 64

    def validate(self):
        if self.n_buildings < 5:
            raise ConfigError(f"dataset.n_buildings must be >= 5, got {self.n_buildings}")
        if not 0.0 <= self.directional_fraction <= 1.0:
            raise ConfigError(f"dataset.directional_fraction must be in [0, 1], got {self.directional_fraction}")
        if self.image_size < MIN_IMAGE_SIZE:
            raise ConfigError(f"dataset.image_size must be >= {MIN_IMAGE_SIZE}, got {self.image_size}")
        try:
            _check_fractions(self.class_mix, NUM_DAMAGE_STATES, "dataset.class_mix")
            _check_fractions(self.split_fractions, len(SPLITS), "dataset.split_fractions")
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def to_dict(self) -> DatasetSectionDict:
        return DatasetSectionDict(
            path=self.path,
            n_buildings=self.n_buildings,
            class_mix=list(self.class_mix),
            directional_fraction=self.directional_fraction,
            split_fractions=list(self.split_fractions),
            image_size=self.image_size,
        )

    @classmethod
    def from_dict(cls, data: DatasetSectionDict) -> "DatasetSection":
        return cls(
            path=data["path"],
            n_buildings=int(data["n_buildings"]),
            class_mix=tuple(float(v) for v in data["class_mix"]),
            directional_fraction=float(data["directional_fraction"]),
            split_fractions=tuple(float(v) for v in data["split_fractions"]),
            image_size=int(data["image_size"]),
        )


def derive_seed(seed: int, *stream: int) -> int:
    return int(np.random.SeedSequence([seed, *stream]).generate_state(1)[0])


class RunConfig(NamedTuple):
    dataset: DatasetSection = DatasetSection()
    model_l: LocalizationConfig = LocalizationConfig()
    model_c: ClassifierConfig = ClassifierConfig()
    train_l: TrainConfig = MODEL_L_TRAINING
    train_c_phase1: TrainConfig = MODEL_C_PHASE1
    train_c_phase2: TrainConfig = MODEL_C_PHASE2
    seed: int = 0
    output: Optional[str] = None

    def validate(self):
        self.dataset.validate()
        self.model_l.validate()
        self.model_c.validate()
        for name in TRAIN_SECTIONS:
            getattr(self, name).validate()

    def to_dict(self) -> RunConfigDict:
        return RunConfigDict(
            dataset=self.dataset.to_dict(),
            model_l=self.model_l.to_dict(),
            model_c=self.model_c.to_dict(),
            train_l=self.train_l.to_dict(),
            train_c_phase1=self.train_c_phase1.to_dict(),
            train_c_phase2=self.train_c_phase2.to_dict(),
            seed=self.seed,
            output=self.output,
        )

    @classmethod
    def from_dict(cls, data: RunConfigDict) -> "RunConfig":
        try:
            config = cls(
                dataset=DatasetSection.from_dict(data["dataset"]),
                model_l=LocalizationConfig.from_dict(data["model_l"]),
                model_c=ClassifierConfig.from_dict(data["model_c"]),
                train_l=TrainConfig.from_dict(data["train_l"]),
                train_c_phase1=TrainConfig.from_dict(data["train_c_phase1"]),
                train_c_phase2=TrainConfig.from_dict(data["train_c_phase2"]),
                seed=int(data["seed"]),
                output=data["output"],
            )
            config.validate()
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"Invalid run config: {e}") from e
        return config

    def output_dir(self, override: Optional[Union[str, Path]] = None) -> Path:
        """Flag, then config, then $MVDAMAGE_OUTPUT_ROOT, then ./runs"""
        for candidate in (override, self.output, os.environ.get(ENV_OUTPUT_ROOT)):
            if candidate:
                return Path(candidate)
        return Path(DEFAULT_OUTPUT_ROOT)

    def training(self, section: str) -> TrainConfig:
        """The section's schedule with its seed mixed with the run seed"""
        assert section in TRAIN_SECTIONS, section
        config: TrainConfig = getattr(self, section)
        stream = TRAIN_SECTIONS.index(section)
        return config._replace(seed=derive_seed(self.seed, STREAM_TRAIN, stream, config.seed))

    def with_max_epochs(self, epochs: int) -> "RunConfig":
        if epochs < 1:
            raise ConfigError(f"max epochs must be >= 1, got {epochs}")
        return self._replace(
            **{name: getattr(self, name)._replace(max_epochs=epochs) for name in TRAIN_SECTIONS}
        )


def default_run_config() -> RunConfig:
    return RunConfig()


def _merge(base: dict, override: dict, path: str = "") -> dict:
    merged = dict(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"Unknown config key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            merged[key] = _merge(base[key], value, where + ".")
        else:
            merged[key] = value
    return merged


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """User document deep-merged over the defaults; unknown keys are errors"""
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf8"))
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config {path} is not valid JSON: {e}") from e
    if not isinstance(document, dict):
        raise ConfigError(f"Config {path} must be a JSON object")

    merged = _merge(default_run_config().to_dict(), document)
    config = RunConfig.from_dict(merged)
    logger.info("Loaded run config from %s", path)
    return config


def archive_run_config(config: RunConfig, out_dir: Union[str, Path]) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / CONFIG_NAME
    path.write_text(json.dumps(config.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf8")
    return path
