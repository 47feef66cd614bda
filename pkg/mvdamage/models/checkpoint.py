"""Checkpoint files: magic, header length, JSON header, float32 payload.

The header holds the architecture descriptor, the ordered parameter table
(name, shape, frozen) and the payload byte length. The payload is every
parameter flattened in table order as little-endian float32.
"""
import json
import logging
import struct
from pathlib import Path
from typing import List, Union

import numpy as np

from .classification import MODEL_C_KIND, ModelC
from .localization import MODEL_L_KIND, ModelL
from .schema import ArchitectureDict, ArchitectureError, ClassifierConfig, LocalizationConfig

logger = logging.getLogger(__name__)

MAGIC = b"MVDCKPT1"
FORMAT_VERSION = 1
PAYLOAD_DTYPE = np.dtype("<f4")

Model = Union[ModelL, ModelC]


class CheckpointError(ValueError):
    def __init__(self, path, reason: str):
        super().__init__(f"Invalid checkpoint {path}: {reason}")
        self.path = path


def build_model(architecture: ArchitectureDict, seed: int = 0) -> Model:
    kind = architecture["kind"]
    if kind == MODEL_L_KIND:
        return ModelL(LocalizationConfig.from_dict(architecture["config"]), seed=seed)
    elif kind == MODEL_C_KIND:
        return ModelC(ClassifierConfig.from_dict(architecture["config"]), seed=seed)
    raise ArchitectureError(f"Unknown model kind {kind!r}")


def _header(model: Model) -> dict:
    table = [
        {"name": name, "shape": list(param.shape), "frozen": bool(param.frozen)}
        for name, param in model.named_parameters()
    ]
    payload_bytes = sum(int(np.prod(entry["shape"])) for entry in table) * PAYLOAD_DTYPE.itemsize
    return {
        "version": FORMAT_VERSION,
        "architecture": model.describe(),
        "parameters": table,
        "payload_bytes": payload_bytes,
    }


def save_checkpoint(model: Model, path: Union[str, Path]) -> Path:
    path = Path(path)
    header = json.dumps(_header(model), sort_keys=True).encode("utf8")
    payload = b"".join(
        np.ascontiguousarray(param.data, dtype=PAYLOAD_DTYPE).tobytes()
        for param in model.parameters()
    )

    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fp:
        fp.write(MAGIC)
        fp.write(struct.pack("<Q", len(header)))
        fp.write(header)
        fp.write(payload)

    logger.info("Checkpoint %s (%s, %d bytes) written", path, model.kind, len(payload))
    return path


def read_header(path: Union[str, Path]) -> dict:
    header, _ = _read(Path(path))
    return header


def _read(path: Path):
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise CheckpointError(path, f"cannot read ({e})") from e

    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(path, "not a checkpoint file (bad magic)")
    offset = len(MAGIC)
    if len(raw) < offset + 8:
        raise CheckpointError(path, "truncated header length")
    (header_length,) = struct.unpack("<Q", raw[offset : offset + 8])
    offset += 8
    if len(raw) < offset + header_length:
        raise CheckpointError(path, "truncated header")
    try:
        header = json.loads(raw[offset : offset + header_length].decode("utf8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(path, f"corrupt header ({e})") from e

    if not isinstance(header, dict):
        raise CheckpointError(path, "header is not a JSON object")
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(path, f"unsupported version {header.get('version')!r}")
    _check_header(path, header)
    return header, raw[offset + header_length :]


def _check_header(path: Path, header: dict):
    for key, kind in (("architecture", dict), ("parameters", list), ("payload_bytes", int)):
        if key not in header:
            raise CheckpointError(path, f"header missing {key}")
        if not isinstance(header[key], kind) or isinstance(header[key], bool):
            raise CheckpointError(path, f"header {key} is not a {kind.__name__}")
    for index, entry in enumerate(header["parameters"]):
        if (
            not isinstance(entry, dict)
            or not isinstance(entry.get("name"), str)
            or not isinstance(entry.get("shape"), list)
            or not all(isinstance(d, int) and not isinstance(d, bool) and d >= 0 for d in entry["shape"])
            or not isinstance(entry.get("frozen"), bool)
        ):
            raise CheckpointError(path, f"parameter table entry {index} is malformed")


def load_checkpoint(path: Union[str, Path]) -> Model:
    path = Path(path)
    header, payload = _read(path)

    table: List[dict] = header["parameters"]
    expected = sum(int(np.prod(entry["shape"])) for entry in table) * PAYLOAD_DTYPE.itemsize
    if header["payload_bytes"] != expected:
        raise CheckpointError(
            path, f"header payload length {header['payload_bytes']} != table size {expected}"
        )
    if len(payload) != expected:
        raise CheckpointError(path, f"payload is {len(payload)} bytes, expected {expected}")

    try:
        model = build_model(header["architecture"])
    except (KeyError, TypeError, AttributeError, ValueError) as e:
        raise CheckpointError(path, f"bad architecture ({e})") from e

    params = list(model.named_parameters())
    if len(params) != len(table):
        raise CheckpointError(
            path, f"architecture has {len(params)} parameters, table lists {len(table)}"
        )

    values = np.frombuffer(payload, dtype=PAYLOAD_DTYPE)
    offset = 0
    for (name, param), entry in zip(params, table):
        if name != entry["name"] or list(param.shape) != list(entry["shape"]):
            raise CheckpointError(
                path,
                f"parameter {entry['name']} {tuple(entry['shape'])} does not match "
                f"architecture parameter {name} {param.shape}",
            )
        count = param.size
        param.data = values[offset : offset + count].reshape(param.shape).astype(np.float32)
        param.grad = np.zeros_like(param.data)
        param.frozen = bool(entry["frozen"])
        offset += count

    logger.info("Checkpoint %s (%s) loaded", path, model.kind)
    return model
