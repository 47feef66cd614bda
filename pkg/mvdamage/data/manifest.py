import hashlib
import json
import logging
import typing
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from mvdamage.models import VIEW_ROLES, DamageState, ViewRole

MANIFEST_VERSION = "mvdamage-manifest/1"
MANIFEST_NAME = "manifest.json"
SPLITS = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.8, 0.1, 0.1)

logger = logging.getLogger(__name__)


class ManifestError(ValueError):
    building_id: Optional[str]

    def __init__(self, message: str, building_id: Optional[str] = None):
        if building_id is not None:
            message = f"building {building_id}: {message}"
        super().__init__(message)
        self.building_id = building_id


class ViewDict(typing.TypedDict):
    role: str
    image: str
    mask: str


class SampleDict(typing.TypedDict):
    building_id: str
    label: int
    views: typing.List[ViewDict]
    provenance: dict


class ManifestDict(typing.TypedDict):
    version: str
    samples: typing.List[SampleDict]
    splits: typing.Dict[str, str]


class ViewFiles(NamedTuple):
    role: ViewRole
    image: str
    mask: str


class MultiViewSample(NamedTuple):
    """One building: five views (image + building mask each) and a damage label.
    Paths are relative to the dataset root."""

    building_id: str
    label: DamageState
    views: Tuple[ViewFiles, ...]
    provenance: dict

    def view(self, role: ViewRole) -> ViewFiles:
        for view in self.views:
            if view.role is role:
                return view
        raise KeyError(role)

    def to_dict(self) -> SampleDict:
        return SampleDict(
            building_id=self.building_id,
            label=int(self.label),
            views=[ViewDict(role=v.role.value, image=v.image, mask=v.mask) for v in self.views],
            provenance=self.provenance,
        )


def largest_remainder(total: int, fractions: Sequence[float]) -> List[int]:
    """Integer counts summing to total, proportional to fractions; leftover
    units go to the largest remainders, earlier entries first on ties"""
    exact = [total * f for f in fractions]
    counts = [int(np.floor(e)) for e in exact]
    remainders = [e - c for e, c in zip(exact, counts)]
    order = sorted(range(len(fractions)), key=lambda i: (-remainders[i], i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return counts


def _check_fractions(fractions: Sequence[float], count: int, what: str):
    if len(fractions) != count or any(f < 0 for f in fractions):
        raise ValueError(f"{what} needs {count} non-negative values, got {list(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-6:
        raise ValueError(f"{what} must sum to 1, got {sum(fractions)}")


class DatasetManifest:
    version: str
    root: Path
    samples: List[MultiViewSample]
    splits: Dict[str, str]

    def __init__(
        self,
        root: Union[str, Path],
        samples: Sequence[MultiViewSample],
        splits: Optional[Dict[str, str]] = None,
        version: str = MANIFEST_VERSION,
    ):
        self.root = Path(root)
        self.samples = list(samples)
        self.splits = dict(splits or {})
        self.version = version

    @property
    def path(self) -> Path:
        return self.root / MANIFEST_NAME

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, building_id: str) -> MultiViewSample:
        for sample in self.samples:
            if sample.building_id == building_id:
                return sample
        raise KeyError(building_id)

    def split(self, name: str) -> List[MultiViewSample]:
        if name not in SPLITS:
            raise ValueError(f"Unknown split {name!r}, expected one of {SPLITS}")
        return [s for s in self.samples if self.splits.get(s.building_id) == name]

    def split_counts(self) -> Dict[str, int]:
        return {name: len(self.split(name)) for name in SPLITS}

    def to_document(self) -> ManifestDict:
        return ManifestDict(
            version=self.version,
            samples=[s.to_dict() for s in self.samples],
            splits={b: self.splits[b] for b in sorted(self.splits)},
        )

    def dumps(self) -> str:
        return json.dumps(self.to_document(), sort_keys=True, indent=2) + "\n"

    def write(self, path: Optional[Union[str, Path]] = None) -> Path:
        path = Path(path) if path is not None else self.path
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(), encoding="utf8")
        logger.info("Manifest with %d buildings written to %s", len(self.samples), path)
        return path


def _parse_sample(raw: dict, root: Path, check_files: bool) -> MultiViewSample:
    if not isinstance(raw, dict):
        raise ManifestError(f"sample entry is not an object: {raw!r}")
    building_id = raw.get("building_id")
    if not isinstance(building_id, str) or not building_id:
        raise ManifestError("sample without building_id")

    label = raw.get("label")
    if isinstance(label, bool) or not isinstance(label, int) or not 0 <= label <= 4:
        raise ManifestError(f"label {label!r} outside DS-0..DS-4", building_id)

    raw_views = raw.get("views", [])
    if not isinstance(raw_views, list):
        raise ManifestError("views is not a list", building_id)
    views = []
    seen = set()
    for view in raw_views:
        if not isinstance(view, dict):
            raise ManifestError(f"view entry is not an object: {view!r}", building_id)
        try:
            role = ViewRole(view["role"])
        except (KeyError, TypeError, ValueError):
            raise ManifestError(f"unknown view role {view.get('role')!r}", building_id)
        if role in seen:
            raise ManifestError(f"duplicate view role {role.value}", building_id)
        seen.add(role)
        for key in ("image", "mask"):
            if not isinstance(view.get(key), str):
                raise ManifestError(f"view {role.value} has no {key} path", building_id)
            if check_files and not (root / view[key]).is_file():
                raise ManifestError(f"missing file {view[key]}", building_id)
        views.append(ViewFiles(role, view["image"], view["mask"]))

    missing = [r.value for r in VIEW_ROLES if r not in seen]
    if missing:
        raise ManifestError(f"missing views {', '.join(missing)}", building_id)

    provenance = raw.get("provenance", {})
    if not isinstance(provenance, dict):
        raise ManifestError("provenance is not an object", building_id)

    views.sort(key=lambda v: VIEW_ROLES.index(v.role))
    return MultiViewSample(
        building_id=building_id,
        label=DamageState(label),
        views=tuple(views),
        provenance=provenance,
    )


def load_manifest(path: Union[str, Path], check_files: bool = True) -> DatasetManifest:
    """Read and validate a manifest file (or the manifest inside a dataset
    directory). Images are decoded later, on demand."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        document = json.loads(path.read_text(encoding="utf8"))
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ManifestError(f"manifest {path} is not valid JSON: {e}") from e

    if not isinstance(document, dict):
        raise ManifestError(f"manifest {path} is not a JSON object")
    if document.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"unsupported manifest version {document.get('version')!r}")
    for key, kind in (("samples", list), ("splits", dict)):
        if not isinstance(document.get(key, kind()), kind):
            raise ManifestError(f"manifest {key} is not a JSON {'array' if kind is list else 'object'}")

    root = path.parent
    samples = []
    known = set()
    for raw in document.get("samples", []):
        sample = _parse_sample(raw, root, check_files)
        if sample.building_id in known:
            raise ManifestError("duplicate building", sample.building_id)
        known.add(sample.building_id)
        samples.append(sample)

    splits = document.get("splits", {})
    for building_id, split in splits.items():
        if building_id not in known:
            raise ManifestError("split assigned to unknown building", building_id)
        if split not in SPLITS:
            raise ManifestError(f"unknown split {split!r}", building_id)

    return DatasetManifest(root, samples, splits, version=document["version"])


def split_dataset(
    manifest: DatasetManifest,
    fractions: Sequence[float] = DEFAULT_FRACTIONS,
    seed: int = 0,
) -> DatasetManifest:
    """Assign whole buildings to train/val/test after a seeded shuffle"""
    _check_fractions(fractions, len(SPLITS), "split fractions")
    counts = largest_remainder(len(manifest.samples), fractions)
    for name, count in zip(SPLITS, counts):
        if count == 0:
            raise ValueError(
                f"{name} split would be empty ({len(manifest.samples)} buildings, fractions {list(fractions)})"
            )

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(manifest.samples))
    splits = {}
    position = 0
    for name, count in zip(SPLITS, counts):
        for index in order[position : position + count]:
            splits[manifest.samples[index].building_id] = name
        position += count

    logger.info("Split %d buildings into %s", len(manifest.samples), dict(zip(SPLITS, counts)))
    return DatasetManifest(manifest.root, manifest.samples, splits, version=manifest.version)


def dataset_digest(root: Union[str, Path]) -> str:
    """BLAKE2b digest over the manifest and every file it references"""
    manifest = load_manifest(root)
    digest = hashlib.blake2b(digest_size=16)
    digest.update(manifest.path.read_bytes())
    for sample in manifest.samples:
        for view in sample.views:
            digest.update((manifest.root / view.image).read_bytes())
            digest.update((manifest.root / view.mask).read_bytes())
    return digest.hexdigest()
