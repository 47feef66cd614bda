import logging
from typing import Any, Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import cv2
import numpy as np

AUGMENT_KINDS = (
    "horizontal-flip",
    "affine",
    "perspective",
    "brightness-contrast",
    "color-shift",
    "blur",
    "sharpen",
    "gaussian-noise",
    "random-crop",
)
GEOMETRIC_KINDS = frozenset({"horizontal-flip", "affine", "perspective", "random-crop"})

# Chance that a training sample gets each op
DEFAULT_PROBABILITIES: Mapping[str, float] = {
    "horizontal-flip": 0.5,
    "affine": 0.5,
    "perspective": 0.3,
    "brightness-contrast": 0.5,
    "color-shift": 0.3,
    "blur": 0.2,
    "sharpen": 0.2,
    "gaussian-noise": 0.3,
    "random-crop": 0.3,
}

MAX_ROTATION = 15.0
MAX_TRANSLATION = 0.1
SCALE_RANGE = (0.9, 1.1)
MAX_PERSPECTIVE = 0.1
MAX_BRIGHTNESS = 0.2
MAX_CONTRAST = 0.2
MAX_COLOR_GAIN = 0.1
BLUR_KERNEL = 3
MAX_NOISE_SIGMA = 0.05
MIN_CROP_AREA = 0.8
MAX_REDRAWS = 100

SHARPEN_KERNEL = np.array([[0, -1, 0], [-1, 5, -1], [0, -1, 0]], np.float32)

logger = logging.getLogger(__name__)


class AugmentError(ValueError):
    pass


class AugmentOp(NamedTuple):
    kind: str
    params: Dict[str, Any]
    seed: int

    @property
    def geometric(self) -> bool:
        return self.kind in GEOMETRIC_KINDS


def _affine_params(rng: np.random.Generator, height: int, width: int) -> Optional[Dict[str, Any]]:
    angle = float(rng.uniform(-MAX_ROTATION, MAX_ROTATION))
    scale = float(rng.uniform(*SCALE_RANGE))
    tx, ty = rng.uniform(-MAX_TRANSLATION, MAX_TRANSLATION, 2)
    matrix = cv2.getRotationMatrix2D((width / 2.0, height / 2.0), angle, scale)
    matrix[:, 2] += (tx * width, ty * height)
    if abs(np.linalg.det(matrix[:, :2])) < 1e-6:
        return None
    return {"matrix": matrix.tolist()}


def _perspective_params(rng: np.random.Generator, height: int, width: int) -> Optional[Dict[str, Any]]:
    src = np.array([[0, 0], [width - 1, 0], [width - 1, height - 1], [0, height - 1]], np.float32)
    offsets = rng.uniform(-MAX_PERSPECTIVE, MAX_PERSPECTIVE, (4, 2)) * (width, height)
    dst = (src + offsets).astype(np.float32)
    matrix = cv2.getPerspectiveTransform(src, dst)
    if not np.all(np.isfinite(matrix)) or abs(np.linalg.det(matrix)) < 1e-6:
        return None
    return {"matrix": matrix.tolist()}


def _crop_params(rng: np.random.Generator, height: int, width: int) -> Optional[Dict[str, Any]]:
    area = rng.uniform(MIN_CROP_AREA, 1.0)
    aspect = rng.uniform(0.9, 1.1)
    crop_w = min(width, int(round(width * np.sqrt(area * aspect))))
    crop_h = min(height, int(round(height * np.sqrt(area / aspect))))
    if crop_w * crop_h < MIN_CROP_AREA * width * height:
        return None
    x = int(rng.integers(0, width - crop_w + 1))
    y = int(rng.integers(0, height - crop_h + 1))
    return {"x": x, "y": y, "width": crop_w, "height": crop_h}


def _draw_params(kind: str, rng: np.random.Generator, height: int, width: int) -> Optional[Dict[str, Any]]:
    if kind == "horizontal-flip":
        return {}
    if kind == "affine":
        return _affine_params(rng, height, width)
    if kind == "perspective":
        return _perspective_params(rng, height, width)
    if kind == "random-crop":
        return _crop_params(rng, height, width)
    if kind == "brightness-contrast":
        return {
            "contrast": float(rng.uniform(1.0 - MAX_CONTRAST, 1.0 + MAX_CONTRAST)),
            "brightness": float(rng.uniform(-MAX_BRIGHTNESS, MAX_BRIGHTNESS)),
        }
    if kind == "color-shift":
        return {"gains": rng.uniform(1.0 - MAX_COLOR_GAIN, 1.0 + MAX_COLOR_GAIN, 3).tolist()}
    if kind == "blur":
        return {"kernel": BLUR_KERNEL}
    if kind == "sharpen":
        return {"amount": float(rng.uniform(0.3, 1.0))}
    if kind == "gaussian-noise":
        return {"sigma": float(rng.uniform(0.0, MAX_NOISE_SIGMA)), "noise_seed": int(rng.integers(2 ** 31))}
    raise AugmentError(f"Unknown augmentation {kind!r}, expected one of {AUGMENT_KINDS}")


def sample_op(kind: str, seed: int, size: Tuple[int, int]) -> AugmentOp:
    """Draw the parameters of one op from its seed; degenerate draws are
    re-drawn from the same stream"""
    height, width = size
    rng = np.random.default_rng(seed)
    for attempt in range(MAX_REDRAWS):
        params = _draw_params(kind, rng, height, width)
        if params is not None:
            return AugmentOp(kind, params, seed)
        logger.debug("Degenerate %s draw %d for seed %d, redrawing", kind, attempt, seed)
    raise AugmentError(f"No valid {kind} parameters after {MAX_REDRAWS} draws (seed {seed})")


def sample_ops(
    seed: int,
    size: Tuple[int, int],
    kinds: Sequence[str] = AUGMENT_KINDS,
    probabilities: Mapping[str, float] = DEFAULT_PROBABILITIES,
) -> List[AugmentOp]:
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    ops = []
    for kind in kinds:
        if rng.random() < probabilities.get(kind, 0.0):
            ops.append(sample_op(kind, int(rng.integers(2 ** 31)), size))
    return ops


def _warp(op: AugmentOp, stacked: np.ndarray) -> np.ndarray:
    height, width = stacked.shape[:2]
    if op.kind == "horizontal-flip":
        return stacked[:, ::-1]
    if op.kind == "affine":
        matrix = np.array(op.params["matrix"], np.float64)
        return cv2.warpAffine(
            stacked,
            matrix,
            (width, height),
            flags=cv2.INTER_NEAREST,
            borderMode=cv2.BORDER_CONSTANT,
            borderValue=(0, 0, 0, 0),
        )
    if op.kind == "perspective":
        matrix = np.array(op.params["matrix"], np.float64)
        return cv2.warpPerspective(
            stacked,
            matrix,
            (width, height),
            flags=cv2.INTER_NEAREST,
            borderMode=cv2.BORDER_CONSTANT,
            borderValue=(0, 0, 0, 0),
        )
    if op.kind == "random-crop":
        p = op.params
        crop = stacked[p["y"] : p["y"] + p["height"], p["x"] : p["x"] + p["width"]]
        return cv2.resize(np.ascontiguousarray(crop), (width, height), interpolation=cv2.INTER_NEAREST)
    raise AugmentError(f"{op.kind} is not a geometric op")


def _photometric(op: AugmentOp, image: np.ndarray) -> np.ndarray:
    p = op.params
    if op.kind == "brightness-contrast":
        return (image - 0.5) * p["contrast"] + 0.5 + p["brightness"]
    if op.kind == "color-shift":
        return image * np.array(p["gains"], np.float32)
    if op.kind == "blur":
        k = p["kernel"]
        return cv2.GaussianBlur(image, (k, k), 0)
    if op.kind == "sharpen":
        sharpened = cv2.filter2D(image, -1, SHARPEN_KERNEL)
        return (1.0 - p["amount"]) * image + p["amount"] * sharpened
    if op.kind == "gaussian-noise":
        noise = np.random.default_rng(p["noise_seed"]).normal(0.0, p["sigma"], image.shape)
        return image + noise
    raise AugmentError(f"{op.kind} is not a photometric op")


def augment(image: np.ndarray, mask: np.ndarray, ops: Sequence[AugmentOp]) -> Tuple[np.ndarray, np.ndarray]:
    """Apply ops in order to a 3×H×W image in [0, 1] and its H×W binary mask.
    Geometric ops move the mask with the image (nearest-neighbour sampling
    for both), photometric ops leave the mask untouched."""
    assert image.ndim == 3 and image.shape[0] == 3, image.shape
    assert mask.shape == image.shape[1:], (mask.shape, image.shape)

    hwc = np.ascontiguousarray(image.transpose(1, 2, 0), dtype=np.float32)
    mask = np.asarray(mask, np.uint8)
    for op in ops:
        if op.geometric:
            stacked = np.dstack([hwc, mask.astype(np.float32)])
            warped = np.ascontiguousarray(_warp(op, stacked))
            hwc = np.ascontiguousarray(warped[:, :, :3])
            mask = (warped[:, :, 3] > 0.5).astype(np.uint8)
        else:
            hwc = _photometric(op, hwc).astype(np.float32)
        hwc = np.clip(hwc, 0.0, 1.0)

    return np.ascontiguousarray(hwc.transpose(2, 0, 1)), mask


def random_augment(
    image: np.ndarray,
    mask: np.ndarray,
    seed: int,
    kinds: Sequence[str] = AUGMENT_KINDS,
) -> Tuple[np.ndarray, np.ndarray]:
    return augment(image, mask, sample_ops(seed, image.shape[1:], kinds))
