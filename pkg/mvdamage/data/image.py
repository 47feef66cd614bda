from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

PathLike = Union[str, Path]


def to_uint8_rgb(image: np.ndarray) -> np.ndarray:
    """3×H×W floats in [0, 1] (or H×W×3 uint8) → contiguous H×W×3 uint8"""
    if image.dtype == np.uint8 and image.ndim == 3 and image.shape[2] == 3:
        return np.ascontiguousarray(image)
    assert image.ndim == 3 and image.shape[0] == 3, image.shape
    scaled = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    return np.ascontiguousarray(scaled.transpose(1, 2, 0))


def to_float_chw(image: np.ndarray) -> np.ndarray:
    """H×W×3 uint8 → 3×H×W float32 in [0, 1]"""
    assert image.ndim == 3 and image.shape[2] == 3, image.shape
    return np.ascontiguousarray(image.transpose(2, 0, 1), dtype=np.float32) / np.float32(255.0)


def np_save_image(image: np.ndarray, out: PathLike):
    """Write a grayscale (H×W) or RGB (H×W×3) uint8 array as PNG"""
    size = (image.shape[1], image.shape[0])
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    if image.ndim == 2:
        Image.frombuffer("L", size, np.ascontiguousarray(image).tobytes(), "raw", "L", 0, 1).save(
            out, format="PNG"
        )
    else:
        Image.frombuffer(
            "RGB", size, np.ascontiguousarray(image).tobytes(), "raw", "RGB", 0, 1
        ).save(out, format="PNG")


def save_image(image: np.ndarray, out: PathLike):
    np_save_image(to_uint8_rgb(image), out)


def save_mask(mask: np.ndarray, out: PathLike):
    """Binary mask stored as {0, 255} grayscale"""
    np_save_image((np.asarray(mask) > 0).astype(np.uint8) * 255, out)


def load_image(path: PathLike) -> np.ndarray:
    with Image.open(path) as image:
        rgb = np.array(image.convert("RGB"))
    return to_float_chw(rgb)


def load_mask(path: PathLike) -> np.ndarray:
    with Image.open(path) as image:
        gray = np.array(image.convert("L"))
    return (gray >= 128).astype(np.uint8)
