"""8-bit image encoding of [-1, 1] arrays."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError


class ImageIOError(ValueError):
    pass


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Map [-1, 1] to [0, 255] by round((v + 1) * 127.5)."""
    quant = np.round((values.astype(np.float64) + 1.0) * 127.5)
    return np.clip(quant, 0, 255).astype(np.uint8)


def encode_image(path: str | Path, values: np.ndarray) -> None:
    """Write a (3, h, w) array with values in [-1, 1] as an 8-bit RGB PNG."""
    path = Path(path)
    if values.ndim != 3 or values.shape[0] != 3:
        raise ImageIOError(f"{path}: expected (3, h, w) values, got {values.shape}")
    if path.suffix.lower() not in (".png",):
        raise ImageIOError(f"{path}: unsupported output format (PNG only)")
    arr = to_uint8(values).transpose(1, 2, 0)
    try:
        Image.fromarray(arr, mode="RGB").save(path, format="PNG")
    except OSError as e:
        raise ImageIOError(f"cannot write image {path}: {e}") from None


def decode_image(path: str | Path) -> np.ndarray:
    """Read an RGB image back into a (3, h, w) float32 array in [-1, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except UnidentifiedImageError:
        raise ImageIOError(f"{path}: unsupported or corrupt image format") from None
    except OSError as e:
        raise ImageIOError(f"cannot read image {path}: {e}") from None
    return (arr / 127.5 - 1.0).transpose(2, 0, 1)
