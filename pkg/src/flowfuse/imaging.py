"""Pixel-level primitives: image validation, I/O, filtering, gradients, histograms.

Images are plain numpy float arrays in [0, 1], shape (H, W) for single-channel
or (H, W, 3) for RGB. Every operation here is a pure function; border handling
is whole-sample reflect padding throughout (np.pad mode="reflect", which is
scipy.ndimage mode="mirror").
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import DataError

MIN_SIDE = 8

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = np.array([[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]])

BT601 = np.array([0.299, 0.587, 0.114])


def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Check shape/finiteness and return the array as float64."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim not in (2, 3):
        raise ValueError(f"{name}: expected a 2-D or 3-D array, got ndim={arr.ndim}")
    if arr.ndim == 3 and arr.shape[2] != 3:
        raise ValueError(f"{name}: channel count must be 1 or 3, got {arr.shape[2]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    return arr


def clamp01(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


def channels(img: np.ndarray) -> int:
    return 1 if img.ndim == 2 else img.shape[2]


def load_image(path) -> np.ndarray:
    """Read an 8- or 16-bit PNG into a [0, 1] float array.

    Intensities are mapped linearly; an alpha channel is dropped. Raises
    DataError on missing files, unsupported dtypes, or images smaller than 8x8.
    """
    import cv2

    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DataError(f"{path}: cannot read image")
    if raw.dtype == np.uint8:
        arr = raw.astype(np.float64) / 255.0
    elif raw.dtype == np.uint16:
        arr = raw.astype(np.float64) / 65535.0
    else:
        raise DataError(f"{path}: unsupported image dtype {raw.dtype}")
    if arr.ndim == 3:
        if arr.shape[2] == 4:
            arr = arr[:, :, :3]
        if arr.shape[2] == 3:
            arr = arr[:, :, ::-1]  # BGR -> RGB
        elif arr.shape[2] == 1:
            arr = arr[:, :, 0]
    if arr.shape[0] < MIN_SIDE or arr.shape[1] < MIN_SIDE:
        raise DataError(f"{path}: image must be at least {MIN_SIDE}x{MIN_SIDE}, got {arr.shape[:2]}")
    return clamp01(validate_image(arr, str(path)))


def save_image(path, img: np.ndarray, bit_depth: int = 8) -> None:
    """Write a [0, 1] image as PNG, quantized with round-half-even."""
    import cv2

    if bit_depth not in (8, 16):
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    arr = clamp01(validate_image(img))
    scale = (1 << bit_depth) - 1
    quantized = np.rint(arr * scale).astype(np.uint8 if bit_depth == 8 else np.uint16)
    if quantized.ndim == 3:
        quantized = quantized[:, :, ::-1]  # RGB -> BGR
    if not cv2.imwrite(str(path), quantized):
        raise DataError(f"{path}: cannot write image")


def box_kernel(size: int = 5) -> np.ndarray:
    """The average filter: a size x size sum-to-one box. Default 5x5."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"kernel side must be odd and positive, got {size}")
    return np.full((size, size), 1.0 / (size * size))


def validate_kernel(kernel: np.ndarray, sum_to_one: bool = False) -> np.ndarray:
    arr = np.asarray(kernel, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] % 2 == 0 or arr.shape[1] % 2 == 0:
        raise ValueError(f"kernel must be 2-D with odd sides, got shape {arr.shape}")
    if sum_to_one and abs(arr.sum() - 1.0) > 1e-9:
        raise ValueError(f"kernel must sum to 1, got {arr.sum()!r}")
    return arr


def convolve(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """True 2-D convolution with reflect padding; same output shape.

    Multi-channel images are filtered per channel. Raises ValueError when the
    kernel does not fit inside the image.
    """
    arr = validate_image(img)
    k = validate_kernel(kernel)
    if max(k.shape) > min(arr.shape[0], arr.shape[1]):
        raise ValueError(
            f"kernel {k.shape} larger than image {arr.shape[:2]}"
        )
    if arr.ndim == 2:
        return ndimage.convolve(arr, k, mode="mirror")
    return np.stack(
        [ndimage.convolve(arr[:, :, c], k, mode="mirror") for c in range(arr.shape[2])],
        axis=2,
    )


def sobel_components(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(gx, gy) from 3x3 Sobel convolution with reflect padding. Single-channel."""
    arr = validate_image(img)
    if arr.ndim != 2:
        arr = to_luminance(arr)
    gx = ndimage.convolve(arr, SOBEL_X, mode="mirror")
    gy = ndimage.convolve(arr, SOBEL_Y, mode="mirror")
    return gx, gy


def gradient_magnitude(img: np.ndarray) -> np.ndarray:
    """Per-pixel sqrt(gx^2 + gy^2) of the Sobel response."""
    gx, gy = sobel_components(img)
    return np.sqrt(gx * gx + gy * gy)


def histogram256(img: np.ndarray) -> np.ndarray:
    """256-bin probability vector over [0, 1]; bin b covers [b/256, (b+1)/256),
    with the last bin closed at 1. Out-of-range values raise ValueError."""
    arr = validate_image(img)
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(
            f"histogram256 requires values in [0, 1], got [{arr.min()}, {arr.max()}]"
        )
    idx = np.minimum((arr * 256.0).astype(np.int64), 255)
    counts = np.bincount(idx.ravel(), minlength=256).astype(np.float64)
    return counts / counts.sum()


def to_luminance(img: np.ndarray) -> np.ndarray:
    """BT.601 luminance for RGB; single-channel images pass through."""
    arr = validate_image(img)
    if arr.ndim == 2:
        return arr
    return arr @ BT601
