"""Synthetic paired-modality benchmark with a known ideal fusion.

Every pair ships with its analytic ideal F* and four candidate "teacher"
outputs: the ideal itself plus three controlled degradations (blur, contrast
loss, additive noise). That makes selector correctness provable per pair and
gives training claims a ground-truth oracle without external datasets.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy import ndimage

from .data import FusionDataset, load_dataset
from .errors import ConfigError
from .imaging import box_kernel, clamp01, save_image

GENERATOR_VERSION = 1

FLAVORS = ("ivf-like", "mef-like", "mff-like")
TEACHERS = ("ideal", "blur", "contrast", "noise")


def _smooth_field(rng, size: int, cutoff: float) -> np.ndarray:
    """Band-limited noise in [0, 1]: gaussian-filtered white noise, rescaled."""
    field = ndimage.gaussian_filter(rng.standard_normal((size, size)), cutoff, mode="mirror")
    lo, hi = field.min(), field.max()
    return (field - lo) / (hi - lo) if hi > lo else np.full_like(field, 0.5)


def _add_disc(img, cy, cx, r, value):
    yy, xx = np.ogrid[: img.shape[0], : img.shape[1]]
    img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = value


def _add_rect(img, y0, x0, h, w, value):
    img[y0 : y0 + h, x0 : x0 + w] = value


def _add_shapes(rng, img, n_lo, n_hi, values):
    for _ in range(rng.integers(n_lo, n_hi)):
        value = rng.uniform(*values)
        if rng.integers(0, 2) == 0:
            _add_disc(img, rng.integers(0, img.shape[0]), rng.integers(0, img.shape[1]),
                      rng.integers(img.shape[0] // 12, img.shape[0] // 5), value)
        else:
            _add_rect(img, rng.integers(0, img.shape[0] - 8), rng.integers(0, img.shape[1] - 8),
                      rng.integers(img.shape[0] // 10, img.shape[0] // 3),
                      rng.integers(img.shape[1] // 10, img.shape[1] // 3), value)


def _latent_scene(rng, size: int) -> np.ndarray:
    """Bright shapes and fine texture over a darker smooth background."""
    scene = 0.2 + 0.25 * _smooth_field(rng, size, size / 8)
    _add_shapes(rng, scene, 3, 6, (0.5, 0.95))
    texture = ndimage.gaussian_filter(rng.standard_normal((size, size)), 0.7, mode="mirror")
    return clamp01(scene + 0.05 * texture)


def _ivf_like(rng, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Intensity-complementary pair: each modality owns most of its content."""
    background = 0.25 + 0.2 * _smooth_field(rng, size, size / 7)
    # modality A: low-frequency structure plus exclusive bright blobs with
    # sharp-enough cores to carry real edge mass
    a = ndimage.gaussian_filter(background, 2.0, mode="mirror") * 0.7
    for _ in range(rng.integers(4, 7)):
        blob = np.zeros_like(a)
        _add_disc(blob, rng.integers(6, size - 6), rng.integers(6, size - 6),
                  rng.integers(size // 16, size // 8), 1.0)
        # blobs stay brighter than any modality-B content so the ideal fusion
        # keeps their edges at high contrast
        a += rng.uniform(0.7, 0.95) * ndimage.gaussian_filter(blob, 0.7, mode="mirror")
    # modality B: sharp exclusive shapes, edge segments, and fine texture
    b = background * 0.8
    _add_shapes(rng, b, 3, 6, (0.45, 0.75))
    for _ in range(rng.integers(2, 5)):
        y0, x0 = rng.integers(4, size - 12, size=2)
        if rng.integers(0, 2):
            b[y0 : y0 + rng.integers(8, size // 3), x0 : x0 + 2] = rng.uniform(0.7, 0.9)
        else:
            b[y0 : y0 + 2, x0 : x0 + rng.integers(8, size // 3)] = rng.uniform(0.7, 0.9)
    b = b + 0.04 * ndimage.gaussian_filter(rng.standard_normal((size, size)), 0.7, mode="mirror")
    return clamp01(a), clamp01(b)


def _mef_like(rng, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Over/under-exposed renderings of one full-range latent scene; each
    exposure clips away a substantial region, so information is disjoint."""
    latent = 0.1 + 0.75 * _smooth_field(rng, size, size / 8)
    _add_shapes(rng, latent, 3, 6, (0.15, 0.95))
    latent = clamp01(
        latent + 0.05 * ndimage.gaussian_filter(rng.standard_normal((size, size)), 0.7, mode="mirror")
    )
    under = clamp01(1.7 * (latent - rng.uniform(0.38, 0.46)))
    over = clamp01(rng.uniform(1.8, 2.0) * latent + 0.03)
    return under, over


def mff_components(rng, size: int):
    """(latent, mask, A, B) for a multi-focus pair: near-binary complementary
    masks with a thin seam select which half of the scene each modality
    renders sharp. Defocus both blurs and attenuates local contrast toward
    the smooth scene, as a real lens does."""
    latent = _latent_scene(rng, size)
    smooth = ndimage.gaussian_filter(latent, 8.0, mode="mirror")
    blurred = smooth + 0.7 * (ndimage.gaussian_filter(latent, 2.0, mode="mirror") - smooth)
    field = _smooth_field(rng, size, size / 6)
    mask = np.clip((field - 0.5) / 0.02 + 0.5, 0.0, 1.0)
    a = clamp01(mask * latent + (1.0 - mask) * blurred)
    b = clamp01((1.0 - mask) * latent + mask * blurred)
    return latent, mask, a, b


def _mff_like(rng, size: int) -> tuple[np.ndarray, np.ndarray]:
    _, _, a, b = mff_components(rng, size)
    return a, b


_FLAVOR_FNS = {"ivf-like": _ivf_like, "mef-like": _mef_like, "mff-like": _mff_like}


def ideal_fusion(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """F* = clamp of the fixed 50/50 mix of max(A, B) and the plain average."""
    return clamp01(0.5 * np.maximum(a, b) + 0.5 * (a + b) / 2.0)


def degrade(fstar: np.ndarray, kind: str, rng) -> np.ndarray:
    if kind == "ideal":
        return fstar.copy()
    if kind == "blur":
        return clamp01(ndimage.convolve(fstar, box_kernel(5), mode="mirror"))
    if kind == "contrast":
        return clamp01(0.55 * (fstar - fstar.mean()) + fstar.mean())
    if kind == "noise":
        return clamp01(fstar + 0.06 * rng.standard_normal(fstar.shape))
    raise ValueError(f"unknown degradation {kind!r}")


def generate_pair(seed: int, index: int, size: int, flavor: str):
    """Deterministic per-pair generation; safe to parallelize across pairs."""
    rng = np.random.default_rng([GENERATOR_VERSION, seed, index])
    a, b = _FLAVOR_FNS[flavor](rng, size)
    fstar = ideal_fusion(a, b)
    teachers = {name: degrade(fstar, name, rng) for name in TEACHERS}
    return a, b, fstar, teachers


def generate(
    root,
    n_pairs: int,
    size: int = 96,
    seed: int = 0,
    flavor: str = "ivf-like",
    task: str | None = None,
    val_fraction: float = 0.2,
) -> FusionDataset:
    """Write a full synthetic task directory in the standard layout."""
    if flavor not in FLAVORS:
        raise ConfigError(f"task_flavor must be one of {FLAVORS}, got {flavor!r}")
    if size % 16:
        raise ConfigError(f"size must be divisible by 16, got {size}")
    if n_pairs < 1:
        raise ConfigError("n_pairs must be positive")
    task = task or flavor.replace("-like", "")
    tdir = Path(root) / task
    for sub in ("modA", "modB", "fstar", *(f"candidates/{t}" for t in TEACHERS)):
        (tdir / sub).mkdir(parents=True, exist_ok=True)

    ids = []
    for index in range(n_pairs):
        pid = f"{task}_{index:05d}"
        ids.append(pid)
        a, b, fstar, teachers = generate_pair(seed, index, size, flavor)
        save_image(tdir / "modA" / f"{pid}.png", a, bit_depth=16)
        save_image(tdir / "modB" / f"{pid}.png", b, bit_depth=16)
        save_image(tdir / "fstar" / f"{pid}.png", fstar, bit_depth=16)
        for name, img in teachers.items():
            save_image(tdir / "candidates" / name / f"{pid}.png", img, bit_depth=16)

    n_val = max(1, int(round(n_pairs * val_fraction))) if n_pairs > 1 else 0
    split = {"train": ids[: n_pairs - n_val], "val": ids[n_pairs - n_val :]}
    (tdir / "split.json").write_text(json.dumps(split, indent=1, sort_keys=True))
    return load_dataset(root, task)
