"""Divide-and-conquer pseudo-label refinement.

Three units: a Decomposition Unit (two lightweight conv autoencoders that
split the selected pseudo-label into modality components), a deterministic
Refinement Module (high-frequency detail injection gated by an adaptive
weight map and a gradient protection mask; its only learnable state is the
pair of injection scalars), and a Fusion Integrator (a dual-branch
encoder-decoder that re-fuses the refined components).

RM operations are pure numpy functions; DU and FI are torch modules with an
explicit trained flag that round-trips through checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .container import read_container, write_container
from .imaging import box_kernel, convolve, gradient_magnitude

SIGMOID_SLOPE = 6.0


@dataclass
class RefinerParams:
    """RM configuration: learnable injection scalars and the fixed threshold."""

    alpha_a: float = 0.5
    alpha_b: float = 0.5
    c: float = 0.10
    kernel_size: int = 5

    def kernel(self) -> np.ndarray:
        return box_kernel(self.kernel_size)

    def __post_init__(self):
        if self.c < 0:
            raise ValueError(f"protection threshold c must be >= 0, got {self.c}")
        for name in ("alpha_a", "alpha_b"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


def high_pass(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """High-frequency residual: img minus its low-pass (average-filtered) self."""
    return img - convolve(img, kernel)


def _per_channel(img, fn):
    if img.ndim == 2:
        return fn(img)
    return np.stack([fn(img[:, :, c]) for c in range(img.shape[2])], axis=2)


def weight_map(part: np.ndarray) -> np.ndarray:
    """Adaptive spatial weight: brightness gate times normalized edge energy.

    sigmoid(6 * (part - mean(part))) elementwise-times min-max-normalized
    Sobel gradient magnitude. Constant inputs have zero edge energy, so the
    map is zero everywhere (0/0 := 0 convention).
    """

    def single(ch):
        gate = 1.0 / (1.0 + np.exp(-SIGMOID_SLOPE * (ch - ch.mean())))
        energy = gradient_magnitude(ch)
        span = energy.max() - energy.min()
        if span == 0.0:
            return np.zeros_like(ch)
        return gate * (energy - energy.min()) / span

    return _per_channel(part, single)


def protection_mask(part: np.ndarray, c: float) -> np.ndarray:
    """ReLU-thresholded gradient magnitude: zero wherever gradient <= c."""
    return _per_channel(part, lambda ch: np.maximum(gradient_magnitude(ch) - c, 0.0))


def refine_component(
    if_plus: np.ndarray,
    part: np.ndarray,
    source: np.ndarray,
    alpha: float,
    c: float,
    kernel: np.ndarray,
) -> np.ndarray:
    """Inject gated high-frequency detail into the selected pseudo-label.

    detail = W * source_highpass + (1 - W) * part_highpass, confined by the
    protection mask; reduces to if_plus bit-exactly when alpha = 0.
    """
    if not (if_plus.shape == part.shape == source.shape):
        raise ValueError("refine_component requires same-shape images")
    w = weight_map(part)
    detail = w * high_pass(source, kernel) + (1.0 - w) * high_pass(part, kernel)
    p = protection_mask(part, c)
    return if_plus + alpha * detail * p


def _conv(in_ch, out_ch):
    return nn.Conv2d(in_ch, out_ch, 3, padding=1)


class _Autoencoder(nn.Module):
    """3-layer conv encoder (16/32/32) with a mirrored decoder, stride 1."""

    def __init__(self, channels: int = 1):
        super().__init__()
        self.net = nn.Sequential(
            _conv(channels, 16), nn.ReLU(),
            _conv(16, 32), nn.ReLU(),
            _conv(32, 32), nn.ReLU(),
            _conv(32, 32), nn.ReLU(),
            _conv(32, 16), nn.ReLU(),
            _conv(16, channels),
        )

    def forward(self, x):
        return torch.sigmoid(self.net(x))


class DecompositionUnit(nn.Module):
    """Two independent autoencoders mapping I_f+ to modality components."""

    def __init__(self, channels: int = 1):
        super().__init__()
        self.channels = channels
        self.branch_a = _Autoencoder(channels)
        self.branch_b = _Autoencoder(channels)
        self.register_buffer("trained_flag", torch.zeros(1))

    @property
    def trained(self) -> bool:
        return bool(self.trained_flag.item())

    def mark_trained(self):
        self.trained_flag.fill_(1.0)

    def forward(self, fused):
        return self.branch_a(fused), self.branch_b(fused)


class _Encoder(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.net = nn.Sequential(
            _conv(channels, 32), nn.ReLU(),
            _conv(32, 32), nn.ReLU(),
            _conv(32, 32), nn.ReLU(),
        )

    def forward(self, x):
        return self.net(x)


class FusionIntegrator(nn.Module):
    """Dual-branch encoder (width 32) -> channel concat -> 3-layer decoder."""

    def __init__(self, channels: int = 1):
        super().__init__()
        self.channels = channels
        self.enc_a = _Encoder(channels)
        self.enc_b = _Encoder(channels)
        self.decoder = nn.Sequential(
            _conv(64, 32), nn.ReLU(),
            _conv(32, 16), nn.ReLU(),
            _conv(16, channels),
        )
        self.register_buffer("trained_flag", torch.zeros(1))

    @property
    def trained(self) -> bool:
        return bool(self.trained_flag.item())

    def mark_trained(self):
        self.trained_flag.fill_(1.0)

    def forward(self, part_a, part_b):
        fused = self.decoder(torch.cat([self.enc_a(part_a), self.enc_b(part_b)], dim=1))
        return fused.clamp(0.0, 1.0)


def _to_tensor(img: np.ndarray) -> torch.Tensor:
    if img.ndim == 2:
        return torch.from_numpy(img.astype(np.float32))[None, None]
    return torch.from_numpy(img.astype(np.float32)).permute(2, 0, 1)[None]


def _to_image(t: torch.Tensor) -> np.ndarray:
    arr = t[0].detach().cpu().numpy()
    return arr[0].astype(np.float64) if arr.shape[0] == 1 else arr.transpose(1, 2, 0).astype(np.float64)


def decompose(if_plus: np.ndarray, du: DecompositionUnit) -> tuple[np.ndarray, np.ndarray]:
    """Split a fused image into modality components with a trained DU."""
    if not du.trained:
        raise RuntimeError("decomposition unit is untrained; run refiner stage 1 first")
    du.eval()
    with torch.no_grad():
        part_a, part_b = du(_to_tensor(if_plus))
    return _to_image(part_a), _to_image(part_b)


def integrate(part_a_plus: np.ndarray, part_b_plus: np.ndarray, fi: FusionIntegrator) -> np.ndarray:
    """Re-fuse refined components with a trained FI; output clamped to [0, 1]."""
    if not fi.trained:
        raise RuntimeError("fusion integrator is untrained; run refiner training first")
    fi.eval()
    with torch.no_grad():
        fused = fi(_to_tensor(part_a_plus), _to_tensor(part_b_plus))
    return _to_image(fused)


def refine(
    if_plus: np.ndarray,
    src_a: np.ndarray,
    src_b: np.ndarray,
    params: RefinerParams,
    du: DecompositionUnit,
    fi: FusionIntegrator,
) -> np.ndarray:
    """Full pipeline: decompose -> refine both components -> integrate."""
    part_a, part_b = decompose(if_plus, du)
    kernel = params.kernel()
    part_a_plus = refine_component(if_plus, part_a, src_a, params.alpha_a, params.c, kernel)
    part_b_plus = refine_component(if_plus, part_b, src_b, params.alpha_b, params.c, kernel)
    return integrate(part_a_plus, part_b_plus, fi)


def unsharp_refine(
    if_plus: np.ndarray, src_a: np.ndarray, src_b: np.ndarray, params: RefinerParams
) -> np.ndarray:
    """Alternate refiner variant (ablation slot): direct unsharp-mask boost of
    source high frequencies under the same protection mask, no DU/FI."""
    kernel = params.kernel()
    detail = 0.5 * (high_pass(src_a, kernel) + high_pass(src_b, kernel))
    p = protection_mask(if_plus, params.c)
    return np.clip(if_plus + 0.5 * (params.alpha_a + params.alpha_b) * detail * p, 0.0, 1.0)


def save_refiner(path, du: DecompositionUnit, fi: FusionIntegrator, params: RefinerParams, extra: dict | None = None):
    arrays = {}
    for prefix, module in (("du", du), ("fi", fi)):
        for name, p in sorted(module.state_dict().items()):
            arrays[f"{prefix}/{name}"] = p.detach().cpu().numpy()
    header = {
        "kind": "refiner",
        "channels": du.channels,
        "params": {
            "alpha_a": params.alpha_a,
            "alpha_b": params.alpha_b,
            "c": params.c,
            "kernel_size": params.kernel_size,
        },
        "extra": extra or {},
    }
    write_container(path, arrays, header)


def load_refiner(path) -> tuple[DecompositionUnit, FusionIntegrator, RefinerParams]:
    arrays, header = read_container(path)
    if header.get("kind") != "refiner":
        raise ValueError(f"{path}: not a refiner checkpoint")
    channels = int(header["channels"])
    du = DecompositionUnit(channels)
    fi = FusionIntegrator(channels)
    du.load_state_dict(
        {k[len("du/"):]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith("du/")}
    )
    fi.load_state_dict(
        {k[len("fi/"):]: torch.from_numpy(v) for k, v in arrays.items() if k.startswith("fi/")}
    )
    return du, fi, RefinerParams(**header["params"])
