"""Flow-matching mathematics: source coupling, linear path, L1 loss, Euler
sampling, and the coupling-distance experiment.

The transport path is the straight line from the coupled source x0 to the
pseudo ground truth x1; its target vector field is the constant x1 - x0, so
single-step Euler integration is exact once the field is learned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import NumericError

COUPLING_MODES = ("average", "sum", "noise")


@dataclass
class FlowConfig:
    sigma_min: float = 1e-4
    coupling: str = "average"
    n_sample_steps: int = 1

    def __post_init__(self):
        if self.sigma_min < 0:
            raise ValueError(f"sigma_min must be >= 0, got {self.sigma_min}")
        if self.coupling not in COUPLING_MODES:
            raise ValueError(f"coupling must be one of {COUPLING_MODES}, got {self.coupling!r}")
        if self.n_sample_steps < 1:
            raise ValueError(f"n_sample_steps must be >= 1, got {self.n_sample_steps}")


@dataclass
class FlowSample:
    """One training tuple along the interpolation path."""

    x0a: np.ndarray
    x0b: np.ndarray
    x0: np.ndarray
    x1: np.ndarray
    t: float
    xt: np.ndarray
    u_target: np.ndarray


def build_flow_sample(
    x0a: np.ndarray,
    x0b: np.ndarray,
    x1: np.ndarray,
    t: float,
    cfg: FlowConfig,
    rng=None,
) -> FlowSample:
    """Realize one training tuple: couple the sources, draw x_t on the path,
    and attach the constant target field."""
    x0 = couple(x0a, x0b, cfg.coupling, rng=rng)
    xt, u_target = sample_path(x0, x1, t, sigma_min=cfg.sigma_min, rng=rng)
    return FlowSample(x0a=x0a, x0b=x0b, x0=x0, x1=x1, t=t, xt=xt, u_target=u_target)


def couple(x0a: np.ndarray, x0b: np.ndarray, mode: str = "average", rng=None) -> np.ndarray:
    """Build the flow source from the two modality images.

    average keeps values in [0, 1]; sum may exceed 1 (left unclamped); noise
    ignores content and returns a standard-normal field of the same shape.
    """
    if x0a.shape != x0b.shape:
        raise ValueError(f"coupling requires same shapes, got {x0a.shape} vs {x0b.shape}")
    if mode == "average":
        return (x0a + x0b) / 2.0
    if mode == "sum":
        return x0a + x0b
    if mode == "noise":
        if rng is None:
            raise ValueError("noise coupling requires an rng")
        return rng.standard_normal(x0a.shape)
    raise ValueError(f"unknown coupling mode {mode!r}")


def sample_path(
    x0: np.ndarray, x1: np.ndarray, t: float, sigma_min: float = 1e-4, rng=None
) -> tuple[np.ndarray, np.ndarray]:
    """Draw x_t ~ N(t*x1 + (1-t)*x0, sigma_min^2 I) and the constant target
    field u = x1 - x0 (independent of t)."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    mean = t * x1 + (1.0 - t) * x0
    if sigma_min > 0:
        if rng is None:
            raise ValueError("sigma_min > 0 requires an rng")
        xt = mean + sigma_min * rng.standard_normal(x0.shape)
    else:
        xt = mean
    return xt, x1 - x0


def fm_loss(v_pred, u_target):
    """Mean absolute error between predicted and target fields (batch mean)."""
    if torch.is_tensor(v_pred) or torch.is_tensor(u_target):
        return (v_pred - u_target).abs().mean()
    return float(np.mean(np.abs(np.asarray(v_pred) - np.asarray(u_target))))


def sample(
    model,
    x0a: torch.Tensor,
    x0b: torch.Tensor,
    cfg: FlowConfig,
    rng: np.random.Generator | None = None,
) -> torch.Tensor:
    """Euler-integrate dx = v(t, x; x0a, x0b) dt from the coupled source at
    t = 0 over n uniform steps; clamp to [0, 1] after the final step.

    Inputs are (B, C, H, W) tensors; the model is evaluated in no-grad mode.
    """
    if cfg.coupling == "noise":
        if rng is None:
            raise ValueError("noise coupling requires an rng")
        x = torch.from_numpy(
            rng.standard_normal(tuple(x0a.shape)).astype(np.float32)
        ).to(x0a.device)
    else:
        x = torch.from_numpy(
            couple(x0a.cpu().numpy(), x0b.cpu().numpy(), cfg.coupling)
        ).to(dtype=x0a.dtype, device=x0a.device)
    dt = 1.0 / cfg.n_sample_steps
    with torch.no_grad():
        for step in range(cfg.n_sample_steps):
            t = step * dt
            v = model(t, x, x0a, x0b)
            if not torch.isfinite(v).all():
                raise NumericError(f"non-finite vector field at sampling step {step}")
            x = x + v * dt
    return x.clamp(0.0, 1.0)


def wasserstein_1d(x: np.ndarray, y: np.ndarray, p: int = 1) -> float:
    """W_p between two equal-size empirical distributions via sorted samples."""
    xs = np.sort(np.asarray(x, dtype=np.float64).ravel())
    ys = np.sort(np.asarray(y, dtype=np.float64).ravel())
    if xs.size != ys.size:
        raise ValueError(f"equal sample sizes required, got {xs.size} vs {ys.size}")
    if p == 1:
        return float(np.mean(np.abs(xs - ys)))
    if p == 2:
        return float(np.sqrt(np.mean((xs - ys) ** 2)))
    raise ValueError(f"p must be 1 or 2, got {p}")


@dataclass
class CouplingRow:
    mode: str
    mean_w1: float
    mean_w2: float


def coupling_experiment(
    pairs: list[tuple[np.ndarray, np.ndarray, np.ndarray]],
    seed: int = 0,
    modes: tuple[str, ...] = COUPLING_MODES,
) -> list[CouplingRow]:
    """Per coupling mode, the mean W1/W2 between the pixel-intensity
    distributions of x0 and the fusion target over (x0a, x0b, x1) triples."""
    rng = np.random.default_rng(seed)
    rows = []
    for mode in modes:
        w1s, w2s = [], []
        for x0a, x0b, x1 in pairs:
            x0 = couple(x0a, x0b, mode, rng=rng)
            w1s.append(wasserstein_1d(x0, x1, p=1))
            w2s.append(wasserstein_1d(x0, x1, p=2))
        rows.append(CouplingRow(mode, float(np.mean(w1s)), float(np.mean(w2s))))
    return rows
