"""Learnable vector field v(t, x_t; x0a, x0b): a time-conditioned U-Net.

Four strided-conv downsampling stages, four nearest+conv upsampling stages,
constant width, GroupNorm(8) + SiLU, concatenating skip connections from every
encoder activation. The final convolution is zero-initialized so an untrained
model predicts the zero field and one-step samples reproduce the coupled
source exactly.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .container import read_container, write_container


@dataclass(frozen=True)
class NetSpec:
    """Architecture description; the default lands at ~3.20M parameters."""

    in_channels: int = 3
    out_channels: int = 1
    base_channels: int = 64
    blocks_per_stage: tuple[int, ...] = (1, 1, 1, 1)
    mid_blocks: int = 2
    time_embed_dim: int = 768

    def __post_init__(self):
        if self.in_channels < 2 or self.out_channels < 1:
            raise ValueError("in_channels must cover x_t plus both conditions")
        if not self.blocks_per_stage or any(n < 1 for n in self.blocks_per_stage):
            raise ValueError(f"invalid blocks_per_stage {self.blocks_per_stage}")
        object.__setattr__(self, "blocks_per_stage", tuple(self.blocks_per_stage))

    @property
    def n_stages(self) -> int:
        return len(self.blocks_per_stage)

    @property
    def size_divisor(self) -> int:
        return 2**self.n_stages

    @classmethod
    def desk(cls, channels: int = 1) -> "NetSpec":
        """Reduced profile used by desk-scale training."""
        return cls(
            in_channels=3 * channels,
            out_channels=channels,
            base_channels=32,
            time_embed_dim=384,
        )

    @classmethod
    def full(cls, channels: int = 1) -> "NetSpec":
        return cls(in_channels=3 * channels, out_channels=channels)


def _norm(ch: int) -> nn.GroupNorm:
    return nn.GroupNorm(8, ch)


class ResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, temb_dim: int):
        super().__init__()
        self.norm1 = _norm(in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.temb_proj = nn.Linear(temb_dim, out_ch)
        self.norm2 = _norm(out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class TimeEmbedding(nn.Module):
    """Sinusoidal features (log-spaced frequencies) through a 2-layer MLP."""

    def __init__(self, sinusoid_dim: int, embed_dim: int):
        super().__init__()
        if sinusoid_dim % 2:
            raise ValueError("sinusoid_dim must be even")
        half = sinusoid_dim // 2
        freqs = torch.exp(-math.log(10000.0) * torch.arange(half) / (half - 1))
        self.register_buffer("freqs", freqs)
        self.fc1 = nn.Linear(sinusoid_dim, embed_dim)
        self.fc2 = nn.Linear(embed_dim, embed_dim)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        angles = t[:, None] * self.freqs[None, :].to(t.dtype)
        feats = torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)
        return self.fc2(F.silu(self.fc1(feats)))


class VectorFieldNet(nn.Module):
    def __init__(self, spec: NetSpec):
        super().__init__()
        self.spec = spec
        ch = spec.base_channels
        self.time_embed = TimeEmbedding(ch if ch % 2 == 0 else ch + 1, spec.time_embed_dim)
        self.stem = nn.Conv2d(spec.in_channels, ch, 3, padding=1)

        self.enc_blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        for n_blocks in spec.blocks_per_stage:
            self.enc_blocks.append(
                nn.ModuleList([ResBlock(ch, ch, spec.time_embed_dim) for _ in range(n_blocks)])
            )
            self.downs.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))

        self.mid_blocks = nn.ModuleList(
            [ResBlock(ch, ch, spec.time_embed_dim) for _ in range(spec.mid_blocks)]
        )

        # the decoder consumes one skip per encoder activation: every block
        # output, every downsample output, and the stem
        n_dec = 1 + sum(n + 1 for n in spec.blocks_per_stage)
        self.dec_blocks = nn.ModuleList(
            [ResBlock(2 * ch, ch, spec.time_embed_dim) for _ in range(n_dec)]
        )
        self.ups = nn.ModuleList(
            [nn.Conv2d(ch, ch, 3, padding=1) for _ in spec.blocks_per_stage]
        )

        self.out_norm = _norm(ch)
        self.out_conv = nn.Conv2d(ch, spec.out_channels, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def forward(
        self,
        t: float | torch.Tensor,
        xt: torch.Tensor,
        x0a: torch.Tensor,
        x0b: torch.Tensor,
    ) -> torch.Tensor:
        if not (xt.shape[-2:] == x0a.shape[-2:] == x0b.shape[-2:]):
            raise ValueError("xt, x0a, x0b must share spatial shape")
        h, w = xt.shape[-2:]
        div = self.spec.size_divisor
        if h % div or w % div:
            raise ValueError(f"spatial sides must be divisible by {div}, got {h}x{w}")

        if not torch.is_tensor(t):
            t = torch.full((xt.shape[0],), float(t), dtype=xt.dtype, device=xt.device)
        elif t.ndim == 0:
            t = t.expand(xt.shape[0]).to(dtype=xt.dtype, device=xt.device)
        temb = self.time_embed(t)

        x = torch.cat([xt, x0a, x0b], dim=1)
        h_feat = self.stem(x)
        skips = [h_feat]
        for stage, down in zip(self.enc_blocks, self.downs):
            for block in stage:
                h_feat = block(h_feat, temb)
                skips.append(h_feat)
            h_feat = down(h_feat)
            skips.append(h_feat)
        for block in self.mid_blocks:
            h_feat = block(h_feat, temb)

        up_idx = 0
        for block in self.dec_blocks:
            skip = skips.pop()
            if skip.shape[-1] != h_feat.shape[-1]:
                h_feat = F.interpolate(h_feat, scale_factor=2, mode="nearest")
                h_feat = self.ups[up_idx](h_feat)
                up_idx += 1
            h_feat = block(torch.cat([h_feat, skip], dim=1), temb)

        return self.out_conv(F.silu(self.out_norm(h_feat)))

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def save_checkpoint(
    path,
    model: VectorFieldNet,
    step: int = 0,
    seed: int = 0,
    optimizer: torch.optim.Optimizer | None = None,
    extra: dict | None = None,
) -> None:
    """Write the model (and optionally Adam state) as a checkpoint container."""
    arrays: dict[str, np.ndarray] = {}
    for name, p in sorted(model.state_dict().items()):
        arrays[f"param/{name}"] = p.detach().cpu().numpy()
    opt_header = None
    if optimizer is not None:
        opt_header = {"defaults": {k: v for k, v in optimizer.defaults.items() if not callable(v)}}
        params = dict(model.named_parameters())
        state_steps = {}
        for name in sorted(params):
            st = optimizer.state.get(params[name], {})
            if "exp_avg" in st:
                arrays[f"opt/{name}/exp_avg"] = st["exp_avg"].cpu().numpy()
                arrays[f"opt/{name}/exp_avg_sq"] = st["exp_avg_sq"].cpu().numpy()
                state_steps[name] = int(st["step"])
        opt_header["state_steps"] = state_steps
    header = {
        "kind": "vector_field",
        "spec": asdict(model.spec),
        "step": int(step),
        "seed": int(seed),
        "optimizer": opt_header,
        "extra": extra or {},
    }
    write_container(path, arrays, header)


def load_checkpoint(path, map_location="cpu"):
    """Read a checkpoint container back into (model, header)."""
    arrays, header = read_container(path)
    spec = NetSpec(**{**header["spec"], "blocks_per_stage": tuple(header["spec"]["blocks_per_stage"])})
    model = VectorFieldNet(spec)
    state = {
        name[len("param/"):]: torch.from_numpy(arr)
        for name, arr in arrays.items()
        if name.startswith("param/")
    }
    model.load_state_dict(state)
    model.to(map_location)
    header["_opt_arrays"] = {k: v for k, v in arrays.items() if k.startswith("opt/")}
    return model, header


def restore_optimizer(model: VectorFieldNet, header: dict) -> torch.optim.Optimizer | None:
    """Rebuild the Adam state saved by save_checkpoint, if any."""
    opt_header = header.get("optimizer")
    if not opt_header:
        return None
    optimizer = torch.optim.Adam(model.parameters(), **opt_header["defaults"])
    params = dict(model.named_parameters())
    arrays = header["_opt_arrays"]
    for name, step_count in opt_header["state_steps"].items():
        p = params[name]
        optimizer.state[p] = {
            "step": torch.tensor(float(step_count)),
            "exp_avg": torch.from_numpy(arrays[f"opt/{name}/exp_avg"]).to(p.dtype),
            "exp_avg_sq": torch.from_numpy(arrays[f"opt/{name}/exp_avg_sq"]).to(p.dtype),
        }
    return optimizer
