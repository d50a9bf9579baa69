"""Training orchestration: refiner pretraining and fine-tuning, per-task flow
matching with the unified continual objective, task sequences with transfer
bookkeeping, and the ablation harness.

Every entry point is deterministic given (seed, config, dataset manifest):
model initialization is seeded through torch, all data order comes from numpy
Generators derived from the seed, and optimizers are rebuilt per task.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import flow, metrics
from .continual import (
    ContinualConfig,
    ReplayBuffer,
    TaskSnapshot,
    build_replay,
    bwt_fwt,
    compute_fisher,
    ewc_penalty,
    make_snapshot,
)
from .data import FusionDataset, load_dataset
from .errors import ConfigError, DataError
from .flow import FlowConfig
from .net import NetSpec, VectorFieldNet
from .refiner import (
    DecompositionUnit,
    FusionIntegrator,
    RefinerParams,
    high_pass,
    protection_mask,
    weight_map,
)
from .selector import TaskKind, weights_for_task

KNOWN_TASKS = tuple(k.value for k in TaskKind)


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 16
    crop_size: int = 64
    learning_rate: float = 8e-4
    lambda_ewc: float = 1000.0
    memory_size: int = 64
    fisher_batches: int = 16
    seed: int = 0
    task_sequence: tuple[str, ...] = ("ivf",)
    color_mode: str = "luminance"
    sigma_min: float = 1e-4
    coupling: str = "average"
    n_sample_steps: int = 1
    base_channels: int = 32
    refiner_iterations: int = 500
    refiner_batch: int = 8
    refiner_lr: float = 1e-3
    consistency_weight: float = 1.0  # pseudo-label term inside the hybrid loss
    fwt_baseline_seeds: int = 3

    def __post_init__(self):
        if self.color_mode not in ("luminance", "rgb"):
            raise ConfigError(f"color_mode must be luminance or rgb, got {self.color_mode!r}")
        if self.crop_size % 16:
            raise ConfigError(f"crop_size must be divisible by 16, got {self.crop_size}")
        for name in ("iterations", "batch_size", "refiner_iterations", "refiner_batch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        unknown = set(self.task_sequence) - set(KNOWN_TASKS)
        if unknown:
            raise ConfigError(f"unknown tasks {sorted(unknown)}; expected {KNOWN_TASKS}")
        object.__setattr__(self, "task_sequence", tuple(self.task_sequence))
        self.continual_config()  # validates lambda_ewc and memory_size
        try:
            self.flow_config()  # validates sigma_min, coupling, n_sample_steps
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def channels(self) -> int:
        return 3 if self.color_mode == "rgb" else 1

    def net_spec(self) -> NetSpec:
        time_dim = 12 * self.base_channels
        return NetSpec(
            in_channels=3 * self.channels,
            out_channels=self.channels,
            base_channels=self.base_channels,
            time_embed_dim=time_dim,
        )

    def flow_config(self) -> FlowConfig:
        return FlowConfig(
            sigma_min=self.sigma_min, coupling=self.coupling, n_sample_steps=self.n_sample_steps
        )

    def continual_config(self) -> ContinualConfig:
        return ContinualConfig(
            lambda_ewc=self.lambda_ewc,
            memory_size=self.memory_size,
            fisher_batches=self.fisher_batches,
            seed=self.seed,
        )


def desk_profile(**overrides) -> TrainConfig:
    """64x64 crops, batch 16, 2000 iterations, base-32 net."""
    return replace(TrainConfig(), **overrides) if overrides else TrainConfig()


def published_profile(**overrides) -> TrainConfig:
    """Published-scale settings: 128 crops, batch 32, 25k iterations, base 64."""
    cfg = TrainConfig(
        iterations=25_000, batch_size=32, crop_size=128, learning_rate=8e-4,
        lambda_ewc=1000.0, memory_size=64, fisher_batches=64, base_channels=64,
    )
    return replace(cfg, **overrides) if overrides else cfg


# ---------------------------------------------------------------------------
# differentiable pieces of the hybrid refiner loss

_SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = torch.tensor([[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]])


def _gauss_window(size: int = 11, sigma: float = 1.5) -> torch.Tensor:
    half = (size - 1) / 2.0
    coords = torch.arange(size, dtype=torch.float32) - half
    g = torch.exp(-(coords[:, None] ** 2 + coords[None, :] ** 2) / (2 * sigma * sigma))
    return (g / g.sum())[None, None]


_SSIM_WINDOW = _gauss_window()


def ssim_torch(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean local SSIM (11x11 Gaussian, range 1) over valid windows; per-channel."""
    c1, c2 = 0.01**2, 0.03**2
    win = _SSIM_WINDOW.to(x.dtype)
    ch = x.shape[1]
    win = win.expand(ch, 1, -1, -1)
    mu_x = F.conv2d(x, win, groups=ch)
    mu_y = F.conv2d(y, win, groups=ch)
    sxx = F.conv2d(x * x, win, groups=ch) - mu_x * mu_x
    syy = F.conv2d(y * y, win, groups=ch) - mu_y * mu_y
    sxy = F.conv2d(x * y, win, groups=ch) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2)
    return (num / den).mean()


def sobel_magnitude_torch(x: torch.Tensor) -> torch.Tensor:
    ch = x.shape[1]
    kx = _SOBEL_X.to(x.dtype)[None, None].expand(ch, 1, -1, -1)
    ky = _SOBEL_Y.to(x.dtype)[None, None].expand(ch, 1, -1, -1)
    padded = F.pad(x, (1, 1, 1, 1), mode="reflect")
    gx = F.conv2d(padded, kx, groups=ch)
    gy = F.conv2d(padded, ky, groups=ch)
    return torch.sqrt(gx * gx + gy * gy + 1e-12)


def fusion_loss(fused: torch.Tensor, src_a: torch.Tensor, src_b: torch.Tensor) -> torch.Tensor:
    """SSIM + texture + intensity composite with unit weights."""
    ssim_term = 1.0 - 0.5 * (ssim_torch(fused, src_a) + ssim_torch(fused, src_b))
    grad_target = torch.maximum(sobel_magnitude_torch(src_a), sobel_magnitude_torch(src_b))
    texture_term = (sobel_magnitude_torch(fused) - grad_target).abs().mean()
    intensity_term = (fused - torch.maximum(src_a, src_b)).abs().mean()
    return ssim_term + texture_term + intensity_term


# ---------------------------------------------------------------------------
# batch construction

def _to_batch(stack: list[np.ndarray]) -> torch.Tensor:
    arr = np.stack(stack).astype(np.float32)
    if arr.ndim == 3:
        arr = arr[:, None]
    else:
        arr = arr.transpose(0, 3, 1, 2)
    return torch.from_numpy(arr)


def _random_crop(rng, arrays: list[np.ndarray], crop: int) -> list[np.ndarray]:
    h, w = arrays[0].shape[:2]
    if h < crop or w < crop:
        raise DataError(f"image {h}x{w} smaller than crop {crop}")
    y = int(rng.integers(0, h - crop + 1))
    x = int(rng.integers(0, w - crop + 1))
    return [a[y : y + crop, x : x + crop] for a in arrays]


@dataclass
class ContinualState:
    """Everything carried across tasks in a sequence run."""

    snapshots: list[TaskSnapshot] = field(default_factory=list)
    replay: ReplayBuffer = field(default_factory=ReplayBuffer)
    completed: list[tuple[str, list[str]]] = field(default_factory=list)


def _sample_fm_batch(rng, pool, datasets, cfg: TrainConfig):
    """Draw a batch uniformly over the current+replay pool and build the
    flow-matching tensors (x0a, x0b, xt, t, u_target)."""
    idx = rng.integers(0, len(pool), size=cfg.batch_size)
    xs_a, xs_b, xs_t, ts, us = [], [], [], [], []
    for i in idx:
        task_id, pair_id = pool[i]
        ds = datasets[task_id]
        a, b = ds.load_sources(pair_id)
        x1 = ds.load_pseudo(pair_id)
        a, b, x1 = _random_crop(rng, [a, b, x1], cfg.crop_size)
        x0 = flow.couple(a, b, cfg.coupling, rng=rng)
        t = float(rng.uniform(0.0, 1.0))
        xt, u = flow.sample_path(x0, x1, t, sigma_min=cfg.sigma_min, rng=rng)
        xs_a.append(a)
        xs_b.append(b)
        xs_t.append(xt)
        ts.append(t)
        us.append(u)
    return (
        _to_batch(xs_a),
        _to_batch(xs_b),
        _to_batch(xs_t),
        torch.tensor(ts, dtype=torch.float32),
        _to_batch(us),
    )


def _cosine_lr(base_lr: float, step: int, total: int) -> float:
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / max(total, 1)))


# ---------------------------------------------------------------------------
# refiner training

def _refiner_batch(rng, ds: FusionDataset, ids, cfg: TrainConfig):
    idx = rng.integers(0, len(ids), size=cfg.refiner_batch)
    crops = {"a": [], "b": [], "pseudo": []}
    for i in idx:
        a, b = ds.load_sources(ids[i])
        pseudo = ds.load_pseudo(ids[i])
        a, b, pseudo = _random_crop(rng, [a, b, pseudo], cfg.crop_size)
        crops["a"].append(a)
        crops["b"].append(b)
        crops["pseudo"].append(pseudo)
    return _to_batch(crops["a"]), _to_batch(crops["b"]), _to_batch(crops["pseudo"])


def train_refiner_stage1(ds: FusionDataset, cfg: TrainConfig):
    """Pretrain the DU (L1 reconstruction of both sources from the selected
    pseudo-label) and the FI (hybrid fusion + consistency loss on raw sources).
    """
    ids = [pid for pid in ds.ids("train") if ds.record(pid).pseudo or ds.record(pid).refined]
    if not ids:
        raise DataError("refiner stage 1 requires pseudo labels; run select-pseudo first")
    torch.manual_seed(cfg.seed)
    du = DecompositionUnit(cfg.channels)
    fi = FusionIntegrator(cfg.channels)
    opt = torch.optim.Adam(
        list(du.parameters()) + list(fi.parameters()), lr=cfg.refiner_lr
    )
    rng = np.random.default_rng([cfg.seed, 101])
    du_losses, fi_losses = [], []
    for step in range(cfg.refiner_iterations):
        for group in opt.param_groups:
            group["lr"] = _cosine_lr(cfg.refiner_lr, step, cfg.refiner_iterations)
        a, b, pseudo = _refiner_batch(rng, ds, ids, cfg)
        part_a, part_b = du(pseudo)
        du_loss = (part_a - a).abs().mean() + (part_b - b).abs().mean()
        fused = fi(a, b)
        fi_loss = fusion_loss(fused, a, b) + cfg.consistency_weight * (fused - pseudo).abs().mean()
        opt.zero_grad()
        (du_loss + fi_loss).backward()
        opt.step()
        du_losses.append(float(du_loss.detach()))
        fi_losses.append(float(fi_loss.detach()))
    du.mark_trained()
    fi.mark_trained()
    return du, fi, {"du_loss": du_losses, "fi_loss": fi_losses}


def train_refiner_stage2(ds: FusionDataset, du: DecompositionUnit, fi: FusionIntegrator, cfg: TrainConfig):
    """Freeze the DU, then fine-tune the FI and the RM injection scalars on
    RM-refined components. Returns (fi, RefinerParams, logs)."""
    if not du.trained:
        raise RuntimeError("stage 2 requires a stage-1-trained decomposition unit")
    ids = [pid for pid in ds.ids("train") if ds.record(pid).pseudo or ds.record(pid).refined]
    if not ids:
        raise DataError("refiner stage 2 requires pseudo labels")
    for p in du.parameters():
        p.requires_grad_(False)
    base = RefinerParams()
    kernel = base.kernel()
    alpha_a = nn.Parameter(torch.tensor(base.alpha_a))
    alpha_b = nn.Parameter(torch.tensor(base.alpha_b))
    opt = torch.optim.Adam(list(fi.parameters()) + [alpha_a, alpha_b], lr=cfg.refiner_lr)
    rng = np.random.default_rng([cfg.seed, 202])
    losses, alpha_log = [], []
    for step in range(cfg.refiner_iterations):
        for group in opt.param_groups:
            group["lr"] = _cosine_lr(cfg.refiner_lr, step, cfg.refiner_iterations)
        a, b, pseudo = _refiner_batch(rng, ds, ids, cfg)
        with torch.no_grad():
            part_a, part_b = du(pseudo)
        # RM detail fields are constants w.r.t. the optimized parameters;
        # the injection scalars scale them inside the graph
        dp_a = _detail_projection(pseudo, part_a, a, base.c, kernel)
        dp_b = _detail_projection(pseudo, part_b, b, base.c, kernel)
        refined_a = pseudo + alpha_a * dp_a
        refined_b = pseudo + alpha_b * dp_b
        fused = fi(refined_a, refined_b)
        loss = fusion_loss(fused, a, b) + cfg.consistency_weight * (fused - pseudo).abs().mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
        alpha_log.append((float(alpha_a.detach()), float(alpha_b.detach())))
        if not (torch.isfinite(alpha_a) and torch.isfinite(alpha_b)):
            raise ConfigError(f"injection scalars diverged at step {step}")
    fi.mark_trained()
    params = RefinerParams(alpha_a=float(alpha_a.detach()), alpha_b=float(alpha_b.detach()), c=base.c,
                           kernel_size=base.kernel_size)
    return fi, params, {"loss": losses, "alphas": alpha_log}


def _detail_projection(pseudo_t, part_t, source_t, c, kernel) -> torch.Tensor:
    """detail * protection as a torch constant, computed per sample with the
    numpy RM primitives."""
    out = []
    for i in range(pseudo_t.shape[0]):
        part = part_t[i, 0].detach().numpy().astype(np.float64)
        source = source_t[i, 0].numpy().astype(np.float64)
        w = weight_map(part)
        detail = w * high_pass(source, kernel) + (1.0 - w) * high_pass(part, kernel)
        out.append((detail * protection_mask(part, c)).astype(np.float32))
    return torch.from_numpy(np.stack(out))[:, None]


def state_hash(module: nn.Module) -> str:
    import hashlib

    digest = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        digest.update(name.encode())
        digest.update(p.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# flow-matching training

def train_fm_task(
    datasets: dict[str, FusionDataset],
    task: str,
    model: VectorFieldNet,
    cfg: TrainConfig,
    state: ContinualState | None = None,
    task_index: int = 0,
):
    """One task's flow-matching training with the unified objective.

    Batches mix the current task with the replay union uniformly; on
    completion the Fisher diagonal is estimated on current-task batches, the
    parameter snapshot is stored, and the replay buffer is extended.
    Returns (snapshot, losses).
    """
    state = state if state is not None else ContinualState()
    ds = datasets[task]
    train_ids = ds.ids("train")
    if not train_ids:
        raise DataError(f"{task}: empty train split")
    val_ids = set(ds.ids("val"))
    state.replay.assert_excludes(task)
    pool = [(task, pid) for pid in train_ids] + state.replay.union()
    overlap = [(t, p) for t, p in pool if t == task and p in val_ids]
    if overlap:
        raise DataError(f"{task}: evaluation pairs leak into training: {overlap[:3]}")
    for t, p in state.replay.union():
        if p in set(datasets[t].ids("val")):
            raise DataError(f"replay leaks evaluation pair {t}/{p}")

    cc = cfg.continual_config()
    rng = np.random.default_rng([cc.seed, 7, task_index])
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    model.train()
    losses = []
    use_penalty = cc.lambda_ewc > 0 and state.snapshots
    for step in range(cfg.iterations):
        for group in opt.param_groups:
            group["lr"] = _cosine_lr(cfg.learning_rate, step, cfg.iterations)
        x0a, x0b, xt, t, u = _sample_fm_batch(rng, pool, datasets, cfg)
        v = model(t, xt, x0a, x0b)
        loss = flow.fm_loss(v, u)
        if use_penalty:
            loss = loss + ewc_penalty(dict(model.named_parameters()), state.snapshots, cc.lambda_ewc)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))

    # Fisher on current-task data only, at the task optimum
    fisher_rng = np.random.default_rng([cc.seed, 13, task_index])
    current_pool = [(task, pid) for pid in train_ids]

    def fisher_loss(m, _):
        x0a, x0b, xt, t, u = _sample_fm_batch(fisher_rng, current_pool, datasets, cfg)
        return flow.fm_loss(m(t, xt, x0a, x0b), u)

    model.eval()
    fisher = compute_fisher(model, fisher_loss, range(cc.fisher_batches))
    snapshot = make_snapshot(task, model, fisher)
    state.snapshots.append(snapshot)
    state.completed.append((task, list(train_ids)))
    state.replay = build_replay(state.completed, cc.memory_size, cc.seed)
    return snapshot, losses


def fuse_pair(model: VectorFieldNet, a: np.ndarray, b: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    """One fused image from a source pair via Euler sampling."""
    model.eval()
    xa, xb = _to_batch([a]), _to_batch([b])
    out = flow.sample(model, xa, xb, cfg.flow_config(), rng=np.random.default_rng(cfg.seed))
    arr = out[0].numpy()
    return arr[0].astype(np.float64) if arr.shape[0] == 1 else arr.transpose(1, 2, 0).astype(np.float64)


def composite_score(fused: np.ndarray, a: np.ndarray, b: np.ndarray, task: str) -> float:
    """Table-weighted aggregate of raw metric values (no set normalization)."""
    weights = weights_for_task(TaskKind(task))
    fns = {
        "en": lambda: metrics.entropy(fused),
        "sd": lambda: metrics.std_dev(fused),
        "sf": lambda: metrics.spatial_frequency(fused),
        "ag": lambda: metrics.average_gradient(fused),
        "vif": lambda: metrics.vif(fused, a, b),
        "qabf": lambda: metrics.qabf(fused, a, b),
        "scd": lambda: metrics.scd(fused, a, b),
        "ssim": lambda: metrics.ssim_fused(fused, a, b),
    }
    return sum(w * fns[name]() for name, w in weights.items())


def evaluate_task(model: VectorFieldNet, ds: FusionDataset, cfg: TrainConfig, subset: str = "val"):
    """Mean composite score plus per-metric means over a subset."""
    ids = ds.ids(subset)
    if not ids:
        raise DataError(f"{ds.task}: empty {subset} split")
    composites, reports, ssim_fstar = [], [], []
    for pid in ids:
        a, b = ds.load_sources(pid)
        fused = fuse_pair(model, a, b, cfg)
        composites.append(composite_score(fused, a, b, ds.task))
        reports.append(metrics.evaluate_all(fused, a, b))
        rec = ds.record(pid)
        if rec.fstar is not None:
            ssim_fstar.append(metrics.ssim(fused, ds.load_fstar(pid)))
    means = {
        name: float(np.mean([getattr(r, name) for r in reports])) for name in metrics.METRIC_NAMES
    }
    result = {"composite": float(np.mean(composites)), **means}
    if ssim_fstar:
        result["ssim_fstar"] = float(np.mean(ssim_fstar))
    return result


def random_init_baseline(ds: FusionDataset, cfg: TrainConfig, n_seeds: int) -> float:
    """Composite score of freshly initialized models (zero field: the fused
    output equals the coupled source), averaged over seeds."""
    scores = []
    for k in range(n_seeds):
        torch.manual_seed(cfg.seed + 1000 + k)
        model = VectorFieldNet(cfg.net_spec())
        scores.append(evaluate_task(model, ds, cfg)["composite"])
    return float(np.mean(scores))


@dataclass
class SequenceResult:
    tasks: list[str]
    r_matrix: np.ndarray
    baselines: np.ndarray
    bwt: float
    fwt: float
    snapshots: list[TaskSnapshot]
    replay: ReplayBuffer
    losses: dict[str, list[float]]
    final_scores: dict[str, dict]


def train_sequence(root, cfg: TrainConfig, datasets: dict[str, FusionDataset] | None = None,
                   model: VectorFieldNet | None = None) -> tuple[VectorFieldNet, SequenceResult]:
    """Sequential training over cfg.task_sequence with EWC + replay; fills the
    R matrix (score of every task after every stage) and reports BWT/FWT."""
    tasks = list(cfg.task_sequence)
    if datasets is None:
        datasets = {
            t: load_dataset(root, t, color_mode=cfg.color_mode, require_pseudo=True) for t in tasks
        }
    if model is None:
        torch.manual_seed(cfg.seed)
        model = VectorFieldNet(cfg.net_spec())
    state = ContinualState()
    t_count = len(tasks)
    r_matrix = np.full((t_count, t_count), np.nan)
    losses = {}
    final_scores = {}
    for j, task in enumerate(tasks):
        _, task_losses = train_fm_task(datasets, task, model, cfg, state, task_index=j)
        losses[task] = task_losses
        row = [evaluate_task(model, datasets[other], cfg) for other in tasks]
        r_matrix[j] = [r["composite"] for r in row]
        if j == t_count - 1:
            final_scores = dict(zip(tasks, row))
    baselines = np.array(
        [random_init_baseline(datasets[t], cfg, cfg.fwt_baseline_seeds) for t in tasks]
    )
    if t_count >= 2:
        bwt, fwt = bwt_fwt(r_matrix, baselines)
    else:
        bwt, fwt = float("nan"), float("nan")
    return model, SequenceResult(
        tasks=tasks,
        r_matrix=r_matrix,
        baselines=baselines,
        bwt=bwt,
        fwt=fwt,
        snapshots=state.snapshots,
        replay=state.replay,
        losses=losses,
        final_scores=final_scores,
    )


# ---------------------------------------------------------------------------
# ablation harness

ABLATION_CONFIGS = {
    "exp1_noise_coupling": {"coupling": "noise"},
    "exp2_single_teacher": {"pseudo_source": "teacher:blur"},
    "exp3_no_refiner": {"pseudo_source": "selected"},
    "exp4_unsharp_refiner": {"pseudo_source": "unsharp"},
    "exp5_no_ewc": {"lambda_ewc": 0.0},
    "exp6_no_replay": {"memory_size": 0},
    "exp7_neither": {"lambda_ewc": 0.0, "memory_size": 0},
    "full": {},
}


def ablation_suite(root, cfg: TrainConfig, experiments: list[str] | None = None):
    """Run the ablation grid on the synthetic benchmark and tabulate final
    per-task metrics. Pseudo-label variants are selected via the dataset's
    pseudo_source override (see cli.select_pseudo_cmd for how the pseudo and
    variant label directories are produced)."""
    from .cli import prepare_pseudo_variant  # local import: CLI owns the file plumbing

    rows = []
    names = experiments or list(ABLATION_CONFIGS)
    unknown = set(names) - set(ABLATION_CONFIGS)
    if unknown:
        raise ConfigError(f"unknown ablation experiments {sorted(unknown)}")
    for name in names:
        overrides = dict(ABLATION_CONFIGS[name])
        pseudo_source = overrides.pop("pseudo_source", "refined")
        run_cfg = replace(cfg, **overrides)
        datasets = {
            t: prepare_pseudo_variant(root, t, pseudo_source, run_cfg) for t in run_cfg.task_sequence
        }
        _, result = train_sequence(root, run_cfg, datasets=datasets)
        for task in run_cfg.task_sequence:
            rows.append({"experiment": name, "task": task, **result.final_scores[task],
                         "bwt": result.bwt, "fwt": result.fwt})
    return rows


# ---------------------------------------------------------------------------
# artifact helpers

def write_loss_csv(path, losses: list[float]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for i, value in enumerate(losses):
            writer.writerow([i, repr(value)])


def write_r_matrix_csv(path, result: SequenceResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["after_task", *result.tasks])
        for j, task in enumerate(result.tasks):
            writer.writerow([task, *[repr(float(v)) for v in result.r_matrix[j]]])
        writer.writerow(["baseline", *[repr(float(v)) for v in result.baselines]])
        writer.writerow(["bwt", repr(result.bwt)])
        writer.writerow(["fwt", repr(result.fwt)])


def config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["task_sequence"] = list(cfg.task_sequence)
    return d
