"""Continual-learning machinery: Fisher-weighted parameter anchoring (EWC),
experience replay over completed tasks, the unified objective, and the
backward/forward-transfer summary of a task-sequence run.

The trade-off weight lambda is applied exactly once, inside ewc_penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ConfigError


@dataclass
class ContinualConfig:
    lambda_ewc: float = 1000.0
    memory_size: int = 64
    fisher_batches: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.lambda_ewc < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lambda_ewc}")
        if self.memory_size < 0:
            raise ConfigError(f"memory_size must be >= 0, got {self.memory_size}")


@dataclass
class TaskSnapshot:
    """Frozen optimum of a completed task: parameters plus Fisher diagonal."""

    task_id: str
    theta_star: dict[str, torch.Tensor]
    fisher: dict[str, torch.Tensor]

    def __post_init__(self):
        if set(self.theta_star) != set(self.fisher):
            raise ValueError(f"{self.task_id}: theta_star and fisher key sets differ")
        for name, f in self.fisher.items():
            if f.shape != self.theta_star[name].shape:
                raise ValueError(f"{self.task_id}: shape mismatch for {name}")
            if not torch.isfinite(f).all() or (f < 0).any():
                raise ValueError(f"{self.task_id}: fisher entries must be finite and >= 0")


def compute_fisher(model: torch.nn.Module, loss_fn, batches) -> dict[str, torch.Tensor]:
    """Diagonal Fisher estimate: mean over batches of squared loss gradients.

    loss_fn(model, batch) must return a scalar; batches is any iterable of
    batches drawn from the completed task's data.
    """
    fisher = {n: torch.zeros_like(p) for n, p in model.named_parameters()}
    n_batches = 0
    for batch in batches:
        model.zero_grad()
        loss = loss_fn(model, batch)
        loss.backward()
        for n, p in model.named_parameters():
            if p.grad is not None:
                fisher[n] += p.grad.detach() ** 2
        n_batches += 1
    model.zero_grad()
    if n_batches == 0:
        raise ConfigError("compute_fisher: no batches supplied")
    return {n: f / n_batches for n, f in fisher.items()}


def make_snapshot(task_id: str, model: torch.nn.Module, fisher: dict[str, torch.Tensor]) -> TaskSnapshot:
    theta = {n: p.detach().clone() for n, p in model.named_parameters()}
    return TaskSnapshot(task_id=task_id, theta_star=theta, fisher=fisher)


def ewc_penalty(
    params: dict[str, torch.Tensor], snapshots: list[TaskSnapshot], lambda_ewc: float
):
    """sum over prior tasks k and parameters i of lambda * F_k,i (theta_i - theta*_k,i)^2.

    Returns a differentiable scalar tensor (or 0.0 when there is nothing to
    anchor). Invariant to parameter-map key ordering.
    """
    if not snapshots or lambda_ewc == 0.0:
        return 0.0
    total = None
    for snap in snapshots:
        for name in sorted(snap.theta_star):
            term = (snap.fisher[name] * (params[name] - snap.theta_star[name]) ** 2).sum()
            total = term if total is None else total + term
    return lambda_ewc * total


def unified_loss(fm_term, model: torch.nn.Module, snapshots: list[TaskSnapshot], lambda_ewc: float):
    """Flow-matching loss over the mixed current+replay batch plus the EWC term."""
    penalty = ewc_penalty(dict(model.named_parameters()), snapshots, lambda_ewc)
    if isinstance(penalty, float) and penalty == 0.0:
        return fm_term
    return fm_term + penalty


@dataclass
class ReplayBuffer:
    """Per-completed-task memory of sample identifiers."""

    memory: dict[str, list[str]] = field(default_factory=dict)

    def union(self) -> list[tuple[str, str]]:
        return [(task, pid) for task in self.memory for pid in self.memory[task]]

    def __len__(self) -> int:
        return sum(len(v) for v in self.memory.values())

    def assert_excludes(self, task_id: str) -> None:
        if task_id in self.memory:
            raise ValueError(f"replay buffer contains current task {task_id!r}")


def build_replay(
    completed: list[tuple[str, list[str]]], memory_size: int, seed: int
) -> ReplayBuffer:
    """Uniform sampling without replacement, deterministic per (seed, task).

    Each completed task k contributes min(|D_k|, memory_size) identifiers.
    Callers pass only completed tasks, which keeps the current task out of
    the union by construction.
    """
    memory: dict[str, list[str]] = {}
    for index, (task_id, ids) in enumerate(completed):
        ids = sorted(ids)
        m = min(len(ids), memory_size)
        if m == 0:
            memory[task_id] = []
            continue
        rng = np.random.default_rng([seed, index])
        picked = rng.choice(len(ids), size=m, replace=False)
        memory[task_id] = sorted(ids[i] for i in picked)
    return ReplayBuffer(memory=memory)


def bwt_fwt(r_matrix: np.ndarray, baseline: np.ndarray | None = None) -> tuple[float, float]:
    """Backward/forward transfer from the T x T score matrix R, where R[j, i]
    is task i's held-out composite score after training through task j.

    BWT = mean over i < T-1 of R[T-1, i] - R[i, i] (negative means forgetting).
    FWT = mean over i >= 1 of R[i-1, i] - baseline[i], with baseline[i] the
    score of a randomly initialized model on task i.
    """
    r = np.asarray(r_matrix, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] != r.shape[1] or r.shape[0] < 2:
        raise ValueError(f"R must be square with T >= 2, got shape {r.shape}")
    t = r.shape[0]
    bwt = float(np.mean([r[t - 1, i] - r[i, i] for i in range(t - 1)]))
    if baseline is None:
        fwt = float("nan")
    else:
        baseline = np.asarray(baseline, dtype=np.float64)
        if baseline.shape != (t,):
            raise ValueError(f"baseline must have shape ({t},), got {baseline.shape}")
        fwt = float(np.mean([r[i - 1, i] - baseline[i] for i in range(1, t)]))
    return bwt, fwt
