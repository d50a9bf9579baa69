"""Task-aware pseudo-label selection over externally supplied fusion candidates.

Candidates are consumed as image files (one directory per teacher); teachers
are never executed. Each candidate is scored with task-specific metric weights
after per-pair min-max normalization across the candidate set, and the argmax
becomes the preliminary pseudo ground truth.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .errors import ConfigError, DataError
from .imaging import load_image

log = logging.getLogger(__name__)


class TaskKind(enum.Enum):
    IVF = "ivf"
    MIF = "mif"
    MEF = "mef"
    MFF = "mff"


# Task-specific metric weights for pseudo-label ranking.
TASK_WEIGHTS: dict[TaskKind, dict[str, float]] = {
    TaskKind.IVF: {"en": 1.0, "vif": 1.0, "qabf": 2.0, "ssim": 3.0},
    TaskKind.MIF: {"en": 1.0, "vif": 1.0, "qabf": 2.0, "ssim": 3.0},
    TaskKind.MEF: {"en": 1.0, "vif": 5.0, "qabf": 6.0, "sd": 1.0, "sf": 2.0},
    TaskKind.MFF: {"en": 1.0, "vif": 5.0, "qabf": 6.0, "sd": 1.0, "sf": 2.0},
}

_METRIC_FNS = {
    "en": lambda f, a, b: metrics.entropy(f),
    "sd": lambda f, a, b: metrics.std_dev(f),
    "sf": lambda f, a, b: metrics.spatial_frequency(f),
    "ag": lambda f, a, b: metrics.average_gradient(f),
    "vif": metrics.vif,
    "qabf": metrics.qabf,
    "scd": metrics.scd,
    "ssim": metrics.ssim_fused,
}


def validate_weights(weights: dict[str, float]) -> dict[str, float]:
    """Reject unknown metric names, negative weights, and all-zero maps."""
    unknown = set(weights) - set(metrics.METRIC_NAMES)
    if unknown:
        raise ConfigError(f"unknown metric names in weights: {sorted(unknown)}")
    if any(w < 0 for w in weights.values()):
        raise ConfigError("metric weights must be non-negative")
    if not any(w > 0 for w in weights.values()):
        raise ConfigError("at least one metric weight must be positive")
    return {k: float(v) for k, v in weights.items() if v > 0}


def weights_for_task(task: TaskKind) -> dict[str, float]:
    return dict(TASK_WEIGHTS[task])


def raw_scores(fused, src_a, src_b, weights: dict[str, float]) -> dict[str, float]:
    """Raw values of every positively weighted metric for one candidate."""
    return {name: _METRIC_FNS[name](fused, src_a, src_b) for name in sorted(weights)}


def score(fused, src_a, src_b, weights: dict[str, float]) -> tuple[float, dict[str, float]]:
    """Score a lone candidate: degenerate normalization (every metric -> 1),
    so the aggregate is the weight sum. Returns (aggregate, raw values)."""
    weights = validate_weights(weights)
    raw = raw_scores(fused, src_a, src_b, weights)
    return sum(weights.values()), raw


@dataclass
class CandidateRecord:
    teacher: str
    raw: dict[str, float]
    normalized: dict[str, float]
    weighted: float


@dataclass
class CandidateSet:
    """All candidates for one pair, with their scores and the chosen index."""

    pair_id: str
    teachers: list[str]
    images: list[np.ndarray]
    records: list[CandidateRecord] = field(default_factory=list)
    weights: dict[str, float] = field(default_factory=dict)
    selected: int = -1

    @property
    def winner(self) -> str:
        return self.teachers[self.selected]

    def selected_image(self) -> np.ndarray:
        return self.images[self.selected]


def _normalize_column(values: np.ndarray) -> np.ndarray:
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.ones_like(values)
    return (values - lo) / (hi - lo)


def aggregate_records(
    teachers: list[str], raw: list[dict[str, float]], weights: dict[str, float]
) -> tuple[list[CandidateRecord], int]:
    """Min-max normalize each metric across the set, weight, and pick the argmax.

    A metric with max == min normalizes to 1 for everyone (this also covers
    the single-candidate set, whose score degenerates to the weight sum).
    Ties break on lexicographic teacher name so selection is deterministic.
    """
    names = sorted(weights)
    columns = {m: _normalize_column(np.array([r[m] for r in raw])) for m in names}
    records = []
    for i, teacher in enumerate(teachers):
        normalized = {m: float(columns[m][i]) for m in names}
        weighted = sum(weights[m] * normalized[m] for m in names)
        records.append(CandidateRecord(teacher, dict(raw[i]), normalized, weighted))
    top = max(r.weighted for r in records)
    tied = [i for i, r in enumerate(records) if r.weighted == top]
    selected = min(tied, key=lambda i: teachers[i])
    return records, selected


def build_candidate_set(
    pair_id: str,
    candidates: list[tuple[str, np.ndarray]],
    src_a: np.ndarray,
    src_b: np.ndarray,
    weights: dict[str, float],
) -> CandidateSet:
    """Score candidates for one pair and pick the pseudo-label."""
    if not candidates:
        raise ConfigError(f"{pair_id}: empty candidate set")
    weights = validate_weights(weights)
    teachers = [t for t, _ in candidates]
    if len(set(teachers)) != len(teachers):
        raise ConfigError(f"{pair_id}: duplicate teacher names in candidate set")
    images = [img for _, img in candidates]
    raw = [raw_scores(img, src_a, src_b, weights) for img in images]
    records, selected = aggregate_records(teachers, raw, weights)
    return CandidateSet(
        pair_id=pair_id,
        teachers=teachers,
        images=images,
        records=records,
        weights=weights,
        selected=selected,
    )


def select(cs: CandidateSet) -> tuple[np.ndarray, dict]:
    """Return the winning image plus a JSON-ready provenance record."""
    if cs.selected < 0 or not cs.records:
        raise ConfigError(f"{cs.pair_id}: candidate set was never scored")
    provenance = {
        "pair_id": cs.pair_id,
        "weights": cs.weights,
        "winner": cs.winner,
        "candidates": [
            {
                "teacher": r.teacher,
                "raw": r.raw,
                "normalized": r.normalized,
                "weighted": r.weighted,
            }
            for r in cs.records
        ],
    }
    return cs.selected_image(), provenance


def ingest_candidates(
    root_dir, pair_id: str, src_a: np.ndarray, src_b: np.ndarray
) -> list[tuple[str, np.ndarray]]:
    """Load `<root>/candidates/<teacher>/<pair_id>.png` for every teacher.

    Shape mismatches reject the single candidate with a warning; zero valid
    candidates is fatal.
    """
    cand_root = Path(root_dir) / "candidates"
    if not cand_root.is_dir():
        raise DataError(f"candidate directory not found: {cand_root}")
    out = []
    for teacher_dir in sorted(p for p in cand_root.iterdir() if p.is_dir()):
        path = teacher_dir / f"{pair_id}.png"
        if not path.is_file():
            continue
        img = load_image(path)
        if img.shape[:2] != src_a.shape[:2]:
            log.warning(
                "%s: candidate %s shape %s does not match sources %s; skipped",
                pair_id, teacher_dir.name, img.shape[:2], src_a.shape[:2],
            )
            continue
        out.append((teacher_dir.name, img))
    if not out:
        raise DataError(f"{pair_id}: no valid candidates under {cand_root}")
    return out


def select_pseudo_label(
    root_dir, pair_id: str, src_a: np.ndarray, src_b: np.ndarray, task: TaskKind
) -> tuple[np.ndarray, dict]:
    """ingest -> score -> select for one pair under the task's weights."""
    candidates = ingest_candidates(root_dir, pair_id, src_a, src_b)
    cs = build_candidate_set(pair_id, candidates, src_a, src_b, weights_for_task(task))
    return select(cs)
