"""Dataset layout contract and loading.

Layout (bit-exact contract, one directory per task):

    <root>/<task>/modA/<pair_id>.png
    <root>/<task>/modB/<pair_id>.png
    <root>/<task>/candidates/<teacher>/<pair_id>.png
    <root>/<task>/pseudo/<pair_id>.png            (+ manifest.json)
    <root>/<task>/pseudo_refined/<pair_id>.png
    <root>/<task>/fstar/<pair_id>.png             (synthetic benchmark only)
    <root>/<task>/split.json                      {"train": [...], "val": [...]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .imaging import load_image, to_luminance


@dataclass
class PairRecord:
    pair_id: str
    path_a: Path
    path_b: Path
    pseudo: Path | None = None
    refined: Path | None = None
    fstar: Path | None = None


@dataclass
class FusionDataset:
    root: Path
    task: str
    pairs: list[PairRecord]
    split: dict[str, list[str]]
    color_mode: str = "luminance"
    _cache: dict = field(default_factory=dict, repr=False)
    _by_id: dict = field(default_factory=dict, repr=False)

    @property
    def task_dir(self) -> Path:
        return self.root / self.task

    def ids(self, subset: str | None = None) -> list[str]:
        if subset is None:
            return [p.pair_id for p in self.pairs]
        if subset not in self.split:
            raise DataError(f"{self.task}: split.json has no subset {subset!r}")
        return list(self.split[subset])

    def record(self, pair_id: str) -> PairRecord:
        if not self._by_id:
            self._by_id.update({p.pair_id: p for p in self.pairs})
        rec = self._by_id.get(pair_id)
        if rec is None:
            raise DataError(f"{self.task}: unknown pair id {pair_id!r}")
        return rec

    def _load(self, path: Path) -> np.ndarray:
        key = str(path)
        if key not in self._cache:
            img = load_image(path)
            if self.color_mode == "luminance":
                img = to_luminance(img)
            self._cache[key] = img.astype(np.float32)
        return self._cache[key]

    def load_sources(self, pair_id: str) -> tuple[np.ndarray, np.ndarray]:
        rec = self.record(pair_id)
        a, b = self._load(rec.path_a), self._load(rec.path_b)
        if a.shape != b.shape:
            raise DataError(f"{pair_id}: unregistered pair, shapes {a.shape} vs {b.shape}")
        return a, b

    def load_pseudo(self, pair_id: str) -> np.ndarray:
        rec = self.record(pair_id)
        path = rec.refined or rec.pseudo
        if path is None:
            raise DataError(f"{pair_id}: no pseudo label on disk; run select-pseudo first")
        return self._load(path)

    def load_fstar(self, pair_id: str) -> np.ndarray:
        rec = self.record(pair_id)
        if rec.fstar is None:
            raise DataError(f"{pair_id}: no analytic ideal fusion stored")
        return self._load(rec.fstar)


def task_dir(root, task: str) -> Path:
    return Path(root) / task


def load_dataset(root, task: str, color_mode: str = "luminance", require_pseudo: bool = False) -> FusionDataset:
    """Scan the standard layout for one task directory."""
    tdir = task_dir(root, task)
    mod_a, mod_b = tdir / "modA", tdir / "modB"
    if not mod_a.is_dir() or not mod_b.is_dir():
        raise DataError(f"{tdir}: expected modA/ and modB/ subdirectories")
    split_path = tdir / "split.json"
    if not split_path.is_file():
        raise DataError(f"{split_path}: missing split file")
    split = json.loads(split_path.read_text())
    if not isinstance(split, dict) or "train" not in split or "val" not in split:
        raise DataError(f"{split_path}: split.json must define 'train' and 'val' lists")

    pairs = []
    for pa in sorted(mod_a.glob("*.png")):
        pid = pa.stem
        pb = mod_b / pa.name
        if not pb.is_file():
            raise DataError(f"{pid}: present in modA but missing from modB")
        pseudo = tdir / "pseudo" / pa.name
        refined = tdir / "pseudo_refined" / pa.name
        fstar = tdir / "fstar" / pa.name
        pairs.append(
            PairRecord(
                pair_id=pid,
                path_a=pa,
                path_b=pb,
                pseudo=pseudo if pseudo.is_file() else None,
                refined=refined if refined.is_file() else None,
                fstar=fstar if fstar.is_file() else None,
            )
        )
    if not pairs:
        raise DataError(f"{tdir}: no image pairs found")

    known = {p.pair_id for p in pairs}
    for subset in ("train", "val"):
        missing = set(split[subset]) - known
        if missing:
            raise DataError(f"{split_path}: {subset} lists unknown pairs {sorted(missing)[:5]}")
    overlap = set(split["train"]) & set(split["val"])
    if overlap:
        raise DataError(f"{split_path}: train/val overlap: {sorted(overlap)[:5]}")

    if require_pseudo:
        missing = [p.pair_id for p in pairs if p.pseudo is None and p.refined is None]
        if missing:
            raise DataError(
                f"{tdir}: {len(missing)} pairs lack pseudo labels (e.g. {missing[:3]}); "
                "run select-pseudo (and refine) first"
            )
    return FusionDataset(root=Path(root), task=task, pairs=pairs, split=split, color_mode=color_mode)
