"""Command-line entry point: every pipeline stage as a batch subcommand.

All outputs are files (PNG, JSON, CSV); nothing interactive. Exit codes:
0 success, 2 configuration error, 3 data error, 4 numeric failure. Every run
writes a frozen copy of its effective configuration into the output
directory, and reruns with identical inputs and seed produce byte-identical
artifacts (wall-clock timestamps go to stderr logging only).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import flow, metrics, refiner, selector, synthetic, training
from .data import FusionDataset, load_dataset
from .errors import ConfigError, DataError, NumericError
from .imaging import load_image, save_image
from .net import VectorFieldNet, load_checkpoint, save_checkpoint
from .selector import TaskKind
from .training import TrainConfig, config_dict

log = logging.getLogger("flowfuse")

CONFIG_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}


def load_config(path, overrides: dict | None = None) -> TrainConfig:
    """Schema-validated TrainConfig from a JSON document; unknown keys fatal."""
    raw = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    unknown = set(raw) - CONFIG_FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "task_sequence" in raw:
        raw["task_sequence"] = tuple(raw["task_sequence"])
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    try:
        return TrainConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"invalid config: {exc}") from None


def _freeze_config(out_dir: Path, cfg: TrainConfig, extra: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"config": config_dict(cfg), **(extra or {})}
    (out_dir / "config.json").write_text(json.dumps(doc, indent=1, sort_keys=True))


def _load_for_mode(path, cfg: TrainConfig) -> np.ndarray:
    from .imaging import to_luminance

    img = load_image(path)
    return to_luminance(img) if cfg.color_mode == "luminance" else img


def _task_kind(task: str) -> TaskKind:
    try:
        return TaskKind(task)
    except ValueError:
        raise ConfigError(
            f"task must be one of {[k.value for k in TaskKind]}, got {task!r}"
        ) from None


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_synth(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed})
    ds = synthetic.generate(
        args.out, n_pairs=args.n_pairs, size=args.size, seed=cfg.seed,
        flavor=args.flavor, task=args.task,
    )
    _freeze_config(Path(args.out) / ds.task, cfg, {"n_pairs": args.n_pairs, "size": args.size,
                                                   "flavor": args.flavor})
    log.info("wrote %d pairs under %s", len(ds.pairs), Path(args.out) / ds.task)
    return 0


def cmd_select_pseudo(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed})
    kind = _task_kind(args.task)
    ds = load_dataset(args.root, args.task, color_mode=cfg.color_mode)
    tdir = ds.task_dir
    out_dir = tdir / "pseudo"
    out_dir.mkdir(exist_ok=True)
    manifest = {"task": args.task, "weights": selector.weights_for_task(kind), "pairs": {}}
    for pid in ds.ids():
        a, b = ds.load_sources(pid)
        image, provenance = selector.select_pseudo_label(tdir, pid, a, b, kind)
        save_image(out_dir / f"{pid}.png", image, bit_depth=16)
        manifest["pairs"][pid] = provenance
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    _freeze_config(out_dir, cfg)
    log.info("selected pseudo labels for %d pairs -> %s", len(ds.pairs), out_dir)
    return 0


def cmd_refine(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed})
    ds = load_dataset(args.root, args.task, color_mode=cfg.color_mode, require_pseudo=True)
    tdir = ds.task_dir
    ckpt_path = Path(args.checkpoint) if args.checkpoint else tdir / "refiner.npz"
    if ckpt_path.is_file() and not args.retrain:
        du, fi, params = refiner.load_refiner(ckpt_path)
        log.info("loaded refiner checkpoint %s", ckpt_path)
    else:
        du, fi, _ = training.train_refiner_stage1(ds, cfg)
        fi, params, _ = training.train_refiner_stage2(ds, du, fi, cfg)
        refiner.save_refiner(ckpt_path, du, fi, params, extra={"task": args.task})
        log.info("trained refiner (stages 1+2) -> %s", ckpt_path)
    out_dir = tdir / "pseudo_refined"
    out_dir.mkdir(exist_ok=True)
    for pid in ds.ids():
        rec = ds.record(pid)
        if rec.pseudo is None:
            raise DataError(f"{pid}: missing pseudo label")
        pseudo = _load_for_mode(rec.pseudo, cfg)
        a, b = ds.load_sources(pid)
        refined = refiner.refine(pseudo, a.astype(np.float64), b.astype(np.float64), params, du, fi)
        save_image(out_dir / f"{pid}.png", refined, bit_depth=16)
    _freeze_config(out_dir, cfg, {"alpha_a": params.alpha_a, "alpha_b": params.alpha_b})
    log.info("refined %d pseudo labels -> %s", len(ds.pairs), out_dir)
    return 0


def prepare_pseudo_variant(root, task: str, source: str, cfg: TrainConfig) -> FusionDataset:
    """Dataset whose pseudo paths follow an ablation variant.

    refined: pseudo_refined when present, else pseudo. selected: ignore the
    refined labels. teacher:<name>: a fixed teacher's candidates, selector
    bypassed. unsharp: deterministic unsharp-mask refinement of the selected
    labels, written once to pseudo_unsharp/.
    """
    ds = load_dataset(root, task, color_mode=cfg.color_mode, require_pseudo=source.startswith("teacher:") is False)
    tdir = ds.task_dir
    if source == "refined":
        return ds
    if source == "selected":
        for rec in ds.pairs:
            rec.refined = None
        return ds
    if source.startswith("teacher:"):
        teacher = source.split(":", 1)[1]
        cand = tdir / "candidates" / teacher
        if not cand.is_dir():
            raise DataError(f"{task}: no candidate directory for teacher {teacher!r}")
        for rec in ds.pairs:
            path = cand / f"{rec.pair_id}.png"
            if not path.is_file():
                raise DataError(f"{task}/{rec.pair_id}: teacher {teacher!r} has no output")
            rec.pseudo, rec.refined = path, None
        return ds
    if source == "unsharp":
        out_dir = tdir / "pseudo_unsharp"
        out_dir.mkdir(exist_ok=True)
        params = refiner.RefinerParams()
        for rec in ds.pairs:
            target = out_dir / f"{rec.pair_id}.png"
            if not target.is_file():
                pseudo = _load_for_mode(rec.pseudo, cfg)
                a, b = ds.load_sources(rec.pair_id)
                save_image(
                    target,
                    refiner.unsharp_refine(pseudo, a.astype(np.float64), b.astype(np.float64), params),
                    bit_depth=16,
                )
            rec.refined = target
        return ds
    raise ConfigError(f"unknown pseudo source {source!r}")


def cmd_train(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed, "iterations": args.iterations,
                                    "task_sequence": (args.task,)})
    out = Path(args.out)
    datasets = {args.task: load_dataset(args.root, args.task, color_mode=cfg.color_mode,
                                        require_pseudo=True)}
    import torch

    torch.manual_seed(cfg.seed)
    model = VectorFieldNet(cfg.net_spec())
    snapshot, losses = training.train_fm_task(datasets, args.task, model, cfg)
    out.mkdir(parents=True, exist_ok=True)
    _freeze_config(out, cfg, {"task": args.task})
    training.write_loss_csv(out / "losses.csv", losses)
    save_checkpoint(out / "model.npz", model, step=cfg.iterations, seed=cfg.seed,
                    extra={"task": args.task})
    scores = training.evaluate_task(model, datasets[args.task], cfg)
    (out / "val_scores.json").write_text(json.dumps(scores, indent=1, sort_keys=True))
    log.info("trained %s for %d iterations; val composite %.4f",
             args.task, cfg.iterations, scores["composite"])
    return 0


def cmd_train_seq(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed})
    if args.tasks:
        cfg = dataclasses.replace(cfg, task_sequence=tuple(args.tasks.split(",")))
    if len(cfg.task_sequence) < 2:
        raise ConfigError("train-seq needs a task_sequence with at least 2 tasks")
    out = Path(args.out)
    model, result = training.train_sequence(args.root, cfg)
    out.mkdir(parents=True, exist_ok=True)
    _freeze_config(out, cfg)
    for task, losses in result.losses.items():
        training.write_loss_csv(out / f"losses_{task}.csv", losses)
    training.write_r_matrix_csv(out / "r_matrix.csv", result)
    _save_continual_bundle(out / "continual.npz", model, result, cfg)
    (out / "final_scores.json").write_text(
        json.dumps(result.final_scores, indent=1, sort_keys=True)
    )
    log.info("sequence %s done: BWT %.4f FWT %.4f", ",".join(result.tasks), result.bwt, result.fwt)
    return 0


def _save_continual_bundle(path, model, result, cfg) -> None:
    from .container import write_container

    arrays = {}
    for name, p in sorted(model.state_dict().items()):
        arrays[f"param/{name}"] = p.detach().cpu().numpy()
    for k, snap in enumerate(result.snapshots):
        for name, t in sorted(snap.theta_star.items()):
            arrays[f"snapshot{k}/theta/{name}"] = t.numpy()
        for name, t in sorted(snap.fisher.items()):
            arrays[f"snapshot{k}/fisher/{name}"] = t.numpy()
    arrays["r_matrix"] = result.r_matrix
    arrays["baselines"] = result.baselines
    header = {
        "kind": "continual_bundle",
        "spec": dataclasses.asdict(cfg.net_spec()),
        "tasks": result.tasks,
        "snapshot_tasks": [s.task_id for s in result.snapshots],
        "replay": result.replay.memory,
        "bwt": result.bwt,
        "fwt": result.fwt,
        "seed": cfg.seed,
    }
    write_container(path, arrays, header)


def cmd_fuse(args) -> int:
    cfg = load_config(args.config, {"seed": args.seed})
    model, header = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = load_dataset(args.root, args.task, color_mode=cfg.color_mode)
    ids = [args.pair] if args.pair else ds.ids(args.subset)
    for pid in ids:
        a, b = ds.load_sources(pid)
        fused = training.fuse_pair(model, a, b, cfg)
        save_image(out / f"{pid}.png", fused, bit_depth=16)
    _freeze_config(out, cfg, {"checkpoint_step": header["step"]})
    log.info("fused %d pairs -> %s", len(ids), out)
    return 0


def cmd_eval(args) -> int:
    import csv as csv_mod

    cfg = load_config(args.config, {"seed": args.seed})
    ds = load_dataset(args.root, args.task, color_mode=cfg.color_mode)
    fused_dir = Path(args.fused)
    if not fused_dir.is_dir():
        raise DataError(f"fused directory not found: {fused_dir}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for pid in ds.ids(args.subset):
        fpath = fused_dir / f"{pid}.png"
        if not fpath.is_file():
            raise DataError(f"{fused_dir}: missing fused image for pair {pid}")
        fused = load_image(fpath)
        if cfg.color_mode == "luminance":
            from .imaging import to_luminance

            fused = to_luminance(fused)
        a, b = ds.load_sources(pid)
        rows.append({"pair_id": pid, **metrics.evaluate_all(fused, a, b).as_dict()})
    means = {
        name: float(np.mean([r[name] for r in rows])) for name in metrics.METRIC_NAMES
    }
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv_mod.writer(fh)
        writer.writerow(["pair_id", *metrics.METRIC_NAMES])
        for r in rows:
            writer.writerow([r["pair_id"], *[repr(r[name]) for name in metrics.METRIC_NAMES]])
        writer.writerow(["mean", *[repr(means[name]) for name in metrics.METRIC_NAMES]])
    (out / "metrics.json").write_text(
        json.dumps({"per_image": rows, "means": means}, indent=1, sort_keys=True)
    )
    _freeze_config(out, cfg)
    log.info("evaluated %d fused images -> %s", len(rows), out)
    return 0


def cmd_coupling_exp(args) -> int:
    import csv as csv_mod

    cfg = load_config(args.config, {"seed": args.seed})
    ds = load_dataset(args.root, args.task, color_mode=cfg.color_mode)
    ids = ds.ids()
    if args.n_pairs:
        ids = ids[: args.n_pairs]
    pairs = []
    for pid in ids:
        a, b = ds.load_sources(pid)
        rec = ds.record(pid)
        if rec.fstar is not None:
            x1 = ds.load_fstar(pid)
        elif rec.pseudo is not None or rec.refined is not None:
            x1 = ds.load_pseudo(pid)
        else:
            raise DataError(f"{pid}: coupling experiment needs a fusion target (fstar or pseudo)")
        pairs.append((a.astype(np.float64), b.astype(np.float64), x1.astype(np.float64)))
    rows = flow.coupling_experiment(pairs, seed=cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "coupling.csv", "w", newline="") as fh:
        writer = csv_mod.writer(fh)
        writer.writerow(["coupling", "mean_w1", "mean_w2"])
        for row in rows:
            writer.writerow([row.mode, repr(row.mean_w1), repr(row.mean_w2)])
    _freeze_config(out, cfg, {"n_pairs": len(pairs)})
    for row in rows:
        log.info("coupling %-8s W1 %.6f W2 %.6f", row.mode, row.mean_w1, row.mean_w2)
    return 0


def cmd_ablate(args) -> int:
    import csv as csv_mod

    cfg = load_config(args.config, {"seed": args.seed})
    if args.tasks:
        cfg = dataclasses.replace(cfg, task_sequence=tuple(args.tasks.split(",")))
    experiments = args.experiments.split(",") if args.experiments else None
    rows = training.ablation_suite(args.root, cfg, experiments)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _freeze_config(out, cfg, {"experiments": experiments or list(training.ABLATION_CONFIGS)})
    fields = list(rows[0].keys())
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv_mod.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    log.info("ablation table -> %s", out / "ablation.csv")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowfuse",
        description="Flow-matching multi-modal image fusion pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--config", default=None, help="JSON config file")
        if out_required:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gen-synth", help="generate the synthetic benchmark")
    common(p)
    p.add_argument("--task", default=None, help="task directory name (default from flavor)")
    p.add_argument("--flavor", default="ivf-like", choices=synthetic.FLAVORS)
    p.add_argument("--n-pairs", type=int, default=100)
    p.add_argument("--size", type=int, default=96)
    p.set_defaults(fn=cmd_gen_synth)

    p = sub.add_parser("select-pseudo", help="score candidates and pick pseudo-labels")
    common(p, out_required=False)
    p.add_argument("--root", required=True)
    p.add_argument("--task", required=True)
    p.set_defaults(fn=cmd_select_pseudo)

    p = sub.add_parser("refine", help="train/apply the fusion refiner")
    common(p, out_required=False)
    p.add_argument("--root", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--checkpoint", default=None, help="refiner checkpoint path")
    p.add_argument("--retrain", action="store_true")
    p.set_defaults(fn=cmd_refine)

    p = sub.add_parser("train", help="single-task flow-matching training")
    common(p)
    p.add_argument("--root", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--iterations", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("train-seq", help="sequential continual training")
    common(p)
    p.add_argument("--root", required=True)
    p.add_argument("--tasks", default=None, help="comma-separated task sequence")
    p.set_defaults(fn=cmd_train_seq)

    p = sub.add_parser("fuse", help="fuse pairs with a trained checkpoint")
    common(p)
    p.add_argument("--root", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pair", default=None, help="single pair id (default: whole subset)")
    p.add_argument("--subset", default="val", choices=["train", "val"])
    p.set_defaults(fn=cmd_fuse)

    p = sub.add_parser("eval", help="metric table for fused images")
    common(p)
    p.add_argument("--root", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--fused", required=True, help="directory of fused <pair_id>.png")
    p.add_argument("--subset", default="val", choices=["train", "val"])
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("coupling-exp", help="source-coupling transport distances")
    common(p)
    p.add_argument("--root", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--n-pairs", type=int, default=None)
    p.set_defaults(fn=cmd_coupling_exp)

    p = sub.add_parser("ablate", help="run the ablation grid")
    common(p)
    p.add_argument("--root", required=True)
    p.add_argument("--tasks", default=None, help="comma-separated task sequence")
    p.add_argument("--experiments", default=None, help="comma-separated subset")
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return 2
    except DataError as exc:
        log.error("data error: %s", exc)
        return 3
    except NumericError as exc:
        log.error("numeric failure: %s", exc)
        return 4


if __name__ == "__main__":
    sys.exit(main())
