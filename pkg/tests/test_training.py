import numpy as np
import pytest
import torch

from flowfuse import metrics, refiner, synthetic, training
from flowfuse.continual import ReplayBuffer
from flowfuse.data import load_dataset
from flowfuse.errors import ConfigError, DataError
from flowfuse.net import VectorFieldNet
from flowfuse.training import (
    ContinualState,
    TrainConfig,
    composite_score,
    desk_profile,
    published_profile,
    ssim_torch,
    state_hash,
    train_fm_task,
    train_refiner_stage1,
    train_refiner_stage2,
    train_sequence,
)


@pytest.fixture(scope="module")
def tiny_root(tmp_path_factory):
    """Two small tasks with fstar standing in as the selected pseudo-label."""
    root = tmp_path_factory.mktemp("data")
    for task, flavor in (("ivf", "ivf-like"), ("mef", "mef-like")):
        ds = synthetic.generate(root, n_pairs=8, size=64, seed=5, flavor=flavor, task=task)
        import shutil

        pseudo = ds.task_dir / "pseudo"
        pseudo.mkdir()
        for rec in ds.pairs:
            shutil.copyfile(rec.fstar, pseudo / f"{rec.pair_id}.png")
    return root


def tiny_cfg(**overrides):
    base = dict(iterations=8, batch_size=2, crop_size=32, refiner_iterations=25,
                refiner_batch=2, fisher_batches=2, memory_size=4, seed=11)
    base.update(overrides)
    return TrainConfig(**base)


class TestConfig:
    def test_published_profile_defaults(self):
        cfg = published_profile()
        assert cfg.iterations == 25_000
        assert cfg.batch_size == 32
        assert cfg.crop_size == 128
        assert cfg.learning_rate == 8e-4
        assert cfg.lambda_ewc == 1000.0
        assert cfg.base_channels == 64

    def test_desk_profile_defaults(self):
        cfg = desk_profile()
        assert cfg.iterations == 2000
        assert cfg.batch_size == 16
        assert cfg.crop_size == 64
        assert cfg.base_channels == 32

    def test_validation(self):
        with pytest.raises(ConfigError, match="color_mode"):
            TrainConfig(color_mode="hsv")
        with pytest.raises(ConfigError, match="divisible"):
            TrainConfig(crop_size=50)
        with pytest.raises(ConfigError, match="unknown tasks"):
            TrainConfig(task_sequence=("bogus",))

    def test_net_spec_channels(self):
        assert TrainConfig(color_mode="rgb").net_spec().in_channels == 9
        assert TrainConfig().net_spec().in_channels == 3


class TestTorchMetricBridge:
    def test_ssim_torch_matches_numpy_metric(self):
        rng = np.random.default_rng(0)
        a, b = rng.random((32, 32)), rng.random((32, 32))
        torch_val = ssim_torch(
            torch.from_numpy(a[None, None].astype(np.float32)),
            torch.from_numpy(b[None, None].astype(np.float32)),
        ).item()
        assert torch_val == pytest.approx(metrics.ssim(a, b), abs=1e-5)

    def test_fusion_loss_prefers_good_fusions(self):
        rng = np.random.default_rng(1)
        a = torch.from_numpy(rng.random((1, 1, 32, 32)).astype(np.float32))
        b = torch.from_numpy(rng.random((1, 1, 32, 32)).astype(np.float32))
        good = torch.maximum(a, b)
        bad = torch.zeros_like(a)
        assert training.fusion_loss(good, a, b) < training.fusion_loss(bad, a, b)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    from types import SimpleNamespace

    root = tmp_path_factory.mktemp("refiner_data")
    ds = synthetic.generate(root, n_pairs=16, size=64, seed=5, flavor="ivf-like", task="ivf")
    for rec in ds.pairs:
        rec.pseudo = rec.fstar
    cfg = TrainConfig(refiner_iterations=300, refiner_batch=8, crop_size=48, seed=5)
    du, fi, logs1 = train_refiner_stage1(ds, cfg)
    du_hash = state_hash(du)
    stage1_fused = {}
    for pid in ds.ids("val"):
        a, b = ds.load_sources(pid)
        stage1_fused[pid] = refiner.integrate(a.astype(np.float64), b.astype(np.float64), fi)
    fi, params, logs2 = train_refiner_stage2(ds, du, fi, cfg)
    return SimpleNamespace(ds=ds, cfg=cfg, du=du, fi=fi, params=params, logs1=logs1,
                           logs2=logs2, du_hash=du_hash, stage1_fused=stage1_fused)


@pytest.mark.slow
class TestRefinerTraining:

    def test_stage1_du_reconstruction_threshold(self, trained):
        ds, du = trained.ds, trained.du
        losses = []
        for pid in ds.ids("val"):
            a, b = ds.load_sources(pid)
            pa, pb = refiner.decompose(ds.load_pseudo(pid).astype(np.float64), du)
            losses.append(0.5 * (np.abs(pa - a).mean() + np.abs(pb - b).mean()))
        assert np.mean(losses) < 0.05

    def test_stage1_fi_ssim_threshold(self, trained):
        ds = trained.ds
        vals = []
        for pid in ds.ids("val"):
            vals.append(metrics.ssim(trained.stage1_fused[pid], ds.load_pseudo(pid).astype(np.float64)))
        assert np.mean(vals) > 0.7

    def test_loss_curves_decrease_under_moving_average(self, trained):
        for curve in (trained.logs1["du_loss"], trained.logs1["fi_loss"], trained.logs2["loss"]):
            smooth = np.convolve(curve, np.ones(50) / 50, mode="valid")
            assert smooth[-1] < smooth[0]
            # allow small local bumps but require a broadly decreasing trend
            assert np.mean(np.diff(smooth) <= 1e-3) > 0.9

    def test_stage2_du_frozen(self, trained):
        assert state_hash(trained.du) == trained.du_hash

    def test_stage2_alphas_finite_and_logged(self, trained):
        assert np.isfinite(trained.params.alpha_a) and np.isfinite(trained.params.alpha_b)
        assert len(trained.logs2["alphas"]) == 300
        assert all(np.isfinite(a) and np.isfinite(b) for a, b in trained.logs2["alphas"])

    def test_stage2_refined_consistency(self, trained):
        ds, du, fi, params = trained.ds, trained.du, trained.fi, trained.params
        vals, q_drop = [], []
        for pid in ds.ids("val"):
            a, b = ds.load_sources(pid)
            pseudo = ds.load_pseudo(pid).astype(np.float64)
            a64, b64 = a.astype(np.float64), b.astype(np.float64)
            refined = refiner.refine(pseudo, a64, b64, params, du, fi)
            vals.append(metrics.ssim(refined, pseudo))
            q_drop.append(metrics.qabf(refined, a64, b64) - metrics.qabf(pseudo, a64, b64))
        assert np.mean(vals) >= 0.85
        assert np.mean(q_drop) >= -0.02

    def test_stage2_preserves_stage1_edge_quality(self, trained):
        ds, du, fi, params = trained.ds, trained.du, trained.fi, trained.params
        stage1_fused = trained.stage1_fused
        drops = []
        for pid in ds.ids("val"):
            a, b = ds.load_sources(pid)
            pseudo = ds.load_pseudo(pid).astype(np.float64)
            a64, b64 = a.astype(np.float64), b.astype(np.float64)
            refined = refiner.refine(pseudo, a64, b64, params, du, fi)
            drops.append(
                metrics.qabf(refined, a64, b64) - metrics.qabf(stage1_fused[pid], a64, b64)
            )
        assert np.mean(drops) >= -0.02

    def test_stage2_requires_trained_du(self, tiny_root):
        ds = load_dataset(tiny_root, "ivf")
        du = refiner.DecompositionUnit()
        fi = refiner.FusionIntegrator()
        with pytest.raises(RuntimeError, match="stage-1"):
            train_refiner_stage2(ds, du, fi, tiny_cfg())

    def test_stage2_gradients_touch_only_fi_and_alphas(self, tiny_root):
        ds = load_dataset(tiny_root, "ivf")
        cfg = tiny_cfg(refiner_iterations=2)
        du, fi, _ = train_refiner_stage1(ds, cfg)
        du_before = state_hash(du)
        train_refiner_stage2(ds, du, fi, cfg)
        assert state_hash(du) == du_before
        assert all(not p.requires_grad for p in du.parameters())


class TestFmTask:
    def test_bit_exact_reproducibility(self, tiny_root):
        results = []
        for _ in range(2):
            datasets = {"ivf": load_dataset(tiny_root, "ivf")}
            cfg = tiny_cfg(lambda_ewc=0.0)
            torch.manual_seed(cfg.seed)
            model = VectorFieldNet(cfg.net_spec())
            snapshot, losses = train_fm_task(datasets, "ivf", model, cfg)
            results.append((state_hash(model), losses))
        assert results[0][0] == results[1][0]
        assert results[0][1] == results[1][1]

    def test_snapshot_keys_match_parameters(self, tiny_root):
        datasets = {"ivf": load_dataset(tiny_root, "ivf")}
        cfg = tiny_cfg()
        torch.manual_seed(cfg.seed)
        model = VectorFieldNet(cfg.net_spec())
        snapshot, _ = train_fm_task(datasets, "ivf", model, cfg)
        assert set(snapshot.theta_star) == {n for n, _ in model.named_parameters()}
        assert set(snapshot.fisher) == set(snapshot.theta_star)
        assert all((f >= 0).all() for f in snapshot.fisher.values())

    def test_replay_leak_rejected(self, tiny_root):
        datasets = {
            "ivf": load_dataset(tiny_root, "ivf"),
            "mef": load_dataset(tiny_root, "mef"),
        }
        cfg = tiny_cfg()
        torch.manual_seed(0)
        model = VectorFieldNet(cfg.net_spec())
        state = ContinualState()
        val_id = datasets["mef"].ids("val")[0]
        state.replay = ReplayBuffer(memory={"mef": [val_id]})
        with pytest.raises(DataError, match="leak"):
            train_fm_task(datasets, "ivf", model, cfg, state)

    def test_current_task_replay_rejected(self, tiny_root):
        datasets = {"ivf": load_dataset(tiny_root, "ivf")}
        cfg = tiny_cfg()
        torch.manual_seed(0)
        model = VectorFieldNet(cfg.net_spec())
        state = ContinualState()
        state.replay = ReplayBuffer(memory={"ivf": datasets["ivf"].ids("train")[:1]})
        with pytest.raises(ValueError, match="contains current task"):
            train_fm_task(datasets, "ivf", model, cfg, state)


@pytest.fixture(scope="module")
def seq_result(tiny_root):
    cfg = tiny_cfg(task_sequence=("ivf", "mef"))
    return train_sequence(tiny_root, cfg)


class TestSequence:

    def test_r_matrix_complete(self, seq_result):
        _, result = seq_result
        assert result.r_matrix.shape == (2, 2)
        assert np.isfinite(result.r_matrix).all()
        assert np.isfinite(result.bwt) and np.isfinite(result.fwt)

    def test_snapshots_accumulate(self, seq_result):
        _, result = seq_result
        assert [s.task_id for s in result.snapshots] == ["ivf", "mef"]

    def test_replay_contains_completed_tasks(self, seq_result):
        _, result = seq_result
        assert set(result.replay.memory) == {"ivf", "mef"}
        assert all(len(v) <= 4 for v in result.replay.memory.values())

    def test_lambda0_empty_replay_matches_single_task(self, tiny_root):
        cfg = tiny_cfg(lambda_ewc=0.0, memory_size=0, task_sequence=("ivf",))
        _, result = train_sequence(tiny_root, cfg)
        seq_hashless = result.losses["ivf"]

        datasets = {"ivf": load_dataset(tiny_root, "ivf")}
        torch.manual_seed(cfg.seed)
        model = VectorFieldNet(cfg.net_spec())
        _, direct_losses = train_fm_task(datasets, "ivf", model, cfg)
        assert seq_hashless == direct_losses

    def test_composite_score_uses_task_weights(self):
        rng = np.random.default_rng(2)
        f, a, b = rng.random((32, 32)), rng.random((32, 32)), rng.random((32, 32))
        expected_ivf = (
            metrics.entropy(f)
            + metrics.vif(f, a, b)
            + 2 * metrics.qabf(f, a, b)
            + 3 * metrics.ssim_fused(f, a, b)
        )
        assert composite_score(f, a, b, "ivf") == pytest.approx(expected_ivf, abs=1e-9)


class TestPseudoVariants:
    def test_teacher_variant(self, tiny_root):
        from flowfuse.cli import prepare_pseudo_variant

        ds = prepare_pseudo_variant(tiny_root, "ivf", "teacher:blur", tiny_cfg())
        rec = ds.pairs[0]
        assert rec.pseudo is not None and "candidates" in str(rec.pseudo)
        assert rec.refined is None

    def test_selected_variant_drops_refined(self, tiny_root):
        from flowfuse.cli import prepare_pseudo_variant

        ds = prepare_pseudo_variant(tiny_root, "ivf", "selected", tiny_cfg())
        assert all(rec.refined is None for rec in ds.pairs)
        assert all(rec.pseudo is not None for rec in ds.pairs)

    def test_unsharp_variant_writes_files(self, tiny_root):
        from flowfuse.cli import prepare_pseudo_variant

        ds = prepare_pseudo_variant(tiny_root, "ivf", "unsharp", tiny_cfg())
        assert all(rec.refined is not None and rec.refined.is_file() for rec in ds.pairs)

    def test_unknown_variant(self, tiny_root):
        from flowfuse.cli import prepare_pseudo_variant

        with pytest.raises(ConfigError, match="pseudo source"):
            prepare_pseudo_variant(tiny_root, "ivf", "bogus", tiny_cfg())
