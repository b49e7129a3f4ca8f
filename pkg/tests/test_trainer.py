"""Tests for the training loop: normalization, loss optimization, EMA,
checkpointing, and the TextMotionModel wrapper."""

import json

import pytest
import torch

from motiondiffuse.dataset import DatasetSpec, make_batch, synthesize_dataset
from motiondiffuse.denoiser import DenoiserConfig
from motiondiffuse.errors import CheckpointError
from motiondiffuse.motion import MotionSequence
from motiondiffuse.sampler import SampleSpec
from motiondiffuse.schedule import build_cosine_schedule
from motiondiffuse.trainer import (
    TextMotionModel,
    TrainConfig,
    Trainer,
    collate_contexts,
    compute_normalization,
    load_model,
)


def tiny_cfg(**kwargs):
    defaults = dict(d_model=32, n_layers=1, n_heads=2, d_ff=64, dropout=0.0,
                    d_motion=147, max_frames=32, d_text=32)
    defaults.update(kwargs)
    return DenoiserConfig(**defaults)


@pytest.fixture(scope="module")
def items():
    spec = DatasetSpec(samples_per_class=2, length_range=(12, 16), seed=8)
    return synthesize_dataset(spec)


@pytest.fixture
def trainer(items):
    torch.manual_seed(42)
    model = TextMotionModel(tiny_cfg(), vocab=128)
    cfg = TrainConfig(batch_size=4, diffusion_steps=20, seed=0, total_steps=5)
    return Trainer(model, cfg, items)


class TestCollateContexts:
    def test_shapes_and_padding(self):
        from motiondiffuse.text import ToyTextEncoder
        enc = ToyTextEncoder(d_text=8, vocab=32)
        ctxs = [enc.encode("one two three"), enc.encode("four"), enc.encode("")]
        pooled, tokens, pad = collate_contexts(ctxs)
        assert pooled.shape == (3, 8)
        assert tokens.shape == (3, 3, 8)
        assert pad.tolist() == [[False, False, False],
                                [False, True, True],
                                [False, True, True]]
        assert torch.equal(tokens[1, 1:], torch.zeros(2, 8))


class TestNormalization:
    def test_compute_over_valid_frames_only(self):
        a = MotionSequence(torch.ones(4, 3) * 2.0, valid_len=2)
        a.data[2:] = 99.0  # padding must be ignored
        b = MotionSequence(torch.zeros(3, 3), valid_len=3)
        mean, std = compute_normalization([(a, "x"), (b, "y")])
        # 2 frames of 2.0 and 3 frames of 0.0 -> mean 0.8
        assert torch.allclose(mean, torch.full((3,), 0.8))
        expected_std = torch.tensor([2.0, 2.0, 2.0, 0.0, 0.0]).std()
        assert torch.allclose(std, expected_std.expand(3), atol=1e-6)

    def test_model_round_trip(self):
        model = TextMotionModel(tiny_cfg(), vocab=16)
        mean = torch.randn(147)
        std = torch.rand(147) + 0.5
        model.set_normalization(mean, std)
        x = torch.randn(5, 147)
        assert torch.allclose(model.denormalize(model.normalize(x)), x, atol=1e-5)

    def test_std_floor(self):
        model = TextMotionModel(tiny_cfg(), vocab=16)
        model.set_normalization(torch.zeros(147), torch.zeros(147))
        assert bool((model.data_std == 1e-3).all())


class TestTrainer:
    def test_items_are_normalized_with_zero_padding(self, trainer):
        for m, _ in trainer.items:
            assert torch.equal(m.data[m.valid_len:],
                               torch.zeros(m.num_frames - m.valid_len, m.dims))
        frames = torch.cat([m.valid() for m, _ in trainer.items])
        assert abs(float(frames.mean())) < 0.05
        # constant dims hit the std floor and stay near zero instead of unit
        per_dim = frames.std(dim=0)
        varying = per_dim[per_dim > 0.5]
        assert torch.allclose(varying, torch.ones_like(varying), atol=0.35)

    def test_train_step_returns_detached_finite_losses(self, trainer):
        batch = make_batch(trainer.items[:4], trainer.gen, trainer.schedule.T,
                           trainer.model.text_encoder)
        losses = trainer.train_step(batch)
        for v in (losses.simple, losses.vlb, losses.hybrid):
            assert not v.requires_grad
            assert bool(torch.isfinite(v))
        assert float(losses.hybrid) == pytest.approx(
            float(losses.simple) + losses.lam * float(losses.vlb), rel=1e-6)
        assert trainer.step == 1

    def test_short_run_reduces_loss(self, items):
        torch.manual_seed(43)
        model = TextMotionModel(tiny_cfg(), vocab=128)
        cfg = TrainConfig(batch_size=8, diffusion_steps=20, seed=1, lr=3e-4)
        tr = Trainer(model, cfg, items)
        first = tr.run(1)
        for _ in range(6):
            last = tr.run(10)
        assert float(last.simple) < float(first.simple)

    def test_run_writes_loss_log(self, trainer, tmp_path):
        log_path = tmp_path / "loss.jsonl"
        trainer.run(4, log_path=log_path, log_every=2)
        lines = [json.loads(l) for l in log_path.read_text().splitlines()]
        assert [rec["step"] for rec in lines] == [2, 4]
        assert all(set(rec) == {"step", "simple", "vlb", "hybrid", "lr"}
                   for rec in lines)

    def test_ema_updates_on_interval(self, items):
        torch.manual_seed(44)
        model = TextMotionModel(tiny_cfg(), vocab=128)
        cfg = TrainConfig(batch_size=4, diffusion_steps=20, seed=2,
                          ema_interval=3, ema_decay=0.5)
        tr = Trainer(model, cfg, items)
        ema_before = tr.ema_model.denoiser.out_proj.weight.clone()
        tr.run(2)  # below the interval: EMA untouched
        assert torch.equal(tr.ema_model.denoiser.out_proj.weight, ema_before)
        tr.run(1)  # step 3 triggers the update
        after = tr.ema_model.denoiser.out_proj.weight
        assert not torch.equal(after, ema_before)
        expected = 0.5 * ema_before + 0.5 * tr.model.denoiser.out_proj.weight
        assert torch.allclose(after, expected, atol=1e-6)

    def test_freeze_text(self, items):
        torch.manual_seed(45)
        model = TextMotionModel(tiny_cfg(), vocab=128)
        cfg = TrainConfig(batch_size=4, diffusion_steps=20, freeze_text=True)
        tr = Trainer(model, cfg, items)
        table_before = model.text_encoder.embedding.weight.clone()
        tr.run(3)
        assert torch.equal(model.text_encoder.embedding.weight, table_before)
        assert not model.text_encoder.embedding.weight.requires_grad

    def test_run_is_deterministic_given_seed(self, items):
        outs = []
        for _ in range(2):
            torch.manual_seed(46)
            model = TextMotionModel(tiny_cfg(), vocab=128)
            cfg = TrainConfig(batch_size=4, diffusion_steps=20, seed=3)
            tr = Trainer(model, cfg, items)
            outs.append(tr.run(3))
        assert float(outs[0].hybrid) == float(outs[1].hybrid)


class TestCheckpointing:
    def test_save_and_resume(self, trainer, items, tmp_path):
        trainer.run(3)
        path = tmp_path / "ckpt.pt"
        trainer.save_checkpoint(path)
        # load_checkpoint expects the raw dataset; it re-normalizes with the
        # statistics stored in the checkpoint.
        resumed = Trainer.load_checkpoint(path, items)
        assert resumed.step == 3
        for a, b in zip(resumed.model.state_dict().values(),
                        trainer.model.state_dict().values()):
            assert torch.equal(a, b)
        for a, b in zip(resumed.ema_model.state_dict().values(),
                        trainer.ema_model.state_dict().values()):
            assert torch.equal(a, b)
        # resumed training continues identically to the original
        la = trainer.run(2)
        lb = resumed.run(2)
        assert float(la.hybrid) == pytest.approx(float(lb.hybrid), rel=1e-6)

    def test_load_model_ema_vs_raw(self, trainer, tmp_path):
        trainer.run(10)  # guarantees at least one EMA update
        path = tmp_path / "ckpt.pt"
        trainer.save_checkpoint(path)
        ema_model, schedule = load_model(path, use_ema=True)
        raw_model, _ = load_model(path, use_ema=False)
        assert schedule.T == trainer.schedule.T
        assert not ema_model.training
        assert torch.equal(raw_model.denoiser.out_proj.weight,
                           trainer.model.denoiser.out_proj.weight)
        assert not torch.equal(ema_model.denoiser.out_proj.weight,
                               raw_model.denoiser.out_proj.weight)

    def test_corrupt_file_raises_checkpoint_error(self, tmp_path):
        path = tmp_path / "junk.pt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError, match="cannot read"):
            load_model(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "old.pt"
        torch.save({"version": 0}, path)
        with pytest.raises(CheckpointError, match="version"):
            load_model(path)


class TestTextMotionModel:
    def test_generate_produces_denormalized_motion(self, trainer):
        schedule = build_cosine_schedule(10)
        spec = SampleSpec(length=6, guidance_scale=1.0, steps=5, seed=0)
        trainer.model.eval()
        m = trainer.model.generate("a person walks forward slowly",
                                   schedule, spec)
        assert m.data.shape == (6, 147)
        assert m.valid_len == 6
        assert torch.isfinite(m.data).all()

    def test_null_context(self):
        model = TextMotionModel(tiny_cfg(), vocab=16)
        assert model.null_context().is_null
        assert not model.encode("walk").is_null
