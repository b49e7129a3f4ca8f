"""Tests for the synthetic dataset: determinism, class structure, motion
geometry, file output, clipping, and batch collation."""

import json

import pytest
import torch

from motiondiffuse.dataset import (
    DEFAULT_TEMPLATES,
    DatasetSpec,
    clip_to_length,
    generate_synthetic,
    make_batch,
    synthesize_dataset,
    synthesize_one,
)
from motiondiffuse.errors import ConfigurationError
from motiondiffuse.motion import (
    POSE_DIM,
    MotionSequence,
    load_annotations,
    load_motion,
)
from motiondiffuse.text import ToyTextEncoder


class TestDatasetSpec:
    def test_defaults(self):
        spec = DatasetSpec()
        assert len(spec.classes) == 8
        assert spec.samples_per_class == 32

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            DatasetSpec(classes=(("walk", ["a"]),))
        with pytest.raises(ConfigurationError):
            DatasetSpec(samples_per_class=0)
        with pytest.raises(ConfigurationError):
            DatasetSpec(length_range=(10, 5))


class TestSynthesize:
    def test_deterministic(self):
        spec = DatasetSpec(samples_per_class=3, length_range=(16, 20), seed=5)
        a = synthesize_dataset(spec)
        b = synthesize_dataset(spec)
        assert len(a) == len(b) == 8 * 3
        for (ma, ta), (mb, tb) in zip(a, b):
            assert ta == tb
            assert torch.equal(ma.data, mb.data)

    def test_seed_changes_content(self):
        a = synthesize_dataset(DatasetSpec(samples_per_class=2,
                                           length_range=(16, 20), seed=1))
        b = synthesize_dataset(DatasetSpec(samples_per_class=2,
                                           length_range=(16, 20), seed=2))
        assert not torch.equal(a[0][0].data, b[0][0].data)

    def test_shapes_and_lengths(self, small_dataset):
        for m, text in small_dataset:
            assert m.dims == POSE_DIM
            assert 16 <= m.valid_len <= 24
            assert m.valid_len == m.num_frames
            assert isinstance(text, str) and text

    def test_templates_cycle_through_variants(self):
        spec = DatasetSpec(samples_per_class=8, length_range=(16, 20), seed=0)
        items = synthesize_dataset(spec)
        walk_texts = [t for m, t in items[:8]]
        assert walk_texts[:4] == DEFAULT_TEMPLATES["walk"]
        assert walk_texts[4:] == DEFAULT_TEMPLATES["walk"]

    def test_all_texts_distinct_across_variants(self):
        texts = {t for ts in DEFAULT_TEMPLATES.values() for t in ts}
        assert len(texts) == 8 * 4

    def test_walk_travels_forward_monotonically(self):
        gen = torch.Generator().manual_seed(9)
        m = synthesize_one("walk", 1, 40, 20.0, gen, 0.01)
        z = m.data[:, 2]
        assert bool((z[1:] > z[:-1]).all())

    @staticmethod
    def _joint_motion(m, joint):
        """Mean deviation of a joint's 6D rotation from the identity."""
        block = m.data[:, 3 + 6 * joint: 3 + 6 * joint + 6]
        ident = torch.tensor([1.0, 0, 0, 0, 1.0, 0], dtype=block.dtype)
        return float((block - ident).abs().mean())

    def test_variants_are_distinguishable(self):
        # Higher variant index means larger amplitude: the strong kick moves
        # the hip further than the gentle one.
        gen = torch.Generator().manual_seed(10)
        gentle = synthesize_one("kick_left", 0, 40, 20.0, gen, 0.0)
        strong = synthesize_one("kick_left", 3, 40, 20.0, gen, 0.0)
        assert self._joint_motion(strong, 1) > 1.5 * self._joint_motion(gentle, 1)

    def test_kick_sides_differ(self):
        gen = torch.Generator().manual_seed(11)
        left = synthesize_one("kick_left", 1, 40, 20.0, gen, 0.0)
        right = synthesize_one("kick_right", 1, 40, 20.0, gen, 0.0)
        # left kick moves the left hip (joint 1), right kick the right (2)
        assert self._joint_motion(left, 1) > 5 * self._joint_motion(left, 2)
        assert self._joint_motion(right, 2) > 5 * self._joint_motion(right, 1)

    def test_unknown_family_rejected(self):
        gen = torch.Generator().manual_seed(0)
        with pytest.raises(ConfigurationError):
            synthesize_one("moonwalk", 0, 10, 20.0, gen, 0.0)

    def test_rotation_columns_near_unit(self):
        gen = torch.Generator().manual_seed(12)
        m = synthesize_one("squat", 2, 30, 20.0, gen, 0.0)
        rots = m.data[:, 3:].reshape(30, 24, 6)
        norms = torch.linalg.norm(rots[..., :3], dim=-1)
        assert torch.allclose(norms, torch.ones_like(norms), atol=1e-9)


class TestGenerateSynthetic:
    def test_writes_files_and_manifest(self, tmp_path):
        spec = DatasetSpec(samples_per_class=2, length_range=(16, 18), seed=0)
        manifest = generate_synthetic(spec, tmp_path)
        assert manifest["num_motions"] == 16
        recs = load_annotations(tmp_path / "annotations.jsonl")
        assert len(recs) == 16
        m = load_motion(tmp_path / recs[0]["motion"])
        assert m.dims == POSE_DIM

    def test_round_trip_matches_in_memory(self, tmp_path):
        spec = DatasetSpec(samples_per_class=1, length_range=(16, 16), seed=4)
        generate_synthetic(spec, tmp_path)
        items = synthesize_dataset(spec)
        recs = load_annotations(tmp_path / "annotations.jsonl")
        for (m, text), rec in zip(items, recs):
            assert rec["text"] == text
            loaded = load_motion(tmp_path / rec["motion"])
            assert torch.equal(loaded.data, m.data)


class TestClipToLength:
    def test_short_motion_zero_padded(self):
        m = MotionSequence(torch.ones(5, 4), fps=20.0)
        clips = clip_to_length(m, 8)
        assert len(clips) == 1
        c = clips[0]
        assert c.num_frames == 8 and c.valid_len == 5
        assert torch.equal(c.data[:5], torch.ones(5, 4))
        assert torch.equal(c.data[5:], torch.zeros(3, 4))

    def test_exact_length_single_clip(self):
        m = MotionSequence(torch.randn(8, 4))
        clips = clip_to_length(m, 8)
        assert len(clips) == 1 and clips[0].valid_len == 8

    def test_sliding_window_count_and_content(self):
        m = MotionSequence(torch.arange(50, dtype=torch.float32)
                           .reshape(50, 1).expand(50, 4).clone())
        clips = clip_to_length(m, 20, stride=10)
        # floor((50 - 20) / 10) + 1 = 4 windows
        assert len(clips) == 4
        for k, c in enumerate(clips):
            assert c.valid_len == 20
            assert float(c.data[0, 0]) == 10.0 * k

    def test_rejects_bad_target(self):
        with pytest.raises(ConfigurationError):
            clip_to_length(MotionSequence(torch.zeros(4, 2)), 0)


@pytest.fixture(scope="module")
def encoder():
    return ToyTextEncoder(d_text=8, vocab=32)


class TestMakeBatch:
    def test_collation(self, small_dataset, encoder):
        gen = torch.Generator().manual_seed(1)
        items = small_dataset[:6]
        batch = make_batch(items, gen, T=50, encoder=encoder, null_prob=0.0)
        L = max(m.num_frames for m, _ in items)
        assert batch.motions.shape == (6, L, POSE_DIM)
        assert batch.noises.shape == batch.motions.shape
        assert batch.timesteps.shape == (6,)
        assert bool((batch.timesteps >= 1).all()) and bool((batch.timesteps <= 50).all())
        for b, (m, text) in enumerate(items):
            n = m.valid_len
            assert batch.valid_lens[b] == n
            assert torch.allclose(batch.motions[b, :n], m.data[:n].to(torch.float32))
            assert torch.equal(batch.motions[b, n:],
                               torch.zeros(L - n, POSE_DIM))
            assert torch.equal(batch.noises[b, n:], torch.zeros(L - n, POSE_DIM))
            assert batch.texts[b] == text

    def test_null_replacement_extremes(self, small_dataset, encoder):
        gen = torch.Generator().manual_seed(2)
        items = small_dataset[:8]
        all_null = make_batch(items, gen, T=50, encoder=encoder, null_prob=1.0)
        assert all(t == "" for t in all_null.texts)
        assert all(c.is_null for c in all_null.contexts)
        none_null = make_batch(items, gen, T=50, encoder=encoder, null_prob=0.0)
        assert all(t != "" for t in none_null.texts)
        assert not any(c.is_null for c in none_null.contexts)

    def test_null_replacement_frequency(self, small_dataset, encoder):
        gen = torch.Generator().manual_seed(3)
        items = small_dataset[:4]
        nulls = total = 0
        for _ in range(500):
            batch = make_batch(items, gen, T=50, encoder=encoder, null_prob=0.25)
            nulls += sum(1 for t in batch.texts if t == "")
            total += len(batch.texts)
        rate = nulls / total
        # 3 sigma for Bernoulli(0.25), n = 2000
        assert abs(rate - 0.25) < 3 * (0.25 * 0.75 / total) ** 0.5

    def test_empty_batch_rejected(self, encoder):
        with pytest.raises(ConfigurationError):
            make_batch([], torch.Generator(), T=10, encoder=encoder)
