"""Tests for the text encoders: tokenization, the toy hash encoder, and the
file-backed embedding lookup."""

import json

import pytest
import torch

from motiondiffuse.errors import ParseError
from motiondiffuse.text import (
    MAX_WORDS,
    EmbeddingFileEncoder,
    TextContext,
    ToyTextEncoder,
    tokenize,
)


class TestTokenize:
    def test_lowercases_and_splits(self):
        assert tokenize("A Person WALKS  forward") == ["a", "person", "walks", "forward"]

    def test_truncates_to_max_words(self):
        words = tokenize(" ".join(f"w{i}" for i in range(30)))
        assert len(words) == MAX_WORDS
        assert words[0] == "w0" and words[-1] == f"w{MAX_WORDS - 1}"

    def test_empty(self):
        assert tokenize("") == []
        assert tokenize("   ") == []


class TestToyTextEncoder:
    def test_deterministic_across_instances(self):
        a = ToyTextEncoder(d_text=16, vocab=64, seed=5)
        b = ToyTextEncoder(d_text=16, vocab=64, seed=5)
        ca, cb = a.encode("a person walks"), b.encode("a person walks")
        assert torch.equal(ca.pooled, cb.pooled)
        assert torch.equal(ca.tokens, cb.tokens)

    def test_shapes_and_pooling(self):
        enc = ToyTextEncoder(d_text=16, vocab=64)
        ctx = enc.encode("one two three")
        assert ctx.tokens.shape == (3, 16)
        assert ctx.pooled.shape == (16,)
        assert torch.allclose(ctx.pooled, ctx.tokens.mean(dim=0))
        assert not ctx.is_null

    def test_null_context(self):
        enc = ToyTextEncoder(d_text=16, vocab=64)
        ctx = enc.encode("")
        assert ctx.is_null
        assert ctx.tokens.shape == (1, 16)
        assert torch.equal(ctx.pooled, enc.embedding.weight[0])

    def test_null_row_never_collides_with_words(self):
        # Every word buckets into 1..vocab, so no prompt can hit row 0.
        enc = ToyTextEncoder(d_text=8, vocab=4)
        null = enc.embedding.weight[0]
        for text in ("a", "b", "c", "d", "e", "f", "g", "h"):
            ctx = enc.encode(text)
            assert not torch.equal(ctx.tokens[0], null)

    def test_case_insensitive(self):
        enc = ToyTextEncoder(d_text=16, vocab=64)
        assert torch.equal(enc.encode("WALK Fast").pooled,
                           enc.encode("walk fast").pooled)

    def test_embeddings_are_trainable(self):
        enc = ToyTextEncoder(d_text=16, vocab=64)
        assert enc.embedding.weight.requires_grad
        ctx = enc.encode("walk")
        ctx.pooled.sum().backward()
        assert enc.embedding.weight.grad is not None


def _write_jsonl(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")


class TestEmbeddingFileEncoder:
    @pytest.fixture
    def fallback(self):
        return ToyTextEncoder(d_text=4, vocab=16)

    def test_lookup_hit(self, tmp_path, fallback):
        path = tmp_path / "emb.jsonl"
        _write_jsonl(path, [{"text": "walk", "pooled": [1, 2, 3, 4],
                             "tokens": [[1, 2, 3, 4], [5, 6, 7, 8]]}])
        enc = EmbeddingFileEncoder(path, fallback)
        ctx = enc.encode("walk")
        assert torch.equal(ctx.pooled, torch.tensor([1.0, 2, 3, 4]))
        assert ctx.tokens.shape == (2, 4)
        assert not ctx.is_null

    def test_miss_falls_back_with_warning(self, tmp_path, fallback):
        path = tmp_path / "emb.jsonl"
        _write_jsonl(path, [{"text": "walk", "pooled": [0, 0, 0, 0],
                             "tokens": [[0, 0, 0, 0]]}])
        enc = EmbeddingFileEncoder(path, fallback)
        with pytest.warns(UserWarning, match="falling back"):
            ctx = enc.encode("jump high")
        assert torch.equal(ctx.pooled, fallback.encode("jump high").pooled)

    def test_empty_text_uses_fallback_null(self, tmp_path, fallback):
        path = tmp_path / "emb.jsonl"
        _write_jsonl(path, [{"text": "walk", "pooled": [0, 0, 0, 0],
                             "tokens": [[0, 0, 0, 0]]}])
        enc = EmbeddingFileEncoder(path, fallback)
        assert enc.encode("").is_null

    def test_duplicate_key_last_wins(self, tmp_path, fallback):
        path = tmp_path / "emb.jsonl"
        _write_jsonl(path, [
            {"text": "walk", "pooled": [1, 1, 1, 1], "tokens": [[1, 1, 1, 1]]},
            {"text": "walk", "pooled": [2, 2, 2, 2], "tokens": [[2, 2, 2, 2]]},
        ])
        with pytest.warns(UserWarning, match="duplicate key"):
            enc = EmbeddingFileEncoder(path, fallback)
        assert torch.equal(enc.encode("walk").pooled, torch.full((4,), 2.0))

    def test_tokens_truncated_to_max_words(self, tmp_path, fallback):
        path = tmp_path / "emb.jsonl"
        _write_jsonl(path, [{"text": "long", "pooled": [0.0] * 4,
                             "tokens": [[float(i)] * 4 for i in range(30)]}])
        enc = EmbeddingFileEncoder(path, fallback)
        assert enc.encode("long").tokens.shape == (MAX_WORDS, 4)

    def test_parse_errors_carry_line_numbers(self, tmp_path, fallback):
        path = tmp_path / "emb.jsonl"
        path.write_text('{"text": "a", "pooled": [0], "tokens": [[0]]}\nbroken\n')
        with pytest.raises(ParseError, match=":2:"):
            EmbeddingFileEncoder(path, fallback)
        path.write_text('{"text": "a", "pooled": [0]}\n')
        with pytest.raises(ParseError, match="tokens"):
            EmbeddingFileEncoder(path, fallback)
        path.write_text('{"text": "a", "pooled": [0, 1], "tokens": [[0]]}\n')
        with pytest.raises(ParseError, match="widths disagree"):
            EmbeddingFileEncoder(path, fallback)
        path.write_text('{"text": "a", "pooled": ["x"], "tokens": [[0]]}\n')
        with pytest.raises(ParseError, match="non-numeric"):
            EmbeddingFileEncoder(path, fallback)


def test_text_context_defaults():
    ctx = TextContext(pooled=torch.zeros(4), tokens=torch.zeros(1, 4))
    assert ctx.is_null is False
