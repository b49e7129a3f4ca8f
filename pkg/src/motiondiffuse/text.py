"""Pluggable text encoding.

A text encoder turns a prompt into a TextContext: a pooled vector plus a
token-embedding sequence used as cross-attention context. Two backends are
built in: a trainable toy word-hash encoder, and a file-backed lookup for
embeddings computed offline by a real language model.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ParseError

MAX_WORDS = 20
TOY_VOCAB = 4096


@dataclass
class TextContext:
    pooled: torch.Tensor   # (d_text,)
    tokens: torch.Tensor   # (n_tokens, d_text), n_tokens >= 1
    is_null: bool = False


def _bucket(word: str, vocab: int) -> int:
    """Stable hash bucket in 1..vocab (row 0 is the reserved null row)."""
    digest = hashlib.sha1(word.encode("utf-8")).digest()
    return 1 + int.from_bytes(digest[:8], "big") % vocab


def tokenize(text: str, max_words: int = MAX_WORDS) -> list[str]:
    return text.lower().split()[:max_words]


class ToyTextEncoder(nn.Module):
    """Word-level hash-bucket embedding table.

    Row 0 is reserved for the null (empty string) context so encode("")
    never collides with a real word. Embeddings are ordinary parameters and
    train jointly with the denoiser unless frozen.
    """

    def __init__(self, d_text: int, vocab: int = TOY_VOCAB, seed: int = 0):
        super().__init__()
        self.d_text = d_text
        self.vocab = vocab
        gen = torch.Generator().manual_seed(seed)
        table = torch.randn(vocab + 1, d_text, generator=gen) * 0.02
        self.embedding = nn.Embedding(vocab + 1, d_text, _weight=table)

    def encode(self, text: str) -> TextContext:
        words = tokenize(text)
        if not words:
            null = self.embedding.weight[0]
            return TextContext(pooled=null, tokens=null.unsqueeze(0), is_null=True)
        idx = torch.tensor([_bucket(w, self.vocab) for w in words], dtype=torch.long)
        tokens = self.embedding(idx)
        return TextContext(pooled=tokens.mean(dim=0), tokens=tokens, is_null=False)


class EmbeddingFileEncoder(nn.Module):
    """Lookup backend over precomputed embeddings, with toy fallback.

    File format: UTF-8 JSONL, one record per line:
        {"text": str, "pooled": [float...], "tokens": [[float...]...]}
    Duplicate keys: the last record wins (a warning is emitted).
    """

    def __init__(self, path, fallback: ToyTextEncoder):
        super().__init__()
        self.fallback = fallback
        self.table: dict[str, tuple[torch.Tensor, torch.Tensor]] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ParseError(f"{path}:{lineno}: invalid JSON ({e.msg})") from e
                for key in ("text", "pooled", "tokens"):
                    if key not in rec:
                        raise ParseError(f"{path}:{lineno}: record missing '{key}'")
                try:
                    pooled = torch.tensor(rec["pooled"], dtype=torch.float32)
                    tokens = torch.tensor(rec["tokens"], dtype=torch.float32)
                except (TypeError, ValueError) as e:
                    raise ParseError(f"{path}:{lineno}: non-numeric embedding data") from e
                if pooled.ndim != 1 or tokens.ndim != 2 or tokens.shape[1] != pooled.shape[0]:
                    raise ParseError(f"{path}:{lineno}: pooled/tokens widths disagree")
                if rec["text"] in self.table:
                    warnings.warn(f"{path}:{lineno}: duplicate key {rec['text']!r}, last record wins")
                self.table[rec["text"]] = (pooled, tokens[:MAX_WORDS])

    @property
    def d_text(self) -> int:
        return self.fallback.d_text

    def encode(self, text: str) -> TextContext:
        if text == "":
            return self.fallback.encode(text)
        hit = self.table.get(text)
        if hit is None:
            warnings.warn(f"text {text!r} not in embedding file; falling back to toy encoder")
            return self.fallback.encode(text)
        pooled, tokens = hit
        return TextContext(pooled=pooled, tokens=tokens, is_null=False)
