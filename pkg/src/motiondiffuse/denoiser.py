"""Transformer-decoder denoiser.

Input tokens are [TS, ML, CLS, frame_1 .. frame_L]: a timestep token, a
motion-length token, the pooled text embedding, then the linearly projected
motion frames with fixed sinusoidal positions added. Each block runs
pre-norm masked self-attention, cross-attention over the text token
sequence, and a feedforward, all with residuals. Outputs are read at the
motion positions only and projected to 2*D_mo, split into the noise
prediction and the raw variance-interpolation coefficient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import torch
from torch import nn

from .errors import CapacityError, DimensionError
from .text import TextContext


@dataclass(frozen=True)
class DenoiserConfig:
    d_model: int = 768
    n_layers: int = 8
    n_heads: int = 8
    d_ff: int = 2048
    dropout: float = 0.1
    d_motion: int = 147
    max_frames: int = 471
    max_ctx_tokens: int = 20
    d_text: int | None = None  # defaults to d_model

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise DimensionError("d_model must be divisible by n_heads")
        if self.max_ctx_tokens < 1:
            raise DimensionError("max_ctx_tokens must be >= 1")

    @property
    def text_dim(self) -> int:
        return self.d_text if self.d_text is not None else self.d_model

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DenoiserOutput:
    eps: torch.Tensor  # (.., frames, D_mo)
    v: torch.Tensor    # (.., frames, D_mo), raw (unmapped) coefficient


def sinusoidal_embedding(positions: torch.Tensor, dim: int,
                         dtype=torch.float32) -> torch.Tensor:
    """Classic fixed sin/cos embedding; positions (...,) -> (..., dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=dtype) / max(half - 1, 1))
    args = positions.to(dtype).unsqueeze(-1) * freqs
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2 == 1:
        emb = torch.cat([emb, torch.zeros_like(emb[..., :1])], dim=-1)
    return emb


class _ScalarToken(nn.Module):
    """Sinusoidal embedding of a scalar pushed through a 2-layer projection."""

    def __init__(self, d_model: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(d_model, d_model), nn.SiLU(), nn.Linear(d_model, d_model))
        self.d_model = d_model

    def forward(self, value: torch.Tensor) -> torch.Tensor:
        emb = sinusoidal_embedding(value, self.d_model,
                                   dtype=self.net[0].weight.dtype)
        return self.net(emb)


class _DecoderBlock(nn.Module):
    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = nn.MultiheadAttention(
            cfg.d_model, cfg.n_heads, dropout=cfg.dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = nn.MultiheadAttention(
            cfg.d_model, cfg.n_heads, dropout=cfg.dropout, batch_first=True)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.ff = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.d_ff), nn.SiLU(),
            nn.Dropout(cfg.dropout), nn.Linear(cfg.d_ff, cfg.d_model))
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, key_pad, ctx, ctx_pad):
        h = self.norm1(x)
        a, _ = self.self_attn(h, h, h, key_padding_mask=key_pad, need_weights=False)
        x = x + self.drop(a)
        h = self.norm2(x)
        a, _ = self.cross_attn(h, ctx, ctx, key_padding_mask=ctx_pad, need_weights=False)
        x = x + self.drop(a)
        x = x + self.drop(self.ff(self.norm3(x)))
        return x


class MotionDenoiser(nn.Module):
    """Predicts (eps, v) for a diffused motion, conditioned on t, length, text."""

    N_SPECIAL = 3  # TS, ML, CLS

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        self.frame_proj = nn.Linear(cfg.d_motion, cfg.d_model)
        self.ts_token = _ScalarToken(cfg.d_model)
        self.ml_token = _ScalarToken(cfg.d_model)
        self.cls_proj = nn.Linear(cfg.text_dim, cfg.d_model)
        self.ctx_proj = nn.Linear(cfg.text_dim, cfg.d_model)
        if cfg.text_dim == cfg.d_model:
            # identity init so a d_model-wide text backend starts transparent
            with torch.no_grad():
                self.cls_proj.weight.copy_(torch.eye(cfg.d_model))
                self.cls_proj.bias.zero_()
                self.ctx_proj.weight.copy_(torch.eye(cfg.d_model))
                self.ctx_proj.bias.zero_()
        self.register_buffer(
            "pos_enc",
            sinusoidal_embedding(torch.arange(cfg.max_frames), cfg.d_model),
            persistent=False)
        self.blocks = nn.ModuleList(_DecoderBlock(cfg) for _ in range(cfg.n_layers))
        self.final_norm = nn.LayerNorm(cfg.d_model)
        self.out_proj = nn.Linear(cfg.d_model, 2 * cfg.d_motion)
        # Gated input skip for the noise head. The ideal noise prediction is
        # x_t/sqrt(1-abar_t) minus a data-manifold term, and when d_model is
        # smaller than d_motion the hidden state alone cannot carry x_t to
        # the output; the gate (a function of the hidden state, hence of t)
        # supplies the x_t term directly. Zero-initialized so the head
        # starts as the plain linear readout.
        self.skip_gate = nn.Linear(cfg.d_model, cfg.d_motion)
        with torch.no_grad():
            self.skip_gate.weight.zero_()
            self.skip_gate.bias.zero_()
        self.drop = nn.Dropout(cfg.dropout)

    def build_tokens(self, x: torch.Tensor, t: torch.Tensor,
                     lengths: torch.Tensor, ctx_pooled: torch.Tensor):
        """Token sequence (B, 3+L, d_model) and its key padding mask.

        The padding mask marks frames at or beyond each item's length so
        self-attention never reads padded content; special tokens are
        always attendable.
        """
        B, L, D = x.shape
        if D != self.cfg.d_motion:
            raise DimensionError(f"motion dim {D} != configured {self.cfg.d_motion}")
        if L > self.cfg.max_frames:
            raise CapacityError(f"{L} frames exceeds max_frames={self.cfg.max_frames}")
        ts = self.ts_token(t.to(x.dtype))
        ml = self.ml_token(lengths.to(x.dtype))
        cls = self.cls_proj(ctx_pooled)
        frames = self.frame_proj(x) + self.pos_enc[:L].to(x.dtype)
        tokens = torch.cat([ts.unsqueeze(1), ml.unsqueeze(1), cls.unsqueeze(1), frames], dim=1)
        frame_idx = torch.arange(L, device=x.device).unsqueeze(0)
        pad = frame_idx >= lengths.reshape(B, 1)
        key_pad = torch.cat([torch.zeros(B, self.N_SPECIAL, dtype=torch.bool,
                                         device=x.device), pad], dim=1)
        return tokens, key_pad

    def forward(self, x: torch.Tensor, t: torch.Tensor, lengths: torch.Tensor,
                ctx_pooled: torch.Tensor, ctx_tokens: torch.Tensor,
                ctx_pad: torch.Tensor | None = None) -> DenoiserOutput:
        """Batched forward.

        x:          (B, L, D_mo) diffused motion
        t:          (B,) timesteps
        lengths:    (B,) valid frame counts
        ctx_pooled: (B, d_text)
        ctx_tokens: (B, S, d_text) cross-attention context, S <= max_ctx_tokens
        ctx_pad:    (B, S) bool, True where the context token is padding
        """
        tokens, key_pad = self.build_tokens(x, t, lengths, ctx_pooled)
        ctx_tokens = ctx_tokens[:, : self.cfg.max_ctx_tokens]
        if ctx_pad is not None:
            ctx_pad = ctx_pad[:, : self.cfg.max_ctx_tokens]
        ctx = self.ctx_proj(ctx_tokens)
        h = self.drop(tokens)
        for block in self.blocks:
            h = block(h, key_pad, ctx, ctx_pad)
        h = self.final_norm(h)
        frames_out = h[:, self.N_SPECIAL:]
        out = self.out_proj(frames_out)
        eps, v = out.chunk(2, dim=-1)
        eps = eps + self.skip_gate(frames_out) * x
        return DenoiserOutput(eps=eps, v=v)

    def denoise_single(self, x: torch.Tensor, t: int, length: int,
                       ctx: TextContext) -> DenoiserOutput:
        """Single-sequence convenience wrapper over the batched forward."""
        dtype = self.frame_proj.weight.dtype
        out = self.forward(
            x.to(dtype).unsqueeze(0),
            torch.tensor([t]),
            torch.tensor([length]),
            ctx.pooled.to(dtype).unsqueeze(0),
            ctx.tokens.to(dtype).unsqueeze(0),
        )
        return DenoiserOutput(eps=out.eps.squeeze(0), v=out.v.squeeze(0))
