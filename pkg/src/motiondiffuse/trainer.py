"""Training loop for the denoiser: hybrid loss, AdamW, EMA, checkpointing.

TextMotionModel bundles the denoiser with a text encoder and per-dimension
normalization statistics; it is the object the sampler and editor consume.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, asdict

import torch
from torch import nn

from .dataset import Batch, make_batch
from .denoiser import DenoiserConfig, DenoiserOutput, MotionDenoiser
from .diffusion import LossBreakdown, diffuse, loss_terms
from .errors import CheckpointError, NumericError
from .motion import MotionSequence
from .sampler import SampleSpec, sample
from .schedule import DiffusionSchedule, build_cosine_schedule
from .text import TextContext, ToyTextEncoder

CHECKPOINT_VERSION = 1


def collate_contexts(contexts: list[TextContext], dtype=torch.float32):
    """Stack per-item contexts: (pooled (B,d), tokens (B,S,d), pad (B,S))."""
    B = len(contexts)
    d = contexts[0].pooled.shape[-1]
    S = max(c.tokens.shape[0] for c in contexts)
    pooled = torch.stack([c.pooled.to(dtype) for c in contexts])
    tokens = torch.zeros(B, S, d, dtype=dtype)
    pad = torch.ones(B, S, dtype=torch.bool)
    for b, c in enumerate(contexts):
        n = c.tokens.shape[0]
        tokens[b, :n] = c.tokens.to(dtype)
        pad[b, :n] = False
    return pooled, tokens, pad


class TextMotionModel(nn.Module):
    """Denoiser + text encoder + normalization stats, as one sampling unit."""

    def __init__(self, cfg: DenoiserConfig, vocab: int = 4096, text_seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.denoiser = MotionDenoiser(cfg)
        self.text_encoder = ToyTextEncoder(cfg.text_dim, vocab=vocab, seed=text_seed)
        self.register_buffer("data_mean", torch.zeros(cfg.d_motion))
        self.register_buffer("data_std", torch.ones(cfg.d_motion))

    @property
    def d_motion(self) -> int:
        return self.cfg.d_motion

    def encode(self, text: str) -> TextContext:
        return self.text_encoder.encode(text)

    def null_context(self) -> TextContext:
        return self.text_encoder.encode("")

    def set_normalization(self, mean: torch.Tensor, std: torch.Tensor,
                          std_floor: float = 1e-3) -> None:
        self.data_mean.copy_(mean)
        self.data_std.copy_(torch.clamp(std, min=std_floor))

    def normalize(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.data_mean.to(x.dtype)) / self.data_std.to(x.dtype)

    def denormalize(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.data_std.to(x.dtype) + self.data_mean.to(x.dtype)

    def denoise_single(self, x: torch.Tensor, t: int, length: int,
                       ctx: TextContext) -> DenoiserOutput:
        return self.denoiser.denoise_single(x, t, length, ctx)

    def generate(self, text: str, schedule: DiffusionSchedule,
                 spec: SampleSpec, fps: float = 20.0) -> MotionSequence:
        """Sample in normalized space and map back to motion units."""
        with torch.no_grad():
            out = sample(self, schedule, self.encode(text), self.null_context(),
                         spec, fps=fps)
        return out.with_data(self.denormalize(out.data))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    lam: float = 0.001
    ema_decay: float = 0.99
    ema_interval: int = 10
    null_text_prob: float = 0.25
    total_steps: int = 1000
    batch_size: int = 32
    seed: int = 0
    freeze_text: bool = False
    grad_clip: float = 1.0
    diffusion_steps: int = 1000
    schedule_offset: float = 0.008


def compute_normalization(items: list[tuple[MotionSequence, str]]):
    """Per-dimension mean/std over valid frames of the whole dataset."""
    frames = torch.cat([m.valid().to(torch.float64) for m, _ in items])
    return frames.mean(dim=0).to(torch.float32), frames.std(dim=0).to(torch.float32)


class Trainer:
    def __init__(self, model: TextMotionModel, cfg: TrainConfig,
                 items: list[tuple[MotionSequence, str]],
                 schedule: DiffusionSchedule | None = None,
                 normalize: bool = True):
        self.model = model
        self.cfg = cfg
        self.schedule = schedule or build_cosine_schedule(
            cfg.diffusion_steps, cfg.schedule_offset)
        if normalize and items:
            mean, std = compute_normalization(items)
            model.set_normalization(mean, std)
        self.items = []
        for m, text in items:
            data = model.normalize(m.data.to(torch.float32))
            data[m.valid_len:] = 0.0  # padding stays zero in model space
            self.items.append(
                (MotionSequence(data=data, valid_len=m.valid_len, fps=m.fps), text))
        if cfg.freeze_text:
            for p in model.text_encoder.parameters():
                p.requires_grad_(False)
        params = [p for p in model.parameters() if p.requires_grad]
        self.optimizer = torch.optim.AdamW(
            params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
            weight_decay=cfg.weight_decay)
        self.ema_model = copy.deepcopy(model)
        for p in self.ema_model.parameters():
            p.requires_grad_(False)
        self.gen = torch.Generator().manual_seed(cfg.seed)
        self.step = 0

    def _ema_update(self) -> None:
        d = self.cfg.ema_decay
        with torch.no_grad():
            for ema_p, p in zip(self.ema_model.state_dict().values(),
                                self.model.state_dict().values()):
                if ema_p.dtype.is_floating_point:
                    ema_p.mul_(d).add_(p, alpha=1.0 - d)
                else:
                    ema_p.copy_(p)

    def train_step(self, batch: Batch) -> LossBreakdown:
        self.model.train()
        pooled, tokens, pad = collate_contexts(batch.contexts)
        x_t = diffuse(batch.motions, batch.timesteps, batch.noises, self.schedule)
        out = self.model.denoiser(x_t, batch.timesteps, batch.valid_lens,
                                  pooled, tokens, pad)
        frame_idx = torch.arange(batch.motions.shape[1]).unsqueeze(0)
        valid = frame_idx < batch.valid_lens.unsqueeze(1)
        losses = loss_terms(batch.motions, batch.timesteps, batch.noises,
                            out.eps, out.v, self.schedule,
                            lam=self.cfg.lam, valid_mask=valid)
        if not bool(torch.isfinite(losses.hybrid)):
            raise NumericError(
                f"non-finite loss at step {self.step}: "
                f"simple={float(losses.simple)}, vlb={float(losses.vlb)}, "
                f"timesteps={batch.timesteps.tolist()}", step=self.step)
        self.optimizer.zero_grad()
        losses.hybrid.backward()
        if self.cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.grad_clip)
        self.optimizer.step()
        self.step += 1
        if self.step % self.cfg.ema_interval == 0:
            self._ema_update()
        return LossBreakdown(simple=losses.simple.detach(), vlb=losses.vlb.detach(),
                             hybrid=losses.hybrid.detach(), lam=losses.lam)

    def run(self, steps: int | None = None, log_path=None, log_every: int = 50):
        steps = steps if steps is not None else self.cfg.total_steps
        log = open(log_path, "a", encoding="utf-8") if log_path else None
        last = None
        try:
            for _ in range(steps):
                idx = torch.randint(len(self.items), (self.cfg.batch_size,),
                                    generator=self.gen)
                batch = make_batch([self.items[i] for i in idx.tolist()], self.gen,
                                   self.schedule.T, self.model.text_encoder,
                                   null_prob=self.cfg.null_text_prob)
                last = self.train_step(batch)
                if log and self.step % log_every == 0:
                    log.write(json.dumps({
                        "step": self.step, "simple": float(last.simple),
                        "vlb": float(last.vlb), "hybrid": float(last.hybrid),
                        "lr": self.cfg.lr}) + "\n")
                    log.flush()
        finally:
            if log:
                log.close()
        return last

    # -- checkpointing ------------------------------------------------------

    def save_checkpoint(self, path) -> None:
        payload = {
            "version": CHECKPOINT_VERSION,
            "denoiser_config": self.model.cfg.to_dict(),
            "vocab": self.model.text_encoder.vocab,
            "model_state": self.model.state_dict(),
            "ema_state": self.ema_model.state_dict(),
            "optimizer_state": self.optimizer.state_dict(),
            "train_config": asdict(self.cfg),
            "step": self.step,
            "rng_state": self.gen.get_state(),
        }
        tmp = str(path) + ".tmp"
        torch.save(payload, tmp)
        os.replace(tmp, path)

    @classmethod
    def load_checkpoint(cls, path, items: list[tuple[MotionSequence, str]]):
        payload = _load_payload(path)
        cfg = TrainConfig(**payload["train_config"])
        model = TextMotionModel(DenoiserConfig(**payload["denoiser_config"]),
                                vocab=payload["vocab"])
        model.load_state_dict(payload["model_state"])
        trainer = cls(model, cfg, items, normalize=False)
        trainer.ema_model.load_state_dict(payload["ema_state"])
        trainer.optimizer.load_state_dict(payload["optimizer_state"])
        trainer.step = payload["step"]
        trainer.gen.set_state(payload["rng_state"])
        return trainer


def _load_payload(path) -> dict:
    try:
        payload = torch.load(path, weights_only=True)
    except Exception as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or "version" not in payload:
        raise CheckpointError(f"{path} is not a recognized checkpoint")
    if payload["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {payload['version']} incompatible with "
            f"supported version {CHECKPOINT_VERSION}")
    return payload


def load_model(path, use_ema: bool = True) -> tuple[TextMotionModel, DiffusionSchedule]:
    """Load a trained model (EMA weights by default) and its schedule."""
    payload = _load_payload(path)
    model = TextMotionModel(DenoiserConfig(**payload["denoiser_config"]),
                            vocab=payload["vocab"])
    model.load_state_dict(payload["ema_state" if use_ema else "model_state"])
    model.eval()
    cfg = TrainConfig(**payload["train_config"])
    return model, build_cosine_schedule(cfg.diffusion_steps, cfg.schedule_offset)
