"""Synthetic desk-scale text-motion data and the training data pipeline.

Eight parametric motion families stand in for mocap data. Template index k
within a family selects a deterministic amplitude/speed variant, so every
(family, template) pair is a distinguishable motion pattern with its own
prompt; per-sample jitter adds within-variant variation. Kick-left and
kick-right exercise text sensitivity between near-mirror motions.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import torch

from .errors import ConfigurationError
from .motion import (MotionSequence, NUM_JOINTS, axis_angle_to_matrix,
                     matrix_to_rot6d, save_motion)

X = torch.tensor([1.0, 0.0, 0.0], dtype=torch.float64)
Y = torch.tensor([0.0, 1.0, 0.0], dtype=torch.float64)
Z = torch.tensor([0.0, 0.0, 1.0], dtype=torch.float64)

# joint indices (SMPL order, see motion.py)
L_HIP, R_HIP, L_KNEE, R_KNEE = 1, 2, 4, 5
L_SHOULDER, R_SHOULDER, L_ELBOW, R_ELBOW = 16, 17, 18, 19

DEFAULT_TEMPLATES = {
    "walk": ["a person walks forward slowly",
             "a person walks forward at an easy pace",
             "a person walks forward briskly",
             "a person strides forward fast"],
    "arm_raise": ["a person raises both arms a little",
                  "a person raises both arms halfway",
                  "a person raises both arms high",
                  "a person throws both arms all the way up"],
    "turn": ["a person turns in place slowly",
             "a person turns around in place",
             "a person spins in place quickly",
             "a person whirls around rapidly in place"],
    "squat": ["a person does shallow squats",
              "a person squats down and up",
              "a person does deep squats",
              "a person does very deep slow squats"],
    "jump": ["a person hops lightly in place",
             "a person jumps in place",
             "a person jumps high in place",
             "a person leaps very high repeatedly"],
    "wave": ["a person waves one hand subtly",
             "a person waves their hand",
             "a person waves their arm widely",
             "a person waves their whole arm wildly"],
    "kick_left": ["a person kicks gently with the left leg",
                  "a person kicks with the left leg",
                  "a person kicks hard with the left leg",
                  "a person kicks very high with the left leg"],
    "kick_right": ["a person kicks gently with the right leg",
                   "a person kicks with the right leg",
                   "a person kicks hard with the right leg",
                   "a person kicks very high with the right leg"],
}


@dataclass(frozen=True)
class DatasetSpec:
    classes: tuple = tuple(DEFAULT_TEMPLATES.items())
    samples_per_class: int = 32
    length_range: tuple = (32, 48)
    fps: float = 20.0
    noise_amplitude: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ConfigurationError("need at least 2 motion classes")
        if self.samples_per_class < 1:
            raise ConfigurationError("samples_per_class must be >= 1")
        if self.length_range[0] < 2 or self.length_range[0] > self.length_range[1]:
            raise ConfigurationError("invalid length range")


def _identity_rot6d(frames: int) -> torch.Tensor:
    r = torch.zeros(frames, NUM_JOINTS, 6, dtype=torch.float64)
    r[:, :, 0] = 1.0
    r[:, :, 4] = 1.0
    return r


def _set_joint(rot: torch.Tensor, joint: int, axis: torch.Tensor,
               angles: torch.Tensor) -> None:
    R = axis_angle_to_matrix(axis.expand(angles.shape[0], 3), angles)
    rot[:, joint] = matrix_to_rot6d(R)


def _render_family(family: str, frames: int, fps: float, amp: float,
                   freq: float, phase: float) -> tuple[torch.Tensor, torch.Tensor]:
    """Root translation (F, 3) and joint 6D rotations (F, 24, 6)."""
    tau = torch.arange(frames, dtype=torch.float64) / fps
    theta = 2.0 * math.pi * freq * tau + phase
    root = torch.zeros(frames, 3, dtype=torch.float64)
    rot = _identity_rot6d(frames)

    if family == "walk":
        swing = 0.6 * amp * torch.sin(theta)
        _set_joint(rot, L_HIP, X, swing)
        _set_joint(rot, R_HIP, X, -swing)
        _set_joint(rot, L_KNEE, X, 0.4 * amp * torch.clamp(torch.sin(theta), min=0.0))
        _set_joint(rot, R_KNEE, X, 0.4 * amp * torch.clamp(-torch.sin(theta), min=0.0))
        _set_joint(rot, L_SHOULDER, X, -0.3 * swing)
        _set_joint(rot, R_SHOULDER, X, 0.3 * swing)
        root[:, 2] = amp * 1.1 * tau  # strictly monotone forward travel
    elif family == "arm_raise":
        lift = amp * 1.4 * torch.clamp(tau / 1.5, max=1.0) + 0.05 * torch.sin(theta)
        _set_joint(rot, L_SHOULDER, Z, lift)
        _set_joint(rot, R_SHOULDER, Z, -lift)
    elif family == "turn":
        _set_joint(rot, 0, Y, amp * 1.2 * tau)
    elif family == "squat":
        bend = amp * torch.sin(theta / 2.0) ** 2
        _set_joint(rot, L_HIP, X, -bend)
        _set_joint(rot, R_HIP, X, -bend)
        _set_joint(rot, L_KNEE, X, 1.6 * bend)
        _set_joint(rot, R_KNEE, X, 1.6 * bend)
        root[:, 1] = -0.35 * amp * torch.sin(theta / 2.0) ** 2
    elif family == "jump":
        hop = torch.clamp(torch.sin(theta), min=0.0)
        root[:, 1] = 0.4 * amp * hop
        _set_joint(rot, L_KNEE, X, 0.8 * amp * (1.0 - hop))
        _set_joint(rot, R_KNEE, X, 0.8 * amp * (1.0 - hop))
    elif family == "wave":
        _set_joint(rot, R_SHOULDER, Z, torch.full_like(tau, -1.2 * amp))
        _set_joint(rot, R_ELBOW, Z, 0.7 * amp * torch.sin(2.0 * theta))
    elif family == "kick_left":
        kick = amp * 1.2 * torch.clamp(torch.sin(theta), min=0.0)
        _set_joint(rot, L_HIP, X, kick)
        _set_joint(rot, L_KNEE, X, 0.5 * kick)
    elif family == "kick_right":
        kick = amp * 1.2 * torch.clamp(torch.sin(theta), min=0.0)
        _set_joint(rot, R_HIP, X, kick)
        _set_joint(rot, R_KNEE, X, 0.5 * kick)
    else:
        raise ConfigurationError(f"unknown motion family {family!r}")

    return root, rot


# Template index -> deterministic (amplitude, frequency) variant so texts
# describing intensity actually correspond to a different motion.  The spread
# is deliberately wide so variants within a family stay separable by a
# retrieval model even under modest reconstruction error.
VARIANT_AMPS = (0.5, 1.0, 1.5, 2.0)
VARIANT_FREQS = (0.7, 1.0, 1.4, 1.8)


def synthesize_one(family: str, variant: int, frames: int, fps: float,
                   gen: torch.Generator, noise_amplitude: float) -> MotionSequence:
    amp = VARIANT_AMPS[variant % len(VARIANT_AMPS)]
    freq = VARIANT_FREQS[variant % len(VARIANT_FREQS)]
    jitter = lambda lo, hi: lo + (hi - lo) * torch.rand(1, generator=gen).item()
    amp *= jitter(0.93, 1.07)
    freq *= jitter(0.95, 1.05)
    phase = jitter(0.0, 0.4)
    root, rot = _render_family(family, frames, fps, amp, freq, phase)
    data = torch.cat([root, rot.reshape(frames, NUM_JOINTS * 6)], dim=1)
    if noise_amplitude > 0:
        # Per-channel secondary sway: one random sinusoid per rotation
        # channel. Smooth in time (unlike frame-white jitter) so it reads
        # as incidental body motion, while still giving every channel
        # honest per-channel variance for normalization. Root translation
        # stays noise-free so travel remains strictly monotone.
        n_ch = NUM_JOINTS * 6
        tau = torch.arange(frames, dtype=torch.float64) / fps
        amp = noise_amplitude * (
            0.5 + torch.rand(n_ch, generator=gen, dtype=torch.float64))
        hz = 0.3 + 1.2 * torch.rand(n_ch, generator=gen, dtype=torch.float64)
        ph = 2.0 * math.pi * torch.rand(n_ch, generator=gen, dtype=torch.float64)
        data[:, 3:] += amp * torch.sin(
            2.0 * math.pi * hz * tau.unsqueeze(1) + ph)
    return MotionSequence(data=data, valid_len=frames, fps=fps)


def synthesize_dataset(spec: DatasetSpec) -> list[tuple[MotionSequence, str]]:
    """Deterministic in-memory dataset: samples_per_class items per class,
    cycling through that class's template variants."""
    gen = torch.Generator().manual_seed(spec.seed)
    lo, hi = spec.length_range
    items = []
    for family, templates in spec.classes:
        for k in range(spec.samples_per_class):
            variant = k % len(templates)
            frames = lo + int(torch.randint(hi - lo + 1, (1,), generator=gen))
            m = synthesize_one(family, variant, frames, spec.fps, gen,
                               spec.noise_amplitude)
            items.append((m, templates[variant]))
    return items


def generate_synthetic(spec: DatasetSpec, out_dir) -> dict:
    """Write motion files and an annotation JSONL; returns a manifest."""
    os.makedirs(out_dir, exist_ok=True)
    items = synthesize_dataset(spec)
    ann_path = os.path.join(out_dir, "annotations.jsonl")
    with open(ann_path, "w", encoding="utf-8") as ann:
        for i, (m, text) in enumerate(items):
            name = f"motion_{i:05d}.json"
            save_motion(m, os.path.join(out_dir, name))
            ann.write(json.dumps({"motion": name, "text": text}) + "\n")
    return {"out_dir": str(out_dir), "num_motions": len(items),
            "num_classes": len(spec.classes),
            "samples_per_class": spec.samples_per_class,
            "annotations": ann_path}


def clip_to_length(m: MotionSequence, target: int, stride: int = 10) -> list[MotionSequence]:
    """Sliding-window clips of exactly `target` frames.

    Longer motions yield overlapping windows at the given stride; shorter
    ones yield a single zero-padded clip with valid_len preserved.
    """
    if target < 1:
        raise ConfigurationError("target length must be >= 1")
    L = m.valid_len
    if L <= target:
        data = torch.zeros(target, m.dims, dtype=m.data.dtype)
        data[:L] = m.data[:L]
        return [MotionSequence(data=data, valid_len=L, fps=m.fps)]
    clips = []
    for start in range(0, L - target + 1, stride):
        clips.append(MotionSequence(data=m.data[start:start + target].clone(),
                                    valid_len=target, fps=m.fps))
    return clips


@dataclass
class Batch:
    motions: torch.Tensor          # (B, L, D), zero-padded past valid_lens
    valid_lens: torch.Tensor       # (B,)
    texts: list                    # prompts after null replacement
    contexts: list                 # TextContext per item
    timesteps: torch.Tensor        # (B,) uniform in 1..T
    noises: torch.Tensor           # (B, L, D), zero past valid_lens


def make_batch(items: list[tuple[MotionSequence, str]], gen: torch.Generator,
               T: int, encoder, null_prob: float = 0.25,
               dtype=torch.float32) -> Batch:
    """Collate (motion, text) pairs for one training step.

    Each text is replaced by the empty string with probability null_prob;
    timesteps are uniform over 1..T; noise is standard normal on valid
    frames and zero on padding.
    """
    if not items:
        raise ConfigurationError("batch must be nonempty")
    B = len(items)
    L = max(m.num_frames for m, _ in items)
    D = items[0][0].dims
    motions = torch.zeros(B, L, D, dtype=dtype)
    noises = torch.zeros(B, L, D, dtype=dtype)
    valid_lens = torch.zeros(B, dtype=torch.long)
    texts = []
    for b, (m, text) in enumerate(items):
        n = m.valid_len
        motions[b, :n] = m.data[:n].to(dtype)
        noises[b, :n] = torch.randn(n, D, generator=gen)
        valid_lens[b] = n
        drop = bool(torch.rand(1, generator=gen) < null_prob)
        texts.append("" if drop else text)
    timesteps = torch.randint(1, T + 1, (B,), generator=gen)
    contexts = [encoder.encode(t) for t in texts]
    return Batch(motions=motions, valid_lens=valid_lens, texts=texts,
                 contexts=contexts, timesteps=timesteps, noises=noises)
