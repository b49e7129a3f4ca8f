"""Mask-based motion editing and its presets (prediction, in-betweening,
joint-wise editing).

At each reverse step the editable entries come from the model's denoising
prediction while the preserved entries are overwritten with a fresh draw
from the closed-form marginal of the reference at the matching step. The
terminal step overwrites preserved entries with the clean reference itself,
so they are bit-exact in the output.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import torch

from .errors import ConfigurationError, DimensionError, ParseError
from .motion import NUM_JOINTS, MotionSequence
from .sampler import SampleSpec, _check_finite, _predict_eps_v, _reverse_update, respace
from .schedule import DiffusionSchedule
from .text import TextContext


@dataclass(frozen=True)
class EditMask:
    """frames x D binary grid: 1 = keep reference entry, 0 = editable."""

    grid: torch.Tensor

    def __post_init__(self):
        vals = torch.unique(self.grid)
        if not bool(((vals == 0) | (vals == 1)).all()):
            raise ConfigurationError("mask entries must be 0 or 1")

    @property
    def keep(self) -> torch.Tensor:
        return self.grid.to(torch.bool)


def prediction_mask(reference: MotionSequence, n_context: int) -> EditMask:
    """Preserve the first n_context frames; the suffix is regenerated."""
    L = reference.num_frames
    if not (0 < n_context < L):
        raise ConfigurationError(f"n_context must lie in 1..{L - 1}, got {n_context}")
    grid = torch.zeros(L, reference.dims)
    grid[:n_context] = 1.0
    return EditMask(grid)


def inbetween_mask(reference: MotionSequence, n_head: int, n_tail: int) -> EditMask:
    """Preserve n_head leading and n_tail trailing frames. Both zero is
    allowed and yields an all-editable mask."""
    L = reference.num_frames
    if n_head < 0 or n_tail < 0 or n_head + n_tail >= L:
        raise ConfigurationError(
            f"need n_head + n_tail < {L} with nonnegative parts, got {n_head}+{n_tail}")
    grid = torch.zeros(L, reference.dims)
    if n_head:
        grid[:n_head] = 1.0
    if n_tail:
        grid[L - n_tail:] = 1.0
    return EditMask(grid)


ROOT_PSEUDO_JOINT = "root"


def joint_mask(reference: MotionSequence, preserved_joints) -> EditMask:
    """Preserve the 6 rotation dims of each listed joint across all frames;
    the string "root" preserves the 3 root-translation dims."""
    grid = torch.zeros(reference.num_frames, reference.dims)
    for j in preserved_joints:
        if j == ROOT_PSEUDO_JOINT:
            grid[:, 0:3] = 1.0
            continue
        if not isinstance(j, int) or not (0 <= j < NUM_JOINTS):
            raise ConfigurationError(f"joint index must be 0..{NUM_JOINTS - 1} or 'root', got {j!r}")
        start = 3 + 6 * j
        grid[:, start:start + 6] = 1.0
    return EditMask(grid)


def load_mask(path, reference: MotionSequence) -> EditMask:
    """Mask JSON: {"frames": [a, b]} half-open ranges, {"joints": [...]} with
    optional "root", or {"grid": [[...]]} dense."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON at line {e.lineno}") from e
    if not isinstance(payload, dict):
        raise ParseError(f"{path}: / must be a JSON object")
    if "grid" in payload:
        grid = torch.tensor(payload["grid"], dtype=torch.float64)
        if grid.shape != reference.data.shape:
            raise DimensionError(
                f"mask grid {tuple(grid.shape)} != reference {tuple(reference.data.shape)}")
        return EditMask(grid)
    if "joints" in payload:
        return joint_mask(reference, payload["joints"])
    if "frames" in payload:
        grid = torch.zeros_like(reference.data, dtype=torch.float64)
        ranges = payload["frames"]
        if ranges and isinstance(ranges[0], int):
            ranges = [ranges]
        for a, b in ranges:
            grid[a:b] = 1.0
        return EditMask(grid)
    raise ParseError(f"{path}: expected one of 'grid', 'joints', 'frames'")


def edit(model, schedule: DiffusionSchedule, reference: MotionSequence,
         mask: EditMask, ctx: TextContext, null_ctx: TextContext,
         spec: SampleSpec) -> MotionSequence:
    """Regenerate the editable entries of `reference` under prompt `ctx`.

    The prediction pathway consumes the same RNG stream as sample(), and
    the reference-marginal draws use an independent stream, so an all-zero
    mask reproduces sample() exactly under the same seed. The initial state
    is the masked combination of M_T^ref and fresh noise for the same
    reason (preserved entries start from the diffused reference, editable
    entries from N(0, I)).
    """
    if mask.grid.shape != reference.data.shape:
        raise DimensionError("mask shape does not match reference")
    if spec.length != reference.num_frames:
        spec = SampleSpec(length=reference.num_frames,
                          guidance_scale=spec.guidance_scale, steps=spec.steps,
                          method=spec.method, ddim_eta=spec.ddim_eta, seed=spec.seed)
    K = spec.steps if spec.steps is not None else schedule.T
    steps, sched = respace(schedule, K)
    gen = torch.Generator().manual_seed(spec.seed)
    ref_gen = torch.Generator().manual_seed(spec.seed ^ 0x5EED_ED17)

    ref = reference.data.to(torch.get_default_dtype()) \
        if not reference.data.is_floating_point() else reference.data
    keep = mask.keep
    s = spec.guidance_scale

    def ref_at(t: int) -> torch.Tensor:
        """Fresh draw from q(M_t | M_0^ref); t = 0 returns the reference."""
        if t == 0:
            return ref
        noise = torch.randn(ref.shape, generator=ref_gen, dtype=ref.dtype)
        abar = schedule.alpha_bar(t).to(ref.dtype)
        return torch.sqrt(abar) * ref + torch.sqrt(1.0 - abar) * noise

    z = torch.randn(ref.shape, generator=gen, dtype=ref.dtype)
    x = torch.where(keep, ref_at(steps[-1]), z)

    for i in range(K, 0, -1):
        t_orig = steps[i - 1]
        t_prev = steps[i - 2] if i > 1 else 0
        eps_hat, v_raw = _predict_eps_v(model, x, t_orig, spec.length, ctx, null_ctx, s)
        pred = _reverse_update(x, i, sched, eps_hat, v_raw, spec, gen)
        x = torch.where(keep, ref_at(t_prev), pred)
        _check_finite(x, t_orig)

    return MotionSequence(data=x, valid_len=reference.valid_len, fps=reference.fps)
