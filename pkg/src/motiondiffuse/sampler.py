"""Reverse-process generation: ancestral DDPM, DDIM, step respacing, and
classifier-free guidance.

The model argument only needs `denoise_single(x, t, length, ctx)` returning
a DenoiserOutput and a `d_motion` attribute, so tests can substitute stubs.
Respaced sampling feeds the model the original timestep values; the
respaced schedule is used for the update coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .diffusion import mean_from_epsilon, variance_from_v
from .errors import ConfigurationError, DimensionError, NumericError
from .motion import DEFAULT_FPS, MotionSequence
from .schedule import BETA_MAX, DiffusionSchedule
from .text import TextContext


@dataclass(frozen=True)
class SampleSpec:
    length: int
    guidance_scale: float = 8.0
    steps: int | None = None       # None = full T
    method: str = "ddpm"           # "ddpm" | "ddim"
    ddim_eta: float = 0.0
    seed: int = 0
    clip_x0: float | None = None   # clamp the implied x0 to [-c, c] each step

    def __post_init__(self):
        if self.length < 1:
            raise ConfigurationError("length must be >= 1")
        if self.guidance_scale < 0:
            raise ConfigurationError("guidance_scale must be >= 0")
        if self.method not in ("ddpm", "ddim"):
            raise ConfigurationError(f"unknown method {self.method!r}")
        if not (0.0 <= self.ddim_eta <= 1.0):
            raise ConfigurationError("ddim_eta must lie in [0, 1]")
        if self.clip_x0 is not None and self.clip_x0 <= 0:
            raise ConfigurationError("clip_x0 must be positive when set")


def guided_epsilon(eps_cond: torch.Tensor, eps_uncond: torch.Tensor,
                   s: float) -> torch.Tensor:
    """eps_hat = eps(null) + s * (eps(c) - eps(null)); s=1 returns eps_cond
    exactly (no float round-trip)."""
    if eps_cond.shape != eps_uncond.shape:
        raise DimensionError("conditional/unconditional eps shapes differ")
    if s == 1.0:
        return eps_cond
    return eps_uncond + s * (eps_cond - eps_uncond)


def respace(schedule: DiffusionSchedule, K: int):
    """Evenly strided K-step subsequence of {1..T}, always ending at T.

    Returns (steps, respaced) where steps[i-1] is the original timestep for
    respaced transition i. Respaced betas are 1 - abar(t_i)/abar(t_{i-1})
    so the marginals at the selected steps are preserved; consecutive
    selections reuse the original beta verbatim, so K = T reproduces the
    base schedule exactly.
    """
    T = schedule.T
    if not (1 <= K <= T):
        raise ConfigurationError(f"substep count must lie in 1..{T}, got {K}")
    steps = [int(i * T / K + 0.5) for i in range(1, K + 1)]
    betas = torch.empty(K, dtype=torch.float64)
    prev = 0
    for i, t in enumerate(steps):
        if t - prev == 1:
            betas[i] = schedule.beta(t)
        else:
            betas[i] = min(1.0 - float(schedule.alpha_bar(t) / schedule.alpha_bar(prev)),
                           BETA_MAX)
        prev = t
    return steps, DiffusionSchedule.from_betas(betas)


def _predict_eps_v(model, x, t: int, length: int, ctx: TextContext,
                   null_ctx: TextContext, s: float):
    """Two forward passes (conditional + null) combined by guidance; the
    variance is taken from the conditional pass."""
    cond = model.denoise_single(x, t, length, ctx)
    if s == 1.0 or ctx.is_null:
        return cond.eps, cond.v
    uncond = model.denoise_single(x, t, length, null_ctx)
    return guided_epsilon(cond.eps, uncond.eps, s), cond.v


def _check_finite(x: torch.Tensor, t: int) -> None:
    if not bool(torch.isfinite(x).all()):
        raise NumericError(f"non-finite values in trajectory at step {t}", step=t)


def _clip_epsilon(x: torch.Tensor, eps_hat: torch.Tensor, i: int,
                  sched: DiffusionSchedule, clip: float) -> torch.Tensor:
    """Clamp the x0 implied by eps_hat to [-clip, clip] and map back.

    Keeps the reverse iteration on the data's value range, which bounds the
    error-amplification a mis-scaled eps prediction could otherwise feed
    back into itself.
    """
    sq1 = torch.sqrt(1.0 - sched.alpha_bar(i)).to(x.dtype)
    sqa = torch.sqrt(sched.alpha_bar(i)).to(x.dtype)
    x0 = (x - sq1 * eps_hat) / sqa
    x0c = x0.clamp(-clip, clip)
    if torch.equal(x0c, x0):
        # nothing was clamped; skip the round-trip so the prediction is
        # returned bit-identical rather than perturbed by float rounding
        return eps_hat
    return (x - sqa * x0c) / sq1


def _reverse_update(x: torch.Tensor, i: int, sched: DiffusionSchedule,
                    eps_hat: torch.Tensor, v_raw: torch.Tensor,
                    spec: SampleSpec, gen: torch.Generator) -> torch.Tensor:
    """One reverse transition i -> i-1 on the (possibly respaced) schedule.

    No noise is added at the final transition (i = 1), so DDPM ends on the
    posterior mean and DDIM on the x0 prediction.
    """
    if spec.clip_x0 is not None:
        eps_hat = _clip_epsilon(x, eps_hat, i, sched, spec.clip_x0)
    if spec.method == "ddpm":
        mean = mean_from_epsilon(x, eps_hat, i, sched)
        if i == 1:
            return mean
        log_var = variance_from_v(v_raw, i, sched, from_raw=True)
        z = torch.randn(x.shape, generator=gen)
        return mean + torch.exp(0.5 * log_var).to(x.dtype) * z
    # ddim
    abar = sched.alpha_bar(i)
    abar_prev = sched.alpha_bar(i - 1)
    x0_pred = (x - torch.sqrt(1.0 - abar).to(x.dtype) * eps_hat) \
        / torch.sqrt(abar).to(x.dtype)
    sigma = spec.ddim_eta * torch.sqrt(sched.posterior_var(i))
    dir_coef = torch.sqrt(torch.clamp(1.0 - abar_prev - sigma ** 2, min=0.0))
    x = torch.sqrt(abar_prev).to(x.dtype) * x0_pred + dir_coef.to(x.dtype) * eps_hat
    if i > 1 and spec.ddim_eta > 0:
        z = torch.randn(x.shape, generator=gen)
        x = x + sigma.to(x.dtype) * z
    return x


def sample(model, schedule: DiffusionSchedule, ctx: TextContext,
           null_ctx: TextContext, spec: SampleSpec,
           init: torch.Tensor | None = None,
           generator: torch.Generator | None = None,
           fps: float = DEFAULT_FPS) -> MotionSequence:
    """Generate a motion of spec.length frames from text context `ctx`.

    `init` fixes M_T (otherwise drawn from N(0, I) with the seeded
    generator); with method="ddim" and ddim_eta=0 the output is then a
    deterministic function of M_T.
    """
    K = spec.steps if spec.steps is not None else schedule.T
    steps, sched = respace(schedule, K)
    gen = generator if generator is not None else \
        torch.Generator().manual_seed(spec.seed)
    D = model.d_motion
    if init is not None:
        if init.shape != (spec.length, D):
            raise DimensionError(f"init must have shape ({spec.length}, {D})")
        x = init.clone()
    else:
        x = torch.randn(spec.length, D, generator=gen)
    s = spec.guidance_scale

    for i in range(K, 0, -1):
        t_orig = steps[i - 1]
        eps_hat, v_raw = _predict_eps_v(model, x, t_orig, spec.length, ctx, null_ctx, s)
        x = _reverse_update(x, i, sched, eps_hat, v_raw, spec, gen)
        _check_finite(x, t_orig)

    return MotionSequence(data=x, valid_len=spec.length, fps=fps)
