"""Forward diffusion, reverse-process parameterization, and training losses.

All operations accept either a plain (frames x D) tensor, a batched
(B x frames x D) tensor, or a MotionSequence (diffuse only); timesteps are
1-indexed ints or a per-item LongTensor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import ConfigurationError, DimensionError
from .motion import MotionSequence
from .schedule import DiffusionSchedule, VAR_FLOOR


@dataclass(frozen=True)
class PosteriorGaussian:
    """Diagonal Gaussian over M_{t-1}: q(. | M_t, M_0) or p_theta(. | M_t)."""

    mean: torch.Tensor
    log_variance: torch.Tensor


@dataclass(frozen=True)
class LossBreakdown:
    simple: torch.Tensor
    vlb: torch.Tensor
    hybrid: torch.Tensor
    lam: float


def _check_t(t, T: int) -> None:
    if isinstance(t, int):
        ok = 1 <= t <= T
    else:
        ok = bool(((t >= 1) & (t <= T)).all())
    if not ok:
        raise IndexError(f"timestep out of range 1..{T}")


def _coef(value, like: torch.Tensor) -> torch.Tensor:
    """Broadcast a scalar or per-item coefficient over (.. x frames x D)."""
    c = torch.as_tensor(value, dtype=like.dtype, device=like.device)
    if c.ndim == 0:
        return c
    return c.reshape(c.shape + (1,) * (like.ndim - c.ndim))


def diffuse(m0, t, noise: torch.Tensor, schedule: DiffusionSchedule):
    """Closed-form marginal: M_t = sqrt(abar_t) M_0 + sqrt(1 - abar_t) eps."""
    seq = isinstance(m0, MotionSequence)
    x0 = m0.data if seq else m0
    if noise.shape != x0.shape:
        raise DimensionError(f"noise shape {tuple(noise.shape)} != data shape {tuple(x0.shape)}")
    _check_t(t, schedule.T)
    abar = _coef(schedule.alpha_bar(t), x0)
    xt = torch.sqrt(abar) * x0 + torch.sqrt(1.0 - abar) * noise
    return m0.with_data(xt) if seq else xt


def posterior(m_t, m0, t, schedule: DiffusionSchedule) -> PosteriorGaussian:
    """Tractable posterior q(M_{t-1} | M_t, M_0).

    mean = sqrt(abar_{t-1}) beta_t / (1-abar_t) * M_0
         + sqrt(alpha_t) (1-abar_{t-1}) / (1-abar_t) * M_t
    variance = beta_tilde_t (zero at t=1 under abar_0 = 1).
    """
    xt = m_t.data if isinstance(m_t, MotionSequence) else m_t
    x0 = m0.data if isinstance(m0, MotionSequence) else m0
    if xt.shape != x0.shape:
        raise DimensionError("m_t and m0 shapes differ")
    _check_t(t, schedule.T)
    t_prev = t - 1 if isinstance(t, int) else t - 1
    abar_t = _coef(schedule.alpha_bar(t), xt)
    abar_prev = _coef(schedule.alpha_bar(t_prev), xt)
    beta_t = _coef(schedule.beta(t), xt)
    alpha_t = _coef(schedule.alpha(t), xt)
    coef0 = torch.sqrt(abar_prev) * beta_t / (1.0 - abar_t)
    coeft = torch.sqrt(alpha_t) * (1.0 - abar_prev) / (1.0 - abar_t)
    mean = coef0 * x0 + coeft * xt
    log_var = _coef(schedule.log_posterior_var(t), xt).expand_as(mean)
    return PosteriorGaussian(mean=mean, log_variance=log_var)


def mean_from_epsilon(m_t, eps: torch.Tensor, t, schedule: DiffusionSchedule) -> torch.Tensor:
    """mu_theta = (M_t - beta_t / sqrt(1-abar_t) * eps) / sqrt(alpha_t)."""
    xt = m_t.data if isinstance(m_t, MotionSequence) else m_t
    if eps.shape != xt.shape:
        raise DimensionError("eps shape differs from m_t")
    _check_t(t, schedule.T)
    beta_t = _coef(schedule.beta(t), xt)
    alpha_t = _coef(schedule.alpha(t), xt)
    abar_t = _coef(schedule.alpha_bar(t), xt)
    return (xt - beta_t / torch.sqrt(1.0 - abar_t) * eps) / torch.sqrt(alpha_t)


def variance_from_v(v: torch.Tensor, t, schedule: DiffusionSchedule,
                    from_raw: bool = False) -> torch.Tensor:
    """Log-variance interpolation: v*log(beta_t) + (1-v)*log(beta_tilde_t).

    With from_raw=True the raw network output is first mapped by (v+1)/2
    (the interpolation-coefficient convention for an unbounded head); the
    coefficient is always clamped to [0, 1]. beta_tilde is floored at
    VAR_FLOOR before the log so t=1 stays finite.
    """
    _check_t(t, schedule.T)
    if from_raw:
        v = (v + 1.0) / 2.0
    v = torch.clamp(v, 0.0, 1.0)
    log_beta = _coef(schedule.log_beta(t), v)
    log_post = _coef(schedule.log_posterior_var(t), v)
    return v * log_beta + (1.0 - v) * log_post


def gaussian_kl(mean_q, log_var_q, mean_p, log_var_p) -> torch.Tensor:
    """Elementwise KL(N(mean_q, var_q) || N(mean_p, var_p)) for diagonals."""
    return 0.5 * (
        log_var_p - log_var_q
        + (torch.exp(log_var_q) + (mean_q - mean_p) ** 2) * torch.exp(-log_var_p)
        - 1.0
    )


def gaussian_nll(x, mean, log_var) -> torch.Tensor:
    """Elementwise -log N(x; mean, var) for a diagonal Gaussian."""
    return 0.5 * (math.log(2.0 * math.pi) + log_var
                  + (x - mean) ** 2 * torch.exp(-log_var))


def _as_batched(x: torch.Tensor) -> torch.Tensor:
    return x.unsqueeze(0) if x.ndim == 2 else x


def loss_terms(m0, t, noise: torch.Tensor, eps_pred: torch.Tensor,
               v_pred: torch.Tensor, schedule: DiffusionSchedule,
               lam: float = 0.001, valid_mask: torch.Tensor | None = None) -> LossBreakdown:
    """Hybrid training loss.

    simple: MSE between the true and predicted noise over valid elements.
    vlb:    KL(q(M_{t-1}|M_t,M_0) || p_theta(M_{t-1}|M_t)) for t >= 2 and the
            continuous Gaussian NLL of M_0 under p_theta(M_0|M_1) at t = 1.
            The predicted mean inside vlb is detached so this term trains
            only the variance head.
    hybrid: simple + lam * vlb. All reductions are means over valid elements.

    valid_mask is a boolean (.. x frames) mask; padded frames are excluded.
    """
    if lam < 0:
        raise ConfigurationError(f"lambda must be >= 0, got {lam}")
    x0 = m0.data if isinstance(m0, MotionSequence) else m0
    squeeze = x0.ndim == 2
    x0 = _as_batched(x0)
    noise_b = _as_batched(noise)
    eps_b = _as_batched(eps_pred)
    v_b = _as_batched(v_pred)
    if not (x0.shape == noise_b.shape == eps_b.shape == v_b.shape):
        raise DimensionError("m0/noise/eps/v shapes must all match")
    B, L, D = x0.shape
    t_b = torch.full((B,), t, dtype=torch.long) if isinstance(t, int) else t.reshape(B)
    _check_t(t_b, schedule.T)
    if valid_mask is None:
        valid_mask = torch.ones(B, L, dtype=torch.bool, device=x0.device)
    else:
        valid_mask = _as_batched(valid_mask.unsqueeze(-1)).squeeze(-1) if valid_mask.ndim == 1 \
            else valid_mask
        valid_mask = valid_mask.reshape(B, L).to(torch.bool)
    w = valid_mask.unsqueeze(-1).to(x0.dtype)
    count = w.sum() * D

    simple = (w * (noise_b - eps_b) ** 2).sum() / count

    x_t = diffuse(x0, t_b, noise_b, schedule)
    q = posterior(x_t, x0, t_b, schedule)
    mean_p = mean_from_epsilon(x_t, eps_b.detach(), t_b, schedule)
    log_var_p = variance_from_v(v_b, t_b, schedule, from_raw=True)

    kl_elem = gaussian_kl(q.mean, q.log_variance, mean_p, log_var_p)
    nll_elem = gaussian_nll(x0, mean_p, log_var_p)
    is_l0 = (t_b == 1).reshape(B, 1, 1)
    vlb_elem = torch.where(is_l0, nll_elem, kl_elem)
    vlb = (w * vlb_elem).sum() / count

    return LossBreakdown(simple=simple, vlb=vlb, hybrid=simple + lam * vlb, lam=lam)
