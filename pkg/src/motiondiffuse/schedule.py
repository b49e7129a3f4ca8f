"""Noise schedules for the diffusion chain.

Transitions are indexed t = 1..T with the convention alpha_bar(0) = 1.
Internally every array is stored with length T+1 so that index t reads the
value for transition t directly; index 0 holds the t=0 convention values
(beta=0, alpha=1, alpha_bar=1, posterior_var=0) and is never a transition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import ConfigurationError

BETA_MAX = 0.999
# Floor applied before taking logs; posterior_var(1) is exactly zero.
VAR_FLOOR = 1e-20


@dataclass(frozen=True)
class DiffusionSchedule:
    """Precomputed beta/alpha arrays for a T-step chain (float64)."""

    betas: torch.Tensor            # (T+1,), betas[0] = 0
    alphas: torch.Tensor           # (T+1,), alphas[t] = 1 - betas[t]
    alpha_bars: torch.Tensor       # (T+1,), alpha_bars[0] = 1
    posterior_vars: torch.Tensor   # (T+1,), posterior_vars[1] = 0
    log_betas: torch.Tensor        # log(betas), index 0 is -inf placeholder
    log_posterior_vars: torch.Tensor  # log(max(posterior_var, VAR_FLOOR))

    @property
    def T(self) -> int:
        return self.betas.shape[0] - 1

    @classmethod
    def from_betas(cls, betas: torch.Tensor) -> "DiffusionSchedule":
        """Build the full schedule from transition betas (shape (T,))."""
        betas = betas.to(torch.float64)
        if betas.ndim != 1 or betas.shape[0] < 1:
            raise ConfigurationError("betas must be a 1-D tensor of length >= 1")
        if not bool(((betas > 0) & (betas <= BETA_MAX)).all()):
            raise ConfigurationError(f"every beta must lie in (0, {BETA_MAX}]")
        zero = torch.zeros(1, dtype=torch.float64)
        betas_p = torch.cat([zero, betas])
        alphas_p = 1.0 - betas_p
        alpha_bars_p = torch.cumprod(alphas_p, dim=0)
        # beta_tilde_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t; zero at t=1.
        post = torch.zeros_like(betas_p)
        abar_prev = alpha_bars_p[:-1]
        abar_cur = alpha_bars_p[1:]
        post[1:] = (1.0 - abar_prev) / (1.0 - abar_cur) * betas_p[1:]
        log_betas = torch.log(torch.clamp(betas_p, min=VAR_FLOOR))
        log_post = torch.log(torch.clamp(post, min=VAR_FLOOR))
        return cls(betas_p, alphas_p, alpha_bars_p, post, log_betas, log_post)

    # t may be an int or a LongTensor; 1-indexed, 0 allowed where noted.
    def beta(self, t):
        return self.betas[t]

    def alpha(self, t):
        return self.alphas[t]

    def alpha_bar(self, t):
        return self.alpha_bars[t]

    def posterior_var(self, t):
        return self.posterior_vars[t]

    def log_beta(self, t):
        return self.log_betas[t]

    def log_posterior_var(self, t):
        return self.log_posterior_vars[t]


def build_cosine_schedule(T: int, offset: float = 0.008) -> DiffusionSchedule:
    """Cosine schedule: alpha_bar(t) = f(t)/f(0), f(t) = cos^2(((t/T)+s)/(1+s) * pi/2).

    Betas are derived as 1 - f(t)/f(t-1) and clipped at BETA_MAX; the
    stored alpha_bars are the cumulative product of the clipped alphas so
    the algebraic identities between betas, alphas and alpha_bars hold to
    round-off everywhere, including at clipped steps.
    """
    if not isinstance(T, int) or T < 2:
        raise ConfigurationError(f"T must be an integer >= 2, got {T!r}")
    if not (0.0 < offset < 0.1):
        raise ConfigurationError(f"offset must lie in (0, 0.1), got {offset!r}")

    def f(t: float) -> float:
        return math.cos((t / T + offset) / (1.0 + offset) * math.pi / 2.0) ** 2

    f0 = f(0.0)
    betas = torch.empty(T, dtype=torch.float64)
    prev = f0
    for t in range(1, T + 1):
        cur = f(float(t))
        betas[t - 1] = min(1.0 - cur / prev, BETA_MAX)
        prev = cur
    return DiffusionSchedule.from_betas(betas)
