"""Uniform multinomial diffusion: corruption, posteriors and the variational bound.

Token arguments are integer tensors (or anything ``torch.as_tensor`` accepts)
of arbitrary leading shape; distributions carry a trailing axis of size K.
Step arguments are either a Python int or an integer tensor broadcastable to
the token shape.  All arithmetic is done in float64.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from diffnmt.schedule import NoiseSchedule

LOG_FLOOR = 1e-12
DTYPE = torch.float64


class DegenerateDistribution(ArithmeticError):
    """Posterior normaliser vanished; only possible with an unclipped schedule."""


def _tokens(x) -> torch.Tensor:
    return torch.as_tensor(x, dtype=torch.long)


def _steps(t, sched: NoiseSchedule, lo: int = 1) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=torch.long)
    if t.numel() and (int(t.min()) < lo or int(t.max()) > sched.T):
        raise ValueError(f"step outside [{lo}, {sched.T}]: {t.tolist()}")
    return t


def _table(values, t: torch.Tensor) -> torch.Tensor:
    # gathers a per-step coefficient and adds a trailing axis for broadcasting over K
    return torch.tensor(values, dtype=DTYPE)[t].unsqueeze(-1)


def _one_hot(x: torch.Tensor, K: int) -> torch.Tensor:
    if x.numel() and (int(x.min()) < 0 or int(x.max()) >= K):
        raise ValueError(f"token ids must lie in [0, {K})")
    return F.one_hot(x, K).to(DTYPE)


def forward_step_probs(x_prev, t, sched: NoiseSchedule, K: int) -> torch.Tensor:
    """q(x_t | x_{t-1}) = (1 - beta_t) onehot(x_{t-1}) + beta_t / K."""
    x_prev, t = _tokens(x_prev), _steps(t, sched)
    beta = _table(sched.beta, t - 1)
    return (1.0 - beta) * _one_hot(x_prev, K) + beta / K


def forward_cumulative_probs(x0, t, sched: NoiseSchedule, K: int) -> torch.Tensor:
    """q(x_t | x_0) = alpha_bar_t onehot(x_0) + (1 - alpha_bar_t) / K."""
    x0, t = _tokens(x0), _steps(t, sched)
    ab = _table(sched.alpha_bar, t - 1)
    return ab * _one_hot(x0, K) + (1.0 - ab) / K


def sample_forward(x0, t, sched: NoiseSchedule, K: int,
                   generator: torch.Generator | None = None) -> torch.Tensor:
    """Draw x_t ~ q(x_t | x_0) independently per position.

    Keeps x_0 with probability alpha_bar_t and otherwise resamples uniformly
    over all K categories, which is exactly the closed-form marginal.
    """
    x0, t = _tokens(x0), _steps(t, sched)
    ab = torch.tensor(sched.alpha_bar, dtype=DTYPE)[t - 1].expand(x0.shape)
    keep = torch.rand(x0.shape, generator=generator, dtype=DTYPE) < ab
    noise = torch.randint(0, K, x0.shape, generator=generator)
    return torch.where(keep, x0, noise)


def posterior_probs(x_t, x0_dist: torch.Tensor, t, sched: NoiseSchedule) -> torch.Tensor:
    """q(x_{t-1} | x_t, x_0) with x_0 given as a (possibly soft) distribution.

    theta = [alpha_t onehot(x_t) + (1 - alpha_t)/K] * [alpha_bar_{t-1} x0 + (1 - alpha_bar_{t-1})/K],
    normalised over the last axis.  Valid for 1 <= t <= T; callers use it for t >= 2.
    """
    x0_dist = torch.as_tensor(x0_dist, dtype=DTYPE) if not torch.is_tensor(x0_dist) else x0_dist.to(DTYPE)
    K = x0_dist.shape[-1]
    x_t, t = _tokens(x_t), _steps(t, sched)
    alpha = _table(sched.alpha, t - 1)
    ab_prev = _table(sched.alpha_bar_padded, t - 1)
    theta = (alpha * _one_hot(x_t, K) + (1.0 - alpha) / K) * (ab_prev * x0_dist + (1.0 - ab_prev) / K)
    norm = theta.sum(-1, keepdim=True)
    if not torch.all(norm > 0):
        raise DegenerateDistribution("posterior normaliser is zero; is beta clipped away from 0?")
    return theta / norm


def kl_categorical(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """KL(p || q) over the last axis with 0 log 0 = 0 and q floored at LOG_FLOOR."""
    p, q = torch.as_tensor(p, dtype=DTYPE), torch.as_tensor(q, dtype=DTYPE)
    if p.shape[-1] != q.shape[-1]:
        raise ValueError(f"category mismatch: {p.shape[-1]} vs {q.shape[-1]}")
    log_ratio = torch.log(p.clamp_min(LOG_FLOOR)) - torch.log(q.clamp_min(LOG_FLOOR))
    terms = torch.where(p > 0, p * log_ratio, torch.zeros((), dtype=DTYPE))
    # floor-induced negatives are O(1e-12); clamp keeps the contract kl >= 0
    return terms.sum(-1).clamp_min(0.0)


def vb_loss_term(y0, y_t, x0_hat: torch.Tensor, t, sched: NoiseSchedule) -> torch.Tensor:
    """One sampled term of the negative variational bound, summed over positions.

    Shapes: ``y0``, ``y_t`` are (..., L); ``x0_hat`` is (..., L, K); ``t`` is an
    int or broadcastable to (...).  Returns a tensor of shape (...).

    t == 1: reconstruction loss -sum_k y0_k log x0_hat_k.
    t >= 2: KL(q(y_{t-1} | y_t, y0) || q(y_{t-1} | y_t, x0_hat)).
    """
    y0, y_t = _tokens(y0), _tokens(y_t)
    x0_hat = x0_hat.to(DTYPE)
    if y0.shape != y_t.shape or x0_hat.shape[:-1] != y0.shape:
        raise ValueError(f"shape mismatch: y0 {tuple(y0.shape)}, y_t {tuple(y_t.shape)}, "
                         f"x0_hat {tuple(x0_hat.shape)}")
    K = x0_hat.shape[-1]
    t = _steps(t, sched)
    t_pos = t.unsqueeze(-1).expand(y0.shape) if t.dim() else t.expand(y0.shape)

    y0_1h = _one_hot(y0, K)
    recon = -(y0_1h * torch.log(x0_hat.clamp_min(LOG_FLOOR))).sum(-1)
    kl = kl_categorical(posterior_probs(y_t, y0_1h, t_pos, sched),
                        posterior_probs(y_t, x0_hat, t_pos, sched))
    return torch.where(t_pos == 1, recon, kl).sum(-1)


def prior_kl(y0, sched: NoiseSchedule, K: int) -> torch.Tensor:
    """KL(q(x_T | x_0) || uniform) summed over positions; a diagnostic, not part of the loss."""
    y0 = _tokens(y0)
    q = forward_cumulative_probs(y0, sched.T, sched, K)
    return kl_categorical(q, torch.full_like(q, 1.0 / K)).sum(-1)
