"""Noise schedules for uniform categorical diffusion.

Steps are 1-indexed: ``beta(t)`` for t in 1..T.  ``alpha_bar(0)`` is 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

KINDS = ("cosine", "linear")

COSINE_OFFSET = 0.008
BETA_MIN = 1e-6
BETA_MAX = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str
    T: int
    beta: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)

    def _check(self, t: int, lo: int = 1) -> None:
        if not lo <= t <= self.T:
            raise ValueError(f"step {t} outside [{lo}, {self.T}]")

    def beta_at(self, t: int) -> float:
        self._check(t)
        return float(self.beta[t - 1])

    def alpha_at(self, t: int) -> float:
        self._check(t)
        return float(self.alpha[t - 1])

    def alpha_bar_at(self, t: int) -> float:
        self._check(t, lo=0)
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    @property
    def alpha_bar_padded(self) -> np.ndarray:
        """alpha_bar with index 0 holding 1.0, so ``[t]`` works for t in 0..T."""
        return np.concatenate([[1.0], self.alpha_bar])

    @property
    def alpha_padded(self) -> np.ndarray:
        return np.concatenate([[1.0], self.alpha])


def from_betas(betas, kind: str = "custom", clip: bool = True) -> NoiseSchedule:
    beta = np.asarray(betas, dtype=np.float64)
    if beta.ndim != 1 or beta.size == 0:
        raise ValueError("betas must be a non-empty 1-d sequence")
    if np.any(beta < 0) or np.any(beta > 1):
        raise ValueError("betas must lie in [0, 1]")
    if clip:
        beta = np.clip(beta, BETA_MIN, BETA_MAX)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    for arr in (beta, alpha, alpha_bar):
        arr.setflags(write=False)
    return NoiseSchedule(kind, int(beta.size), beta, alpha, alpha_bar)


def cosine_alpha_bar(T: int, s: float = COSINE_OFFSET) -> np.ndarray:
    """Unclipped cosine curve f(t)/f(0) for t = 0..T."""
    steps = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((steps / T + s) / (1 + s)) * math.pi / 2) ** 2
    return f / f[0]

def build_schedule(kind: str = "cosine", T: int = 100, beta_start: float = 1e-4,
                   beta_end: float = 0.02) -> NoiseSchedule:
    """Build a schedule of the given kind.

    ``cosine`` derives betas from consecutive ratios of the cosine alpha_bar
    curve and clips them to ``[BETA_MIN, BETA_MAX]``.  ``linear`` spaces betas
    evenly between ``beta_start`` and ``beta_end`` and is not clipped, which
    allows the degenerate zero-noise schedule used in tests.
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if kind == "cosine":
        ab = cosine_alpha_bar(int(T))
        return from_betas(1.0 - ab[1:] / ab[:-1], kind="cosine", clip=True)
    if kind == "linear":
        return from_betas(np.linspace(beta_start, beta_end, int(T)), kind="linear", clip=False)
    raise ValueError(f"unknown schedule kind {kind!r}; expected one of {KINDS}")
