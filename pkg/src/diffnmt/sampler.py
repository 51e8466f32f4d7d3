"""Reverse diffusion: start from uniform noise and denoise for T steps."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch

from diffnmt import diffusion
from diffnmt.schedule import NoiseSchedule
from diffnmt.tokenizer import Vocabulary, decode, encode

MODES = ("argmax_final", "sample")


def example_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0] >> 1)


def _categorical(probs: torch.Tensor, gens: list[torch.Generator]) -> torch.Tensor:
    """Gumbel-max draw per row of (B, L, K) probs, each example with its own generator."""
    u = torch.stack([torch.rand(probs.shape[1:], generator=g, dtype=torch.float64) for g in gens])
    gumbel = -torch.log(-torch.log(u.clamp(1e-300, 1.0 - 1e-16)))
    return torch.argmax(torch.log(probs.clamp_min(1e-300)) + gumbel, dim=-1)


@torch.no_grad()
def denoise(model, x: torch.Tensor, sched: NoiseSchedule, seeds: Sequence[int], K: int,
            mode: str = "argmax_final") -> torch.Tensor:
    """Run the T-step reverse chain for a batch of encoded sources ``x`` (B, L).

    ``model(y_t, x, t)`` must return x0 probabilities of shape (B, L, K).
    Each example draws from its own generator seeded by ``seeds[i]``, so a
    result never depends on its batch neighbours.
    """
    if mode not in MODES:
        raise ValueError(f"unknown decode mode {mode!r}; expected one of {MODES}")
    x = torch.as_tensor(x, dtype=torch.long)
    B, L = x.shape
    if len(seeds) != B:
        raise ValueError("need one seed per example")
    gens = [torch.Generator().manual_seed(int(s)) for s in seeds]
    y = torch.stack([torch.randint(0, K, (L,), generator=g) for g in gens])
    for t in range(sched.T, 0, -1):
        tt = torch.full((B,), t, dtype=torch.long)
        x0_hat = model(y, x, tt).to(torch.float64)
        if not torch.isfinite(x0_hat).all():
            raise FloatingPointError(f"non-finite model output at step {t}")
        if t > 1:
            y = _categorical(diffusion.posterior_probs(y, x0_hat, t, sched), gens)
        elif mode == "argmax_final":
            y = torch.argmax(x0_hat, dim=-1)
        else:
            y = _categorical(x0_hat, gens)
    return y


def translate_batch(texts: Sequence[str], src_lang: str, tgt_lang: str, model, vocab: Vocabulary,
                    sched: NoiseSchedule, seed: int = 0, mode: str = "argmax_final",
                    batch_size: int = 256, seeds: Sequence[int] | None = None):
    """Translate many sentences; example ``i`` uses ``example_seed(seed, i)`` unless ``seeds`` is given.

    Returns a list of (text, token ids) in input order.
    """
    L = model.cfg.L
    if seeds is None:
        seeds = [example_seed(seed, i) for i in range(len(texts))]
    out = []
    for start in range(0, len(texts), batch_size):
        chunk = texts[start:start + batch_size]
        x = torch.tensor([encode(s, src_lang, tgt_lang, vocab, L, "source") for s in chunk],
                         dtype=torch.long).reshape(-1, L)
        ys = denoise(model, x, sched, seeds[start:start + len(chunk)], vocab.K, mode)
        out.extend((decode(row.tolist(), vocab), row.tolist()) for row in ys)
    return out


def translate(text: str, src_lang: str, tgt_lang: str, model, vocab: Vocabulary,
              sched: NoiseSchedule, seed: int = 0, mode: str = "argmax_final"):
    return translate_batch([text], src_lang, tgt_lang, model, vocab, sched, seed, mode)[0]
