"""Conditional denoiser: an encoder-decoder transformer predicting x0 from (y_t, x, t).

The encoder reads the source sequence, the decoder reads the noisy target
with full (non-causal) self-attention and cross-attends to the encoder.  A
sinusoidal step embedding passed through a linear layer is added to the
input of every encoder and decoder layer.  Blocks are pre-LayerNorm.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from diffnmt import diffusion
from diffnmt.schedule import NoiseSchedule


@dataclass(frozen=True)
class ModelConfig:
    K: int
    L: int
    T: int
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 64
    d_ff: int = 256
    pad_id: int = 0
    # optional: position of the target-language token in the source, whose embedding
    # is then added to every decoder input.  None keeps language tokens encoder-only.
    tgt_lang_pos: int | None = None

    def __post_init__(self):
        for name in ("K", "L", "T", "n_layers", "n_heads", "d_model", "d_ff"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard transformer sinusoid; ``positions`` (...,) -> (..., dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = positions.to(torch.float64).unsqueeze(-1) * freqs
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class Attention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.h = n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.o = nn.Linear(d_model, d_model)

    def forward(self, x, ctx, key_mask=None):
        B, Lq, D = x.shape
        Lk = ctx.shape[1]
        dh = D // self.h
        q = self.q(x).view(B, Lq, self.h, dh).transpose(1, 2)
        k = self.k(ctx).view(B, Lk, self.h, dh).transpose(1, 2)
        v = self.v(ctx).view(B, Lk, self.h, dh).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
        if key_mask is not None:
            # key_mask: (B, Lk) bool, True = attend
            scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        out = torch.softmax(scores, dim=-1) @ v
        return self.o(out.transpose(1, 2).reshape(B, Lq, D))


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_ff)
        self.fc2 = nn.Linear(d_ff, d_model)

    def forward(self, x):
        return self.fc2(F.gelu(self.fc1(x)))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = Attention(cfg.d_model, cfg.n_heads)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff)

    def forward(self, h, temb, src_mask):
        h = h + temb
        a = self.ln1(h)
        h = h + self.attn(a, a, src_mask)
        return h + self.ff(self.ln2(h))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = Attention(cfg.d_model, cfg.n_heads)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = Attention(cfg.d_model, cfg.n_heads)
        self.ln3 = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff)

    def forward(self, h, temb, memory, src_mask):
        h = h + temb
        a = self.ln1(h)
        h = h + self.self_attn(a, a)  # no causal mask: all positions are denoised jointly
        h = h + self.cross_attn(self.ln2(h), memory, src_mask)
        return h + self.ff(self.ln3(h))


class Denoiser(nn.Module):
    """mu(y_t, x, t) -> per-position distribution over K, read as x0_hat."""

    def __init__(self, cfg: ModelConfig, seed: int | None = None):
        super().__init__()
        self.cfg = cfg
        self.tok_emb = nn.Embedding(cfg.K, cfg.d_model)
        self.time_proj = nn.Linear(cfg.d_model, cfg.d_model)
        self.encoder = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_layers))
        self.decoder = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.n_layers))
        self.enc_norm = nn.LayerNorm(cfg.d_model)
        self.dec_norm = nn.LayerNorm(cfg.d_model)
        self.out = nn.Linear(cfg.d_model, cfg.K)
        self.register_buffer("pos_table", sinusoidal(torch.arange(cfg.L), cfg.d_model).float(),
                             persistent=False)
        self.reset_parameters(seed)

    @torch.no_grad()
    def reset_parameters(self, seed: int | None = None) -> None:
        gen = torch.Generator().manual_seed(0 if seed is None else seed)
        for name, p in self.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            elif ".ln" in name or "norm" in name:
                p.fill_(1.0)
            elif name == "tok_emb.weight":
                p.uniform_(-math.sqrt(3.0), math.sqrt(3.0), generator=gen)
            else:
                bound = math.sqrt(3.0 / p.shape[1])  # unit-gain uniform over fan-in
                p.uniform_(-bound, bound, generator=gen)
        self.out.weight.mul_(0.1)

    def time_encoding(self, t) -> torch.Tensor:
        t = torch.as_tensor(t, dtype=torch.long)
        if t.numel() and (int(t.min()) < 1 or int(t.max()) > self.cfg.T):
            raise ValueError(f"step outside [1, {self.cfg.T}]")
        base = sinusoidal(t, self.cfg.d_model).to(self.time_proj.weight.dtype)
        return self.time_proj(base)

    def logits(self, y_t, x, t, src_mask=None) -> torch.Tensor:
        y_t, x = torch.as_tensor(y_t), torch.as_tensor(x)
        if y_t.dim() == 1:
            return self.logits(y_t[None], x[None], torch.as_tensor(t).reshape(1),
                               None if src_mask is None else src_mask[None])[0]
        B = y_t.shape[0]
        if y_t.shape != (B, self.cfg.L) or x.shape != (B, self.cfg.L):
            raise ValueError(f"expected (B, {self.cfg.L}) inputs, got {tuple(y_t.shape)} and {tuple(x.shape)}")
        t = torch.as_tensor(t, dtype=torch.long).expand(B)
        if src_mask is None:
            src_mask = x != self.cfg.pad_id
        # a fully padded source would leave attention rows empty
        src_mask = src_mask | ~src_mask.any(-1, keepdim=True)
        dtype = self.tok_emb.weight.dtype
        pos = self.pos_table.to(dtype)
        temb = self.time_encoding(t)[:, None, :]

        h = self.tok_emb(x) + pos
        for layer in self.encoder:
            h = layer(h, temb, src_mask)
        memory = self.enc_norm(h)

        g = self.tok_emb(y_t) + pos
        if self.cfg.tgt_lang_pos is not None:
            g = g + self.tok_emb(x[:, self.cfg.tgt_lang_pos])[:, None, :]
        for layer in self.decoder:
            g = layer(g, temb, memory, src_mask)
        return self.out(self.dec_norm(g))

    def forward(self, y_t, x, t, src_mask=None) -> torch.Tensor:
        logits = self.logits(y_t, x, t, src_mask)
        if not torch.isfinite(logits).all():
            raise FloatingPointError("non-finite activations in denoiser forward")
        return torch.softmax(logits, dim=-1)


def batch_loss(model: Denoiser, y0, x, t, y_t, sched: NoiseSchedule) -> torch.Tensor:
    """Batch mean of the sampled bound term; probabilities are promoted to float64."""
    logits = model.logits(y_t, x, t)
    x0_hat = torch.softmax(logits.to(torch.float64), dim=-1)
    return diffusion.vb_loss_term(y0, y_t, x0_hat, t, sched).mean()


def loss_and_gradients(model: Denoiser, y0, x, t, y_t, sched: NoiseSchedule):
    """Return (loss, {param name: gradient}) via reverse-mode autodiff."""
    model.zero_grad(set_to_none=True)
    loss = batch_loss(model, y0, x, t, y_t, sched)
    if not torch.isfinite(loss):
        raise FloatingPointError(f"non-finite loss {loss.item()}")
    loss.backward()
    grads = {name: p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)
             for name, p in model.named_parameters()}
    return loss.item(), grads


@torch.no_grad()
def full_bound(model: Denoiser, y0, x, sched: NoiseSchedule, generator: torch.Generator | None = None):
    """Per-example bound over every step: prior KL plus one sampled term for each t.

    Costs T forward passes, so it is meant for small diagnostic runs.
    """
    y0, x = torch.as_tensor(y0), torch.as_tensor(x)
    total = diffusion.prior_kl(y0, sched, model.cfg.K)
    for t in range(1, sched.T + 1):
        y_t = diffusion.sample_forward(y0, t, sched, model.cfg.K, generator)
        x0_hat = torch.softmax(model.logits(y_t, x, t).to(torch.float64), dim=-1)
        total = total + diffusion.vb_loss_term(y0, y_t, x0_hat, t, sched)
    return total
