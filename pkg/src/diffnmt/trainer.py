"""Training loop: sample t, corrupt targets, one bound term per example, Adam."""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from diffnmt import checkpoint, diffusion
from diffnmt.corpus import ParallelExample, make_epoch
from diffnmt.model import Denoiser, ModelConfig, batch_loss
from diffnmt.schedule import NoiseSchedule, build_schedule
from diffnmt.tokenizer import Vocabulary, encode

log = logging.getLogger(__name__)

LATEST = "latest.cdmt"
FINAL = "model.cdmt"


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    lr: float = 5e-4
    gamma: float = 0.9
    batch_size: int = 512
    epochs: int = 1
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    max_steps: int | None = None
    log_every: int = 50
    balance: bool = True
    keep_checkpoints: int | None = 3  # newest per-epoch files kept; None keeps all

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.keep_checkpoints is not None and self.keep_checkpoints < 0:
            raise ValueError("keep_checkpoints must be >= 0")


def step_seed(seed: int, step: int) -> int:
    return int(np.random.SeedSequence([seed, step]).generate_state(1, dtype=np.uint64)[0] >> 1)


def encode_examples(examples: Sequence[ParallelExample], vocab: Vocabulary, L: int):
    """Return (x, y0) LongTensors of shape (N, L)."""
    x = [encode(e.src_text, e.src_lang, e.tgt_lang, vocab, L, "source") for e in examples]
    y = [encode(e.tgt_text, e.src_lang, e.tgt_lang, vocab, L, "target") for e in examples]
    return torch.tensor(x, dtype=torch.long).reshape(-1, L), torch.tensor(y, dtype=torch.long).reshape(-1, L)


def make_optimizer(model: Denoiser, cfg: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(cfg.adam_beta1, cfg.adam_beta2),
                            eps=cfg.adam_eps, foreach=False)


def train_step(model: Denoiser, opt: torch.optim.Optimizer, x: torch.Tensor, y0: torch.Tensor,
               sched: NoiseSchedule, seed: int, step: int, clip_norm: float | None = 1.0):
    """One update on a pre-encoded batch.  Returns (loss, sampled t)."""
    gen = torch.Generator().manual_seed(step_seed(seed, step))
    t = torch.randint(1, sched.T + 1, (y0.shape[0],), generator=gen)
    y_t = diffusion.sample_forward(y0, t[:, None], sched, model.cfg.K, gen)
    opt.zero_grad(set_to_none=True)
    loss = batch_loss(model, y0, x, t, y_t, sched)
    if not torch.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss at step {step}; t={t.tolist()}")
    loss.backward()
    if clip_norm:
        norm = torch.nn.utils.clip_grad_norm_(model.parameters(), clip_norm)
        if not torch.isfinite(norm):
            raise TrainingDiverged(f"non-finite gradient norm at step {step}; t={t.tolist()}")
    opt.step()
    return loss.item(), t


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    batch_in_epoch: int = 0


def state_tensors(model: Denoiser, opt: torch.optim.Optimizer) -> dict[str, torch.Tensor]:
    tensors = {name: p for name, p in model.named_parameters()}
    for name, p in model.named_parameters():
        st = opt.state.get(p)
        if st:
            tensors[f"adam.exp_avg/{name}"] = st["exp_avg"]
            tensors[f"adam.exp_avg_sq/{name}"] = st["exp_avg_sq"]
    return tensors


def save_training_checkpoint(path, model: Denoiser, opt, state: TrainState, sched: NoiseSchedule,
                             vocab: Vocabulary, tcfg: TrainConfig) -> None:
    meta = {"schedule": {"kind": sched.kind, "T": sched.T},
            "vocab": vocab.to_text(),
            "train_state": asdict(state),
            "train_config": asdict(tcfg)}
    checkpoint.save(path, model.cfg.to_dict(), state_tensors(model, opt), meta)


def restore_optimizer(model: Denoiser, opt, tensors: dict, step: int) -> None:
    for name, p in model.named_parameters():
        key = f"adam.exp_avg/{name}"
        if key in tensors:
            opt.state[p] = {"step": torch.tensor(float(step)),
                            "exp_avg": tensors[key].clone(),
                            "exp_avg_sq": tensors[f"adam.exp_avg_sq/{name}"].clone()}


def load_model(path) -> tuple[Denoiser, Vocabulary, NoiseSchedule, dict]:
    """Load a checkpoint for inference: (model, vocab, schedule, meta)."""
    cfg_dict, meta, tensors = checkpoint.load(path)
    model = Denoiser(ModelConfig(**cfg_dict))
    checkpoint.load_params_into(model, tensors)
    model.eval()
    vocab = Vocabulary.from_text(meta["vocab"])
    sched = build_schedule(meta["schedule"]["kind"], meta["schedule"]["T"])
    return model, vocab, sched, meta


@dataclass
class TrainResult:
    model: Denoiser
    state: TrainState
    losses: list = field(default_factory=list)
    stopped_early: bool = False


def train(model_cfg: ModelConfig, tcfg: TrainConfig, sched: NoiseSchedule, vocab: Vocabulary,
          datasets: Sequence[Sequence[ParallelExample]], out_dir, resume: bool = False,
          callback: Callable[[int, Denoiser], bool] | None = None, eval_every: int = 0) -> TrainResult:
    """Epoch loop with per-epoch LR decay; writes checkpoints and a JSONL log to ``out_dir``.

    ``callback(step, model)`` runs every ``eval_every`` steps and may return True
    to stop; the state at that point is checkpointed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(tcfg.seed)
    model = Denoiser(model_cfg, seed=tcfg.seed)
    opt = make_optimizer(model, tcfg)
    state = TrainState()
    if resume and (out / LATEST).exists():
        cfg_dict, meta, tensors = checkpoint.load(out / LATEST)
        if ModelConfig(**cfg_dict) != model_cfg:
            raise ValueError("checkpoint model config differs from the requested one")
        checkpoint.load_params_into(model, tensors)
        state = TrainState(**meta["train_state"])
        restore_optimizer(model, opt, tensors, state.step)
        log.info("resumed at step %d (epoch %d, batch %d)", state.step, state.epoch, state.batch_in_epoch)
    vocab.save(out / "vocab.txt")
    encoded = [encode_examples(d, vocab, model_cfg.L) for d in datasets]
    x_all = torch.cat([e[0] for e in encoded])
    y_all = torch.cat([e[1] for e in encoded])
    offsets = np.cumsum([0] + [len(d) for d in datasets])
    row_ids = [list(range(offsets[k], offsets[k + 1])) for k in range(len(datasets))]

    def ckpt(name):
        save_training_checkpoint(out / name, model, opt, state, sched, vocab, tcfg)

    if not resume or not (out / LATEST).exists():
        ckpt(LATEST)
    result = TrainResult(model, state)
    log_fh = open(out / "train_log.jsonl", "a" if resume else "w", encoding="utf-8")
    window_loss, window_t = [], []
    budget = tcfg.max_steps
    try:
        while state.epoch < tcfg.epochs and (budget is None or state.step < budget):
            lr = tcfg.lr * tcfg.gamma ** state.epoch
            for group in opt.param_groups:
                group["lr"] = lr
            rows = make_epoch(row_ids, tcfg.balance, tcfg.seed, state.epoch)
            n_batches = -(-len(rows) // tcfg.batch_size)
            model.train()
            while state.batch_in_epoch < n_batches:
                if budget is not None and state.step >= budget:
                    break
                b = state.batch_in_epoch
                chunk = torch.tensor(rows[b * tcfg.batch_size:(b + 1) * tcfg.batch_size], dtype=torch.long)
                x, y0 = x_all[chunk], y_all[chunk]
                loss, t = train_step(model, opt, x, y0, sched, tcfg.seed, state.step, tcfg.clip_norm)
                state.step += 1
                state.batch_in_epoch += 1
                result.losses.append(loss)
                window_loss.append(loss)
                window_t.extend(t.tolist())
                if state.step % tcfg.log_every == 0:
                    log_fh.write(json.dumps({"step": state.step, "epoch": state.epoch,
                                             "loss": float(np.mean(window_loss)), "lr": lr,
                                             "t_mean": float(np.mean(window_t))}) + "\n")
                    log_fh.flush()
                    window_loss, window_t = [], []
                if eval_every and callback and state.step % eval_every == 0:
                    stop = callback(state.step, copy.deepcopy(model).eval())
                    if stop:
                        result.stopped_early = True
                        return result
            else:
                state.epoch += 1
                state.batch_in_epoch = 0
                ckpt(LATEST)
                ckpt(f"epoch{state.epoch:04d}.cdmt")
                if tcfg.keep_checkpoints is not None:
                    for old in sorted(out.glob("epoch*.cdmt"), key=lambda f: int(f.stem[5:]))[:-tcfg.keep_checkpoints or None]:
                        old.unlink()
    finally:
        log_fh.close()
        model.eval()
        ckpt(LATEST)
        ckpt(FINAL)
    return result
