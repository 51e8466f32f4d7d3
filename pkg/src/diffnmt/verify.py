"""Oracle checks behind ``diffnmt verify``.

Each check raises AssertionError (or any exception) on failure and returns a
short detail string on success.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

from diffnmt import diffusion, metrics, oracles
from diffnmt import schedule as S

GOLDEN_HYP = "i know he need a guarantee for four years."
GOLDEN_REF = "i know he would like a four - year guarantee."
GOLDEN_SCORE = 17.47


@dataclass
class Check:
    name: str
    fn: Callable[[], str]


@dataclass
class Outcome:
    name: str
    ok: bool
    detail: str
    seconds: float


def _betas(seed: int, T: int) -> list[float]:
    return np.random.default_rng(seed).uniform(0.02, 0.98, T).tolist()


def check_cosine() -> str:
    s = S.build_schedule("cosine", 100)
    err = np.abs(s.alpha_bar - np.array(oracles.cosine_alpha_bar_hp(100))).max()
    assert err <= 1e-12, f"cosine alpha_bar off by {err:.2e}"
    assert s.alpha_bar[-1] <= 1e-2 and np.all(np.diff(s.alpha_bar) < 0)
    return f"max err {err:.1e}"


def check_schedule_invariants() -> str:
    for T in (1, 10, 100, 1000):
        s = S.build_schedule("cosine", T)
        prev = np.concatenate([[1.0], s.alpha_bar[:-1]])
        assert np.all((s.beta > 0) & (s.beta <= 1))
        assert np.abs(s.alpha_bar - prev * s.alpha).max() <= 1e-12
        assert np.all(np.diff(s.alpha_bar) <= 0)
    return "T in {1,10,100,1000}"


def check_chain_composition() -> str:
    worst = 0.0
    for K, T in itertools.product((2, 3, 4, 8), (2, 5, 10)):
        betas = _betas(K * 31 + T, T)
        s = S.from_betas(betas)
        for x0, t in itertools.product(range(K), range(1, T + 1)):
            got = diffusion.forward_cumulative_probs(x0, t, s, K).numpy()
            worst = max(worst, np.abs(got - oracles.chain_marginal(x0, t, s.beta.tolist(), K)).max())
    assert worst <= 1e-12, f"chain marginal mismatch {worst:.2e}"
    return f"max err {worst:.1e}"


def check_posterior_bayes() -> str:
    worst = 0.0
    cases = [(K, T, _betas(K * 17 + T, T)) for K, T in itertools.product((2, 3, 4, 8), (2, 5, 10))]
    # zero requested betas only stay well-posed because from_betas floors them
    cases.append((3, 3, [0.0, 0.0, 0.5]))
    for K, T, betas in cases:
        s = S.from_betas(betas)
        eye = torch.eye(K, dtype=torch.float64)
        for t in range(2, T + 1):
            for x_t, x0 in itertools.product(range(K), repeat=2):
                got = diffusion.posterior_probs(x_t, eye[x0], t, s).numpy()
                ref = oracles.bayes_posterior(x_t, x0, t, s.beta.tolist(), K)
                worst = max(worst, np.abs(got - ref).max())
    assert worst <= 1e-10, f"posterior mismatch {worst:.2e}"
    return f"max err {worst:.1e}"


def check_vb_oracle() -> str:
    g = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        K, L, T = int(g.integers(2, 5)), int(g.integers(1, 3)), int(g.integers(1, 6))
        s = S.from_betas(g.uniform(0.02, 0.98, T))
        y0, y_t = g.integers(0, K, L), g.integers(0, K, L)
        x0_hat = g.dirichlet(np.ones(K), size=L)
        t = int(g.integers(1, T + 1))
        got = float(diffusion.vb_loss_term(torch.tensor(y0), torch.tensor(y_t), torch.tensor(x0_hat), t, s))
        ref = oracles.vb_term(y0.tolist(), y_t.tolist(), x0_hat.tolist(), t, s.beta.tolist())
        worst = max(worst, abs(got - ref))
    assert worst <= 1e-10, f"bound term mismatch {worst:.2e}"
    return f"max err {worst:.1e}"


def check_vb_perfect() -> str:
    g = torch.Generator().manual_seed(0)
    s = S.build_schedule("cosine", 10)
    y0 = torch.randint(0, 6, (4, 5), generator=g)
    perfect = torch.nn.functional.one_hot(y0, 6).double()
    for t in range(1, 11):
        y_t = diffusion.sample_forward(y0, t, s, 6, g)
        val = float(diffusion.vb_loss_term(y0, y_t, perfect, t, s).abs().max())
        assert val <= 1e-12, f"perfect predictor loss {val} at t={t}"
    return "all t"


PARAM_CLASSES = {
    "embedding": ("tok_emb.",),
    "time_projection": ("time_proj.",),
    "self_attention": (".attn.", ".self_attn."),
    "cross_attention": (".cross_attn.",),
    "feed_forward": (".ff.",),
    "layer_norm": (".ln", "enc_norm", "dec_norm"),
    "output": ("out.",),
}


def gradient_check(n_coords: int = 20, eps: float = 1e-4, seed: int = 0) -> dict[str, float]:
    """Worst relative error of autograd vs central differences, per parameter class."""
    from diffnmt.model import Denoiser, ModelConfig, batch_loss, loss_and_gradients

    torch.manual_seed(seed)
    cfg = ModelConfig(K=8, L=4, T=10, n_layers=1, n_heads=2, d_model=16, d_ff=32)
    model = Denoiser(cfg, seed=seed).double()
    with torch.no_grad():
        # nudge LN gains/biases and the output head off their symmetric init
        g = torch.Generator().manual_seed(seed + 1)
        for name, p in model.named_parameters():
            p.add_(0.1 * torch.randn(p.shape, generator=g, dtype=p.dtype))
    s = S.build_schedule("cosine", cfg.T)
    g = torch.Generator().manual_seed(seed + 2)
    B = 3
    x = torch.randint(1, cfg.K, (B, cfg.L), generator=g)
    x[0, -1] = 0
    y0 = torch.randint(0, cfg.K, (B, cfg.L), generator=g)
    t = torch.tensor([1, 4, 9])
    y_t = diffusion.sample_forward(y0, t[:, None], s, cfg.K, g)
    _, grads = loss_and_gradients(model, y0, x, t, y_t, s)
    params = dict(model.named_parameters())
    rng = np.random.default_rng(seed)
    worst = {}
    for cls, keys in PARAM_CLASSES.items():
        names = [n for n in params if any(k in n if not k.endswith(".") or k.startswith(".") else n.startswith(k)
                                          for k in keys)]
        assert names, f"no parameters in class {cls}"
        err = 0.0
        for _ in range(n_coords):
            name = names[rng.integers(len(names))]
            p = params[name]
            idx = tuple(int(rng.integers(d)) for d in p.shape)
            with torch.no_grad():
                orig = p[idx].item()
                p[idx] = orig + eps
                up = float(batch_loss(model, y0, x, t, y_t, s))
                p[idx] = orig - eps
                down = float(batch_loss(model, y0, x, t, y_t, s))
                p[idx] = orig
            fd = (up - down) / (2 * eps)
            an = float(grads[name][idx])
            err = max(err, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
        worst[cls] = err
    return worst


def check_gradients() -> str:
    worst = gradient_check()
    bad = {k: v for k, v in worst.items() if not v < 1e-3}
    assert not bad, f"relative error >= 1e-3: {bad}"
    return "max rel err " + ", ".join(f"{k}={v:.1e}" for k, v in worst.items())


def check_metrics_identity() -> str:
    refs = ["the cat sat", "a b c d e", "xyz"]
    assert metrics.corpus_bleu(refs, refs) == 100.0
    assert metrics.corpus_ter(refs, refs) == 0.0
    assert metrics.corpus_chrf(refs, refs) == 100.0
    return "bleu 100, ter 0, chrf 100"


def check_golden_sentence() -> str:
    score = metrics.sentence_bleu(GOLDEN_HYP, GOLDEN_REF)
    assert abs(score - GOLDEN_SCORE) <= 1.0, f"sentence BLEU {score:.2f} vs {GOLDEN_SCORE}"
    return f"{score:.2f} vs {GOLDEN_SCORE}"


def check_ter_examples() -> str:
    a = metrics.ter("a b c d", "a b c")
    b = metrics.ter("c d a b", "a b c d")
    assert abs(a - 100 / 3) <= 1e-6 and abs(b - 25.0) <= 1e-6, (a, b)
    return f"{a:.4f}, {b:.4f}"


def check_chrf_oracle() -> str:
    for hyp, ref, n in (("abd", "abc", 2), ("abd", "abc", 6), ("the cat", "a cat sat", 6), ("abab", "baba", 3)):
        got = metrics.chrf(hyp, ref, max_n=n)
        exp = oracles.chrf_sentence(hyp, ref, max_n=n)
        assert abs(got - exp) <= 1e-6, (hyp, ref, got, exp)
    return "4 cases"


CHECKS = [
    Check("schedule.cosine_high_precision", check_cosine),
    Check("schedule.invariants", check_schedule_invariants),
    Check("diffusion.chain_composition", check_chain_composition),
    Check("diffusion.posterior_bayes", check_posterior_bayes),
    Check("diffusion.vb_oracle", check_vb_oracle),
    Check("diffusion.vb_perfect_predictor", check_vb_perfect),
    Check("model.gradient_check", check_gradients),
    Check("metrics.identity", check_metrics_identity),
    Check("metrics.golden_sentence_bleu", check_golden_sentence),
    Check("metrics.ter_examples", check_ter_examples),
    Check("metrics.chrf_oracle", check_chrf_oracle),
]


def run_checks(pattern: str | None = None, checks=None) -> list[Outcome]:
    outcomes = []
    for check in checks or CHECKS:
        if pattern and pattern not in check.name:
            continue
        start = time.perf_counter()
        try:
            detail, ok = check.fn(), True
        except Exception as exc:  # every failure is reported, none aborts the run
            detail, ok = f"{type(exc).__name__}: {exc}", False
        outcomes.append(Outcome(check.name, ok, detail, time.perf_counter() - start))
    return outcomes


def format_table(outcomes: list[Outcome]) -> str:
    width = max((len(o.name) for o in outcomes), default=10)
    lines = [f"{'check':<{width}}  result  time    detail"]
    for o in outcomes:
        lines.append(f"{o.name:<{width}}  {'PASS' if o.ok else 'FAIL':<6}  {o.seconds:5.2f}s  {o.detail}")
    failed = [o.name for o in outcomes if not o.ok]
    lines.append(f"{len(outcomes) - len(failed)}/{len(outcomes)} passed"
                 + (f"; failed: {', '.join(failed)}" if failed else ""))
    return "\n".join(lines)
