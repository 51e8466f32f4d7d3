import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from diffnmt import diffusion
from diffnmt.model import Denoiser, ModelConfig, batch_loss, full_bound, loss_and_gradients, sinusoidal
from diffnmt.schedule import build_schedule
from diffnmt.verify import PARAM_CLASSES, gradient_check

CFG = ModelConfig(K=8, L=6, T=10, n_layers=2, n_heads=2, d_model=16, d_ff=32)
SCHED = build_schedule("cosine", CFG.T)


def perturbed(cfg=CFG, seed=0):
    """A model with every parameter moved off its structured init."""
    model = Denoiser(cfg, seed=seed).double()
    g = torch.Generator().manual_seed(seed + 100)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.2 * torch.randn(p.shape, generator=g, dtype=p.dtype))
    return model.eval()


def inputs(B=3, seed=0, cfg=CFG):
    g = torch.Generator().manual_seed(seed)
    x = torch.randint(2, cfg.K, (B, cfg.L), generator=g)
    y = torch.randint(0, cfg.K, (B, cfg.L), generator=g)
    return y, x


def test_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        ModelConfig(K=8, L=4, T=2, n_heads=3, d_model=16)
    with pytest.raises(ValueError, match="positive"):
        ModelConfig(K=0, L=4, T=2)


def test_parameter_count_is_function_of_config():
    a, b = Denoiser(CFG, seed=0), Denoiser(CFG, seed=1)
    assert sum(p.numel() for p in a.parameters()) == sum(p.numel() for p in b.parameters())
    assert a.tok_emb.weight.shape == (CFG.K, CFG.d_model)
    assert a.out.weight.shape == (CFG.K, CFG.d_model)


def test_time_encoding_examples():
    model = perturbed()
    assert torch.equal(model.time_encoding(3), model.time_encoding(3))
    assert not torch.allclose(model.time_encoding(3), model.time_encoding(4))
    with torch.no_grad():
        model.time_proj.weight.zero_()
        model.time_proj.bias.zero_()
    assert torch.count_nonzero(model.time_encoding(torch.arange(1, 11))) == 0
    with pytest.raises(ValueError):
        model.time_encoding(0)
    with pytest.raises(ValueError):
        model.time_encoding(CFG.T + 1)


def test_sinusoid_distinct_for_distinct_steps():
    emb = sinusoidal(torch.arange(1, 1001), 64)
    assert torch.cdist(emb, emb).fill_diagonal_(1.0).min() > 1e-3


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000), st.integers(1, CFG.T))
def test_forward_rows_normalized(seed, t):
    model = perturbed(seed=seed % 5)
    y, x = inputs(seed=seed)
    out = model(y, x, t)
    assert out.shape == (3, CFG.L, CFG.K)
    assert torch.allclose(out.sum(-1), torch.ones(3, CFG.L, dtype=out.dtype), atol=1e-6)
    assert torch.equal(out, model(y, x, t))


def test_single_example_shape():
    model = Denoiser(CFG, seed=0)
    y, x = inputs(1)
    assert model(y[0], x[0], 2).shape == (CFG.L, CFG.K)


def test_shape_mismatch():
    model = Denoiser(CFG, seed=0)
    with pytest.raises(ValueError, match="expected"):
        model(torch.zeros(2, CFG.L + 1, dtype=torch.long), torch.zeros(2, CFG.L, dtype=torch.long), 1)


def test_non_finite_signalled():
    model = Denoiser(CFG, seed=0)
    with torch.no_grad():
        model.out.bias[0] = float("nan")
    y, x = inputs()
    with pytest.raises(FloatingPointError):
        model(y, x, 1)


def test_source_pad_tail_is_masked():
    model = perturbed()
    y, x = inputs()
    x[:, 4:] = CFG.pad_id
    mask = x != CFG.pad_id
    base = model(y, x, 5, mask)
    x2 = x.clone()
    x2[:, 4:] = torch.tensor([3, 7])
    assert torch.allclose(base, model(y, x2, 5, mask), atol=1e-12)


def test_fully_padded_source_is_finite():
    model = perturbed()
    y, _ = inputs()
    out = model(y, torch.zeros_like(y), 2)
    assert torch.isfinite(out).all()


def test_decoder_is_not_causal():
    model = perturbed()
    y, x = inputs()
    base = model(y, x, 4)
    y2 = y.clone()
    y2[:, -1] = (y2[:, -1] + 1) % CFG.K
    changed = (base[:, :-1] - model(y2, x, 4)[:, :-1]).abs().max()
    assert changed > 1e-6


def test_vocabulary_relabeling_equivariance():
    model = perturbed()
    y, x = inputs()
    # relabel content ids only; pad keeps id 0 so the source mask is unchanged
    perm = torch.cat([torch.tensor([0]), 1 + torch.randperm(CFG.K - 1, generator=torch.Generator().manual_seed(1))])
    relabeled = perturbed()
    with torch.no_grad():
        inv = torch.argsort(perm)
        relabeled.tok_emb.weight.copy_(model.tok_emb.weight[inv])
        relabeled.out.weight.copy_(model.out.weight[inv])
        relabeled.out.bias.copy_(model.out.bias[inv])
    a = model(y, x, 6)
    b = relabeled(perm[y], perm[x], 6)
    assert torch.allclose(a[..., inv], b, atol=1e-12)


def test_duplicated_example_same_loss():
    model = perturbed()
    y, x = inputs(1)
    t = torch.tensor([4])
    y_t = diffusion.sample_forward(y, t[:, None], SCHED, CFG.K, torch.Generator().manual_seed(0))
    one = batch_loss(model, y, x, t, y_t, SCHED)
    two = batch_loss(model, y.repeat(2, 1), x.repeat(2, 1), t.repeat(2), y_t.repeat(2, 1), SCHED)
    assert torch.allclose(one, two, atol=1e-14)


def test_perfect_predictor_loss_zero():
    y, _ = inputs()
    y_t = diffusion.sample_forward(y, 3, SCHED, CFG.K, torch.Generator().manual_seed(0))
    perfect = torch.nn.functional.one_hot(y, CFG.K).double()
    assert diffusion.vb_loss_term(y, y_t, perfect, 3, SCHED).abs().max() == 0


def test_gradients_cover_every_parameter():
    model = perturbed()
    y, x = inputs()
    t = torch.tensor([1, 5, 10])
    y_t = diffusion.sample_forward(y, t[:, None], SCHED, CFG.K, torch.Generator().manual_seed(0))
    loss, grads = loss_and_gradients(model, y, x, t, y_t, SCHED)
    assert set(grads) == {n for n, _ in model.named_parameters()}
    assert all(torch.isfinite(g).all() for g in grads.values())
    assert loss == pytest.approx(float(batch_loss(model, y, x, t, y_t, SCHED).detach()), rel=1e-12)
    loss2, grads2 = loss_and_gradients(model, y, x, t, y_t, SCHED)
    assert loss2 == loss and all(torch.equal(grads[n], grads2[n]) for n in grads)


def test_parameter_classes_partition_parameters():
    names = [n for n, _ in Denoiser(CFG).named_parameters()]
    for cls, keys in PARAM_CLASSES.items():
        assert any(any(k in n for k in keys) for n in names), cls


@pytest.mark.parametrize("seed", [0, 1])
def test_finite_difference_gradients(seed):
    worst = gradient_check(n_coords=20, seed=seed)
    assert set(worst) == set(PARAM_CLASSES)
    assert max(worst.values()) < 1e-3, worst


def test_full_bound_is_finite_and_positive():
    model = perturbed()
    y, x = inputs()
    b = full_bound(model, y, x, SCHED, torch.Generator().manual_seed(0))
    assert b.shape == (3,) and torch.isfinite(b).all() and (b > 0).all()


def test_output_head_starts_near_uniform():
    model = Denoiser(ModelConfig(K=32, L=8, T=10), seed=0)
    y, x = inputs(cfg=model.cfg)
    out = model(y, x, 5)
    assert (out - 1 / 32).abs().max() < 0.05


def test_target_language_broadcast_option():
    cfg = ModelConfig(**{**CFG.to_dict(), "tgt_lang_pos": 1})
    y, x = inputs(cfg=cfg)
    x2 = x.clone()
    x2[:, 1] = (x2[:, 1] + 1) % cfg.K
    mask = torch.ones_like(x, dtype=torch.bool)
    mask[:, 1] = False
    # with position 1 hidden from attention, only the broadcast can carry the token
    plain, model = perturbed(), perturbed(cfg)
    assert torch.allclose(plain(y, x, 3, mask), plain(y, x2, 3, mask), atol=1e-12)
    assert not torch.allclose(model(y, x, 3, mask), model(y, x2, 3, mask))
    assert sum(p.numel() for p in model.parameters()) == sum(p.numel() for p in plain.parameters())
