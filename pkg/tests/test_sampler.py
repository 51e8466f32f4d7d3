import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from diffnmt.model import Denoiser, ModelConfig
from diffnmt.sampler import denoise, example_seed, translate, translate_batch
from diffnmt.schedule import build_schedule
from diffnmt.tokenizer import build_vocab, encode

VOCAB = build_vocab(["abc cab", "bca"], "char", 16, ["A", "B"])
L = 8


class OneHotOracle(torch.nn.Module):
    """Always predicts x0 = y_star; counts its forward calls."""

    def __init__(self, y_star, K):
        super().__init__()
        self.probs = torch.nn.functional.one_hot(torch.as_tensor(y_star), K).double()
        self.calls = 0

    def forward(self, y_t, x, t):
        self.calls += 1
        return self.probs.expand(y_t.shape[0], *self.probs.shape)


def small_model(T=6):
    cfg = ModelConfig(K=VOCAB.K, L=L, T=T, n_layers=1, n_heads=2, d_model=16, d_ff=32)
    return Denoiser(cfg, seed=0).eval(), build_schedule("cosine", T)


def test_one_hot_oracle_recovered_for_any_seed():
    y_star = encode("cab ab", "A", "B", VOCAB, L, "target")
    sched = build_schedule("cosine", 20)
    x = torch.zeros(1, L, dtype=torch.long)
    for mode in ("argmax_final", "sample"):
        for seed in range(100):
            out = denoise(OneHotOracle(y_star, VOCAB.K), x, sched, [seed], VOCAB.K, mode)
            assert out[0].tolist() == y_star


@pytest.mark.parametrize("T", [1, 7])
def test_forward_call_count(T):
    oracle = OneHotOracle([0] * L, VOCAB.K)
    denoise(oracle, torch.zeros(3, L, dtype=torch.long), build_schedule("cosine", T), [0, 1, 2], VOCAB.K)
    assert oracle.calls == T


def test_single_step_is_argmax():
    model, sched = small_model(T=1)
    x = torch.tensor([encode("abc", "A", "B", VOCAB, L, "source")])
    out = denoise(model, x, sched, [4], VOCAB.K)
    y_T = torch.randint(0, VOCAB.K, (L,), generator=torch.Generator().manual_seed(4))
    assert torch.equal(out[0], model(y_T[None], x, 1)[0].argmax(-1))


def test_translate_deterministic():
    model, sched = small_model()
    a = translate("abc", "A", "B", model, VOCAB, sched, seed=3, mode="sample")
    b = translate("abc", "A", "B", model, VOCAB, sched, seed=3, mode="sample")
    assert a == b


def test_batch_of_one_matches_translate():
    model, sched = small_model()
    assert translate_batch(["bca"], "A", "B", model, VOCAB, sched, seed=9) == \
        [translate("bca", "A", "B", model, VOCAB, sched, seed=9)]


@settings(max_examples=10, deadline=None)
@given(st.lists(st.text(alphabet="abc ", max_size=6), min_size=1, max_size=5), st.integers(0, 99),
       st.integers(1, 3))
def test_outputs_independent_of_batching(texts, seed, batch_size):
    model, sched = small_model()
    whole = translate_batch(texts, "A", "B", model, VOCAB, sched, seed=seed)
    assert len(whole) == len(texts)
    assert translate_batch(texts, "A", "B", model, VOCAB, sched, seed=seed, batch_size=batch_size) == whole
    for i, text in enumerate(texts):
        one = translate_batch([text], "A", "B", model, VOCAB, sched, seeds=[example_seed(seed, i)])
        assert one[0] == whole[i]


def test_same_example_same_seed_same_output():
    model, sched = small_model()
    out = translate_batch(["abc", "abc"], "A", "B", model, VOCAB, sched, seeds=[5, 5], mode="sample")
    assert out[0] == out[1]


def test_errors():
    model, sched = small_model()
    x = torch.zeros(2, L, dtype=torch.long)
    with pytest.raises(ValueError, match="mode"):
        denoise(model, x, sched, [0, 1], VOCAB.K, mode="beam")
    with pytest.raises(ValueError, match="seed"):
        denoise(model, x, sched, [0], VOCAB.K)
    with pytest.raises(KeyError):
        translate("abc", "A", "Z", model, VOCAB, sched)
