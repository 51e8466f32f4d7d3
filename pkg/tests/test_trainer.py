import json

import numpy as np
import pytest
import torch

from diffnmt import checkpoint
from diffnmt.corpus import CipherLanguageSpec, gen_cipher_corpus
from diffnmt.model import Denoiser, ModelConfig
from diffnmt.schedule import build_schedule
from diffnmt.tokenizer import build_vocab
from diffnmt.trainer import (FINAL, LATEST, TrainConfig, encode_examples, load_model, make_optimizer,
                             state_tensors, step_seed, train, train_step)

SPECS = [CipherLanguageSpec.identity("A"), CipherLanguageSpec.identity("B")]
DATA = [gen_cipher_corpus(SPECS, [("A", "B")], 24, seed=0)]
VOCAB = build_vocab([e.src_text for e in DATA[0]], "char", 32, ["A", "B"])
SCHED = build_schedule("cosine", 10)
MCFG = ModelConfig(K=VOCAB.K, L=10, T=10, n_layers=1, n_heads=2, d_model=16, d_ff=32)


def tcfg(**kw):
    base = dict(lr=1e-3, gamma=1.0, batch_size=8, epochs=2, seed=0, log_every=1)
    base.update(kw)
    return TrainConfig(**base)


def batch():
    x, y = encode_examples(DATA[0][:8], VOCAB, MCFG.L)
    return x, y


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=-1)
    with pytest.raises(ValueError):
        TrainConfig(gamma=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_zero_lr_leaves_params():
    model = Denoiser(MCFG, seed=0)
    before = {n: p.detach().clone() for n, p in model.named_parameters()}
    opt = make_optimizer(model, tcfg(lr=0.0))
    x, y = batch()
    loss, _ = train_step(model, opt, x, y, SCHED, seed=0, step=0)
    assert np.isfinite(loss) and loss > 0
    assert all(torch.equal(before[n], p) for n, p in model.named_parameters())


def test_step_deterministic():
    x, y = batch()
    outs = []
    for _ in range(2):
        model = Denoiser(MCFG, seed=0)
        opt = make_optimizer(model, tcfg())
        loss, t = train_step(model, opt, x, y, SCHED, seed=5, step=3)
        outs.append((loss, t, [p.detach().clone() for p in model.parameters()]))
    assert outs[0][0] == outs[1][0] and torch.equal(outs[0][1], outs[1][1])
    assert all(torch.equal(a, b) for a, b in zip(outs[0][2], outs[1][2]))


def test_t_sampling_uniform():
    # the draws train_step makes over 10^4 desk-sized steps
    T, steps, batch = 100, 10_000, 64
    counts = np.zeros(T)
    for step in range(steps):
        g = torch.Generator().manual_seed(step_seed(0, step))
        counts += np.bincount(torch.randint(1, T + 1, (batch,), generator=g).numpy() - 1, minlength=T)
    expected = steps * batch / T
    assert np.abs(counts / expected - 1).max() < 0.05
    chi2 = ((counts - expected) ** 2 / expected).sum()
    assert chi2 < 148.2  # 99.9th percentile, 99 degrees of freedom


def test_epochs_zero_writes_initial_checkpoint(tmp_path):
    res = train(MCFG, tcfg(epochs=0), SCHED, VOCAB, DATA, tmp_path)
    assert res.state.step == 0 and res.losses == []
    _, meta, tensors = checkpoint.load(tmp_path / LATEST)
    init = Denoiser(MCFG, seed=0)
    assert all(torch.equal(tensors[n], p.detach()) for n, p in init.named_parameters())
    assert meta["train_state"]["step"] == 0


def test_lr_decays_per_epoch(tmp_path):
    train(MCFG, tcfg(lr=5e-4, gamma=0.9, epochs=3, batch_size=48), SCHED, VOCAB, DATA, tmp_path)
    recs = [json.loads(line) for line in (tmp_path / "train_log.jsonl").read_text().splitlines()]
    assert [r["lr"] for r in recs] == pytest.approx([5e-4, 4.5e-4, 4.05e-4], rel=1e-12)
    assert set(recs[0]) == {"step", "epoch", "loss", "lr", "t_mean"}
    assert (tmp_path / "epoch0003.cdmt").exists() and (tmp_path / FINAL).exists()


def test_old_epoch_checkpoints_pruned(tmp_path):
    train(MCFG, tcfg(epochs=5, batch_size=48, keep_checkpoints=2), SCHED, VOCAB, DATA, tmp_path)
    assert sorted(f.name for f in tmp_path.glob("epoch*.cdmt")) == ["epoch0004.cdmt", "epoch0005.cdmt"]


def test_trajectory_reproducible(tmp_path):
    a = train(MCFG, tcfg(), SCHED, VOCAB, DATA, tmp_path / "a").losses
    b = train(MCFG, tcfg(), SCHED, VOCAB, DATA, tmp_path / "b").losses
    assert a == b and len(a) == 12
    assert (tmp_path / "a" / FINAL).read_bytes() == (tmp_path / "b" / FINAL).read_bytes()


def test_resume_continues_exactly(tmp_path):
    full = train(MCFG, tcfg(epochs=3, batch_size=16), SCHED, VOCAB, DATA, tmp_path / "full")
    part = train(MCFG, tcfg(epochs=3, batch_size=16, max_steps=4), SCHED, VOCAB, DATA, tmp_path / "part")
    assert part.state.step == 4 and part.state.batch_in_epoch == 1
    rest = train(MCFG, tcfg(epochs=3, batch_size=16), SCHED, VOCAB, DATA, tmp_path / "part", resume=True)
    assert part.losses + rest.losses == full.losses
    assert (tmp_path / "full" / FINAL).read_bytes() == (tmp_path / "part" / FINAL).read_bytes()


def test_resume_rejects_other_config(tmp_path):
    train(MCFG, tcfg(max_steps=1), SCHED, VOCAB, DATA, tmp_path)
    other = ModelConfig(**{**MCFG.to_dict(), "d_ff": 64})
    with pytest.raises(ValueError, match="differs"):
        train(other, tcfg(), SCHED, VOCAB, DATA, tmp_path, resume=True)


def test_callback_stops_and_sees_snapshot(tmp_path):
    seen = []

    def cb(step, model):
        seen.append(step)
        with torch.no_grad():
            next(model.parameters()).zero_()  # must not leak into the trained model
        return step >= 4

    res = train(MCFG, tcfg(epochs=10), SCHED, VOCAB, DATA, tmp_path, callback=cb, eval_every=2)
    assert seen == [2, 4] and res.stopped_early and res.state.step == 4
    assert next(res.model.parameters()).abs().sum() > 0


def test_checkpoint_round_trip_byte_identical(tmp_path):
    train(MCFG, tcfg(max_steps=3), SCHED, VOCAB, DATA, tmp_path)
    raw = (tmp_path / LATEST).read_bytes()
    cfg, meta, tensors = checkpoint.loads(raw)
    assert checkpoint.dumps(cfg, tensors, meta) == raw
    assert any(k.startswith("adam.exp_avg/") for k in tensors)


def test_load_model_for_inference(tmp_path):
    res = train(MCFG, tcfg(max_steps=3), SCHED, VOCAB, DATA, tmp_path)
    model, vocab, sched, _ = load_model(tmp_path / FINAL)
    assert vocab == VOCAB and sched.T == SCHED.T and model.cfg == MCFG
    x, y = batch()
    assert torch.equal(model(y, x, 3), res.model(y, x, 3))


def test_checkpoint_errors(tmp_path):
    model = Denoiser(MCFG)
    opt = make_optimizer(model, tcfg())
    raw = checkpoint.dumps(MCFG.to_dict(), state_tensors(model, opt))
    with pytest.raises(checkpoint.CheckpointError, match="magic"):
        checkpoint.loads(b"XXXX" + raw[4:])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.loads(raw[:-3])
    with pytest.raises(checkpoint.CheckpointError, match="version"):
        checkpoint.loads(raw[:4] + b"\x09\x00\x00\x00" + raw[8:])
    _, _, tensors = checkpoint.loads(raw)
    tensors["out.weight"] = torch.zeros(3, 3)
    with pytest.raises(checkpoint.CheckpointError, match="out.weight"):
        checkpoint.load_params_into(Denoiser(MCFG), tensors)
    del tensors["out.bias"]
    with pytest.raises(checkpoint.CheckpointError, match="lacks"):
        checkpoint.load_params_into(Denoiser(MCFG), tensors)


@pytest.mark.slow
def test_copy_task_loss_halves(tmp_path):
    specs = [CipherLanguageSpec.identity("A"), CipherLanguageSpec.identity("B")]
    data = [gen_cipher_corpus(specs, [("A", "B")], 2000, seed=0)]
    vocab = build_vocab([e.src_text for e in data[0]], "char", 32, ["A", "B"])
    sched = build_schedule("cosine", 100)
    mcfg = ModelConfig(K=vocab.K, L=16, T=100)
    res = train(mcfg, TrainConfig(lr=1e-3, gamma=1.0, batch_size=64, epochs=100, max_steps=200),
                sched, vocab, data, tmp_path)
    first, last = np.mean(res.losses[:10]), np.mean(res.losses[-10:])
    assert last <= 0.5 * first, (first, last)
