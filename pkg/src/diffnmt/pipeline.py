"""End-to-end miniature: generate cipher data, train, translate, evaluate.

The report lists supervised directions first and zero-shot directions after,
one row per ordered language pair.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import torch

from diffnmt import config as C
from diffnmt.corpus import CipherLanguageSpec, ParallelExample, gen_cipher_corpus, write_jsonl
from diffnmt.metrics import evaluate
from diffnmt.model import Denoiser, ModelConfig
from diffnmt.sampler import translate_batch
from diffnmt.schedule import build_schedule
from diffnmt.tokenizer import build_vocab, encode
from diffnmt.trainer import TrainConfig, train

log = logging.getLogger(__name__)

# offsets keep the train/dev/test/zero-shot base sentences on separate RNG streams
SPLIT_SEEDS = {"train": 0, "dev": 1, "test": 2, "zero_shot": 3}


def make_languages(cfg: dict) -> list[CipherLanguageSpec]:
    langs = C.get(cfg, "data.langs")
    kind = C.get(cfg, "data.ciphers")
    alphabet = C.get(cfg, "data.alphabet")
    orders = C.get(cfg, "data.word_order", {})
    seed = C.get(cfg, "seed")
    specs = []
    for i, lang in enumerate(langs):
        order = orders.get(lang, "identity")
        if kind == "identity":
            spec = CipherLanguageSpec(lang, alphabet, alphabet, order)
        elif kind == "random":
            spec = CipherLanguageSpec.random(lang, seed=seed * 1000 + i, alphabet=alphabet, order=order)
        elif kind == "related":
            spec = CipherLanguageSpec.related(lang, seed=seed * 1000 + i, n_moved=C.get(cfg, "data.n_moved"),
                                              alphabet=alphabet, order=order)
        else:
            raise C.ConfigError(f"data.ciphers must be identity, random or related, got {kind!r}")
        specs.append(spec)
    return specs


def make_splits(cfg: dict, specs) -> dict[str, list[list[ParallelExample]]]:
    """Per split, one example list per unordered language pair (both directions inside)."""
    seed = C.get(cfg, "seed")
    kw = dict(sentence_len_range=tuple(C.get(cfg, "data.sentence_words")),
              word_len_range=tuple(C.get(cfg, "data.word_len")))
    pairs = [tuple(p) for p in C.get(cfg, "data.pairs")]
    zs_pairs = [tuple(p) for p in C.get(cfg, "data.zero_shot_pairs", [])]
    sizes = {"train": C.get(cfg, "data.n_train_per_pair"), "dev": C.get(cfg, "data.n_dev_per_pair"),
             "test": C.get(cfg, "data.n_eval_per_pair"), "zero_shot": C.get(cfg, "data.n_eval_per_pair")}
    splits = {}
    for split, offset in SPLIT_SEEDS.items():
        todo = zs_pairs if split == "zero_shot" else pairs
        splits[split] = [gen_cipher_corpus(specs, [p], sizes[split], seed=seed * 100 + offset * 10_000 + i, **kw)
                         for i, p in enumerate(todo)]
    return splits


def directions(examples):
    seen = []
    for e in examples:
        key = (e.src_lang, e.tgt_lang)
        if key not in seen:
            seen.append(key)
    return seen


def score_direction(model, vocab, sched, examples, src, tgt, cfg: dict, with_baseline=None) -> dict:
    ex = [e for e in examples if (e.src_lang, e.tgt_lang) == (src, tgt)]
    L = model.cfg.L
    seed = C.get(cfg, "seed")
    mode = C.get(cfg, "translate.mode")
    bs = C.get(cfg, "translate.batch_size")
    outs = translate_batch([e.src_text for e in ex], src, tgt, model, vocab, sched, seed, mode, bs)
    hyps = [o[0] for o in outs]
    refs = [e.tgt_text for e in ex]
    report = evaluate(hyps, refs, C.get(cfg, "eval.metrics"))
    gold = [encode(e.tgt_text, src, tgt, vocab, L, "target") for e in ex]
    correct = sum(a == b for o, g in zip(outs, gold) for a, b in zip(o[1], g))
    row = {"direction": f"{src}->{tgt}", **report.to_dict(), "token_accuracy": correct / (L * len(ex))}
    row.pop("sentence_bleu")
    if with_baseline is not None:
        base = translate_batch([e.src_text for e in ex], src, tgt, with_baseline, vocab, sched, seed, mode, bs)
        row["random_init"] = evaluate([o[0] for o in base], refs, C.get(cfg, "eval.metrics")).to_dict()
        row["random_init"].pop("sentence_bleu")
    return row, hyps


def run_pipeline(cfg: dict, out_dir) -> dict:
    """Run every stage, leaving data, checkpoints, hypotheses and report.json in ``out_dir``."""
    C.require(cfg)
    out = Path(out_dir)
    (out / "data").mkdir(parents=True, exist_ok=True)
    (out / "hyps").mkdir(exist_ok=True)
    C.dump(cfg, out / "config.json")
    seed = C.get(cfg, "seed")
    torch.manual_seed(seed)

    specs = make_languages(cfg)
    (out / "data" / "languages.json").write_text(
        json.dumps([s.__dict__ for s in specs], indent=2) + "\n", encoding="utf-8")
    splits = make_splits(cfg, specs)
    for split, groups in splits.items():
        write_jsonl([e for g in groups for e in g], out / "data" / f"{split}.jsonl")

    train_sets = splits["train"]
    vocab = build_vocab((text for g in train_sets for e in g for text in (e.src_text, e.tgt_text)),
                        C.get(cfg, "tokenizer.mode"), C.get(cfg, "tokenizer.max_K"), C.get(cfg, "data.langs"))
    sched = build_schedule(C.get(cfg, "schedule.kind"), C.get(cfg, "schedule.T"))
    mcfg = ModelConfig(K=vocab.K, L=C.get(cfg, "data.L"), T=sched.T, pad_id=vocab.pad_id,
                       **C.get(cfg, "model"))
    t = C.get(cfg, "train")
    tcfg = TrainConfig(lr=t["lr"], gamma=t["gamma"], batch_size=t["batch_size"], epochs=t["epochs"],
                       seed=seed, clip_norm=t["clip_norm"], max_steps=t["max_steps"], log_every=t["log_every"])

    dev = [e for g in splits["dev"] for e in g]
    dev_log = open(out / "dev_log.jsonl", "w", encoding="utf-8")

    def on_eval(step, model):
        rows = [score_direction(model, vocab, sched, dev, s, d, cfg)[0] for s, d in directions(dev)]
        rec = {"step": step, "chrf_min": min(r["chrf"] for r in rows),
               "token_accuracy_min": min(r["token_accuracy"] for r in rows)}
        dev_log.write(json.dumps(rec) + "\n")
        dev_log.flush()
        log.info("dev %s", rec)
        checks = [(t.get("stop_chrf"), rec["chrf_min"]), (t.get("stop_token_acc"), rec["token_accuracy_min"])]
        active = [(thr, val) for thr, val in checks if thr is not None]
        return bool(active) and all(val >= thr for thr, val in active)

    try:
        result = train(mcfg, tcfg, sched, vocab, train_sets, out / "ckpt",
                       callback=on_eval, eval_every=t.get("eval_every") or 0)
    finally:
        dev_log.close()
    model = result.model.eval()
    baseline = Denoiser(mcfg, seed=seed).eval() if C.get(cfg, "eval.random_baseline") else None

    report = {"config": {"seed": seed, "langs": C.get(cfg, "data.langs")},
              "train": {"steps": result.state.step, "stopped_early": result.stopped_early,
                        "first_loss": result.losses[0] if result.losses else None,
                        "last_loss": result.losses[-1] if result.losses else None},
              "supervised": [], "zero_shot": []}
    for split, key in (("test", "supervised"), ("zero_shot", "zero_shot")):
        examples = [e for g in splits[split] for e in g]
        for src, tgt in directions(examples):
            row, hyps = score_direction(model, vocab, sched, examples, src, tgt, cfg,
                                        with_baseline=baseline if key == "zero_shot" else None)
            report[key].append(row)
            with open(out / "hyps" / f"{split}.{src}-{tgt}.jsonl", "w", encoding="utf-8") as fh:
                for e, h in zip([e for e in examples if (e.src_lang, e.tgt_lang) == (src, tgt)], hyps):
                    fh.write(json.dumps({"src": e.src_text, "hyp": h, "src_lang": src, "tgt_lang": tgt}) + "\n")
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report
