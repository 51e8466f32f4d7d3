"""Command-line entry point: ``diffnmt <subcommand>``.

Exit status is 0 on success, 1 when a check or validation fails and 2 for
usage errors.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import math
import sys
from pathlib import Path

from diffnmt import config as C

log = logging.getLogger("diffnmt")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = C.parse_value(value.strip())
    return out


def _pair(text: str) -> tuple[str, str]:
    parts = text.replace("-", ",").split(",")
    if len(parts) != 2 or not all(parts):
        raise argparse.ArgumentTypeError(f"expected a language pair like A-B, got {text!r}")
    return parts[0], parts[1]


def _load_cfg(args) -> dict:
    overrides = _overrides(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return C.load_config(args.config, getattr(args, "preset", None), overrides)


def _json_safe(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


def cmd_gen_data(args) -> int:
    from diffnmt.corpus import write_jsonl
    from diffnmt.pipeline import make_languages, make_splits

    cfg = C.load_config(None, None, {
        "seed": args.seed, "data.langs": args.langs, "data.pairs": [list(p) for p in args.pairs],
        "data.zero_shot_pairs": [list(p) for p in args.zero_shot_pair],
        "data.ciphers": args.ciphers, "data.n_train_per_pair": args.n,
        "data.n_eval_per_pair": args.n_eval, "data.n_dev_per_pair": args.n_dev})
    specs = make_languages(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split, groups in make_splits(cfg, specs).items():
        write_jsonl([e for g in groups for e in g], out / f"{split}.jsonl")
    (out / "languages.json").write_text(json.dumps([s.__dict__ for s in specs], indent=2) + "\n",
                                        encoding="utf-8")
    print(f"wrote {', '.join(sorted(p.name for p in out.glob('*.jsonl')))} to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from diffnmt.corpus import load_parallel_file
    from diffnmt.model import ModelConfig
    from diffnmt.schedule import build_schedule
    from diffnmt.tokenizer import build_vocab
    from diffnmt.trainer import TrainConfig, train

    cfg = _load_cfg(args)
    seed = C.get(cfg, "seed")
    examples = [e for path in args.data for e in load_parallel_file(path)]
    if not examples:
        raise UsageError("no training examples")
    # one dataset per unordered language pair, so balancing treats pairs equally
    groups: dict[frozenset, list] = {}
    for e in examples:
        groups.setdefault(frozenset((e.src_lang, e.tgt_lang)), []).append(e)
    langs = sorted({lang for e in examples for lang in (e.src_lang, e.tgt_lang)})
    vocab = build_vocab((s for e in examples for s in (e.src_text, e.tgt_text)),
                        C.get(cfg, "tokenizer.mode"), C.get(cfg, "tokenizer.max_K"), langs)
    sched = build_schedule(C.get(cfg, "schedule.kind"), C.get(cfg, "schedule.T"))
    mcfg = ModelConfig(K=vocab.K, L=C.get(cfg, "data.L"), T=sched.T, pad_id=vocab.pad_id, **C.get(cfg, "model"))
    t = C.get(cfg, "train")
    tcfg = TrainConfig(lr=t["lr"], gamma=t["gamma"], batch_size=t["batch_size"], epochs=t["epochs"],
                       seed=seed, clip_norm=t["clip_norm"], max_steps=t["max_steps"], log_every=t["log_every"])
    result = train(mcfg, tcfg, sched, vocab, list(groups.values()), args.out, resume=args.resume)
    print(json.dumps({"steps": result.state.step, "epoch": result.state.epoch,
                      "last_loss": result.losses[-1] if result.losses else None,
                      "checkpoint": str(Path(args.out) / "model.cdmt")}))
    return EXIT_OK


def _read_inputs(path) -> list[str]:
    fh = sys.stdin if path in (None, "-") else open(path, encoding="utf-8")
    with fh:
        lines = [line.rstrip("\n") for line in fh]
    texts = []
    for line in lines:
        if line.lstrip().startswith("{"):
            line = json.loads(line)["src"]
        texts.append(line)
    return texts


def cmd_translate(args) -> int:
    from diffnmt.sampler import translate_batch
    from diffnmt.trainer import load_model

    model, vocab, sched, _ = load_model(args.ckpt)
    for lang in (args.src_lang, args.tgt_lang):
        if lang not in vocab.languages:
            raise UsageError(f"language {lang!r} not in checkpoint vocabulary {list(vocab.languages)}")
    texts = _read_inputs(args.input)
    outs = translate_batch(texts, args.src_lang, args.tgt_lang, model, vocab, sched,
                           seed=args.seed, mode=args.mode, batch_size=args.batch_size)
    sink = contextlib.nullcontext(sys.stdout) if args.out is None else open(args.out, "w", encoding="utf-8")
    with sink as fh:
        for src, (hyp, _) in zip(texts, outs):
            fh.write(json.dumps({"src": src, "hyp": hyp, "src_lang": args.src_lang,
                                   "tgt_lang": args.tgt_lang}, ensure_ascii=False) + "\n")
    return EXIT_OK


def _read_column(path, keys) -> list[str]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.lstrip().startswith("{"):
                rec = json.loads(line)
                key = next((k for k in keys if k in rec), None)
                if key is None:
                    raise UsageError(f"{path}: record has none of {keys}")
                out.append(rec[key])
            else:
                out.append(line)
    return out


def cmd_evaluate(args) -> int:
    from diffnmt.metrics import evaluate

    hyps = _read_column(args.hyp, ("hyp",))
    refs = _read_column(args.ref, ("ref", "tgt"))
    if len(hyps) != len(refs):
        print(f"error: {len(hyps)} hypotheses but {len(refs)} references", file=sys.stderr)
        return EXIT_FAIL
    report = evaluate(hyps, refs, args.metrics, per_sentence=args.per_sentence)
    print(json.dumps(_json_safe(report.to_dict()), indent=2))
    return EXIT_OK


def cmd_verify(args) -> int:
    from diffnmt.verify import format_table, run_checks

    outcomes = run_checks(args.filter)
    if not outcomes:
        print(f"no checks match {args.filter!r}", file=sys.stderr)
        return EXIT_USAGE
    print(format_table(outcomes))
    return EXIT_OK if all(o.ok for o in outcomes) else EXIT_FAIL


def cmd_pipeline(args) -> int:
    from diffnmt.pipeline import run_pipeline

    cfg = _load_cfg(args)
    report = run_pipeline(cfg, args.out)
    for section in ("supervised", "zero_shot"):
        for row in report[section]:
            extra = f"  random-init chrF {row['random_init']['chrf']:.2f}" if "random_init" in row else ""
            print(f"{section:<10} {row['direction']:<8} BLEU {row['corpus_bleu']:6.2f}  "
                  f"TER {row['ter']:6.2f}  chrF {row['chrf']:6.2f}{extra}")
    print(f"report: {Path(args.out) / 'report.json'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    from diffnmt.metrics import METRICS
    from diffnmt.sampler import MODES

    p = argparse.ArgumentParser(prog="diffnmt", description="Conditional multinomial diffusion for translation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write synthetic cipher-language splits as JSONL")
    g.add_argument("--langs", nargs="+", required=True)
    g.add_argument("--pairs", nargs="+", type=_pair, required=True, help="trained pairs, e.g. A-B A-C")
    g.add_argument("--zero-shot-pair", nargs="*", type=_pair, default=[])
    g.add_argument("--ciphers", choices=("identity", "random", "related"), default="random")
    g.add_argument("--n", type=int, default=5000, help="training sentences per pair")
    g.add_argument("--n-eval", type=int, default=100)
    g.add_argument("--n-dev", type=int, default=25)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="train a denoiser on JSONL parallel data")
    t.add_argument("--config")
    t.add_argument("--preset", choices=sorted(C.PRESETS))
    t.add_argument("--data", nargs="+", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", action="store_true")
    t.add_argument("--seed", type=int)
    t.add_argument("--set", action="append", metavar="KEY=VALUE")
    t.set_defaults(fn=cmd_train)

    tr = sub.add_parser("translate", help="translate lines (text or JSONL with 'src') to JSONL")
    tr.add_argument("--ckpt", required=True)
    tr.add_argument("--src-lang", required=True)
    tr.add_argument("--tgt-lang", required=True)
    tr.add_argument("--input", help="input file; stdin if omitted or '-'")
    tr.add_argument("--out", help="output file; stdout if omitted")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--mode", choices=MODES, default="argmax_final")
    tr.add_argument("--batch-size", type=int, default=256)
    tr.set_defaults(fn=cmd_translate)

    e = sub.add_parser("evaluate", help="score hypotheses against references")
    e.add_argument("--hyp", required=True)
    e.add_argument("--ref", required=True)
    e.add_argument("--metrics", nargs="+", choices=METRICS, default=list(METRICS))
    e.add_argument("--per-sentence", action="store_true")
    e.add_argument("--seed", type=int, help="accepted for uniformity; scoring is deterministic")
    e.set_defaults(fn=cmd_evaluate)

    v = sub.add_parser("verify", help="run the oracle suite")
    v.add_argument("--filter", help="run only checks whose name contains this text")
    v.add_argument("--seed", type=int, help="accepted for uniformity; checks use fixed seeds")
    v.set_defaults(fn=cmd_verify)

    pl = sub.add_parser("pipeline", help="gen-data, train, translate and evaluate in one run")
    pl.add_argument("--config")
    pl.add_argument("--preset", choices=sorted(C.PRESETS))
    pl.add_argument("--out", required=True)
    pl.add_argument("--seed", type=int)
    pl.add_argument("--set", action="append", metavar="KEY=VALUE")
    pl.set_defaults(fn=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (UsageError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (C.ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
