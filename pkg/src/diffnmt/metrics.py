"""Corpus/sentence BLEU, TER and chrF on whitespace-tokenised text.

Scores are on the 0-100 scale.  BLEU orders for which the hypothesis has no
n-grams at all are dropped from the geometric mean (effective order), so a
two-word exact match scores 100.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

MAX_ORDER = 4


def _words(text: str) -> list[str]:
    return text.split()


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _check_pairs(hyps, refs):
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise ValueError("empty corpus")


def bleu_stats(hyp: str, ref: str, max_order: int = MAX_ORDER):
    h, r = _words(hyp), _words(ref)
    matches, totals = [], []
    for n in range(1, max_order + 1):
        hc, rc = _ngrams(h, n), _ngrams(r, n)
        matches.append(sum(min(c, rc[g]) for g, c in hc.items()))
        totals.append(max(len(h) - n + 1, 0))
    return len(h), len(r), matches, totals


def _bleu_from_stats(hyp_len, ref_len, matches, totals, smooth: str) -> float:
    if hyp_len == 0:
        return 0.0
    log_prec, zero_run = [], 1.0
    for m, tot in zip(matches, totals):
        if tot == 0:
            break
        if m == 0:
            if smooth != "exp":
                return 0.0
            zero_run *= 2.0
            log_prec.append(math.log(1.0 / (zero_run * tot)))
        else:
            log_prec.append(math.log(m / tot))
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(sum(log_prec) / len(log_prec))


def corpus_bleu(hyps: Sequence[str], refs: Sequence[str], max_order: int = MAX_ORDER) -> float:
    """Unsmoothed corpus BLEU: pooled clipped n-gram counts and a corpus brevity penalty."""
    _check_pairs(hyps, refs)
    hl = rl = 0
    matches, totals = [0] * max_order, [0] * max_order
    for h, r in zip(hyps, refs):
        a, b, m, t = bleu_stats(h, r, max_order)
        hl, rl = hl + a, rl + b
        matches = [x + y for x, y in zip(matches, m)]
        totals = [x + y for x, y in zip(totals, t)]
    return _bleu_from_stats(hl, rl, matches, totals, smooth="none")


def sentence_bleu(hyp: str, ref: str, smoothing: str = "exp", max_order: int = MAX_ORDER) -> float:
    """Sentence BLEU; ``exp`` smoothing replaces the k-th zero precision by 1 / (2^k * total)."""
    if not ref.strip():
        raise ValueError("empty reference")
    return _bleu_from_stats(*bleu_stats(hyp, ref, max_order), smooth=smoothing)


# --- TER -------------------------------------------------------------------

MAX_SHIFT_SIZE = 10


def _edit_distance(a, b) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def _best_shift(hyp: list, ref: list, current: int):
    """Return (distance, shifted hyp) for the single block move that lowers the distance most."""
    best = (current, None)
    ref_spans = {tuple(ref[i:i + n]) for n in range(1, MAX_SHIFT_SIZE + 1) for i in range(len(ref) - n + 1)}
    for n in range(1, min(MAX_SHIFT_SIZE, len(hyp)) + 1):
        for i in range(len(hyp) - n + 1):
            block = hyp[i:i + n]
            if tuple(block) not in ref_spans:
                continue
            rest = hyp[:i] + hyp[i + n:]
            for j in range(len(rest) + 1):
                if j == i:
                    continue
                cand = rest[:j] + block + rest[j:]
                d = _edit_distance(cand, ref)
                if d < best[0]:
                    best = (d, cand)
    return best


def ter_stats(hyp: str, ref: str) -> tuple[int, int]:
    """(number of edits, reference length) with greedy block shifts."""
    h, r = _words(hyp), _words(ref)
    if not r:
        raise ValueError("empty reference")
    dist, shifts = _edit_distance(h, r), 0
    while True:
        d, cand = _best_shift(h, r, dist)
        # a shift costs one edit, so it must save at least two
        if cand is None or d + 1 >= dist:
            break
        h, dist, shifts = cand, d, shifts + 1
    return dist + shifts, len(r)


def ter(hyp: str, ref: str) -> float:
    edits, n = ter_stats(hyp, ref)
    return 100.0 * edits / n


def corpus_ter(hyps: Sequence[str], refs: Sequence[str]) -> float:
    _check_pairs(hyps, refs)
    edits = length = 0
    for h, r in zip(hyps, refs):
        e, n = ter_stats(h, r)
        edits, length = edits + e, length + n
    return 100.0 * edits / length


# --- chrF ------------------------------------------------------------------

def chrf_stats(hyp: str, ref: str, max_n: int = 6):
    h, r = "".join(hyp.split()), "".join(ref.split())
    stats = []
    for n in range(1, max_n + 1):
        hc = Counter(h[i:i + n] for i in range(len(h) - n + 1))
        rc = Counter(r[i:i + n] for i in range(len(r) - n + 1))
        stats.append((sum(hc.values()), sum(rc.values()), sum(min(c, rc[g]) for g, c in hc.items())))
    return stats


def _chrf_from_stats(stats, beta: float) -> float:
    b2 = beta * beta
    scores = []
    for n_hyp, n_ref, n_match in stats:
        if n_hyp == 0 or n_ref == 0:
            continue
        if n_match == 0:
            scores.append(0.0)
            continue
        p, r = n_match / n_hyp, n_match / n_ref
        scores.append((1 + b2) * p * r / (b2 * p + r))
    return 100.0 * sum(scores) / len(scores) if scores else 0.0


def chrf(hyp: str, ref: str, max_n: int = 6, beta: float = 2.0) -> float:
    """Character n-gram F_beta averaged over the orders present in both strings; spaces ignored."""
    if not ref.strip():
        raise ValueError("empty reference")
    return _chrf_from_stats(chrf_stats(hyp, ref, max_n), beta)


def corpus_chrf(hyps: Sequence[str], refs: Sequence[str], max_n: int = 6, beta: float = 2.0) -> float:
    _check_pairs(hyps, refs)
    total = [(0, 0, 0)] * max_n
    for h, r in zip(hyps, refs):
        total = [tuple(a + b for a, b in zip(x, y)) for x, y in zip(total, chrf_stats(h, r, max_n))]
    return _chrf_from_stats(total, beta)


@dataclass
class EvalReport:
    corpus_bleu: float
    ter: float
    chrf: float
    n_sentences: int
    sentence_bleu: list[float] | None = field(default=None)

    def to_dict(self) -> dict:
        return asdict(self)


METRICS = ("bleu", "ter", "chrf")


def evaluate(hyps: Sequence[str], refs: Sequence[str], metrics: Sequence[str] = METRICS,
             per_sentence: bool = False) -> EvalReport:
    _check_pairs(hyps, refs)
    unknown = set(metrics) - set(METRICS)
    if unknown:
        raise ValueError(f"unknown metrics {sorted(unknown)}")
    nan = float("nan")
    return EvalReport(
        corpus_bleu=corpus_bleu(hyps, refs) if "bleu" in metrics else nan,
        ter=corpus_ter(hyps, refs) if "ter" in metrics else nan,
        chrf=corpus_chrf(hyps, refs) if "chrf" in metrics else nan,
        n_sentences=len(hyps),
        sentence_bleu=[sentence_bleu(h, r) for h, r in zip(hyps, refs)] if per_sentence else None,
    )
