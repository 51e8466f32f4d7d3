"""Parallel examples, synthetic cipher languages, JSONL IO and epoch assembly."""

from __future__ import annotations

import json
import logging
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_ALPHABET = string.ascii_lowercase[:12]
WORD_ORDERS = ("identity", "reverse")


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class ParallelExample:
    src_text: str
    tgt_text: str
    src_lang: str
    tgt_lang: str

    def __post_init__(self):
        if self.src_lang == self.tgt_lang:
            raise CorpusError(f"source and target language are both {self.src_lang!r}")

    def to_json(self) -> str:
        return json.dumps({"src": self.src_text, "tgt": self.tgt_text,
                           "src_lang": self.src_lang, "tgt_lang": self.tgt_lang},
                          ensure_ascii=False)


@dataclass(frozen=True)
class CipherLanguageSpec:
    """A surface language: a character bijection over the base alphabet plus a word-order rule."""

    lang: str
    alphabet: str
    permuted: str
    order: str = "identity"

    def __post_init__(self):
        if sorted(self.alphabet) != sorted(self.permuted) or len(set(self.alphabet)) != len(self.alphabet):
            raise CorpusError(f"cipher for {self.lang!r} is not a bijection of its alphabet")
        if self.order not in WORD_ORDERS:
            raise CorpusError(f"unknown word order {self.order!r}")

    @classmethod
    def random(cls, lang: str, seed: int, alphabet: str = DEFAULT_ALPHABET,
               order: str = "identity") -> "CipherLanguageSpec":
        rng = np.random.default_rng(seed)
        return cls(lang, alphabet, "".join(rng.permutation(list(alphabet))), order)

    @classmethod
    def related(cls, lang: str, seed: int, n_moved: int, alphabet: str = DEFAULT_ALPHABET,
                order: str = "identity") -> "CipherLanguageSpec":
        """A cipher that cyclically permutes ``n_moved`` randomly chosen letters and fixes the rest."""
        if not 0 <= n_moved <= len(alphabet) or n_moved == 1:
            raise CorpusError(f"cannot move {n_moved} of {len(alphabet)} letters")
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(alphabet), size=n_moved, replace=False)
        out = list(alphabet)
        for src, dst in zip(chosen, np.roll(chosen, 1)):
            out[dst] = alphabet[src]
        return cls(lang, alphabet, "".join(out), order)

    @classmethod
    def identity(cls, lang: str, alphabet: str = DEFAULT_ALPHABET) -> "CipherLanguageSpec":
        return cls(lang, alphabet, alphabet)

    def _words(self, words: list[str]) -> list[str]:
        return words[::-1] if self.order == "reverse" else words

    def apply(self, base: str) -> str:
        table = str.maketrans(self.alphabet, self.permuted)
        return " ".join(self._words(base.translate(table).split(" ")))

    def invert(self, surface: str) -> str:
        table = str.maketrans(self.permuted, self.alphabet)
        return " ".join(self._words(surface.translate(table).split(" ")))


def random_sentence(rng: np.random.Generator, alphabet: str, n_words: tuple[int, int],
                    word_len: tuple[int, int]) -> str:
    words = []
    for _ in range(rng.integers(n_words[0], n_words[1] + 1)):
        size = rng.integers(word_len[0], word_len[1] + 1)
        words.append("".join(alphabet[i] for i in rng.integers(0, len(alphabet), size)))
    return " ".join(words)


def gen_cipher_corpus(specs: Sequence[CipherLanguageSpec], pairs: Sequence[tuple[str, str]],
                      n_per_pair: int, sentence_len_range: tuple[int, int] = (1, 3),
                      seed: int = 0, word_len_range: tuple[int, int] = (2, 4)) -> list[ParallelExample]:
    """Emit ``n_per_pair`` base sentences per pair, each in both directions.

    Base sentences for pair ``i`` come from an RNG seeded with ``(seed, i)``,
    so the output depends only on the arguments.
    """
    by_lang = {s.lang: s for s in specs}
    if n_per_pair < 1:
        raise CorpusError("n_per_pair must be >= 1")
    for a, b in pairs:
        for lang in (a, b):
            if lang not in by_lang:
                raise CorpusError(f"pair ({a}, {b}) references unknown language {lang!r}")
    out = []
    for i, (a, b) in enumerate(pairs):
        rng = np.random.default_rng([seed, i])
        alphabet = by_lang[a].alphabet
        for _ in range(n_per_pair):
            base = random_sentence(rng, alphabet, sentence_len_range, word_len_range)
            sa, sb = by_lang[a].apply(base), by_lang[b].apply(base)
            out.append(ParallelExample(sa, sb, a, b))
            out.append(ParallelExample(sb, sa, b, a))
    return out


def write_jsonl(examples: Sequence[ParallelExample], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(ex.to_json() + "\n")


def load_parallel_file(path, src_lang: str | None = None,
                       tgt_lang: str | None = None) -> list[ParallelExample]:
    """Read JSONL records ``{"src", "tgt"[, "src_lang", "tgt_lang"]}``.

    Record-level language fields win over the arguments.  Malformed lines are
    logged with their line numbers and skipped; if every line is malformed a
    :class:`CorpusError` lists them all.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    examples, problems, n_lines = [], [], 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            n_lines += 1
            try:
                rec = json.loads(line)
                ex = ParallelExample(str(rec["src"]), str(rec["tgt"]),
                                     rec.get("src_lang", src_lang), rec.get("tgt_lang", tgt_lang))
                if not ex.src_text or not ex.tgt_text or ex.src_lang is None or ex.tgt_lang is None:
                    raise CorpusError("empty text or missing language")
            except (json.JSONDecodeError, KeyError, TypeError, AttributeError, CorpusError) as exc:
                problems.append(f"{path}:{lineno}: {type(exc).__name__}: {exc}")
                continue
            examples.append(ex)
    for msg in problems:
        log.warning("malformed line %s", msg)
    if n_lines == 0:
        log.warning("%s contains no examples", path)
    elif not examples:
        raise CorpusError("no valid lines:\n" + "\n".join(problems))
    return examples


def make_epoch(datasets: Sequence[Sequence[ParallelExample]], balance: bool, seed: int,
               epoch: int = 0) -> list[ParallelExample]:
    """One shuffled pass over the datasets.

    With ``balance``, every dataset is subsampled (afresh each epoch) to the
    size of the smallest non-empty one.
    """
    datasets = [list(d) for d in datasets if len(d)]
    if not datasets:
        raise CorpusError("all datasets are empty")
    rng = np.random.default_rng([seed, epoch])
    n_min = min(len(d) for d in datasets)
    stream = []
    for d in datasets:
        if balance and len(d) > n_min:
            keep = np.sort(rng.choice(len(d), size=n_min, replace=False))
            d = [d[i] for i in keep]
        stream.extend(d)
    return [stream[i] for i in rng.permutation(len(stream))]
