"""Character/word vocabularies with [PAD], [UNK] and language tokens."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

PAD = "[PAD]"
UNK = "[UNK]"
VOCAB_MAGIC = "#diffnmt-vocab"
VOCAB_VERSION = 1
MODES = ("char", "word")


def lang_token(lang: str) -> str:
    return f"<{lang}>"


def split_tokens(text: str, mode: str) -> list[str]:
    if mode == "char":
        return list(text)
    if mode == "word":
        return text.split()
    raise ValueError(f"unknown tokenizer mode {mode!r}")


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    languages: tuple[str, ...]
    mode: str = "char"
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be distinct")
        expected = (PAD, UNK, *map(lang_token, self.languages))
        if self.tokens[:len(expected)] != expected:
            raise ValueError("vocabulary must start with [PAD], [UNK] and the language tokens")
        object.__setattr__(self, "index", {tok: i for i, tok in enumerate(self.tokens)})

    @property
    def K(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def n_specials(self) -> int:
        return 2 + len(self.languages)

    def lang_id(self, lang: str) -> int:
        try:
            return self.index[lang_token(lang)]
        except KeyError:
            raise KeyError(f"unknown language tag {lang!r}") from None

    def is_special(self, idx: int) -> bool:
        return idx < self.n_specials

    def to_text(self) -> str:
        header = [f"{VOCAB_MAGIC} v{VOCAB_VERSION}",
                  f"mode={self.mode}",
                  "languages=" + json.dumps(list(self.languages)),
                  "specials=" + json.dumps(list(self.tokens[:self.n_specials]))]
        body = [json.dumps(tok, ensure_ascii=False) for tok in self.tokens[self.n_specials:]]
        return "\n".join(header + ["---"] + body) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        # only "\n" separates records; json.dumps leaves other line breaks such as U+0085 raw
        lines = text.rstrip("\n").split("\n")
        if not lines or lines[0] != f"{VOCAB_MAGIC} v{VOCAB_VERSION}":
            raise ValueError("not a diffnmt vocabulary file (bad header)")
        sep = lines.index("---")
        meta = dict(line.split("=", 1) for line in lines[1:sep])
        languages = tuple(json.loads(meta["languages"]))
        specials = tuple(json.loads(meta["specials"]))
        tokens = specials + tuple(json.loads(line) for line in lines[sep + 1:])
        return cls(tokens=tokens, languages=languages, mode=meta["mode"])

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def build_vocab(corpus: Iterable[str], mode: str = "char", max_K: int = 64,
                languages: Sequence[str] = ()) -> Vocabulary:
    """Keep the most frequent tokens (ties broken lexicographically) up to ``max_K`` ids."""
    if mode not in MODES:
        raise ValueError(f"unknown tokenizer mode {mode!r}")
    n_specials = 2 + len(languages)
    if max_K < n_specials + 2:
        raise ValueError(f"max_K={max_K} cannot hold {n_specials} specials and 2 content tokens")
    counts: Counter = Counter()
    n_lines = 0
    for line in corpus:
        n_lines += 1
        counts.update(split_tokens(line, mode))
    if n_lines == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    reserved = {PAD, UNK, *map(lang_token, languages)}
    ranked = sorted((tok for tok in counts if tok not in reserved), key=lambda tok: (-counts[tok], tok))
    specials = (PAD, UNK, *map(lang_token, languages))
    return Vocabulary(tokens=specials + tuple(ranked[:max_K - n_specials]),
                      languages=tuple(languages), mode=mode)


def encode(text: str, src_lang: str, tgt_lang: str, vocab: Vocabulary, L: int,
           side: str = "source") -> list[int]:
    """Encode to exactly ``L`` ids.

    The source side is prefixed with the source and target language tokens;
    the target side carries content only.
    """
    if side == "source":
        prefix = [vocab.lang_id(src_lang), vocab.lang_id(tgt_lang)]
    elif side == "target":
        vocab.lang_id(src_lang), vocab.lang_id(tgt_lang)
        prefix = []
    else:
        raise ValueError(f"side must be 'source' or 'target', got {side!r}")
    ids = prefix + [vocab.index.get(tok, vocab.unk_id) for tok in split_tokens(text, vocab.mode)]
    ids = ids[:L]
    return ids + [vocab.pad_id] * (L - len(ids))


def decode(ids: Iterable[int], vocab: Vocabulary) -> str:
    """Join non-special tokens; pads and language tokens are skipped wherever they occur."""
    toks = [vocab.tokens[int(i)] for i in ids if not vocab.is_special(int(i))]
    return ("" if vocab.mode == "char" else " ").join(toks)
