"""Run configuration: TOML files with dotted sections layered over presets."""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any

import tomli


class ConfigError(ValueError):
    pass


DESK: dict[str, Any] = {
    "schedule": {"kind": "cosine", "T": 100},
    "tokenizer": {"mode": "char", "max_K": 64},
    "data": {
        "L": 32,
        "alphabet": "abcdefghijkl",
        "ciphers": "random",
        "n_moved": 4,
        "word_order": {},
        "n_train_per_pair": 5000,
        "n_eval_per_pair": 100,
        "n_dev_per_pair": 25,
        "sentence_words": [1, 3],
        "word_len": [2, 4],
        "zero_shot_pairs": [],
    },
    "model": {"n_layers": 2, "n_heads": 4, "d_model": 64, "d_ff": 256},
    "train": {
        "lr": 1e-3, "gamma": 1.0, "batch_size": 64, "epochs": 1000, "max_steps": 20000,
        "clip_norm": 1.0, "log_every": 50, "eval_every": 1000,
        "stop_chrf": None, "stop_token_acc": None,
    },
    "translate": {"mode": "argmax_final", "batch_size": 256},
    "eval": {"metrics": ["bleu", "ter", "chrf"], "random_baseline": True},
}

# WMT-scale sizes; the word tokenizer stands in for a subword vocabulary.
FULL: dict[str, Any] = copy.deepcopy(DESK)
FULL["schedule"]["T"] = 1000
FULL["tokenizer"].update(mode="word", max_K=4096)
FULL["model"].update(n_layers=12, n_heads=16, d_model=512, d_ff=2048)
FULL["train"].update(lr=5e-4, gamma=0.9, batch_size=512, max_steps=None)

PRESETS = {"desk": DESK, "full": FULL}

REQUIRED = ("seed", "data.langs", "data.pairs")


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and key != "word_order":
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def get(cfg: dict, dotted: str, default: Any = KeyError) -> Any:
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            if default is KeyError:
                raise ConfigError(f"missing config key {dotted!r}")
            return default
        node = node[part]
    return node


def set_dotted(cfg: dict, dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = cfg
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def parse_value(text: str) -> Any:
    """Interpret a command-line override: JSON if it parses, else the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path=None, preset: str | None = None, overrides: dict | None = None) -> dict:
    """Preset defaults, then the TOML file, then dotted-key overrides.

    The preset comes from the ``preset`` argument, else the file's top-level
    ``preset`` key, else ``desk``.
    """
    file_cfg = {}
    if path is not None:
        with open(path, "rb") as fh:
            try:
                file_cfg = tomli.load(fh)
            except tomli.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
    name = preset or file_cfg.pop("preset", "desk")
    file_cfg.pop("preset", None)
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    cfg = merge(PRESETS[name], file_cfg)
    for key, value in (overrides or {}).items():
        set_dotted(cfg, key, value)
    return cfg


def require(cfg: dict, keys=REQUIRED) -> None:
    for key in keys:
        get(cfg, key)


def dump(cfg: dict, path) -> None:
    Path(path).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")
