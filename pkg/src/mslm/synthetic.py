"""Seed-deterministic synthetic BIO corpora with planted entities.

Each entity class owns a lexicon of multi-word mentions built from its own
word pool, plus a few cue words that tend to precede a mention. Everything
else is filler drawn i.i.d. from a Zipf-like generic vocabulary, so the
only recurring multi-word units are the planted mentions (and their cues).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import DatasetSplit, TokenSequence, spans_to_tags, EntitySpan
from .masking import derive_rng

DEFAULT_CLASSES = ("GENE", "DISEASE", "CHEMICAL")


@dataclass(frozen=True)
class SyntheticConfig:
    n_train: int = 1000
    n_val: int = 200
    n_test: int = 200
    classes: tuple[str, ...] = DEFAULT_CLASSES
    min_len: int = 6
    max_len: int = 12
    max_entities: int = 3
    mentions_per_class: int = 25
    words_per_class: int = 30
    mention_len: tuple[int, int] = (1, 3)
    filler_vocab: int = 200
    cues_per_class: int = 3
    cue_prob: float = 0.8
    seed: int = 0
    name: str = "synthetic"


@dataclass(frozen=True)
class Lexicon:
    mentions: dict[str, tuple[tuple[str, ...], ...]]
    cues: dict[str, tuple[str, ...]]
    filler: tuple[str, ...]
    filler_p: np.ndarray


def build_lexicon(cfg: SyntheticConfig) -> Lexicon:
    rng = derive_rng(cfg.seed, "lexicon")
    mentions, cues = {}, {}
    lo, hi = cfg.mention_len
    for c in cfg.classes:
        pool = [f"{c.lower()}_{i}" for i in range(cfg.words_per_class)]
        seen: set[tuple[str, ...]] = set()
        while len(seen) < cfg.mentions_per_class:
            n = int(rng.integers(lo, hi + 1))
            seen.add(tuple(pool[int(j)] for j in rng.choice(len(pool), size=n, replace=False)))
        mentions[c] = tuple(sorted(seen))
        cues[c] = tuple(f"cue_{c.lower()}_{i}" for i in range(cfg.cues_per_class))
    filler = tuple(f"w{i}" for i in range(cfg.filler_vocab))
    p = 1.0 / np.arange(1, cfg.filler_vocab + 1)
    return Lexicon(mentions, cues, filler, p / p.sum())


def _sentence(rng: np.random.Generator, lex: Lexicon, cfg: SyntheticConfig, length: int, sid: str) -> TokenSequence:
    k = int(rng.integers(1, cfg.max_entities + 1))
    chunks = []
    for _ in range(k):
        c = cfg.classes[int(rng.integers(len(cfg.classes)))]
        m = lex.mentions[c][int(rng.integers(len(lex.mentions[c])))]
        cue = (lex.cues[c][int(rng.integers(len(lex.cues[c])))],) if rng.random() < cfg.cue_prob else ()
        chunks.append((cue, m, c))
    used = sum(len(cue) + len(m) for cue, m, _ in chunks)
    while used > length and len(chunks) > 1:
        cue, m, _ = chunks.pop()
        used -= len(cue) + len(m)
    n_fill = max(length - used, 0)
    # scatter filler into len(chunks)+1 gaps
    gaps = np.bincount(rng.integers(0, len(chunks) + 1, size=n_fill), minlength=len(chunks) + 1)
    tokens: list[str] = []
    spans = []
    for gi, (cue, m, c) in enumerate(chunks):
        tokens += [lex.filler[int(j)] for j in rng.choice(len(lex.filler), size=gaps[gi], p=lex.filler_p)]
        tokens += list(cue)
        spans.append(EntitySpan(len(tokens), len(tokens) + len(m), c))
        tokens += list(m)
    tokens += [lex.filler[int(j)] for j in rng.choice(len(lex.filler), size=gaps[-1], p=lex.filler_p)]
    return TokenSequence(sid, tuple(tokens), spans_to_tags(spans, len(tokens)))


def generate(cfg: SyntheticConfig = SyntheticConfig()) -> DatasetSplit:
    lex = build_lexicon(cfg)
    splits = {}
    for split, n in (("train", cfg.n_train), ("val", cfg.n_val), ("test", cfg.n_test)):
        rng = derive_rng(cfg.seed, "corpus", split)
        lengths = rng.integers(cfg.min_len, cfg.max_len + 1, size=n)
        splits[split] = [_sentence(rng, lex, cfg, int(L), f"{split}-{i}") for i, L in enumerate(lengths)]
    return DatasetSplit.from_splits(splits["train"], splits["val"], splits["test"], name=cfg.name)
