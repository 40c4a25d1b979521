"""Mask plans for Joint ELM-BLM, random SPAN and PMI masking.

All three strategies work on word-level tokens and replace every selected
token with ``[MASK]``. A :class:`MaskPlan` records what was masked so that
plans can be serialized, counted for loss weighting and undone.
"""

from __future__ import annotations

import enum
import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import MASK, EntitySpan, TokenSequence, extract_entity_spans
from .pmi_vocab import MAX_N, MIN_N, PmiVocabulary

# rate * n values within this of an integer are treated as that integer,
# so 0.075 * 40 gives 3 rather than ceil(3.0000000000000004) = 4
_CEIL_EPS = 1e-9


class MaskKind(str, enum.Enum):
    ELM = "ELM"
    BLM = "BLM"
    SPAN = "SPAN"
    PMI = "PMI"


STRATEGIES = ("joint", "span", "pmi")


def _check_rate(rate: float, name: str = "rate") -> None:
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {rate}")


def masking_budget(rate: float, n: int) -> int:
    """``ceil(rate * n)``, robust to floating-point products like 0.15 * 20."""
    _check_rate(rate)
    if n <= 0:
        return 0
    x = rate * n
    return int(math.ceil(x - _CEIL_EPS)) if x > 0 else 0


def elm_mask_count(n_ds_terms: int, elm_rate: float) -> int:
    """Number of whole entities to mask: ``ceil(elm_rate * n_ds_terms)``."""
    _check_rate(elm_rate, "elm_rate")
    return masking_budget(elm_rate, n_ds_terms)


def derive_rng(seed: int, *keys) -> np.random.Generator:
    """Independent PCG64 stream for ``(seed, *keys)``; keys may be str or int."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        if isinstance(k, str):
            words.append(int.from_bytes(hashlib.blake2b(k.encode(), digest_size=8).digest(), "little"))
        else:
            words.append(int(k) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


@dataclass(frozen=True)
class MaskPlan:
    seq_id: str
    positions: tuple[int, ...]
    kinds: tuple[MaskKind, ...]
    originals: tuple[str, ...]
    strategy: str
    elm_rate: float | None = None
    blm_rate: float | None = None
    rate: float | None = None
    budget: int = 0
    budget_used: int = 0
    elm_entities: tuple[int, ...] = ()
    shortfall: int = 0

    def __len__(self) -> int:
        return len(self.positions)

    def positions_of(self, kind: MaskKind) -> list[int]:
        return [p for p, k in zip(self.positions, self.kinds) if k == kind]

    def apply(self, tokens: Sequence[str], mask_token: str = MASK) -> list[str]:
        out = list(tokens)
        for p in self.positions:
            out[p] = mask_token
        return out

    def restore(self, masked: Sequence[str]) -> list[str]:
        out = list(masked)
        for p, tok in zip(self.positions, self.originals):
            out[p] = tok
        return out

    def to_dict(self) -> dict:
        return {
            "seq_id": self.seq_id,
            "strategy": self.strategy,
            "masked_positions": list(self.positions),
            "kind_per_position": [k.value for k in self.kinds],
            "originals": list(self.originals),
            "elm_rate": self.elm_rate,
            "blm_rate": self.blm_rate,
            "rate": self.rate,
            "budget": self.budget,
            "budget_used": self.budget_used,
            "elm_entities": list(self.elm_entities),
            "shortfall": self.shortfall,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MaskPlan":
        return cls(
            seq_id=d["seq_id"],
            positions=tuple(d["masked_positions"]),
            kinds=tuple(MaskKind(k) for k in d["kind_per_position"]),
            originals=tuple(d["originals"]),
            strategy=d["strategy"],
            elm_rate=d.get("elm_rate"),
            blm_rate=d.get("blm_rate"),
            rate=d.get("rate"),
            budget=d.get("budget", 0),
            budget_used=d.get("budget_used", 0),
            elm_entities=tuple(d.get("elm_entities", ())),
            shortfall=d.get("shortfall", 0),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True)


def plans_digest(plans: Iterable[MaskPlan]) -> str:
    h = hashlib.sha256()
    for p in plans:
        h.update(p.to_json().encode())
        h.update(b"\n")
    return h.hexdigest()


def _plan(seq: TokenSequence, marks: dict[int, MaskKind], strategy: str, **kw) -> MaskPlan:
    pos = tuple(sorted(marks))
    return MaskPlan(seq.id, pos, tuple(marks[p] for p in pos), tuple(seq.tokens[p] for p in pos),
                    strategy, budget_used=len(pos), **kw)


# ---------------------------------------------------------------------------
# Joint ELM-BLM
# ---------------------------------------------------------------------------

def apply_joint_elm_blm(seq: TokenSequence, spans: Sequence[EntitySpan] | None = None,
                        elm_rate: float = 1.0, blm_rate: float = 0.075,
                        rng: np.random.Generator | None = None) -> MaskPlan:
    """Mask whole entities (ELM) and, disjointly, non-entity tokens (BLM).

    ``ceil(elm_rate * #entities)`` entities are drawn uniformly without
    replacement and every one of their tokens is masked. Then
    ``ceil(blm_rate * len(seq))`` tokens are drawn uniformly from positions
    outside all entities. When fewer such positions exist, all are masked
    and the missing count goes to ``shortfall``.
    """
    _check_rate(elm_rate, "elm_rate")
    _check_rate(blm_rate, "blm_rate")
    rng = rng if rng is not None else np.random.default_rng()
    spans = list(spans) if spans is not None else extract_entity_spans(seq)
    n = len(seq)

    marks: dict[int, MaskKind] = {}
    k = elm_mask_count(len(spans), elm_rate)
    chosen = sorted(int(i) for i in rng.choice(len(spans), size=k, replace=False)) if k else []
    for i in chosen:
        for p in range(spans[i].start, spans[i].end):
            marks[p] = MaskKind.ELM

    in_entity = np.zeros(n, dtype=bool)
    for sp in spans:
        in_entity[sp.start:sp.end] = True
    free = np.flatnonzero(~in_entity)
    blm_budget = masking_budget(blm_rate, n)
    take = min(blm_budget, len(free))
    if take:
        for p in rng.choice(free, size=take, replace=False):
            marks[int(p)] = MaskKind.BLM

    elm_tokens = sum(len(spans[i]) for i in chosen)
    return _plan(seq, marks, "joint", elm_rate=elm_rate, blm_rate=blm_rate,
                 budget=elm_tokens + blm_budget, elm_entities=tuple(chosen),
                 shortfall=blm_budget - take)


# ---------------------------------------------------------------------------
# SPAN
# ---------------------------------------------------------------------------

@dataclass
class SpanTrace:
    """Per-step record of a SPAN masking run, for auditing against hand traces."""

    steps: list[tuple[int, int, int, bool]] = field(default_factory=list)  # (start, end, sl, accepted)


def span_mask_positions(n: int, mb: int, pool: Sequence[int], span_lengths: Iterable[int],
                        trace: SpanTrace | None = None) -> list[int]:
    """Core of random-span masking with the randomness supplied by the caller.

    ``pool`` is the shuffled order of start indices; ``span_lengths`` yields
    one draw from {2, 3, 4} per visited index.
    """
    masked = np.zeros(n, dtype=bool)
    msf = 0
    if mb <= 0:
        return []
    lengths = iter(span_lengths)
    for i in pool:
        i = int(i)
        sl = min(int(next(lengths)), mb)
        start, end = i, i + sl
        if msf + sl > mb:  # stay within the masking budget
            sl = mb - msf
            end = i + sl
        end = min(end, n)  # stay within the sequence
        sl = end - start
        ok = not masked[start:end].any()
        if ok:
            masked[start:end] = True
            msf += sl
        if trace is not None:
            trace.steps.append((start, end, sl, ok))
        if msf >= mb:
            break
    return np.flatnonzero(masked).tolist()


def apply_span_masking(seq: TokenSequence, m_r: float, rng: np.random.Generator | None = None,
                       trace: SpanTrace | None = None) -> MaskPlan:
    rng = rng if rng is not None else np.random.default_rng()
    n = len(seq)
    mb = masking_budget(m_r, n)
    pool = rng.permutation(n)
    lengths = (int(rng.integers(2, 5)) for _ in itertools.count())
    pos = span_mask_positions(n, mb, pool, lengths, trace)
    return _plan(seq, dict.fromkeys(pos, MaskKind.SPAN), "span", rate=m_r, budget=mb)


# ---------------------------------------------------------------------------
# PMI
# ---------------------------------------------------------------------------

def pmi_mask_positions(tokens: Sequence[str], mb: int, vocab: PmiVocabulary) -> list[int]:
    """Mask vocabulary collocations in rank order until the budget is spent.

    Each pass walks the vocabulary once; a gram matching an unmasked
    contiguous run (first occurrence) is masked, truncated to the remaining
    budget if needed. Passes repeat until the budget is met or a pass masks
    nothing.
    """
    n = len(tokens)
    masked = [False] * n
    msf = 0
    if mb <= 0:
        return []
    # only grams occurring in the sentence can ever match; keep them in rank order
    present = {}
    for size in range(MIN_N, MAX_N + 1):
        for i in range(n - size + 1):
            g = tuple(tokens[i:i + size])
            r = vocab.rank(g)
            if r is not None:
                present[r] = g
    candidates = [present[r] for r in sorted(present)]

    while msf < mb:
        progressed = False
        for gram in candidates:
            size = len(gram)
            st = next((i for i in range(n - size + 1)
                       if tuple(tokens[i:i + size]) == gram and not any(masked[i:i + size])), None)
            if st is None:
                continue
            gl = size
            if msf + gl > mb:
                gl = mb - msf
            for p in range(st, st + gl):
                masked[p] = True
            msf += gl
            progressed = True
            if msf >= mb:
                break
        if not progressed:
            break
    return [i for i, m in enumerate(masked) if m]


def apply_pmi_masking(seq: TokenSequence, m_r: float, vocab: PmiVocabulary,
                      rng: np.random.Generator | None = None) -> MaskPlan:
    """PMI masking. Deterministic; ``rng`` is accepted for a uniform strategy signature."""
    mb = masking_budget(m_r, len(seq))
    pos = pmi_mask_positions(seq.tokens, mb, vocab)
    return _plan(seq, dict.fromkeys(pos, MaskKind.PMI), "pmi", rate=m_r, budget=mb)


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MaskConfig:
    strategy: str = "joint"
    elm_rate: float = 1.0
    blm_rate: float = 0.075
    rate: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        _check_rate(self.elm_rate, "elm_rate")
        _check_rate(self.blm_rate, "blm_rate")
        _check_rate(self.rate, "rate")


def make_plan(seq: TokenSequence, config: MaskConfig, rng: np.random.Generator,
              vocab: PmiVocabulary | None = None) -> MaskPlan:
    if config.strategy == "joint":
        return apply_joint_elm_blm(seq, None, config.elm_rate, config.blm_rate, rng)
    if config.strategy == "span":
        return apply_span_masking(seq, config.rate, rng)
    if vocab is None:
        raise ValueError("PMI masking needs a vocabulary")
    return apply_pmi_masking(seq, config.rate, vocab, rng)


def plan_corpus(sequences: Sequence[TokenSequence], config: MaskConfig, epoch: int = 0,
                vocab: PmiVocabulary | None = None) -> list[MaskPlan]:
    """One plan per sequence, each from its own stream keyed on (seed, epoch, seq id)."""
    return [make_plan(s, config, derive_rng(config.seed, epoch, s.id), vocab) for s in sequences]
