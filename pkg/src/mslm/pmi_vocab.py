"""Per-dataset PMI collocation vocabularies over word n-grams of length 2-4."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .corpus import DatasetSplit, TokenSequence

MIN_N, MAX_N = 2, 4
DEFAULT_MIN_COUNT = 5

Gram = tuple[str, ...]


@dataclass(frozen=True)
class Collocation:
    tokens: Gram
    count: int
    pmi: float

    def to_json(self) -> str:
        return json.dumps({"tokens": list(self.tokens), "count": self.count, "pmi": self.pmi},
                          ensure_ascii=False)


def rank_key(c: Collocation):
    """Total order: score descending, then length descending, then tokens ascending."""
    return (-c.pmi, -len(c.tokens), c.tokens)


@dataclass(frozen=True)
class PmiVocabulary:
    groups: dict[int, tuple[Collocation, ...]]
    min_count: int = DEFAULT_MIN_COUNT
    source_dataset: str = ""

    def __post_init__(self):
        ranked = tuple(sorted((c for g in self.groups.values() for c in g), key=rank_key))
        object.__setattr__(self, "_ranked", ranked)
        object.__setattr__(self, "_rank", {c.tokens: i for i, c in enumerate(ranked)})

    def __len__(self) -> int:
        return len(self._ranked)

    def __iter__(self):
        return iter(self._ranked)

    def __contains__(self, gram) -> bool:
        return tuple(gram) in self._rank

    def ranked(self) -> tuple[Collocation, ...]:
        """All collocations in masking priority order."""
        return self._ranked

    def rank(self, gram: Gram) -> int | None:
        return self._rank.get(tuple(gram))

    def to_jsonl(self) -> str:
        return "".join(c.to_json() + "\n" for n in sorted(self.groups) for c in self.groups[n])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def from_collocations(cls, collocations: Iterable[Collocation], min_count: int = DEFAULT_MIN_COUNT,
                          source_dataset: str = "") -> "PmiVocabulary":
        by_len: dict[int, list[Collocation]] = {}
        for c in collocations:
            by_len.setdefault(len(c.tokens), []).append(c)
        groups = {n: tuple(sorted(g, key=lambda c: (-c.pmi, c.tokens))) for n, g in sorted(by_len.items())}
        return cls(groups, min_count, source_dataset)

    @classmethod
    def load(cls, path: str | Path, source_dataset: str = "") -> "PmiVocabulary":
        colls = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if line.strip():
                d = json.loads(line)
                colls.append(Collocation(tuple(d["tokens"]), int(d["count"]), float(d["pmi"])))
        min_count = min((c.count for c in colls), default=DEFAULT_MIN_COUNT)
        return cls.from_collocations(colls, min_count, source_dataset or Path(path).stem)


@dataclass
class NgramCounts:
    """Raw contiguous n-gram counts. ``ngrams`` keeps only grams at or above ``min_count``."""

    unigrams: Counter
    ngrams: dict[int, Counter]
    total_tokens: int
    total_ngrams_by_length: dict[int, int]
    min_count: int
    all_ngrams: dict[int, Counter]

    def merge(self, other: "NgramCounts") -> "NgramCounts":
        alln = {n: self.all_ngrams[n] + other.all_ngrams[n] for n in self.all_ngrams}
        return NgramCounts(
            self.unigrams + other.unigrams,
            {n: Counter({g: c for g, c in alln[n].items() if c >= self.min_count}) for n in alln},
            self.total_tokens + other.total_tokens,
            {n: self.total_ngrams_by_length[n] + other.total_ngrams_by_length[n] for n in alln},
            self.min_count,
            alln,
        )


def count_ngrams(train: Sequence[TokenSequence] | Sequence[Sequence[str]],
                 min_count: int = DEFAULT_MIN_COUNT) -> NgramCounts:
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    sentences = [s.tokens if isinstance(s, TokenSequence) else tuple(s) for s in train]
    if not sentences or not any(sentences):
        raise ValueError("cannot count n-grams of an empty corpus")
    unigrams: Counter = Counter()
    all_ngrams = {n: Counter() for n in range(MIN_N, MAX_N + 1)}
    totals = dict.fromkeys(all_ngrams, 0)
    for toks in sentences:
        unigrams.update(toks)
        for n in all_ngrams:
            m = len(toks) - n + 1
            if m > 0:
                totals[n] += m
                all_ngrams[n].update(toks[i:i + n] for i in range(m))
    kept = {n: Counter({g: c for g, c in cnt.items() if c >= min_count}) for n, cnt in all_ngrams.items()}
    return NgramCounts(unigrams, kept, sum(unigrams.values()), totals, min_count, all_ngrams)


def _segmentations(n: int):
    """Cut-point sets splitting a length-n gram into >= 2 contiguous pieces."""
    for k in range(1, n):
        yield from combinations(range(1, n), k)


def score_pmi(ngram_counts: dict[int, Counter], unigram_counts: Counter, total_tokens: int,
              total_ngrams_by_length: dict[int, int]) -> dict[Gram, float]:
    """Plain n-gram PMI, ``log(p(gram) / prod p(token))`` in nats."""
    scores = {}
    for n, grams in ngram_counts.items():
        denom = total_ngrams_by_length[n]
        for gram, count in grams.items():
            log_indep = 0.0
            for tok in gram:
                uc = unigram_counts.get(tok, 0)
                if uc <= 0:
                    raise ValueError(f"zero-probability constituent {tok!r} in {gram}")
                log_indep += math.log(uc / total_tokens)
            scores[gram] = math.log(count / denom) - log_indep
    return scores


def score_segment_min(counts: NgramCounts) -> dict[Gram, float]:
    """Min over all segmentations of ``log(p(gram) / prod p(segment))``.

    Piece probabilities use the unthresholded counts of their own length.
    """
    def logp(piece: Gram) -> float:
        if len(piece) == 1:
            return math.log(counts.unigrams[piece[0]] / counts.total_tokens)
        n = len(piece)
        return math.log(counts.all_ngrams[n][piece] / counts.total_ngrams_by_length[n])

    scores = {}
    for n, grams in counts.ngrams.items():
        for gram in grams:
            lp = logp(gram)
            best = math.inf
            for cuts in _segmentations(n):
                bounds = (0, *cuts, n)
                seg = sum(logp(gram[a:b]) for a, b in zip(bounds, bounds[1:]))
                best = min(best, lp - seg)
            scores[gram] = best
    return scores


SCORERS: dict[str, Callable[[NgramCounts], dict[Gram, float]]] = {
    "pmi": lambda c: score_pmi(c.ngrams, c.unigrams, c.total_tokens, c.total_ngrams_by_length),
    "segment-min": score_segment_min,
}


def build_vocabulary(train: Sequence[TokenSequence], min_count: int = DEFAULT_MIN_COUNT,
                     scorer: str = "pmi", source_dataset: str = "") -> PmiVocabulary:
    counts = count_ngrams(train, min_count)
    scores = SCORERS[scorer](counts)
    colls = [Collocation(g, counts.ngrams[len(g)][g], scores[g]) for g in scores]
    return PmiVocabulary.from_collocations(colls, min_count, source_dataset)


@dataclass(frozen=True)
class OverlapReport:
    n_ds_terms: int
    n_vocab: int
    n_overlap: int
    pct: float


def overlap_with_ds_terms(vocab: PmiVocabulary, split: DatasetSplit) -> OverlapReport:
    """Share of vocabulary entries that are exactly some entity mention (case-sensitive)."""
    if len(vocab) == 0:
        raise ValueError("overlap is undefined for an empty vocabulary")
    terms = set()
    n_terms = 0
    for seqs in split.splits().values():
        for s in seqs:
            for sp in s.spans:
                terms.add(s.tokens[sp.start:sp.end])
                n_terms += 1
    n_overlap = sum(1 for c in vocab if c.tokens in terms)
    return OverlapReport(n_terms, len(vocab), n_overlap, 100.0 * n_overlap / len(vocab))
