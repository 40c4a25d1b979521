"""Entity-level exact match, macro-F1, perplexity and confidence reporting.

Spans are compared as ``(seq_id, start, end, label)`` keys, so a prediction
counts only when both its boundary and its class agree with a gold span.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .corpus import EntitySpan, extract_entity_spans, repair_tags

SpanKey = tuple[str, int, int, str]


@dataclass(frozen=True)
class PredictedSpan:
    start: int
    end: int
    label: str
    confidence: float = 1.0
    el_label: str | None = None


@dataclass(frozen=True)
class PredictionRecord:
    seq_id: str
    tokens: tuple[str, ...]
    predicted: tuple[PredictedSpan, ...]
    gold: tuple[EntitySpan, ...]


def decode_spans(bio_probs: np.ndarray, bio_labels: Sequence[str]) -> list[EntitySpan]:
    """Argmax each row (ties go to the lowest label index), repair, extract spans."""
    idx = np.asarray(bio_probs).argmax(axis=-1)
    tags, _ = repair_tags([bio_labels[i] for i in idx])
    return extract_entity_spans(tags)


def _keys(records: Iterable[PredictionRecord]) -> tuple[set[SpanKey], set[SpanKey]]:
    pred, gold = set(), set()
    for r in records:
        pred.update((r.seq_id, p.start, p.end, p.label) for p in r.predicted)
        gold.update((r.seq_id, g.start, g.end, g.label) for g in r.gold)
    return pred, gold


def exact_match(records: Iterable[PredictionRecord], denominator: str = "gold") -> float:
    """Percentage of entities matched exactly on boundary and class.

    ``denominator`` is ``"gold"`` (recall-style, the default), ``"pred"`` or
    ``"union"``.
    """
    pred, gold = _keys(records)
    matched = len(pred & gold)
    denom = {"gold": len(gold), "pred": len(pred), "union": len(pred | gold)}[denominator]
    if denom == 0:
        raise ValueError(f"exact match undefined: no {denominator} spans")
    return 100.0 * matched / denom


def boundary_match(records: Iterable[PredictionRecord]) -> float:
    """Class-agnostic counterpart of :func:`exact_match` (gold denominator)."""
    records = list(records)
    pred = {(r.seq_id, p.start, p.end) for r in records for p in r.predicted}
    gold = {(r.seq_id, g.start, g.end) for r in records for g in r.gold}
    if not gold:
        raise ValueError("boundary match undefined: no gold spans")
    return 100.0 * len(pred & gold) / len(gold)


@dataclass(frozen=True)
class ClassScore:
    precision: float
    recall: float
    f1: float
    support: int
    n_pred: int


def per_class_scores(records: Iterable[PredictionRecord]) -> dict[str, ClassScore]:
    pred, gold = _keys(records)
    tp = Counter(k[3] for k in pred & gold)
    n_pred = Counter(k[3] for k in pred)
    n_gold = Counter(k[3] for k in gold)
    out = {}
    for c in sorted(set(n_pred) | set(n_gold)):
        p = tp[c] / n_pred[c] if n_pred[c] else 0.0
        r = tp[c] / n_gold[c] if n_gold[c] else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        out[c] = ClassScore(p, r, f, n_gold[c], n_pred[c])
    return out


def macro_f1(records: Iterable[PredictionRecord], class_set: Sequence[str]) -> float:
    """Unweighted mean of per-class entity F1, as a percentage.

    Classes with neither gold nor predicted spans are skipped.
    """
    if not class_set:
        raise ValueError("class_set must be non-empty")
    scores = per_class_scores(records)
    used = [scores[c].f1 for c in class_set if c in scores]
    return 100.0 * sum(used) / len(used) if used else 0.0


def perplexity(nlls: Iterable[float]) -> float:
    """``exp`` of the mean negative log-likelihood over masked positions."""
    nlls = list(nlls)
    if not nlls:
        raise ValueError("perplexity undefined: no masked positions")
    return math.exp(math.fsum(nlls) / len(nlls))


CONFIDENCE_FIELDS = ("seq_id", "span_text", "gold_class", "pred_class", "confidence")


def confidence_rows(records: Iterable[PredictionRecord]) -> list[dict]:
    """One row per decoded span, ordered by sequence then start position."""
    rows = []
    for r in records:
        gold = {(g.start, g.end): g.label for g in r.gold}
        for p in sorted(r.predicted, key=lambda p: (p.start, p.end)):
            rows.append({
                "seq_id": r.seq_id,
                "span_text": " ".join(r.tokens[p.start:p.end]),
                "gold_class": gold.get((p.start, p.end), ""),
                "pred_class": p.label,
                "confidence": p.confidence,
            })
    return rows


def confidence_report(records: Iterable[PredictionRecord]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CONFIDENCE_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in confidence_rows(records):
        writer.writerow({**row, "confidence": f"{row['confidence']:.6f}"})
    return buf.getvalue()


@dataclass
class EvalReport:
    em: float
    macro_f1: float
    perplexity: float | None
    per_class: dict[str, dict] = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def build_report(records: Sequence[PredictionRecord], class_set: Sequence[str], ppl: float | None = None,
                 config: dict | None = None) -> EvalReport:
    per_class = {c: asdict(s) for c, s in per_class_scores(records).items()}
    return EvalReport(exact_match(records), macro_f1(records, class_set), ppl, per_class, dict(config or {}))
