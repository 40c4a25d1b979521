import math
import random

import numpy as np
import pytest

from mslm.corpus import EntitySpan
from mslm.metrics import (
    PredictedSpan,
    PredictionRecord,
    boundary_match,
    build_report,
    confidence_report,
    confidence_rows,
    decode_spans,
    exact_match,
    macro_f1,
    perplexity,
)

BIO = ("O", "B-A", "I-A", "B-B", "I-B")


def rec(sid, pred, gold, n=10):
    return PredictionRecord(sid, tuple(f"w{i}" for i in range(n)),
                            tuple(PredictedSpan(*p) for p in pred), tuple(EntitySpan(*g) for g in gold))


def one_hot(tags):
    m = np.zeros((len(tags), len(BIO)))
    for i, t in enumerate(tags):
        m[i, BIO.index(t)] = 1.0
    return m


def test_decode_one_hot():
    tags = ["B-A", "I-A", "O", "B-B"]
    assert decode_spans(one_hot(tags), BIO) == [EntitySpan(0, 2, "A"), EntitySpan(3, 4, "B")]
    assert decode_spans(one_hot(["O", "O"]), BIO) == []


def test_decode_tie_goes_low():
    probs = np.full((2, len(BIO)), 0.2)
    assert decode_spans(probs, BIO) == []  # index 0 is O


def test_exact_match_basic():
    assert exact_match([rec("s", [(0, 2, "A")], [(0, 2, "A")])]) == 100.0
    # boundary off by one
    assert exact_match([rec("s", [(0, 3, "A")], [(0, 2, "A")])]) == 0.0
    r = rec("s", [(0, 2, "A"), (3, 4, "B")], [(0, 2, "A"), (3, 4, "B"), (6, 8, "A")])
    assert exact_match([r]) == pytest.approx(66.67, abs=0.01)
    with pytest.raises(ValueError):
        exact_match([rec("s", [], [])])


def brute_em(records):
    total = matched = 0
    for r in records:
        used = [False] * len(r.gold)
        total += len(r.gold)
        for p in r.predicted:
            for j, g in enumerate(r.gold):
                if not used[j] and (p.start, p.end, p.label) == (g.start, g.end, g.label):
                    used[j] = True
                    matched += 1
                    break
    return 100.0 * matched / total


def brute_macro_f1(records, classes):
    f1s = []
    for c in classes:
        tp = fp = fn = 0
        for r in records:
            gold = [(g.start, g.end) for g in r.gold if g.label == c]
            pred = [(p.start, p.end) for p in r.predicted if p.label == c]
            for p in pred:
                if p in gold:
                    tp += 1
                else:
                    fp += 1
            fn += sum(1 for g in gold if g not in pred)
        if tp + fp + fn == 0:
            continue
        prec = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * recall / (prec + recall) if prec + recall else 0.0)
    return 100.0 * sum(f1s) / len(f1s) if f1s else 0.0


def random_spans(rng, n, labels):
    """Non-overlapping random spans over n positions."""
    out, i = [], 0
    while i < n:
        if rng.random() < 0.4:
            ln = rng.randint(1, 3)
            out.append((i, min(i + ln, n), rng.choice(labels)))
            i += ln
        i += 1
    return out


def random_fixture(seed):
    rng = random.Random(seed)
    records = []
    for k in range(rng.randint(1, 4)):
        gold = random_spans(rng, 10, "AB")
        pred = [g for g in gold if rng.random() < 0.6]
        pred = [(s, e, rng.choice("AB") if rng.random() < 0.2 else c) for s, e, c in pred]
        pred += [sp for sp in random_spans(rng, 10, "AB") if rng.random() < 0.3]
        pred = sorted(set(pred))
        records.append(rec(f"s{k}", pred, gold))
    return records


def test_metrics_against_brute_force():
    checked = 0
    for seed in range(500):
        records = random_fixture(seed)
        if not any(r.gold for r in records):
            continue
        assert exact_match(records) == pytest.approx(brute_em(records), abs=1e-9)
        assert macro_f1(records, "AB") == pytest.approx(brute_macro_f1(records, "AB"), abs=1e-9)
        assert exact_match(records) <= boundary_match(records) + 1e-9
        shuffled = records[::-1]
        assert exact_match(shuffled) == exact_match(records)
        checked += 1
    assert checked > 400


def test_macro_f1_cases():
    perfect = [rec("s", [(0, 1, "A")], [(0, 1, "A")])]
    assert macro_f1(perfect, "AB") == 100.0
    assert macro_f1([rec("s", [], [(0, 1, "A")])], "AB") == 0.0
    # class A: P=1, R=0.5; class B: P=0.5, R=1  -> F1 2/3 each
    r = rec("s", [(0, 1, "A"), (2, 3, "B"), (4, 5, "B")], [(0, 1, "A"), (6, 7, "A"), (2, 3, "B")])
    assert macro_f1([r], "AB") == pytest.approx(66.67, abs=0.01)


def test_perplexity():
    assert perplexity([0.0, 0.0]) == 1.0
    v = 37
    assert perplexity([math.log(v)] * 11) == pytest.approx(v, rel=1e-12)
    nlls = [0.3, 1.2, 2.5, 0.01, 4.0]
    assert perplexity(nlls) == pytest.approx(math.exp(sum(nlls) / len(nlls)), abs=1e-9)
    with pytest.raises(ValueError):
        perplexity([])


def test_confidence_report():
    r = rec("s", [(0, 2, "A", 0.9), (3, 4, "B", 0.4)], [(0, 2, "A")])
    rows = confidence_rows([r])
    assert len(rows) == 2
    assert rows[0]["gold_class"] == "A" and rows[1]["gold_class"] == ""
    assert all(0.0 <= row["confidence"] <= 1.0 for row in rows)
    csv_text = confidence_report([r])
    assert csv_text.splitlines()[0] == "seq_id,span_text,gold_class,pred_class,confidence"
    assert csv_text.splitlines()[1] == "s,w0 w1,A,A,0.900000"


def test_build_report_json():
    r = rec("s", [(0, 2, "A")], [(0, 2, "A"), (3, 4, "B")])
    report = build_report([r], ("A", "B"), ppl=3.5, config={"seed": 1})
    assert report.em == 50.0
    assert report.macro_f1 == pytest.approx(50.0)
    assert set(report.to_dict()) == {"em", "macro_f1", "perplexity", "per_class", "config"}
