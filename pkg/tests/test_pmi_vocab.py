import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mslm.corpus import DatasetSplit, TokenSequence, spans_to_tags, EntitySpan
from mslm.pmi_vocab import (
    PmiVocabulary,
    build_vocabulary,
    count_ngrams,
    overlap_with_ds_terms,
    score_pmi,
)


def sent(words, sid=None, spans=()):
    words = words.split() if isinstance(words, str) else list(words)
    return TokenSequence(sid or " ".join(words), tuple(words), spans_to_tags(spans, len(words)))


def brute_counts(sentences, n):
    """Independent sliding-window counter."""
    out = {}
    for s in sentences:
        for i in range(len(s) - n + 1):
            key = " ".join(s[i:i + n])
            out[key] = out.get(key, 0) + 1
    return out


def test_count_simple():
    c = count_ngrams([sent("a b a b")], min_count=1)
    assert c.ngrams[2][("a", "b")] == 2
    assert c.ngrams[2][("b", "a")] == 1
    assert c.unigrams["a"] == 2


def test_count_threshold():
    corpus = [sent("x y", f"s{i}") for i in range(4)]
    assert ("x", "y") not in count_ngrams(corpus, min_count=5).ngrams[2]
    assert ("x", "y") in count_ngrams(corpus, min_count=4).ngrams[2]


def test_count_empty():
    with pytest.raises(ValueError):
        count_ngrams([], 1)


def random_corpus(n_sent, vocab, seed, max_len=12):
    rng = np.random.default_rng(seed)
    return [sent([f"v{rng.integers(vocab)}" for _ in range(rng.integers(1, max_len))], f"s{i}")
            for i in range(n_sent)]


def test_counts_match_brute_force():
    corpus = random_corpus(50, 6, seed=1)
    toks = [list(s.tokens) for s in corpus]
    c = count_ngrams(corpus, min_count=1)
    for n in (2, 3, 4):
        expected = brute_counts(toks, n)
        assert {" ".join(g): v for g, v in c.ngrams[n].items()} == expected


def test_pmi_hand_computed():
    # "heart failure" appears in 5 of 10 sentences and its words nowhere else
    corpus = [sent("heart failure was noted", f"h{i}") for i in range(5)]
    corpus += [sent("the patient was stable", f"p{i}") for i in range(5)]
    c = count_ngrams(corpus, min_count=5)
    scores = score_pmi(c.ngrams, c.unigrams, c.total_tokens, c.total_ngrams_by_length)
    total_tokens, total_bigrams = 40, 30
    p_heart = p_failure = 5 / total_tokens
    expected = math.log((5 / total_bigrams) / (p_heart * p_failure))
    assert scores[("heart", "failure")] == pytest.approx(expected, rel=1e-12)


def test_pmi_independent_tokens_near_zero():
    rng = np.random.default_rng(7)
    corpus = [sent([f"v{j}" for j in rng.integers(0, 5, size=20)], f"s{i}") for i in range(2000)]
    c = count_ngrams(corpus, min_count=50)
    scores = score_pmi({2: c.ngrams[2]}, c.unigrams, c.total_tokens, c.total_ngrams_by_length)
    assert scores
    assert max(abs(v) for v in scores.values()) < 0.5


def test_pmi_scale_invariance():
    corpus = random_corpus(40, 4, seed=3)
    doubled = corpus + [TokenSequence(s.id + "'", s.tokens, s.tags) for s in corpus]
    a = build_vocabulary(corpus, 2)
    b = build_vocabulary(doubled, 4)
    sa = {c.tokens: c.pmi for c in a}
    sb = {c.tokens: c.pmi for c in b}
    assert sa.keys() == sb.keys()
    for k in sa:
        assert sa[k] == pytest.approx(sb[k], abs=1e-12)


def test_pmi_zero_constituent():
    with pytest.raises(ValueError):
        score_pmi({2: Counter({("a", "b"): 3})}, Counter({"a": 3}), 10, {2: 9})


def test_vocabulary_ordering_and_determinism():
    corpus = random_corpus(200, 8, seed=5)
    v = build_vocabulary(corpus, 3)
    assert set(v.groups) <= {2, 3, 4}
    for n, group in v.groups.items():
        keys = [(-c.pmi, c.tokens) for c in group]
        assert keys == sorted(keys)
        assert all(len(c.tokens) == n and c.count >= 3 for c in group)
    assert build_vocabulary(corpus, 3).to_jsonl() == v.to_jsonl()


def test_vocabulary_entry_count_matches_oracle():
    corpus = random_corpus(300, 12, seed=11, max_len=10)
    toks = [list(s.tokens) for s in corpus]
    expected = sum(sum(1 for v in brute_counts(toks, n).values() if v >= 5) for n in (2, 3, 4))
    v = build_vocabulary(corpus, 5)
    assert 50 <= len(v) <= 200
    assert len(v) == expected


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 6))
def test_threshold_monotone(seed, lo, delta):
    corpus = random_corpus(30, 5, seed)
    small = {c.tokens for c in build_vocabulary(corpus, lo + delta)}
    big = {c.tokens for c in build_vocabulary(corpus, lo)}
    assert small <= big


def test_jsonl_round_trip(tmp_path):
    v = build_vocabulary(random_corpus(100, 6, seed=2), 3)
    path = tmp_path / "vocab.jsonl"
    v.save(path)
    loaded = PmiVocabulary.load(path)
    assert loaded.to_jsonl() == v.to_jsonl()
    assert [c.tokens for c in loaded.ranked()] == [c.tokens for c in v.ranked()]


def test_segment_min_scorer_bounded_by_plain_for_bigrams():
    corpus = random_corpus(200, 6, seed=9)
    plain = {c.tokens: c.pmi for c in build_vocabulary(corpus, 3)}
    seg = {c.tokens: c.pmi for c in build_vocabulary(corpus, 3, scorer="segment-min")}
    for g in plain:
        if len(g) == 2:
            assert seg[g] == pytest.approx(plain[g])


def _entity_sent(words, start, end, sid):
    return sent(words, sid, [EntitySpan(start, end, "D")])


def test_overlap_full_and_disjoint():
    vocab = PmiVocabulary.from_collocations([])
    split = DatasetSplit.from_splits([_entity_sent("the heart failure case", 1, 3, "a")])
    with pytest.raises(ValueError):
        overlap_with_ds_terms(vocab, split)
    from mslm.pmi_vocab import Collocation
    hf = PmiVocabulary.from_collocations([Collocation(("heart", "failure"), 5, 1.0)])
    assert overlap_with_ds_terms(hf, split).pct == 100.0
    other = PmiVocabulary.from_collocations([Collocation(("the", "heart"), 5, 1.0)])
    assert overlap_with_ds_terms(other, split).pct == 0.0


def test_overlap_planted_half():
    # four entity bigrams and four non-entity bigrams, each repeated 5 times
    ents = [("e1", "e2"), ("e3", "e4"), ("e5", "e6"), ("e7", "e8")]
    fill = [("f1", "f2"), ("f3", "f4"), ("f5", "f6"), ("f7", "f8")]
    train = []
    for r in range(5):
        for i, (e, f) in enumerate(zip(ents, fill)):
            train.append(_entity_sent([*e], 0, 2, f"e{r}{i}"))
            train.append(sent([*f], f"f{r}{i}"))
    split = DatasetSplit.from_splits(train)
    vocab = build_vocabulary(split.train, 5)
    rep = overlap_with_ds_terms(vocab, split)
    assert rep.n_vocab == 8
    assert rep.n_overlap == 4
    assert rep.pct == 50.0
    assert rep.n_ds_terms == 20
