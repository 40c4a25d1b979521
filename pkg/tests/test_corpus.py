import json

import pytest
from hypothesis import given, strategies as st

from mslm.corpus import (
    ConllParseError,
    DatasetSplit,
    EmptySplitError,
    EntitySpan,
    TokenSequence,
    build_vocabulary,
    compute_dataset_stats,
    extract_entity_spans,
    load_dataset,
    parse_conll,
    repair_tags,
    spans_to_tags,
    to_conll,
    write_dataset,
)


def seq(tags, sid="s", tokens=None):
    tokens = tokens or [f"t{i}" for i in range(len(tags))]
    return TokenSequence(sid, tuple(tokens), tuple(tags))


def test_parse_minimal():
    res = parse_conll("IL-2\tB-GENE\ngene\tI-GENE\n.\tO\n\n")
    assert len(res.sequences) == 1
    s = res.sequences[0]
    assert s.tokens == ("IL-2", "gene", ".")
    assert s.spans == [EntitySpan(0, 2, "GENE")]
    assert res.repairs == 0


def test_parse_repairs_orphan_inside():
    res = parse_conll("x\tI-GENE\n\n")
    assert res.sequences[0].tags == ("B-GENE",)
    assert res.repairs == 1
    assert len(res.warnings) == 1


def test_parse_two_sentences_space_delimited():
    res = parse_conll("a O\nb B-X\n\nc O\n")
    assert [s.tokens for s in res.sequences] == [("a", "b"), ("c",)]


def test_parse_errors():
    with pytest.raises(ConllParseError, match="line 2"):
        parse_conll("a\tO\nb\tO\textra\n")
    with pytest.raises(ConllParseError, match="line 1"):
        parse_conll("a\tX-FOO\n")
    with pytest.raises(EmptySplitError):
        parse_conll("\n\n")


def test_read_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_dataset(tmp_path / "nope.json")


@pytest.mark.parametrize("tags, expected", [
    (["B-D", "I-D", "O", "B-D"], [(0, 2, "D"), (3, 4, "D")]),
    (["O", "O", "O"], []),
    (["B-A", "B-B", "I-B"], [(0, 1, "A"), (1, 3, "B")]),
    (["B-A", "I-A", "I-A"], [(0, 3, "A")]),
])
def test_extract_entity_spans(tags, expected):
    assert [(s.start, s.end, s.label) for s in extract_entity_spans(seq(tags))] == expected


def test_repair_class_switch():
    tags, n = repair_tags(["B-A", "I-B", "I-B", "O", "I-A"])
    assert tags == ("B-A", "B-B", "I-B", "O", "B-A")
    assert n == 2


tag_lists = st.lists(st.sampled_from(["O", "B-A", "I-A", "B-B", "I-B"]), min_size=1, max_size=30)


@given(tag_lists)
def test_span_tag_bijection(tags):
    fixed, _ = repair_tags(tags)
    spans = extract_entity_spans(fixed)
    assert spans_to_tags(spans, len(fixed)) == fixed
    # maximal, ordered, non-overlapping
    for a, b in zip(spans, spans[1:]):
        assert a.end <= b.start


@given(tag_lists)
def test_repair_idempotent(tags):
    once, _ = repair_tags(tags)
    twice, n = repair_tags(once)
    assert once == twice and n == 0


@given(st.lists(tag_lists, min_size=1, max_size=5))
def test_conll_round_trip(tag_seqs):
    seqs = [seq(repair_tags(t)[0], sid=f"s{i}") for i, t in enumerate(tag_seqs)]
    res = parse_conll(to_conll(seqs))
    assert [(s.tokens, s.tags) for s in res.sequences] == [(s.tokens, s.tags) for s in seqs]


def _split():
    train = [
        seq(["B-A", "O", "O", "O"], "a"),
        seq(["B-A", "I-A", "O", "B-B", "I-B", "I-B"], "b"),
    ]
    return DatasetSplit.from_splits(train, [seq(["O"], "c")], [seq(["B-B"], "d")])


def test_stats_hand_computed():
    st_ = compute_dataset_stats(_split())
    assert st_.avg_sent_len == 5.0
    assert st_.avg_ments == 1.5
    assert st_.avg_ments_len == 2.0
    assert st_.n_sents == {"train": 2, "val": 1, "test": 1}
    assert st_.n_ments == {"train": 3, "val": 0, "test": 1}
    assert st_.n_classes == 2


def test_stats_json_field_names():
    d = json.loads(compute_dataset_stats(_split()).to_json())
    assert set(d) == {"n_sents", "n_classes", "avg_sent_len", "n_ments", "avg_ments", "avg_ments_len"}


def test_stats_ncbi_shaped():
    # 5432 train sentences carrying 5134 single-token mentions
    train = [seq(["B-D"] if i < 5134 else ["O"], f"s{i}") for i in range(5432)]
    st_ = compute_dataset_stats(DatasetSplit.from_splits(train))
    assert st_.avg_ments == pytest.approx(5134 / 5432)
    assert st_.display()["avg_ments"] == 0.95


def test_stats_zero_mentions_and_empty():
    st_ = compute_dataset_stats(DatasetSplit.from_splits([seq(["O", "O"])]))
    assert st_.avg_ments == 0.0
    with pytest.raises(EmptySplitError):
        compute_dataset_stats(DatasetSplit.from_splits([]))


def test_stats_duplication_linearity():
    base = _split()
    doubled = DatasetSplit.from_splits(
        [*base.train, *(TokenSequence(s.id + "x", s.tokens, s.tags) for s in base.train)])
    a, b = compute_dataset_stats(base), compute_dataset_stats(doubled)
    assert (a.avg_sent_len, a.avg_ments, a.avg_ments_len) == (b.avg_sent_len, b.avg_ments, b.avg_ments_len)
    assert b.n_sents["train"] == 2 * a.n_sents["train"]
    assert b.n_ments["train"] == 2 * a.n_ments["train"]


def test_duplicate_ids_rejected():
    with pytest.raises(ValueError):
        DatasetSplit.from_splits([seq(["O"], "x")], [seq(["O"], "x")])


def test_token_vocabulary():
    train = [seq(["O"] * 4, tokens=["a", "b", "a", "a"])]
    v = build_vocabulary(train, min_freq=2)
    assert "a" in v and "b" not in v
    assert v.id("b") == v.unk_id
    assert len({v.pad_id, v.unk_id, v.mask_id}) == 3
    v1 = build_vocabulary(train, min_freq=1)
    assert "b" in v1
    assert build_vocabulary(train, 1).itos == v1.itos


def test_dataset_manifest_round_trip(tmp_path):
    split = _split()
    manifest = write_dataset(split, tmp_path)
    loaded, repairs = load_dataset(manifest)
    assert repairs == 0
    assert [s.tags for s in loaded.train] == [s.tags for s in split.train]
    assert loaded.class_set == ("A", "B")


def test_toml_manifest_with_dev_split(tmp_path):
    (tmp_path / "tr.txt").write_text("a\tB-A\nb\tO\n\nc\tI-B\n")
    (tmp_path / "dv.txt").write_text("d\tO\n")
    (tmp_path / "ds.toml").write_text('name = "tiny"\ntrain = "tr.txt"\ndev = "dv.txt"\n')
    split, repairs = load_dataset(tmp_path / "ds.toml")
    assert repairs == 1
    assert split.name == "tiny"
    assert [s.tokens for s in split.val] == [("d",)]
    assert split.test == ()
