"""BIO corpus ingestion, entity spans, token vocabulary and dataset statistics."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

PAD, UNK, MASK = "[PAD]", "[UNK]", "[MASK]"
OUTSIDE = "O"
_TAG_RE = re.compile(r"^(?:O|[BI]-\S+)$")


class CorpusError(ValueError):
    pass


class ConllParseError(CorpusError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class EmptySplitError(CorpusError):
    pass


@dataclass(frozen=True)
class EntitySpan:
    start: int
    end: int
    label: str

    def __len__(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class TokenSequence:
    id: str
    tokens: tuple[str, ...]
    tags: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.tags):
            raise CorpusError(f"{self.id}: {len(self.tokens)} tokens but {len(self.tags)} tags")
        if not self.tokens:
            raise CorpusError(f"{self.id}: empty sequence")

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def spans(self) -> list[EntitySpan]:
        return extract_entity_spans(self)


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[TokenSequence, ...]
    val: tuple[TokenSequence, ...] = ()
    test: tuple[TokenSequence, ...] = ()
    class_set: tuple[str, ...] = ()
    bio_label_set: tuple[str, ...] = ()
    name: str = "dataset"

    @classmethod
    def from_splits(cls, train, val=(), test=(), name: str = "dataset") -> "DatasetSplit":
        train, val, test = tuple(train), tuple(val), tuple(test)
        ids = [s.id for s in (*train, *val, *test)]
        if len(set(ids)) != len(ids):
            raise CorpusError("sequence ids are not unique across splits")
        classes = sorted({sp.label for s in (*train, *val, *test) for sp in s.spans})
        return cls(train, val, test, tuple(classes), bio_labels(classes), name)

    def splits(self) -> dict[str, tuple[TokenSequence, ...]]:
        return {"train": self.train, "val": self.val, "test": self.test}


def bio_labels(classes: Iterable[str]) -> tuple[str, ...]:
    """``O`` first, then ``B-``/``I-`` pairs in class order."""
    labels = [OUTSIDE]
    for c in classes:
        labels += [f"B-{c}", f"I-{c}"]
    return tuple(labels)


# ---------------------------------------------------------------------------
# BIO handling
# ---------------------------------------------------------------------------

def split_tag(tag: str) -> tuple[str, str | None]:
    if tag == OUTSIDE:
        return OUTSIDE, None
    prefix, label = tag.split("-", 1)
    return prefix, label


def repair_tags(tags: Sequence[str]) -> tuple[tuple[str, ...], int]:
    """Rewrite orphan ``I-X`` tags to ``B-X``.

    An ``I-X`` is an orphan when it opens the sequence, follows ``O`` or
    follows a tag of another class. Returns the repaired tags and the number
    of rewrites.
    """
    out: list[str] = []
    repairs = 0
    prev_label = None
    for tag in tags:
        prefix, label = split_tag(tag)
        if prefix == "I" and prev_label != label:
            tag = f"B-{label}"
            repairs += 1
        out.append(tag)
        prev_label = label
    return tuple(out), repairs


def extract_entity_spans(seq: TokenSequence | Sequence[str]) -> list[EntitySpan]:
    """Maximal entity spans in start order.

    A ``B-`` always opens a new span, so ``[B-A, B-B, I-B]`` yields two spans.
    Accepts a sequence or a bare tag list (already repaired).
    """
    tags = seq.tags if isinstance(seq, TokenSequence) else seq
    spans: list[EntitySpan] = []
    start = label = None
    for i, tag in enumerate(tags):
        prefix, cls = split_tag(tag)
        if prefix == "I" and cls == label:
            continue
        if label is not None:
            spans.append(EntitySpan(start, i, label))
            start = label = None
        if prefix in ("B", "I"):
            start, label = i, cls
    if label is not None:
        spans.append(EntitySpan(start, len(tags), label))
    return spans


def spans_to_tags(spans: Iterable[EntitySpan], length: int) -> tuple[str, ...]:
    tags = [OUTSIDE] * length
    for sp in spans:
        tags[sp.start] = f"B-{sp.label}"
        for i in range(sp.start + 1, sp.end):
            tags[i] = f"I-{sp.label}"
    return tuple(tags)


# ---------------------------------------------------------------------------
# CoNLL I/O
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FormatConfig:
    """How to read one CoNLL file.

    ``delimiter=None`` splits on any run of whitespace (tab or space).
    """

    delimiter: str | None = None
    id_prefix: str = "s"
    comment_prefix: str | None = "-DOCSTART-"


@dataclass
class ParseResult:
    sequences: list[TokenSequence]
    repairs: int = 0
    warnings: list[str] = field(default_factory=list)


def parse_conll(raw_text: str, config: FormatConfig = FormatConfig()) -> ParseResult:
    sequences: list[TokenSequence] = []
    result = ParseResult(sequences)
    tokens: list[str] = []
    tags: list[str] = []
    first_line = 0

    def flush():
        if not tokens:
            return
        fixed, n = repair_tags(tags)
        if n:
            result.repairs += n
            result.warnings.append(f"line {first_line}: repaired {n} orphan I- tag(s)")
        sequences.append(TokenSequence(f"{config.id_prefix}{len(sequences)}", tuple(tokens), fixed))
        tokens.clear()
        tags.clear()

    for line_no, line in enumerate(raw_text.splitlines(), start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            flush()
            continue
        if config.comment_prefix and line.startswith(config.comment_prefix):
            continue
        fields = line.split(config.delimiter) if config.delimiter else line.split()
        if len(fields) != 2:
            raise ConllParseError(line_no, f"expected 2 fields, got {len(fields)}")
        token, tag = fields
        if not _TAG_RE.match(tag):
            raise ConllParseError(line_no, f"malformed tag {tag!r}")
        if not tokens:
            first_line = line_no
        tokens.append(token)
        tags.append(tag)
    flush()

    if not sequences:
        raise EmptySplitError("no sentences found")
    return result


def read_conll(path: str | Path, config: FormatConfig = FormatConfig()) -> ParseResult:
    text = Path(path).read_text(encoding="utf-8")
    return parse_conll(text, config)


def to_conll(sequences: Iterable[TokenSequence]) -> str:
    blocks = ["".join(f"{t}\t{g}\n" for t, g in zip(s.tokens, s.tags)) for s in sequences]
    return "\n".join(blocks) + ("\n" if blocks else "")


def load_manifest(path: str | Path) -> dict:
    path = Path(path)
    if path.suffix == ".toml":
        with open(path, "rb") as fh:
            manifest = tomllib.load(fh)
    else:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    if "train" not in manifest:
        raise CorpusError(f"{path}: manifest has no 'train' entry")
    return manifest


def load_dataset(manifest_path: str | Path) -> tuple[DatasetSplit, int]:
    """Load the splits named in a manifest. Returns the split and total repairs."""
    manifest_path = Path(manifest_path)
    manifest = load_manifest(manifest_path)
    root = manifest_path.parent
    parsed = {}
    repairs = 0
    for split in ("train", "val", "test"):
        key = "dev" if split == "val" and "val" not in manifest else split
        if key not in manifest:
            parsed[split] = []
            continue
        res = read_conll(root / manifest[key], FormatConfig(id_prefix=f"{split}-"))
        parsed[split] = res.sequences
        repairs += res.repairs
    name = manifest.get("name", manifest_path.parent.name)
    return DatasetSplit.from_splits(parsed["train"], parsed["val"], parsed["test"], name=name), repairs


def write_dataset(split: DatasetSplit, directory: str | Path) -> Path:
    """Write CoNLL files plus a JSON manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"name": split.name}
    for name, seqs in split.splits().items():
        if not seqs:
            continue
        (directory / f"{name}.tsv").write_text(to_conll(seqs), encoding="utf-8")
        manifest[name] = f"{name}.tsv"
    out = directory / "manifest.json"
    out.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return out


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetStats:
    n_sents: dict[str, int]
    n_classes: int
    avg_sent_len: float
    n_ments: dict[str, int]
    avg_ments: float
    avg_ments_len: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def display(self) -> dict:
        """Values rounded the way dataset tables print them."""
        d = asdict(self)
        for key in ("avg_sent_len", "avg_ments", "avg_ments_len"):
            d[key] = round(d[key], 2)
        return d


def compute_dataset_stats(split: DatasetSplit) -> DatasetStats:
    if not split.train:
        raise EmptySplitError("train split is empty")
    n_sents = {k: len(v) for k, v in split.splits().items()}
    n_ments = {k: sum(len(s.spans) for s in v) for k, v in split.splits().items()}
    train_spans = [sp for s in split.train for sp in s.spans]
    n_train = len(split.train)
    return DatasetStats(
        n_sents=n_sents,
        n_classes=len(split.class_set),
        avg_sent_len=sum(len(s) for s in split.train) / n_train,
        n_ments=n_ments,
        avg_ments=n_ments["train"] / n_train,
        avg_ments_len=(sum(len(sp) for sp in train_spans) / len(train_spans)) if train_spans else 0.0,
    )


# ---------------------------------------------------------------------------
# Token vocabulary
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TokenVocabulary:
    itos: tuple[str, ...]

    RESERVED = (PAD, UNK, MASK)

    def __post_init__(self):
        object.__setattr__(self, "_stoi", {t: i for i, t in enumerate(self.itos)})

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def mask_id(self) -> int:
        return 2

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self._stoi

    def id(self, token: str) -> int:
        return self._stoi.get(token, self.unk_id)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id(t) for t in tokens]


def build_vocabulary(train: Sequence[TokenSequence], min_freq: int = 1) -> TokenVocabulary:
    """Frequency-ordered vocabulary; ties broken lexicographically."""
    if not train:
        raise EmptySplitError("cannot build a vocabulary from an empty corpus")
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counts = Counter(t for s in train for t in s.tokens)
    kept = sorted((t for t, c in counts.items() if c >= min_freq and t not in TokenVocabulary.RESERVED),
                  key=lambda t: (-counts[t], t))
    return TokenVocabulary(TokenVocabulary.RESERVED + tuple(kept))
