"""Corpus ingestion, vocabulary, pretrained vectors, batching and key-instance files."""

from __future__ import annotations

import hashlib
import json
import logging
import re
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DataError
from .layers import EMBEDDING_INIT

logger = logging.getLogger(__name__)

PAD, UNK = "<pad>", "<unk>"
POLARITY_NAMES = ("Neg", "Neu", "Pos")
POLARITY_INDEX = {name: i for i, name in enumerate(POLARITY_NAMES)}
CONFLICT = "Conflict"
_XML_POLARITY = {"negative": "Neg", "neutral": "Neu", "positive": "Pos", "conflict": CONFLICT}


@dataclass(frozen=True)
class CorpusExample:
    sentence_id: str
    raw_text: str
    tokens: tuple[str, ...]
    labels: tuple[tuple[str, str], ...]

    @property
    def categories(self) -> tuple[str, ...]:
        return tuple(c for c, _ in self.labels)

    def to_json(self) -> str:
        return json.dumps({"id": self.sentence_id, "text": self.raw_text, "tokens": list(self.tokens),
                           "labels": [list(pair) for pair in self.labels]}, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "CorpusExample":
        record = json.loads(line)
        return cls(str(record["id"]), record["text"], tuple(record["tokens"]),
                   tuple((c, p) for c, p in record["labels"]))


# --------------------------------------------------------------------------
# tokenization

_EDGE_PUNCT = re.compile(r"^([^\w]*)(.*?)([^\w]*)$", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, then peel leading/trailing punctuation into single-char tokens."""
    tokens: list[str] = []
    for chunk in text.lower().split():
        lead, core, trail = _EDGE_PUNCT.match(chunk).groups()
        tokens.extend(lead)
        if core:
            tokens.append(core)
        tokens.extend(trail)
    return tokens


# --------------------------------------------------------------------------
# corpora


def parse_semeval_xml(path) -> list[CorpusExample]:
    """Read SemEval-2014 / MAMS style XML; sentences without categories are dropped.

    Conflict labels are kept here (as ``"Conflict"``) and removed by
    :func:`filter_conflicts`.
    """
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        line, col = exc.position
        raise DataError(f"{path}: malformed XML at line {line}, column {col}: {exc}") from None
    examples = []
    for index, sentence in enumerate(root.iter("sentence")):
        container = sentence.find("aspectCategories")
        if container is None:
            continue
        labels = []
        for node in container.findall("aspectCategory"):
            raw = node.get("polarity", "")
            if raw not in _XML_POLARITY:
                raise DataError(f"{path}: sentence {sentence.get('id', index)}: unknown polarity {raw!r}")
            labels.append((node.get("category"), _XML_POLARITY[raw]))
        if not labels:
            continue
        text_node = sentence.find("text")
        text = text_node.text if text_node is not None and text_node.text else ""
        sid = sentence.get("id") or str(index)
        examples.append(CorpusExample(sid, text, tuple(tokenize(text)), tuple(labels)))
    return examples


def read_corpus(path) -> list[CorpusExample]:
    """XML by extension, otherwise the line-delimited JSON corpus format."""
    path = Path(path)
    if path.suffix.lower() == ".xml":
        return parse_semeval_xml(path)
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                examples.append(CorpusExample.from_json(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: bad corpus record: {exc}") from None
    return examples


def write_corpus(path, examples: Iterable[CorpusExample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(ex.to_json() + "\n")


def filter_conflicts(examples: Iterable[CorpusExample]) -> list[CorpusExample]:
    kept = []
    for ex in examples:
        labels = tuple((c, p) for c, p in ex.labels if p != CONFLICT)
        if labels:
            kept.append(ex if labels == ex.labels else CorpusExample(ex.sentence_id, ex.raw_text, ex.tokens, labels))
    return kept


def make_hard_test_set(examples: Iterable[CorpusExample]) -> list[CorpusExample]:
    """Keep sentences with >= 2 categories carrying >= 2 distinct polarities."""
    return [ex for ex in examples
            if len(set(ex.categories)) >= 2 and len({p for _, p in ex.labels}) >= 2]


def read_id_list(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


def split_by_ids(examples: Sequence[CorpusExample], ids: Iterable[str]):
    """Partition into (rest, selected) preserving order."""
    wanted = set(ids)
    selected = [ex for ex in examples if ex.sentence_id in wanted]
    rest = [ex for ex in examples if ex.sentence_id not in wanted]
    return rest, selected


def polarity_counts(examples: Iterable[CorpusExample]) -> dict[str, int]:
    counts = Counter(p for ex in examples for _, p in ex.labels)
    return {name: counts.get(name, 0) for name in ("Pos", "Neg", "Neu")}


def validate_examples(examples: Iterable[CorpusExample], categories: Sequence[str] | None = None) -> None:
    known = None if categories is None else set(categories)
    for ex in examples:
        if not ex.labels:
            raise DataError(f"sentence {ex.sentence_id}: no labels")
        cats = ex.categories
        if len(set(cats)) != len(cats):
            raise DataError(f"sentence {ex.sentence_id}: duplicate category")
        for c, p in ex.labels:
            if p not in POLARITY_INDEX:
                raise DataError(f"sentence {ex.sentence_id}: polarity {p!r} not in {POLARITY_NAMES}")
            if known is not None and c not in known:
                raise DataError(f"sentence {ex.sentence_id}: category {c!r} not in inventory")
        if not ex.tokens:
            raise DataError(f"sentence {ex.sentence_id}: no tokens")


def category_inventory(examples: Iterable[CorpusExample]) -> list[str]:
    return sorted({c for ex in examples for c in ex.categories})


# --------------------------------------------------------------------------
# vocabulary


@dataclass
class Vocabulary:
    tokens: list[str]
    frequencies: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.tokens[:2] != [PAD, UNK]:
            raise ContractError("vocabulary must start with the pad and unknown entries")
        self.index = {t: i for i, t in enumerate(self.tokens)}

    pad_index = 0
    unk_index = 1

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, self.unk_index) for t in tokens]

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()


def build_vocabulary(train_examples: Iterable[CorpusExample], min_count: int = 1) -> Vocabulary:
    """Index 0 is pad, 1 is unknown; the rest ordered by descending frequency then token."""
    freq = Counter(t for ex in train_examples for t in ex.tokens)
    kept = sorted((t for t, n in freq.items() if n >= min_count and t not in (PAD, UNK)),
                  key=lambda t: (-freq[t], t))
    return Vocabulary([PAD, UNK, *kept], dict(freq))


# --------------------------------------------------------------------------
# pretrained vectors


def read_vectors(path, dim: int) -> Iterator[tuple[int, str, np.ndarray]]:
    """Yield (line number, token, vector) from a whitespace-separated text file.

    A leading ``count dim`` header line, as written by word2vec, is skipped.
    """
    with open(path, encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                continue
            if len(parts) != dim + 1:
                raise DataError(f"{path}:{lineno}: expected {dim} values, found {len(parts) - 1}")
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            yield lineno, parts[0], vec


def load_pretrained_vectors(path, vocab: Vocabulary, dim: int = 300,
                            rng: np.random.Generator | None = None) -> tuple[np.ndarray, int]:
    """Embedding matrix for ``vocab`` and the number of rows found in the file.

    Rows absent from the file are drawn uniform(-0.25, 0.25); the pad row is zero.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    matrix = rng.uniform(-EMBEDDING_INIT, EMBEDDING_INIT, size=(len(vocab), dim))
    found = 0
    for _, token, vec in read_vectors(path, dim):
        i = vocab.index.get(token)
        if i is not None and i != vocab.pad_index:
            if not np.isfinite(vec).all():
                raise DataError(f"{path}: non-finite vector for {token!r}")
            matrix[i] = vec
            found += 1
    matrix[vocab.pad_index] = 0.0
    logger.info("pretrained vectors cover %d of %d vocabulary entries", found, len(vocab))
    return matrix, found


def write_vectors(path, items: Iterable[tuple[str, Sequence[float]]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for token, vec in items:
            fh.write(token + " " + " ".join(repr(float(x)) for x in vec) + "\n")


# --------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    ids: np.ndarray  # [B, n] int
    mask: np.ndarray  # [B, n] bool
    acd_targets: np.ndarray  # [B, N] 0/1
    query_mask: np.ndarray  # [B, N] bool, categories whose sentiment is supervised
    gold: np.ndarray  # [B, N] polarity index, -1 where not queried
    examples: list[CorpusExample]

    def __len__(self) -> int:
        return self.ids.shape[0]


def encode_items(examples: Sequence[CorpusExample], vocab: Vocabulary, categories: Sequence[str],
                 mode: str = "multi") -> list[tuple[CorpusExample, tuple[int, ...]]]:
    """Expand examples into training items: (example, queried category ids)."""
    if mode not in ("single", "multi"):
        raise ContractError(f"batch mode must be 'single' or 'multi', got {mode!r}")
    cat_index = {c: j for j, c in enumerate(categories)}
    items = []
    for ex in examples:
        try:
            ids = tuple(cat_index[c] for c in ex.categories)
        except KeyError as exc:
            raise DataError(f"sentence {ex.sentence_id}: category {exc.args[0]!r} not in inventory") from None
        if mode == "multi":
            items.append((ex, ids))
        else:
            items.extend((ex, (j,)) for j in ids)
    return items


def collate(items: Sequence[tuple[CorpusExample, tuple[int, ...]]], vocab: Vocabulary,
            categories: Sequence[str]) -> Batch:
    N = len(categories)
    cat_index = {c: j for j, c in enumerate(categories)}
    width = max(len(ex.tokens) for ex, _ in items)
    B = len(items)
    ids = np.full((B, width), vocab.pad_index, dtype=np.int64)
    mask = np.zeros((B, width), dtype=bool)
    targets = np.zeros((B, N))
    query = np.zeros((B, N), dtype=bool)
    gold = np.full((B, N), -1, dtype=np.int64)
    for b, (ex, queried) in enumerate(items):
        n = len(ex.tokens)
        ids[b, :n] = vocab.encode(ex.tokens)
        mask[b, :n] = True
        polarity = {cat_index[c]: POLARITY_INDEX[p] for c, p in ex.labels}
        for j in polarity:
            targets[b, j] = 1.0
        for j in queried:
            query[b, j] = True
            gold[b, j] = polarity[j]
    return Batch(ids, mask, targets, query, gold, [ex for ex, _ in items])


def batch(examples: Sequence[CorpusExample], size: int, mode: str, rng: np.random.Generator | None,
          vocab: Vocabulary, categories: Sequence[str]) -> Iterator[Batch]:
    """Padded batches for one epoch; shuffled when ``rng`` is given."""
    if size < 1:
        raise ContractError(f"batch size must be >= 1, got {size}")
    items = encode_items(examples, vocab, categories, mode)
    order = np.arange(len(items)) if rng is None else rng.permutation(len(items))
    for start in range(0, len(items), size):
        yield collate([items[i] for i in order[start:start + size]], vocab, categories)


# --------------------------------------------------------------------------
# key-instance annotations


@dataclass(frozen=True)
class KeyInstanceAnnotation:
    sentence_id: str
    category: str
    key_token_polarities: tuple[tuple[int, str], ...]

    @property
    def key_token_positions(self) -> frozenset[int]:
        return frozenset(pos for pos, _ in self.key_token_polarities)

    def to_line(self) -> str:
        pairs = " ".join(f"{pos}:{pol}" for pos, pol in self.key_token_polarities)
        return f"{self.sentence_id}\t{self.category}\t{pairs}"


def _check_annotation(ann: KeyInstanceAnnotation, lengths: dict[str, int] | None, where: str) -> None:
    for pos, pol in ann.key_token_polarities:
        if pol not in POLARITY_INDEX:
            raise DataError(f"{where}: polarity {pol!r} not in {POLARITY_NAMES}")
        if pos < 0:
            raise DataError(f"{where}: negative position {pos}")
        if lengths is not None:
            n = lengths.get(ann.sentence_id)
            if n is None:
                raise DataError(f"{where}: unknown sentence id {ann.sentence_id!r}")
            if pos >= n:
                raise DataError(f"{where}: position {pos} out of range for a {n}-token sentence")
    if len({p for p, _ in ann.key_token_polarities}) != len(ann.key_token_polarities):
        raise DataError(f"{where}: duplicate position")


def read_key_instance_annotations(path, lengths: dict[str, int] | None = None) -> list[KeyInstanceAnnotation]:
    """Tab-separated: sentence id, category, space-separated ``position:polarity`` pairs."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields, found {len(fields)}")
            sid, category, pairs = fields
            try:
                parsed = tuple((int(pos), pol) for pos, pol in (p.split(":", 1) for p in pairs.split()))
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed position:polarity pair in {pairs!r}") from None
            ann = KeyInstanceAnnotation(sid, category, parsed)
            _check_annotation(ann, lengths, f"{path}:{lineno}")
            out.append(ann)
    return out


def write_key_instance_annotations(path, annotations: Iterable[KeyInstanceAnnotation]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ann in annotations:
            fh.write(ann.to_line() + "\n")


def annotation_from_words(example: CorpusExample, category: str,
                          words: Iterable[tuple[str, str]]) -> KeyInstanceAnnotation:
    """Convert word-level key instances (word, polarity) into token positions.

    Every occurrence of a word in the sentence is marked; words are tokenized
    with :func:`tokenize` first so multi-token phrases map to each of their tokens.
    """
    pairs: dict[int, str] = {}
    for word, polarity in words:
        polarity = _XML_POLARITY.get(polarity, polarity)
        parts = tokenize(word)
        if not parts:
            continue
        hits = [i for i in range(len(example.tokens) - len(parts) + 1)
                if tuple(example.tokens[i:i + len(parts)]) == tuple(parts)]
        if not hits:
            raise DataError(f"sentence {example.sentence_id}: key instance {word!r} not found")
        for i in hits:
            for k in range(len(parts)):
                pairs[i + k] = polarity
    ann = KeyInstanceAnnotation(example.sentence_id, category, tuple(sorted(pairs.items())))
    _check_annotation(ann, {example.sentence_id: len(example.tokens)}, f"sentence {example.sentence_id}")
    return ann


def sentence_lengths(examples: Iterable[CorpusExample]) -> dict[str, int]:
    return {ex.sentence_id: len(ex.tokens) for ex in examples}


__all__ = [
    "CorpusExample", "Vocabulary", "KeyInstanceAnnotation", "Batch",
    "tokenize", "parse_semeval_xml", "read_corpus", "write_corpus", "filter_conflicts",
    "make_hard_test_set", "read_id_list", "split_by_ids", "polarity_counts", "validate_examples",
    "category_inventory", "build_vocabulary", "load_pretrained_vectors", "read_vectors", "write_vectors",
    "encode_items", "collate", "batch", "read_key_instance_annotations",
    "write_key_instance_annotations", "annotation_from_words", "sentence_lengths",
]
