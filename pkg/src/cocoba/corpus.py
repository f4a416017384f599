"""Postings, datasets, and the labeled/unlabeled/test pool bookkeeping.

Labels are +1 (positive) / -1 (negative) everywhere. Term spans are byte
offsets into the UTF-8 encoding of the posting text.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

CANONICAL_TOKEN = "<QTERM>"

POSITIVE = 1
NEGATIVE = -1
VALID_LABELS = (POSITIVE, NEGATIVE)

TRAIN = "train"
TEST = "test"


class MissingTerm(ValueError):
    """No query term occurs in the posting text."""


class InsufficientData(ValueError):
    """Not enough labeled train postings to seed the pool."""


class UnknownId(KeyError):
    """Posting id is not in the unlabeled pool."""


class AlreadyLabeled(ValueError):
    """Posting id has already been committed to the labeled pool."""


def byte_length(text: str) -> int:
    return len(text.encode("utf-8"))


def char_span_to_byte_span(text: str, start: int, end: int) -> tuple[int, int]:
    """Convert a character span into a UTF-8 byte span."""
    return byte_length(text[:start]), byte_length(text[:end])


def byte_slice(text: str, start: int, end: int) -> str:
    """Extract the substring covered by a UTF-8 byte span."""
    return text.encode("utf-8")[start:end].decode("utf-8")


@dataclass(frozen=True)
class Posting:
    """One short document with query-term occurrence spans.

    Spans are normalized to ascending byte order on construction; they must
    be non-empty, in-bounds, and non-overlapping.
    """

    id: str
    text: str
    term_spans: tuple[tuple[int, int], ...]
    gold_label: Optional[int] = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("posting id must be non-empty")
        spans = tuple(sorted((int(s), int(e)) for s, e in self.term_spans))
        object.__setattr__(self, "term_spans", spans)
        if not spans:
            raise ValueError(f"posting {self.id!r}: term_spans must be non-empty")
        limit = byte_length(self.text)
        prev_end = 0
        for start, end in spans:
            if not (0 <= start < end <= limit):
                raise ValueError(
                    f"posting {self.id!r}: span ({start}, {end}) out of bounds for {limit} bytes"
                )
            if start < prev_end:
                raise ValueError(f"posting {self.id!r}: overlapping term spans")
            prev_end = end
        if self.gold_label is not None and self.gold_label not in VALID_LABELS:
            raise ValueError(f"posting {self.id!r}: gold_label must be +1/-1 or None")

    def span_texts(self) -> tuple[str, ...]:
        return tuple(byte_slice(self.text, s, e) for s, e in self.term_spans)


def select_anchor_span(posting: Posting) -> tuple[int, int]:
    """First query-term occurrence in document order; anchors the word view."""
    return posting.term_spans[0]


def _term_pattern(query_terms: Iterable[str]) -> re.Pattern:
    # Longest terms first so e.g. "diabetics" wins over "diabetic" at a shared
    # prefix; lookarounds give word-token boundaries without \b edge cases.
    ordered = sorted(set(query_terms), key=len, reverse=True)
    alternatives = "|".join(re.escape(t) for t in ordered)
    return re.compile(rf"(?<!\w)(?:{alternatives})(?!\w)", re.IGNORECASE)


def canonicalize_terms(posting: Posting, query_terms: list[str] | tuple[str, ...]) -> Posting:
    """Replace every query-term occurrence with the single synthesized token.

    Occurrence count is preserved as the new span count, and the operation is
    idempotent: already-canonical tokens are left untouched.

    Raises MissingTerm when the text contains neither a query term nor a
    canonical token.
    """
    if not query_terms:
        raise ValueError("query_terms must be non-empty")
    text = posting.text
    canonical_spans = [m.span() for m in re.finditer(re.escape(CANONICAL_TOKEN), text)]

    def inside_canonical(span: tuple[int, int]) -> bool:
        return any(s <= span[0] and span[1] <= e for s, e in canonical_spans)

    matches = [m.span() for m in _term_pattern(query_terms).finditer(text)]
    matches = [m for m in matches if not inside_canonical(m)]
    if not matches and not canonical_spans:
        raise MissingTerm(f"posting {posting.id!r}: no query term found")

    pieces = []
    cursor = 0
    for start, end in matches:
        pieces.append(text[cursor:start])
        pieces.append(CANONICAL_TOKEN)
        cursor = end
    pieces.append(text[cursor:])
    new_text = "".join(pieces)

    spans = tuple(
        char_span_to_byte_span(new_text, m.start(), m.end())
        for m in re.finditer(re.escape(CANONICAL_TOKEN), new_text)
    )
    return Posting(posting.id, new_text, spans, posting.gold_label)


@dataclass(frozen=True)
class Dataset:
    """A corpus of postings plus the query terms that retrieved them."""

    postings: tuple[Posting, ...]
    query_terms: tuple[str, ...]
    split: dict[str, str]  # posting id -> "train" | "test"
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "postings", tuple(self.postings))
        object.__setattr__(self, "query_terms", tuple(self.query_terms))
        if not self.query_terms:
            raise ValueError("query_terms must be non-empty")
        ids = [p.id for p in self.postings]
        if len(set(ids)) != len(ids):
            raise ValueError("posting ids must be unique")
        if set(self.split) != set(ids):
            raise ValueError("split must tag exactly the posting ids")
        if not set(self.split.values()) <= {TRAIN, TEST}:
            raise ValueError("split values must be 'train' or 'test'")
        lowered = {t.lower() for t in self.query_terms}
        for p in self.postings:
            for piece in p.span_texts():
                if piece != CANONICAL_TOKEN and piece.lower() not in lowered:
                    raise ValueError(
                        f"posting {p.id!r}: span text {piece!r} is not a query term"
                    )

    @cached_property
    def by_id(self) -> dict[str, Posting]:
        return {p.id: p for p in self.postings}

    @property
    def train_ids(self) -> tuple[str, ...]:
        return tuple(sorted(i for i, s in self.split.items() if s == TRAIN))

    @property
    def test_ids(self) -> tuple[str, ...]:
        return tuple(sorted(i for i, s in self.split.items() if s == TEST))

    def posting(self, posting_id: str) -> Posting:
        return self.by_id[posting_id]

    def canonicalized(self) -> "Dataset":
        """Dataset with every posting's query terms collapsed to the canonical token."""
        postings = tuple(canonicalize_terms(p, self.query_terms) for p in self.postings)
        return Dataset(postings, self.query_terms, dict(self.split), self.name)


@dataclass
class PoolState:
    """Labeled / unlabeled / test pools. Mutation belongs to a single owner."""

    labels: dict[str, int] = field(default_factory=dict)   # L
    unlabeled: set[str] = field(default_factory=set)       # U
    test: set[str] = field(default_factory=set)            # T

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        l_ids = set(self.labels)
        if l_ids & self.unlabeled or l_ids & self.test or self.unlabeled & self.test:
            raise ValueError("labeled, unlabeled, and test pools must be disjoint")
        for pid, label in self.labels.items():
            if label not in VALID_LABELS:
                raise ValueError(f"label for {pid!r} must be +1/-1, got {label!r}")

    def commit(self, posting_id: str, label: int) -> None:
        """Move one posting from the unlabeled pool to the labeled pool."""
        if label not in VALID_LABELS:
            raise ValueError(f"label must be +1/-1, got {label!r}")
        if posting_id in self.labels:
            raise AlreadyLabeled(f"{posting_id!r} is already labeled")
        if posting_id not in self.unlabeled:
            raise UnknownId(posting_id)
        self.unlabeled.discard(posting_id)
        self.labels[posting_id] = label

    def copy(self) -> "PoolState":
        return PoolState(dict(self.labels), set(self.unlabeled), set(self.test))

    def to_json(self) -> str:
        """Canonical serialization; byte-identical for equal pool states."""
        doc = {
            "labeled": [[pid, self.labels[pid]] for pid in sorted(self.labels)],
            "unlabeled": sorted(self.unlabeled),
            "test": sorted(self.test),
        }
        return json.dumps(doc, separators=(",", ":"), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PoolState":
        doc = json.loads(text)
        return cls(
            {pid: int(lab) for pid, lab in doc["labeled"]},
            set(doc["unlabeled"]),
            set(doc["test"]),
        )


def cold_start_split(dataset: Dataset, n_seed: int, rng_seed: int) -> PoolState:
    """Seed the pool with n_seed uniformly drawn labeled train postings.

    The draw is over the gold-labeled train postings (id-sorted, without
    replacement), so equal seeds give identical pools on any platform. The
    rest of the train split becomes the unlabeled pool; the test split is
    carried through untouched.
    """
    if n_seed < 1:
        raise ValueError("n_seed must be >= 1")
    train_ids = dataset.train_ids
    labeled_candidates = [i for i in train_ids if dataset.posting(i).gold_label is not None]
    if len(train_ids) < n_seed or len(labeled_candidates) < n_seed:
        raise InsufficientData(
            f"need {n_seed} gold-labeled train postings, have {len(labeled_candidates)}"
        )
    rng = np.random.default_rng(rng_seed)
    chosen = rng.choice(np.array(labeled_candidates, dtype=object), size=n_seed, replace=False)
    labels = {pid: int(dataset.posting(pid).gold_label) for pid in chosen}
    unlabeled = set(train_ids) - set(labels)
    return PoolState(labels, unlabeled, set(dataset.test_ids))


def load_dataset(data_path: str | Path, meta_path: str | Path) -> Dataset:
    """Read a dataset from a JSON Lines posting file plus its sidecar header."""
    meta = json.loads(Path(meta_path).read_text(encoding="utf-8"))
    postings = []
    split = {}
    with open(data_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{data_path}:{lineno}: bad JSON ({exc})") from exc
            label = rec.get("label")
            postings.append(
                Posting(
                    id=rec["id"],
                    text=rec["text"],
                    term_spans=tuple((int(s), int(e)) for s, e in rec["spans"]),
                    gold_label=None if label is None else int(label),
                )
            )
            split[rec["id"]] = rec["split"]
    return Dataset(
        postings=tuple(postings),
        query_terms=tuple(meta["query_terms"]),
        split=split,
        name=meta.get("name", ""),
    )


def write_dataset(dataset: Dataset, data_path: str | Path, meta_path: str | Path) -> None:
    with open(data_path, "w", encoding="utf-8") as fh:
        for p in dataset.postings:
            rec = {
                "id": p.id,
                "text": p.text,
                "spans": [list(s) for s in p.term_spans],
                "label": p.gold_label,
                "split": dataset.split[p.id],
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
    meta = {"query_terms": list(dataset.query_terms), "name": dataset.name}
    Path(meta_path).write_text(json.dumps(meta, separators=(",", ":")) + "\n", encoding="utf-8")
