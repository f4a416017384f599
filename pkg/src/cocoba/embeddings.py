"""Two-view vector representations and embedding snapshot files.

A snapshot carries, per posting, a document-level vector and a word-level
(query-anchor context) vector. Snapshots are produced offline and swapped
in whole; nothing here runs a neural model. For self-contained runs a
deterministic signed-hash embedder is provided.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from cocoba.corpus import CANONICAL_TOKEN, Dataset, Posting, select_anchor_span

MAGIC = b"CVEC1"

_TOKEN_RE = re.compile(rf"{re.escape(CANONICAL_TOKEN)}|\w+")


class FormatError(ValueError):
    """Snapshot file is malformed (truncation, count mismatch, non-finite values)."""


class DimMismatch(ValueError):
    """Vector length disagrees with the snapshot header dims."""


class DuplicateId(ValueError):
    """The same posting id appears twice in one snapshot."""


class CoverageError(ValueError):
    """A snapshot is missing vectors for ids in the active dataset."""


class EmptyContextWarning(UserWarning):
    """Posting had no context tokens; word view fell back to the doc view."""


class ViewVectors:
    """The (doc, word) dense vector pair for one posting.

    Held as float64 in memory; the binary wire format stores float32, so
    vectors loaded from disk are exactly f32-representable.
    """

    __slots__ = ("doc", "word")

    def __init__(self, doc: np.ndarray, word: np.ndarray):
        doc = np.asarray(doc, dtype=np.float64)
        word = np.asarray(word, dtype=np.float64)
        if doc.ndim != 1 or word.ndim != 1:
            raise ValueError("view vectors must be one-dimensional")
        if not (np.isfinite(doc).all() and np.isfinite(word).all()):
            raise FormatError("view vectors must be finite")
        doc.setflags(write=False)
        word.setflags(write=False)
        self.doc = doc
        self.word = word

    @property
    def dims(self) -> tuple[int, int]:
        return len(self.doc), len(self.word)

    def __eq__(self, other):
        return (
            isinstance(other, ViewVectors)
            and np.array_equal(self.doc, other.doc)
            and np.array_equal(self.word, other.word)
        )

    def __repr__(self):
        return f"ViewVectors(dims={self.dims})"


@dataclass
class EmbeddingSnapshot:
    """All view vectors for one corpus, at one embedding generation."""

    dims: tuple[int, int]
    vectors: dict[str, ViewVectors]
    epoch: int = 0

    def __post_init__(self):
        d_doc, d_word = self.dims
        if d_doc < 1 or d_word < 1:
            raise ValueError("snapshot dims must be positive")
        for pid, vv in self.vectors.items():
            if vv.dims != (d_doc, d_word):
                raise DimMismatch(f"{pid!r}: vector dims {vv.dims} != header {self.dims}")

    def __eq__(self, other):
        return (
            isinstance(other, EmbeddingSnapshot)
            and self.dims == other.dims
            and self.epoch == other.epoch
            and self.vectors == other.vectors
        )

    def validate_coverage(self, ids) -> None:
        missing = [i for i in ids if i not in self.vectors]
        if missing:
            raise CoverageError(f"snapshot missing {len(missing)} ids, e.g. {missing[:3]}")

    def stack(self, ids) -> tuple[np.ndarray, np.ndarray]:
        """Doc and word matrices (float64) for the given ids, in the given order."""
        docs = np.stack([self.vectors[i].doc for i in ids])
        words = np.stack([self.vectors[i].word for i in ids])
        return docs, words


def _token_vector(token: str, dim: int) -> np.ndarray:
    # Stable across runs and platforms: the token's blake2b digest seeds the
    # generator, with the dim mixed in so the two views decorrelate.
    digest = hashlib.blake2b(f"{dim}:{token}".encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.integers(0, 2, size=dim).astype(np.float64) * 2.0 - 1.0


def _normalize(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    return vec if norm == 0.0 else vec / norm


def _tokens_with_offsets(text: str) -> list[tuple[str, int, int]]:
    return [(m.group(0), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def hash_embed(posting: Posting, dims: tuple[int, int] = (64, 32), window: int = 5) -> ViewVectors:
    """Deterministic two-view embedding of a canonicalized posting.

    Doc view: L2-normalized sum of signed-hash token vectors over all tokens.
    Word view: the same sum restricted to `window` tokens on each side of the
    query anchor token, canonical tokens excluded. A posting with no context
    tokens falls back to the doc view and emits EmptyContextWarning.
    """
    d_doc, d_word = dims
    if d_doc < 8 or d_word < 8:
        raise ValueError("hash_embed dims must be >= 8")
    tokens = _tokens_with_offsets(posting.text)
    if not tokens:
        raise ValueError(f"posting {posting.id!r} has no tokens")

    doc = np.zeros(d_doc)
    for tok, _, _ in tokens:
        doc += _token_vector(tok.lower() if tok != CANONICAL_TOKEN else tok, d_doc)
    doc = _normalize(doc)

    anchor_start_byte, _ = select_anchor_span(posting)
    anchor_start = len(posting.text.encode("utf-8")[:anchor_start_byte].decode("utf-8"))
    anchor_idx = next(
        (i for i, (_, s, e) in enumerate(tokens) if s <= anchor_start < e), None
    )
    if anchor_idx is None:
        raise ValueError(f"posting {posting.id!r}: anchor span does not cover a token")

    lo = max(0, anchor_idx - window)
    context = tokens[lo:anchor_idx] + tokens[anchor_idx + 1 : anchor_idx + 1 + window]
    context = [t for t in context if t[0] != CANONICAL_TOKEN]
    if not context:
        warnings.warn(
            f"posting {posting.id!r} has no context tokens; word view = doc view",
            EmptyContextWarning,
            stacklevel=2,
        )
        # np.resize tiles deterministically when the dims differ.
        word = doc.copy() if d_word == d_doc else _normalize(np.resize(doc, d_word))
    else:
        word = np.zeros(d_word)
        for tok, _, _ in context:
            word += _token_vector(tok.lower(), d_word)
        word = _normalize(word)
    return ViewVectors(doc, word)


def snapshot_from_hash(dataset: Dataset, dims: tuple[int, int] = (64, 32),
                       window: int = 5, epoch: int = 0) -> EmbeddingSnapshot:
    """Embed a whole (canonicalized) dataset with the built-in hash embedder."""
    vectors = {p.id: hash_embed(p, dims=dims, window=window) for p in dataset.postings}
    return EmbeddingSnapshot(dims=dims, vectors=vectors, epoch=epoch)


def write_snapshot(snapshot: EmbeddingSnapshot, path: str | Path) -> None:
    """Write the binary snapshot format (records in id-sorted order)."""
    d_doc, d_word = snapshot.dims
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", len(snapshot.vectors), d_doc, d_word))
        for pid in sorted(snapshot.vectors):
            id_bytes = pid.encode("utf-8")
            if len(id_bytes) > 0xFFFF:
                raise ValueError(f"id too long for u16 length prefix: {pid!r}")
            vv = snapshot.vectors[pid]
            fh.write(struct.pack("<H", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(vv.doc.astype("<f4").tobytes())
            fh.write(vv.word.astype("<f4").tobytes())


def write_snapshot_jsonl(snapshot: EmbeddingSnapshot, path: str | Path) -> None:
    """Write the JSON Lines interop form of a snapshot."""
    with open(path, "w", encoding="utf-8") as fh:
        for pid in sorted(snapshot.vectors):
            vv = snapshot.vectors[pid]
            rec = {"id": pid, "doc": [float(x) for x in vv.doc], "word": [float(x) for x in vv.word]}
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated snapshot while reading {what}")
    return data


def _load_binary(path: Path) -> EmbeddingSnapshot:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(MAGIC), "magic")
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        count, d_doc, d_word = struct.unpack("<III", _read_exact(fh, 12, "header"))
        if d_doc < 1 or d_word < 1:
            raise FormatError("header dims must be positive")
        vectors: dict[str, ViewVectors] = {}
        for i in range(count):
            (id_len,) = struct.unpack("<H", _read_exact(fh, 2, f"record {i} id length"))
            pid = _read_exact(fh, id_len, f"record {i} id").decode("utf-8")
            doc = np.frombuffer(_read_exact(fh, 4 * d_doc, f"record {i} doc"), dtype="<f4")
            word = np.frombuffer(_read_exact(fh, 4 * d_word, f"record {i} word"), dtype="<f4")
            if not (np.isfinite(doc).all() and np.isfinite(word).all()):
                raise FormatError(f"record {i} ({pid!r}) contains non-finite values")
            if pid in vectors:
                raise DuplicateId(pid)
            vectors[pid] = ViewVectors(doc.copy(), word.copy())
        if fh.read(1):
            raise FormatError(f"trailing data after {count} declared records")
    return EmbeddingSnapshot(dims=(d_doc, d_word), vectors=vectors)


def _load_jsonl(path: Path) -> EmbeddingSnapshot:
    vectors: dict[str, ViewVectors] = {}
    dims: tuple[int, int] | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                pid, doc, word = rec["id"], rec["doc"], rec["word"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: bad record ({exc})") from exc
            doc = np.asarray(doc, dtype=np.float64)
            word = np.asarray(word, dtype=np.float64)
            if not (np.isfinite(doc).all() and np.isfinite(word).all()):
                raise FormatError(f"{path}:{lineno}: non-finite values")
            if dims is None:
                dims = (len(doc), len(word))
            elif (len(doc), len(word)) != dims:
                raise DimMismatch(f"{path}:{lineno}: dims {(len(doc), len(word))} != {dims}")
            if pid in vectors:
                raise DuplicateId(pid)
            vectors[pid] = ViewVectors(doc, word)
    if dims is None:
        raise FormatError(f"{path}: empty snapshot")
    return EmbeddingSnapshot(dims=dims, vectors=vectors)


def load_snapshot(path: str | Path) -> EmbeddingSnapshot:
    """Load a snapshot, sniffing binary vs. JSON Lines by the magic bytes."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(MAGIC))
    if head == MAGIC:
        return _load_binary(path)
    return _load_jsonl(path)


def swap_snapshot(engine_handle, new: EmbeddingSnapshot):
    """Atomically replace an engine's embedding snapshot.

    Coverage over every pooled id is enforced, all bagged learners and
    density models are marked stale for retraining at the next iteration,
    and the engine's embedding epoch advances. Delegates to the engine's
    single-writer swap.
    """
    return engine_handle.swap_snapshot(new)
