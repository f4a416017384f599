"""Reference query strategies: uniform random and uncertainty sampling.

Both consume the identical feature content as the engine by training one
learner on the doc+word concatenation, and both mutate the shared PoolState
through the same commit path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cocoba.corpus import PoolState
from cocoba.embeddings import EmbeddingSnapshot
from cocoba.engine import EmptyUnlabeledPool, QueryResult
from cocoba.learner import LearnerConfig, LinearLearner, train_committee

BASELINE_KINDS = ("random", "uncertainty")


@dataclass(frozen=True)
class BaselineConfig:
    kind: str
    rng_seed: int = 0
    learner: LearnerConfig = field(default_factory=LearnerConfig)

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise ValueError(f"kind must be one of {BASELINE_KINDS}, got {self.kind!r}")


def concat_views(snapshot: EmbeddingSnapshot, ids) -> np.ndarray:
    """Row matrix of doc+word concatenations, in the order given."""
    doc, word = snapshot.stack(ids)
    return np.hstack([doc, word])


def random_query(unlabeled_ids, rng: np.random.Generator) -> str:
    """Uniform draw over the id-sorted unlabeled pool."""
    ids = sorted(unlabeled_ids)
    if not ids:
        raise EmptyUnlabeledPool("nothing left to query")
    return ids[int(rng.integers(0, len(ids)))]


def uncertainty_query(learner: LinearLearner, unlabeled_ids, snapshot: EmbeddingSnapshot) -> str:
    """Least-confident posting under the concatenated-view learner.

    Returns the argmin of |confidence| over the unlabeled pool; ties break
    on lexicographic id (ids scanned in sorted order, strict improvement).
    """
    ids = sorted(unlabeled_ids)
    if not ids:
        raise EmptyUnlabeledPool("nothing left to query")
    conf = np.abs(np.atleast_1d(learner.confidence(concat_views(snapshot, ids))))
    return ids[int(np.argmin(conf))]


def train_concat_learner(pool: PoolState, snapshot: EmbeddingSnapshot,
                         config: LearnerConfig) -> LinearLearner:
    ids = sorted(pool.labels)
    X = concat_views(snapshot, ids)
    y = np.array([pool.labels[pid] for pid in ids], dtype=float)
    W, b, _ = train_committee(X[None], y[None], config)
    return LinearLearner(W[0], float(b[0]), config)


class BaselineStrategy:
    """Engine-shaped iteration API (next_query / commit_label / predict)."""

    def __init__(self, snapshot: EmbeddingSnapshot, pool: PoolState, config: BaselineConfig):
        snapshot.validate_coverage(sorted(set(pool.labels) | pool.unlabeled | pool.test))
        self.snapshot = snapshot
        self.pool = pool
        self.config = config
        self.rng = np.random.default_rng(config.rng_seed)
        self.model: LinearLearner | None = None
        self.pending: QueryResult | None = None
        self.iterations = 0

    def next_query(self) -> QueryResult:
        if self.pending is not None:
            return self.pending
        if not self.pool.unlabeled:
            raise EmptyUnlabeledPool("unlabeled pool exhausted")
        if self.config.kind == "random":
            query_id = random_query(self.pool.unlabeled, self.rng)
        else:
            self.model = train_concat_learner(self.pool, self.snapshot, self.config.learner)
            query_id = uncertainty_query(self.model, self.pool.unlabeled, self.snapshot)
        self.pending = QueryResult(query_id=query_id, fallback=False, aggregate=None,
                                   n_candidates=len(self.pool.unlabeled))
        return self.pending

    def commit_label(self, posting_id: str, label: int) -> None:
        self.pool.commit(posting_id, label)
        self.iterations += 1
        self.pending = None
        self.model = None  # retrained on demand from the grown pool

    def predict(self, posting_ids) -> dict[str, int]:
        if self.model is None:
            self.model = train_concat_learner(self.pool, self.snapshot, self.config.learner)
        conf = np.atleast_1d(self.model.confidence(concat_views(self.snapshot, list(posting_ids))))
        return {pid: (1 if c >= 0 else -1) for pid, c in zip(posting_ids, conf)}

    def swap_snapshot(self, new: EmbeddingSnapshot) -> None:
        new.validate_coverage(sorted(set(self.pool.labels) | self.pool.unlabeled | self.pool.test))
        self.snapshot = new
        self.model = None
        self.pending = None
