"""The bagged two-view co-testing iteration.

One iteration: draw bootstrap samples of the labeled pool, train a (doc,
word) learner pair per bag, collect each bag's contention points (unlabeled
postings the two views assign to opposite classes), fit a density estimator
per view on each bag's contention vectors, score every contention posting
with

    score = p_doc * |conf_doc| + p_word * |conf_word|

inside each bag, aggregate scores across bags by summation, and query the
top posting. Committing a label appends it to every bag sample and retrains
all learners; test predictions use a majority vote over the bag pairs.

Strategies:
    cocoba    - bagging + density-weighted scoring (the full model)
    coba      - bagging, densities pinned to 1 (confidence-only scoring)
    coco      - single bag trained on the full labeled pool, densities on
    cotesting - single bag, densities off (most confident disagreement)
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from cocoba.corpus import PoolState
from cocoba.density import ParzenEstimator, fit as fit_density
from cocoba.embeddings import EmbeddingSnapshot
from cocoba.learner import LearnerConfig, LinearLearner, train_committee

STRATEGIES = ("cocoba", "coba", "coco", "cotesting")


class EmptyLabeledPool(ValueError):
    """Training requested with no labeled postings."""


class EmptyUnlabeledPool(ValueError):
    """Query requested with nothing left to label."""


class NoContention(RuntimeError):
    """No bag produced any contention point; callers fall back to uncertainty."""


@dataclass
class EngineConfig:
    n_estimators: int = 15
    subsample_ratio: float = 0.6
    bandwidth_doc: float = 30.0
    bandwidth_word: float = 45.0
    strategy: str = "cocoba"
    rng_seed: int = 0
    learner: LearnerConfig = field(default_factory=LearnerConfig)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.strategy in ("coco", "cotesting"):
            # Both ablations run a single pair trained on the full labeled pool.
            self.n_estimators = 1
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if not 0.0 < self.subsample_ratio <= 1.0:
            raise ValueError("subsample_ratio must be in (0, 1]")
        if self.bandwidth_doc <= 0 or self.bandwidth_word <= 0:
            raise ValueError("bandwidths must be positive")
        if isinstance(self.learner, dict):
            self.learner = LearnerConfig(**self.learner)

    @property
    def bootstrap(self) -> bool:
        return self.strategy in ("cocoba", "coba")

    @property
    def density_enabled(self) -> bool:
        return self.strategy in ("cocoba", "coco")


@dataclass
class BagState:
    """One bagged replica: its sample, learner pair, and contention artifacts."""

    sample_ids: list[str]
    doc_learner: LinearLearner
    word_learner: LinearLearner
    contention: set[str] = field(default_factory=set)
    doc_density: Optional[ParzenEstimator] = None
    word_density: Optional[ParzenEstimator] = None


@dataclass
class BagScore:
    bag: int
    conf_doc: float
    conf_word: float
    p_doc: float
    p_word: float
    score: float


@dataclass
class ScoredCandidate:
    posting_id: str
    per_bag: list[BagScore] = field(default_factory=list)
    aggregate: float = 0.0


@dataclass
class QueryResult:
    query_id: str
    fallback: bool
    aggregate: Optional[float]
    n_candidates: int
    ranked: list[ScoredCandidate] = field(default_factory=list)


def _contention_mask(conf_doc: np.ndarray, conf_word: np.ndarray) -> np.ndarray:
    # Zero confidence counts as the positive class, mirroring `label >= 0`.
    return (conf_doc >= 0.0) != (conf_word >= 0.0)


def train_bags(pool: PoolState, snapshot: EmbeddingSnapshot, config: EngineConfig,
               rng: Optional[np.random.Generator] = None) -> list[BagState]:
    """Draw per-bag samples of the labeled pool and train a learner pair each.

    Bootstrap strategies draw round(ratio*|L|) ids uniformly with replacement
    from the id-sorted labeled pool; the single-bag strategies use the full
    labeled pool verbatim (no randomness consumed).
    """
    labeled_ids = sorted(pool.labels)
    if not labeled_ids:
        raise EmptyLabeledPool("cannot train with an empty labeled pool")
    if config.bootstrap:
        if rng is None:
            rng = np.random.default_rng(config.rng_seed)
        m = max(1, int(round(config.subsample_ratio * len(labeled_ids))))
        idx = rng.integers(0, len(labeled_ids), size=(config.n_estimators, m))
        samples = [[labeled_ids[j] for j in row] for row in idx]
    else:
        samples = [list(labeled_ids) for _ in range(config.n_estimators)]
    return _fit_bag_learners(samples, pool, snapshot, config)


def _fit_bag_learners(samples: list[list[str]], pool: PoolState,
                      snapshot: EmbeddingSnapshot, config: EngineConfig) -> list[BagState]:
    k = len(samples)
    m = len(samples[0])
    doc_stack = np.empty((k, m, snapshot.dims[0]))
    word_stack = np.empty((k, m, snapshot.dims[1]))
    y = np.empty((k, m))
    for i, sample in enumerate(samples):
        doc_stack[i], word_stack[i] = snapshot.stack(sample)
        y[i] = [pool.labels[pid] for pid in sample]
    w_doc, b_doc, _ = train_committee(doc_stack, y, config.learner)
    w_word, b_word, _ = train_committee(word_stack, y, config.learner)
    return [
        BagState(
            sample_ids=list(samples[i]),
            doc_learner=LinearLearner(w_doc[i], float(b_doc[i]), config.learner),
            word_learner=LinearLearner(w_word[i], float(b_word[i]), config.learner),
        )
        for i in range(k)
    ]


def detect_contention(bag: BagState, unlabeled_ids, snapshot: EmbeddingSnapshot) -> set[str]:
    """Unlabeled ids this bag's two views assign to opposite classes."""
    ids = sorted(unlabeled_ids)
    if not ids:
        return set()
    doc, word = snapshot.stack(ids)
    mask = _contention_mask(bag.doc_learner.confidence(doc), bag.word_learner.confidence(word))
    return {pid for pid, hit in zip(ids, mask) if hit}


def score_candidates(bags: Sequence[BagState], unlabeled_ids, snapshot: EmbeddingSnapshot,
                     config: EngineConfig) -> list[ScoredCandidate]:
    """Rank the union of contention points by cross-bag aggregated scores.

    Fills each bag's contention set and per-view density estimators as a side
    effect. Scores sum over the bags whose contention set holds the posting;
    ties break on lexicographic id. Raises NoContention when every bag agrees
    with itself everywhere.
    """
    ids = sorted(unlabeled_ids)
    if not ids:
        raise EmptyUnlabeledPool("no unlabeled postings to score")
    doc_mat, word_mat = snapshot.stack(ids)
    candidates: dict[str, ScoredCandidate] = {}
    for bag_index, bag in enumerate(bags):
        conf_doc = np.atleast_1d(bag.doc_learner.confidence(doc_mat))
        conf_word = np.atleast_1d(bag.word_learner.confidence(word_mat))
        members = np.flatnonzero(_contention_mask(conf_doc, conf_word))
        bag.contention = {ids[j] for j in members}
        bag.doc_density = bag.word_density = None
        if members.size == 0:
            continue
        if config.density_enabled:
            bag.doc_density = fit_density(doc_mat[members], config.bandwidth_doc)
            bag.word_density = fit_density(word_mat[members], config.bandwidth_word)
            p_doc = bag.doc_density.density_many(doc_mat[members])
            p_word = bag.word_density.density_many(word_mat[members])
        else:
            p_doc = np.ones(members.size)
            p_word = np.ones(members.size)
        scores = p_doc * np.abs(conf_doc[members]) + p_word * np.abs(conf_word[members])
        for j, pd, pw, s in zip(members, p_doc, p_word, scores):
            entry = candidates.setdefault(ids[j], ScoredCandidate(ids[j]))
            entry.per_bag.append(
                BagScore(bag_index, float(conf_doc[j]), float(conf_word[j]),
                         float(pd), float(pw), float(s))
            )
            entry.aggregate += float(s)
    if not candidates:
        raise NoContention("no contention points in any bag")
    return sorted(candidates.values(), key=lambda c: (-c.aggregate, c.posting_id))


def select_query(ranked: Sequence[ScoredCandidate], unlabeled_ids) -> str:
    """Top-ranked contention id still in the unlabeled pool."""
    if not unlabeled_ids:
        raise EmptyUnlabeledPool("nothing left to query")
    pool = set(unlabeled_ids)
    for cand in ranked:
        if cand.posting_id in pool:
            return cand.posting_id
    raise NoContention("ranked candidates are all outside the unlabeled pool")


def predict(bags: Sequence[BagState], posting_ids, snapshot: EmbeddingSnapshot) -> dict[str, int]:
    """Majority-vote labels: a pair votes positive iff its confidence sum >= 0,
    and the final label is positive iff positive pairs reach half the bags."""
    ids = list(posting_ids)
    if not ids:
        return {}
    doc_mat, word_mat = snapshot.stack(ids)
    pcount = np.zeros(len(ids))
    for bag in bags:
        pair_sum = np.atleast_1d(bag.doc_learner.confidence(doc_mat)) + np.atleast_1d(
            bag.word_learner.confidence(word_mat)
        )
        pcount += (pair_sum >= 0.0).astype(float)
    labels = np.where(pcount >= len(bags) / 2.0, 1, -1)
    return {pid: int(lab) for pid, lab in zip(ids, labels)}


def commit_label(engine: "Engine", posting_id: str, label: int) -> None:
    """Commit one oracle answer through the engine's serial iteration API."""
    engine.commit_label(posting_id, label)


class Engine:
    """Single-writer iteration state: pool, snapshot, bags, and the rng stream.

    The caller alternates next_query()/commit_label(); next_query is
    idempotent until the pending query is committed.
    """

    def __init__(self, snapshot: EmbeddingSnapshot, pool: PoolState, config: EngineConfig):
        snapshot.validate_coverage(self._pooled_ids(pool))
        self.snapshot = snapshot
        self.pool = pool
        self.config = config
        self.rng = np.random.default_rng(config.rng_seed)
        self.bags: Optional[list[BagState]] = None
        self.pending: Optional[QueryResult] = None
        self.embedding_epoch = snapshot.epoch
        self.iterations = 0
        self.fallback_queries = 0
        self._stale = False

    @staticmethod
    def _pooled_ids(pool: PoolState) -> list[str]:
        return sorted(set(pool.labels) | pool.unlabeled | pool.test)

    # -- iteration -----------------------------------------------------------

    def next_query(self) -> QueryResult:
        """Train fresh bags and pick the next posting to annotate."""
        if self.pending is not None:
            return self.pending
        if not self.pool.unlabeled:
            raise EmptyUnlabeledPool("unlabeled pool exhausted")
        self.bags = train_bags(self.pool, self.snapshot, self.config, rng=self.rng)
        self._stale = False
        try:
            ranked = score_candidates(self.bags, self.pool.unlabeled, self.snapshot, self.config)
            query_id = select_query(ranked, self.pool.unlabeled)
            result = QueryResult(
                query_id=query_id,
                fallback=False,
                aggregate=ranked[0].aggregate,
                n_candidates=len(ranked),
                ranked=ranked,
            )
        except NoContention:
            query_id = self._uncertainty_fallback()
            self.fallback_queries += 1
            result = QueryResult(query_id=query_id, fallback=True, aggregate=None,
                                 n_candidates=0)
        self.pending = result
        return result

    def _uncertainty_fallback(self) -> str:
        # A single pair trained on the full labeled pool; the least confident
        # posting under |conf_doc + conf_word| is queried, ties on id.
        full_cfg = EngineConfig(
            strategy="cotesting",
            bandwidth_doc=self.config.bandwidth_doc,
            bandwidth_word=self.config.bandwidth_word,
            rng_seed=self.config.rng_seed,
            learner=self.config.learner,
        )
        bag = train_bags(self.pool, self.snapshot, full_cfg)[0]
        ids = sorted(self.pool.unlabeled)
        doc_mat, word_mat = self.snapshot.stack(ids)
        margin = np.abs(
            np.atleast_1d(bag.doc_learner.confidence(doc_mat))
            + np.atleast_1d(bag.word_learner.confidence(word_mat))
        )
        return ids[int(np.argmin(margin))]  # argmin takes the first, ids sorted

    def commit_label(self, posting_id: str, label: int) -> None:
        """Move the posting into the labeled pool, grow every bag sample with
        it, and retrain all learner pairs."""
        self.pool.commit(posting_id, label)
        self.iterations += 1
        self.pending = None
        if self.bags is not None:
            samples = [bag.sample_ids + [posting_id] for bag in self.bags]
            self.bags = _fit_bag_learners(samples, self.pool, self.snapshot, self.config)

    def predict(self, posting_ids) -> dict[str, int]:
        if self.bags is None or self._stale:
            self._retrain_from_samples()
        return predict(self.bags, posting_ids, self.snapshot)

    def _retrain_from_samples(self) -> None:
        if self.bags is None:
            self.bags = train_bags(self.pool, self.snapshot, self.config, rng=self.rng)
        else:
            samples = [bag.sample_ids for bag in self.bags]
            self.bags = _fit_bag_learners(samples, self.pool, self.snapshot, self.config)
        self._stale = False

    # -- snapshot swap -------------------------------------------------------

    def swap_snapshot(self, new: EmbeddingSnapshot) -> int:
        """Atomically replace all cached vectors; learners go stale and the
        embedding epoch advances. Returns the new epoch."""
        new.validate_coverage(self._pooled_ids(self.pool))
        self.snapshot = new
        self._stale = True
        self.pending = None
        self.embedding_epoch += 1
        return self.embedding_epoch

    # -- persistence ---------------------------------------------------------

    def to_checkpoint(self) -> dict:
        """JSON-ready engine state; learner weights are recomputed on load."""
        pending = None
        if self.pending is not None:
            pending = {
                "query_id": self.pending.query_id,
                "fallback": self.pending.fallback,
                "aggregate": self.pending.aggregate,
                "n_candidates": self.pending.n_candidates,
            }
        return {
            "config": asdict(self.config),
            "pool": {
                "labeled": [[pid, self.pool.labels[pid]] for pid in sorted(self.pool.labels)],
                "unlabeled": sorted(self.pool.unlabeled),
                "test": sorted(self.pool.test),
            },
            "bag_samples": None if self.bags is None else [b.sample_ids for b in self.bags],
            "rng_state": self.rng.bit_generator.state,
            "embedding_epoch": self.embedding_epoch,
            "iterations": self.iterations,
            "fallback_queries": self.fallback_queries,
            "pending": pending,
        }

    @classmethod
    def from_checkpoint(cls, doc: dict, snapshot: EmbeddingSnapshot) -> "Engine":
        cfg_doc = dict(doc["config"])
        cfg_doc["learner"] = LearnerConfig(**cfg_doc["learner"])
        config = EngineConfig(**cfg_doc)
        pool = PoolState(
            {pid: int(lab) for pid, lab in doc["pool"]["labeled"]},
            set(doc["pool"]["unlabeled"]),
            set(doc["pool"]["test"]),
        )
        engine = cls(snapshot, pool, config)
        engine.rng.bit_generator.state = doc["rng_state"]
        engine.embedding_epoch = doc["embedding_epoch"]
        engine.iterations = doc["iterations"]
        engine.fallback_queries = doc["fallback_queries"]
        if doc["bag_samples"] is not None:
            engine.bags = _fit_bag_learners(doc["bag_samples"], pool, snapshot, config)
        if doc["pending"] is not None:
            engine.pending = QueryResult(
                query_id=doc["pending"]["query_id"],
                fallback=doc["pending"]["fallback"],
                aggregate=doc["pending"]["aggregate"],
                n_candidates=doc["pending"]["n_candidates"],
            )
        return engine
