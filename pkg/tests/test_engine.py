import json
import math

import numpy as np
import pytest

from cocoba.corpus import AlreadyLabeled, PoolState
from cocoba.embeddings import CoverageError, EmbeddingSnapshot, ViewVectors, swap_snapshot
from cocoba.engine import (
    BagState,
    EmptyLabeledPool,
    EmptyUnlabeledPool,
    Engine,
    EngineConfig,
    NoContention,
    ScoredCandidate,
    detect_contention,
    predict,
    score_candidates,
    select_query,
    train_bags,
)
from cocoba.learner import LearnerConfig, LinearLearner

from oracles import brute_force_aggregates, brute_force_majority

FAST_LEARNER = LearnerConfig(epochs=40)


def toy_problem(n_train=60, n_test=20, n_labeled=20, dims=(8, 8), seed=0, mirrored=False):
    """Random two-view instance with enough noise that views disagree.

    With mirrored=True both views carry identical vectors, so the two
    learners of any bag always agree and contention never occurs.
    """
    rng = np.random.default_rng(seed)
    n = n_train + n_test
    ids = [f"p{i:03d}" for i in range(n)]
    labels = np.where(rng.random(n) < 0.4, 1, -1)
    vectors = {}
    for i, pid in enumerate(ids):
        doc = rng.standard_normal(dims[0]) * 0.8
        doc[0] += labels[i] * 0.7
        if mirrored:
            word = doc.copy()
        else:
            word = rng.standard_normal(dims[1]) * 0.8
            word[1] += labels[i] * 0.4
        vectors[pid] = ViewVectors(doc, word)
    snapshot = EmbeddingSnapshot(dims=dims, vectors=vectors)
    train_ids = ids[:n_train]
    pool = PoolState(
        {pid: int(labels[i]) for i, pid in enumerate(train_ids[:n_labeled])},
        set(train_ids[n_labeled:]),
        set(ids[n_train:]),
    )
    gold = {pid: int(labels[i]) for i, pid in enumerate(ids)}
    return snapshot, pool, gold


def bias_learner(conf, dim=2):
    """A learner whose confidence is `conf` for every input."""
    if not -1 < conf < 1:
        raise ValueError("conf must be in (-1, 1)")
    p = (conf + 1) / 2
    bias = math.log(p / (1 - p))
    return LinearLearner(np.zeros(dim), bias, LearnerConfig())


def fixed_bag(conf_doc, conf_word, dim=2):
    return BagState(sample_ids=[], doc_learner=bias_learner(conf_doc, dim),
                    word_learner=bias_learner(conf_word, dim))


def uniform_snapshot(ids, dims=(2, 2)):
    vectors = {pid: ViewVectors(np.zeros(dims[0]), np.zeros(dims[1])) for pid in ids}
    return EmbeddingSnapshot(dims=dims, vectors=vectors)


class TestEngineConfig:
    def test_coco_forces_single_bag(self):
        cfg = EngineConfig(strategy="coco", n_estimators=15)
        assert cfg.n_estimators == 1
        assert cfg.density_enabled and not cfg.bootstrap

    def test_cotesting_forces_single_bag_no_density(self):
        cfg = EngineConfig(strategy="cotesting", n_estimators=15)
        assert cfg.n_estimators == 1
        assert not cfg.density_enabled and not cfg.bootstrap

    def test_unknown_strategy_rejected(self):
        with pytest.raises(ValueError):
            EngineConfig(strategy="banzai")

    def test_ratio_bounds(self):
        with pytest.raises(ValueError):
            EngineConfig(subsample_ratio=0.0)
        with pytest.raises(ValueError):
            EngineConfig(subsample_ratio=1.2)


class TestTrainBags:
    def test_bag_count_and_sample_size(self):
        snapshot, pool, _ = toy_problem(n_labeled=50, n_train=55)
        cfg = EngineConfig(n_estimators=15, subsample_ratio=0.6, learner=FAST_LEARNER)
        bags = train_bags(pool, snapshot, cfg, rng=np.random.default_rng(0))
        assert len(bags) == 15
        assert all(len(b.sample_ids) == 30 for b in bags)
        assert all(set(b.sample_ids) <= set(pool.labels) for b in bags)

    def test_coco_uses_full_pool(self):
        snapshot, pool, _ = toy_problem(n_labeled=20)
        cfg = EngineConfig(strategy="coco", learner=FAST_LEARNER)
        bags = train_bags(pool, snapshot, cfg)
        assert len(bags) == 1
        assert bags[0].sample_ids == sorted(pool.labels)

    def test_deterministic_sampling(self):
        snapshot, pool, _ = toy_problem(n_labeled=20)
        cfg = EngineConfig(n_estimators=5, learner=FAST_LEARNER, rng_seed=9)
        a = train_bags(pool, snapshot, cfg)
        b = train_bags(pool, snapshot, cfg)
        assert [x.sample_ids for x in a] == [x.sample_ids for x in b]

    def test_empty_pool_rejected(self):
        snapshot, pool, _ = toy_problem()
        pool.labels.clear()
        with pytest.raises(EmptyLabeledPool):
            train_bags(pool, snapshot, EngineConfig(learner=FAST_LEARNER))


class TestDetectContention:
    def test_opposite_signs(self):
        ids = ["a", "b"]
        snap = uniform_snapshot(ids)
        bag = fixed_bag(0.8, -0.3)
        assert detect_contention(bag, ids, snap) == {"a", "b"}

    def test_same_signs(self):
        ids = ["a"]
        bag = fixed_bag(0.8, 0.1)
        assert detect_contention(bag, ids, uniform_snapshot(ids)) == set()

    def test_zero_confidence_is_positive(self):
        ids = ["a"]
        bag = fixed_bag(0.0, -0.2)
        assert detect_contention(bag, ids, uniform_snapshot(ids)) == {"a"}
        bag2 = fixed_bag(0.0, 0.2)
        assert detect_contention(bag2, ids, uniform_snapshot(ids)) == set()


class TestScoreCandidates:
    def test_eq1_hand_arithmetic(self, monkeypatch):
        # One bag: conf pair (0.8, -0.5); densities pinned at 0.6 / 0.2
        # bag score = 0.6*0.8 + 0.2*0.5 = 0.58
        class StubDensity:
            def __init__(self, value):
                self.value = value

            def density_many(self, X):
                return np.full(len(X), self.value)

        values = iter([0.6, 0.2])
        monkeypatch.setattr(
            "cocoba.engine.fit_density", lambda pts, h: StubDensity(next(values))
        )
        ids = ["a"]
        bag = fixed_bag(0.8, -0.5)
        ranked = score_candidates([bag], ids, uniform_snapshot(ids), EngineConfig())
        assert ranked[0].aggregate == pytest.approx(0.58, abs=1e-12)
        detail = ranked[0].per_bag[0]
        assert detail.conf_doc == pytest.approx(0.8, abs=1e-12)
        assert detail.p_doc == 0.6 and detail.p_word == 0.2

    def test_zero_density_annihilates(self, monkeypatch):
        class Zero:
            def density_many(self, X):
                return np.zeros(len(X))

        monkeypatch.setattr("cocoba.engine.fit_density", lambda pts, h: Zero())
        ids = ["a"]
        ranked = score_candidates([fixed_bag(0.9, -0.9)], ids, uniform_snapshot(ids),
                                  EngineConfig())
        assert ranked[0].aggregate == 0.0

    def test_cross_bag_sum(self, monkeypatch):
        class One:
            def density_many(self, X):
                return np.ones(len(X))

        monkeypatch.setattr("cocoba.engine.fit_density", lambda pts, h: One())
        ids = ["a"]
        snap = uniform_snapshot(ids)
        bags = [fixed_bag(0.5, -0.3), fixed_bag(0.2, 0.1), fixed_bag(-0.1, 0.15)]
        # bag 1 agrees with itself on "a" and contributes nothing
        ranked = score_candidates(bags, ids, snap, EngineConfig())
        expected = (0.5 + 0.3) + 0.0 + (0.1 + 0.15)
        assert ranked[0].aggregate == pytest.approx(expected, abs=1e-12)
        assert [d.bag for d in ranked[0].per_bag] == [0, 2]

    def test_no_contention_raises(self):
        ids = ["a", "b"]
        with pytest.raises(NoContention):
            score_candidates([fixed_bag(0.4, 0.4)], ids, uniform_snapshot(ids), EngineConfig())

    def test_matches_brute_force_oracle(self):
        snapshot, pool, _ = toy_problem(n_train=80, n_labeled=25, seed=4)
        cfg = EngineConfig(n_estimators=5, bandwidth_doc=2.0, bandwidth_word=2.0,
                           learner=FAST_LEARNER)
        bags = train_bags(pool, snapshot, cfg, rng=np.random.default_rng(1))
        ranked = score_candidates(bags, pool.unlabeled, snapshot, cfg)
        expected = brute_force_aggregates(bags, pool.unlabeled, snapshot, cfg)
        assert set(c.posting_id for c in ranked) == set(expected)
        for cand in ranked:
            assert cand.aggregate == pytest.approx(expected[cand.posting_id], abs=1e-9)

    def test_ranking_is_descending_with_id_ties(self):
        cands = [ScoredCandidate("b", [], 0.4), ScoredCandidate("a", [], 0.4),
                 ScoredCandidate("c", [], 0.9)]
        ordered = sorted(cands, key=lambda c: (-c.aggregate, c.posting_id))
        assert [c.posting_id for c in ordered] == ["c", "a", "b"]


class TestSelectQuery:
    def test_argmax(self):
        ranked = [ScoredCandidate("a", [], 0.9), ScoredCandidate("b", [], 0.4)]
        assert select_query(ranked, {"a", "b"}) == "a"

    def test_lexicographic_tie(self):
        ranked = score_candidates(
            [fixed_bag(0.3, -0.2)], ["b", "a"], uniform_snapshot(["a", "b"]),
            EngineConfig(strategy="coba"),
        )
        assert select_query(ranked, {"a", "b"}) == "a"

    def test_empty_pool(self):
        with pytest.raises(EmptyUnlabeledPool):
            select_query([ScoredCandidate("a", [], 1.0)], set())


class TestPredict:
    def test_majority_15_bags_8_positive(self):
        bags = [fixed_bag(0.3, 0.2, dim=2) for _ in range(8)] + [
            fixed_bag(-0.3, -0.2, dim=2) for _ in range(7)
        ]
        snap = uniform_snapshot(["t"])
        assert predict(bags, ["t"], snap) == {"t": 1}
        table = [(0.3, 0.2)] * 8 + [(-0.3, -0.2)] * 7
        assert brute_force_majority(table) == 1

    def test_majority_15_bags_7_positive(self):
        bags = [fixed_bag(0.3, 0.2) for _ in range(7)] + [
            fixed_bag(-0.3, -0.2) for _ in range(8)
        ]
        assert predict(bags, ["t"], uniform_snapshot(["t"])) == {"t": -1}
        table = [(0.3, 0.2)] * 7 + [(-0.3, -0.2)] * 8
        assert brute_force_majority(table) == -1

    def test_single_pair_negative_sum(self):
        bags = [fixed_bag(0.2, -0.3)]  # sums to about -0.1
        assert predict(bags, ["t"], uniform_snapshot(["t"])) == {"t": -1}

    def test_single_pair_zero_sum_is_positive(self):
        bags = [fixed_bag(0.0, 0.0)]  # exactly on the boundary
        assert predict(bags, ["t"], uniform_snapshot(["t"])) == {"t": 1}


def run_steps(engine, gold, steps):
    queries = []
    for _ in range(steps):
        result = engine.next_query()
        queries.append(result.query_id)
        engine.commit_label(result.query_id, gold[result.query_id])
    return queries


class TestEngineLoop:
    def test_pool_conservation_and_no_requery(self):
        snapshot, pool, gold = toy_problem(seed=2)
        engine = Engine(snapshot, pool, EngineConfig(n_estimators=4, learner=FAST_LEARNER))
        total = len(pool.labels) + len(pool.unlabeled)
        seen = set()
        for _ in range(10):
            res = engine.next_query()
            assert res.query_id not in seen
            assert res.query_id not in pool.labels
            seen.add(res.query_id)
            engine.commit_label(res.query_id, gold[res.query_id])
            assert len(pool.labels) + len(pool.unlabeled) == total

    def test_commit_grows_samples_and_retrains(self):
        snapshot, pool, gold = toy_problem(n_labeled=20, seed=3)
        engine = Engine(snapshot, pool, EngineConfig(n_estimators=3, learner=FAST_LEARNER))
        res = engine.next_query()
        sizes = [len(b.sample_ids) for b in engine.bags]
        engine.commit_label(res.query_id, gold[res.query_id])
        assert [len(b.sample_ids) for b in engine.bags] == [s + 1 for s in sizes]
        assert all(b.sample_ids[-1] == res.query_id for b in engine.bags)

    def test_commit_twice_rejected(self):
        snapshot, pool, gold = toy_problem()
        engine = Engine(snapshot, pool, EngineConfig(n_estimators=2, learner=FAST_LEARNER))
        res = engine.next_query()
        engine.commit_label(res.query_id, 1)
        with pytest.raises(AlreadyLabeled):
            engine.commit_label(res.query_id, 1)

    def test_committed_id_never_in_later_contention(self):
        snapshot, pool, gold = toy_problem(seed=5)
        engine = Engine(snapshot, pool, EngineConfig(n_estimators=4, learner=FAST_LEARNER))
        res = engine.next_query()
        engine.commit_label(res.query_id, gold[res.query_id])
        engine.next_query()
        assert all(res.query_id not in b.contention for b in engine.bags)

    def test_next_query_idempotent_until_commit(self):
        snapshot, pool, gold = toy_problem(seed=6)
        engine = Engine(snapshot, pool, EngineConfig(n_estimators=3, learner=FAST_LEARNER))
        a = engine.next_query()
        b = engine.next_query()
        assert a.query_id == b.query_id and a is b

    def test_full_determinism(self):
        queries = []
        for _ in range(2):
            snapshot, pool, gold = toy_problem(seed=7)
            engine = Engine(snapshot, pool,
                            EngineConfig(n_estimators=5, rng_seed=11, learner=FAST_LEARNER))
            queries.append(tuple(run_steps(engine, gold, 6)))
        assert queries[0] == queries[1]

    def test_uncertainty_fallback_on_unanimous_learners(self):
        snapshot, pool, gold = toy_problem(seed=8, mirrored=True)
        engine = Engine(snapshot, pool, EngineConfig(n_estimators=3, learner=FAST_LEARNER))
        res = engine.next_query()
        assert res.fallback
        assert engine.fallback_queries == 1
        assert res.query_id in pool.unlabeled

    def test_exhaustion_raises(self):
        snapshot, pool, gold = toy_problem(n_train=22, n_labeled=20, seed=9)
        engine = Engine(snapshot, pool, EngineConfig(n_estimators=2, learner=FAST_LEARNER))
        run_steps(engine, gold, 2)
        with pytest.raises(EmptyUnlabeledPool):
            engine.next_query()


class TestStrategyEquivalences:
    def test_coba_equals_cocoba_with_unit_densities(self, monkeypatch):
        class One:
            def density_many(self, X):
                return np.ones(len(X))

        snapshot, pool, gold = toy_problem(seed=10)
        coba = Engine(snapshot, pool.copy(),
                      EngineConfig(strategy="coba", n_estimators=4, rng_seed=3,
                                   learner=FAST_LEARNER))
        coba_queries = run_steps(coba, gold, 5)

        monkeypatch.setattr("cocoba.engine.fit_density", lambda pts, h: One())
        cocoba = Engine(snapshot, pool.copy(),
                        EngineConfig(strategy="cocoba", n_estimators=4, rng_seed=3,
                                     learner=FAST_LEARNER))
        assert run_steps(cocoba, gold, 5) == coba_queries

    def test_coco_equals_cocoba_single_full_bag(self, monkeypatch):
        snapshot, pool, gold = toy_problem(seed=12)
        coco = Engine(snapshot, pool.copy(),
                      EngineConfig(strategy="coco", learner=FAST_LEARNER))
        coco_queries = run_steps(coco, gold, 5)

        monkeypatch.setattr(EngineConfig, "bootstrap", property(lambda self: False))
        cocoba = Engine(snapshot, pool.copy(),
                        EngineConfig(strategy="cocoba", n_estimators=1, learner=FAST_LEARNER))
        assert run_steps(cocoba, gold, 5) == coco_queries

    def test_cotesting_ranks_by_confidence_sum(self):
        ids = ["a", "b"]
        vectors = {
            "a": ViewVectors(np.array([3.0, 0.0]), np.array([-1.0, 0.0])),
            "b": ViewVectors(np.array([0.5, 0.0]), np.array([-0.2, 0.0])),
        }
        snap = EmbeddingSnapshot(dims=(2, 2), vectors=vectors)
        learner = LinearLearner(np.array([1.0, 0.0]), 0.0, LearnerConfig())
        bag = BagState([], learner, learner)
        ranked = score_candidates([bag], ids, snap, EngineConfig(strategy="cotesting"))
        assert ranked[0].posting_id == "a"  # larger |conf| sum disagrees harder


class TestSwapAndCheckpoint:
    def test_swap_coverage_error(self):
        snapshot, pool, gold = toy_problem()
        engine = Engine(snapshot, pool, EngineConfig(n_estimators=2, learner=FAST_LEARNER))
        partial = EmbeddingSnapshot(
            dims=snapshot.dims,
            vectors={k: v for k, v in list(snapshot.vectors.items())[:-1]},
        )
        with pytest.raises(CoverageError):
            engine.swap_snapshot(partial)

    def test_noop_swap_preserves_next_query(self):
        snapshot, pool, gold = toy_problem(seed=13)
        cfg = EngineConfig(n_estimators=4, rng_seed=5, learner=FAST_LEARNER)
        plain = Engine(snapshot, pool.copy(), cfg)
        swapped = Engine(snapshot, pool.copy(), cfg)
        for engine in (plain, swapped):
            run_steps(engine, gold, 3)
        clone = EmbeddingSnapshot(dims=snapshot.dims, vectors=dict(snapshot.vectors))
        epoch = swap_snapshot(swapped, clone)
        assert epoch == swapped.embedding_epoch == 1
        assert swapped._stale
        assert plain.next_query().query_id == swapped.next_query().query_id

    def test_predict_after_swap_retrains(self):
        snapshot, pool, gold = toy_problem(seed=14)
        engine = Engine(snapshot, pool, EngineConfig(n_estimators=2, learner=FAST_LEARNER))
        run_steps(engine, gold, 2)
        engine.swap_snapshot(EmbeddingSnapshot(dims=snapshot.dims,
                                               vectors=dict(snapshot.vectors)))
        preds = engine.predict(sorted(pool.test))
        assert not engine._stale
        assert set(preds) == pool.test

    def test_checkpoint_roundtrip_continues_identically(self):
        snapshot, pool, gold = toy_problem(seed=15)
        cfg = EngineConfig(n_estimators=4, rng_seed=2, learner=FAST_LEARNER)
        original = Engine(snapshot, pool.copy(), cfg)
        run_steps(original, gold, 3)
        doc = json.loads(json.dumps(original.to_checkpoint()))
        restored = Engine.from_checkpoint(doc, snapshot)
        assert restored.pool.to_json() == original.pool.to_json()
        assert run_steps(restored, gold, 3) == run_steps(original, gold, 3)

    def test_checkpoint_preserves_pending_query(self):
        snapshot, pool, gold = toy_problem(seed=16)
        engine = Engine(snapshot, pool.copy(),
                        EngineConfig(n_estimators=3, learner=FAST_LEARNER))
        res = engine.next_query()
        doc = json.loads(json.dumps(engine.to_checkpoint()))
        restored = Engine.from_checkpoint(doc, snapshot)
        assert restored.next_query().query_id == res.query_id
