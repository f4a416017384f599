"""Benchmark protocol: seeded cold starts, gold-label replay, F1 curves.

One experiment is a (strategy x seed) matrix over a dataset/snapshot pair.
Every strategy in a given seed starts from the identical cold-start labeled
set; the oracle replays gold labels; F1 on the positive class is recorded on
an evaluation schedule; per-cell curves aggregate into a fraction-indexed
summary table with paired t-tests against the first (primary) strategy.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from cocoba.baselines import BASELINE_KINDS, BaselineConfig, BaselineStrategy
from cocoba.corpus import (
    Dataset,
    PoolState,
    Posting,
    cold_start_split,
    load_dataset,
)
from cocoba.density import auto_bandwidth
from cocoba.embeddings import EmbeddingSnapshot, ViewVectors, load_snapshot
from cocoba.engine import STRATEGIES as ENGINE_STRATEGIES
from cocoba.engine import Engine, EngineConfig
from cocoba.learner import LearnerConfig

ALL_STRATEGIES = ENGINE_STRATEGIES + BASELINE_KINDS


class OracleMiss(KeyError):
    """A queried posting has no gold label to replay."""


class IdMismatch(ValueError):
    """Prediction and gold id sets disagree."""


class InsufficientSeeds(ValueError):
    """Paired t-tests need at least two seeds."""


@dataclass(frozen=True)
class RunRecord:
    iteration: int
    budget: int
    queried_id: str
    f1_positive: float


@dataclass
class ExperimentSpec:
    dataset_path: str = ""
    meta_path: str = ""
    snapshot_paths: tuple[str, ...] = ()
    strategies: tuple[str, ...] = ("cocoba", "uncertainty", "random")
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    n_seed_labeled: int = 50
    eval_every: int = 10
    swap_every: int = 350
    budget_frac: float = 1.0
    fractions: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
    n_estimators: int = 15
    subsample_ratio: float = 0.6
    bandwidth_doc: Optional[float] = None   # None: mean pairwise distance per view
    bandwidth_word: Optional[float] = None
    learner: LearnerConfig = field(default_factory=LearnerConfig)

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        unknown = [s for s in self.strategies if s not in ALL_STRATEGIES]
        if unknown:
            raise ValueError(f"unknown strategies {unknown}; valid: {ALL_STRATEGIES}")
        if not all(0.0 < f <= 1.0 for f in self.fractions):
            raise ValueError("fractions must lie in (0, 1]")
        if not 0.0 < self.budget_frac <= 1.0:
            raise ValueError("budget_frac must lie in (0, 1]")


@dataclass
class ExperimentResult:
    curves: dict[tuple[str, int], list[RunRecord]]
    cold_start: dict[int, tuple[str, ...]]
    n_train: int
    spec: ExperimentSpec


def f1_positive(predictions: dict[str, int], gold: dict[str, int]) -> float:
    """F1 restricted to the positive class; 0 when precision+recall is 0."""
    if set(predictions) != set(gold):
        raise IdMismatch("prediction ids differ from gold ids")
    tp = sum(1 for k, g in gold.items() if g == 1 and predictions[k] == 1)
    fp = sum(1 for k, g in gold.items() if g == -1 and predictions[k] == 1)
    fn = sum(1 for k, g in gold.items() if g == 1 and predictions[k] == -1)
    if 2 * tp + fp + fn == 0:
        return 0.0
    return 2.0 * tp / (2 * tp + fp + fn)


def _resolve_bandwidths(spec: ExperimentSpec, snapshot: EmbeddingSnapshot) -> tuple[float, float]:
    # The per-view mean pairwise distance depends only on the unlabeled
    # vectors, never on labels, so it is fixed once per snapshot.
    if spec.bandwidth_doc is not None and spec.bandwidth_word is not None:
        return spec.bandwidth_doc, spec.bandwidth_word
    ids = sorted(snapshot.vectors)
    doc_mat, word_mat = snapshot.stack(ids)
    h_doc = spec.bandwidth_doc if spec.bandwidth_doc is not None else auto_bandwidth(doc_mat)
    h_word = spec.bandwidth_word if spec.bandwidth_word is not None else auto_bandwidth(word_mat)
    return h_doc, h_word


def _build_strategy(name: str, snapshot: EmbeddingSnapshot, pool: PoolState,
                    spec: ExperimentSpec, seed: int, bandwidths: tuple[float, float]):
    if name in ENGINE_STRATEGIES:
        config = EngineConfig(
            n_estimators=spec.n_estimators,
            subsample_ratio=spec.subsample_ratio,
            bandwidth_doc=bandwidths[0],
            bandwidth_word=bandwidths[1],
            strategy=name,
            rng_seed=seed,
            learner=spec.learner,
        )
        return Engine(snapshot, pool, config)
    return BaselineStrategy(snapshot, pool, BaselineConfig(name, rng_seed=seed,
                                                           learner=spec.learner))


def run_cell(strategy_name: str, seed: int, pool: PoolState, dataset: Dataset,
             snapshots: Sequence[EmbeddingSnapshot], spec: ExperimentSpec,
             bandwidths: tuple[float, float]) -> list[RunRecord]:
    """One (strategy, seed) active-learning run against the gold-replay oracle."""
    gold = {p.id: p.gold_label for p in dataset.postings}
    test_ids = sorted(pool.test)
    gold_test = {pid: gold[pid] for pid in test_ids}
    n_train = len(pool.labels) + len(pool.unlabeled)
    cap = int(round(spec.budget_frac * n_train))

    strategy = _build_strategy(strategy_name, snapshots[0], pool, spec, seed, bandwidths)
    records: list[RunRecord] = []
    iteration = 0
    while len(pool.labels) < cap and pool.unlabeled:
        iteration += 1
        result = strategy.next_query()
        label = gold.get(result.query_id)
        if label is None:
            raise OracleMiss(result.query_id)
        strategy.commit_label(result.query_id, label)
        done = len(pool.labels) >= cap or not pool.unlabeled
        if iteration % spec.eval_every == 0 or done:
            preds = strategy.predict(test_ids)
            records.append(
                RunRecord(iteration, len(pool.labels), result.query_id,
                          f1_positive(preds, gold_test))
            )
        if (
            len(snapshots) > 1
            and spec.swap_every > 0
            and iteration % spec.swap_every == 0
        ):
            strategy.swap_snapshot(snapshots[(iteration // spec.swap_every) % len(snapshots)])
    return records


def _run_cell_task(payload):
    strategy_name, seed, pool, dataset, snapshots, spec, bandwidths = payload
    return (strategy_name, seed), run_cell(strategy_name, seed, pool, dataset,
                                           snapshots, spec, bandwidths)


def run_experiment(spec: ExperimentSpec, dataset: Optional[Dataset] = None,
                   snapshots: Optional[Sequence[EmbeddingSnapshot]] = None,
                   workers: int = 1) -> ExperimentResult:
    """Run the full strategy x seed matrix.

    Every strategy within one seed starts from the identical cold-start
    pool. Cells are independent and may run as parallel processes.
    """
    if dataset is None:
        dataset = load_dataset(spec.dataset_path, spec.meta_path)
    if snapshots is None:
        snapshots = [load_snapshot(p) for p in spec.snapshot_paths]
    if not snapshots:
        raise ValueError("at least one snapshot is required")
    bandwidths = _resolve_bandwidths(spec, snapshots[0])

    cold_start: dict[int, tuple[str, ...]] = {}
    tasks = []
    for seed in spec.seeds:
        pool0 = cold_start_split(dataset, spec.n_seed_labeled, seed)
        cold_start[seed] = tuple(sorted(pool0.labels))
        for name in spec.strategies:
            tasks.append((name, seed, pool0.copy(), dataset, list(snapshots), spec, bandwidths))

    curves: dict[tuple[str, int], list[RunRecord]] = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for key, records in pool.map(_run_cell_task, tasks):
                curves[key] = records
    else:
        for payload in tasks:
            key, records = _run_cell_task(payload)
            curves[key] = records
    n_train = len(dataset.train_ids)
    return ExperimentResult(curves=curves, cold_start=cold_start, n_train=n_train, spec=spec)


def interpolate_f1(records: Sequence[RunRecord], target_budget: float) -> float:
    """Linear interpolation of the F1 curve at an exact budget (clamped at the ends)."""
    budgets = np.array([r.budget for r in records], dtype=float)
    f1s = np.array([r.f1_positive for r in records], dtype=float)
    return float(np.interp(target_budget, budgets, f1s))


def _paired_t(primary: np.ndarray, other: np.ndarray) -> tuple[float, bool]:
    """Two-sided paired t-test p-value plus a degenerate-variance flag."""
    diffs = primary - other
    if np.allclose(diffs, 0.0):
        return 1.0, True
    if float(np.std(diffs, ddof=1)) == 0.0:
        return 0.0, True
    return float(stats.ttest_rel(primary, other).pvalue), False


def summarize(result: ExperimentResult, fractions: Optional[Sequence[float]] = None,
              alpha: float = 0.05) -> dict:
    """Fraction-indexed mean-F1 table with paired t-tests against the first strategy."""
    spec = result.spec
    fractions = tuple(fractions if fractions is not None else spec.fractions)
    strategies = spec.strategies
    seeds = spec.seeds
    primary = strategies[0]
    max_budget = min(
        max(r.budget for r in result.curves[(name, seed)])
        for name in strategies
        for seed in seeds
    )

    per_seed: dict[str, dict[float, np.ndarray]] = {}
    for name in strategies:
        per_seed[name] = {}
        for frac in fractions:
            target = frac * result.n_train
            if target > max_budget + 0.5:
                continue  # fraction beyond what this experiment ran
            per_seed[name][frac] = np.array(
                [interpolate_f1(result.curves[(name, seed)], target) for seed in seeds]
            )

    table: dict = {
        "n_train": result.n_train,
        "seeds": list(seeds),
        "fractions": [f for f in fractions if f in per_seed[primary]],
        "primary": primary,
        "strategies": {},
    }
    for name in strategies:
        entry: dict = {
            "mean_f1": {f"{frac}": float(vals.mean()) for frac, vals in per_seed[name].items()},
            "per_seed_f1": {f"{frac}": [float(v) for v in vals]
                            for frac, vals in per_seed[name].items()},
        }
        if name != primary:
            p_values, significant, degenerate = {}, {}, {}
            for frac, vals in per_seed[name].items():
                if len(seeds) < 2:
                    raise InsufficientSeeds("paired t-test needs >= 2 seeds")
                p, degen = _paired_t(per_seed[primary][frac], vals)
                p_values[f"{frac}"] = p
                significant[f"{frac}"] = bool(p < alpha and not degen)
                degenerate[f"{frac}"] = degen
            entry["p_vs_primary"] = p_values
            entry["significant"] = significant
            entry["degenerate_t"] = degenerate
        table["strategies"][name] = entry
    return table


def write_curve_csv(records: Sequence[RunRecord], path: str | Path) -> None:
    lines = ["iteration,budget,queried_id,f1"]
    lines += [f"{r.iteration},{r.budget},{r.queried_id},{r.f1_positive:.6f}" for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_curve_csv(path: str | Path) -> list[RunRecord]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").strip().splitlines()[1:]:
        it, budget, pid, f1 = line.split(",")
        records.append(RunRecord(int(it), int(budget), pid, float(f1)))
    return records


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 4000
    dims: tuple[int, int] = (16, 16)
    contexts: int = 8
    noise: float = 1.0
    pos_rate: float = 0.18
    train_frac: float = 2 / 3
    seed: int = 0
    name: str = "synthetic"

    def __post_init__(self):
        if self.n < 200:
            raise ValueError("n must be >= 200")
        if self.contexts < 2:
            raise ValueError("contexts must be >= 2")
        if not 0.0 < self.pos_rate < 1.0:
            raise ValueError("pos_rate must lie in (0, 1)")


QUERY_TERM = "signal"


def make_synthetic_dataset(spec: SyntheticSpec) -> tuple[Dataset, EmbeddingSnapshot]:
    """Context-clustered corpus with matching vectors.

    Each posting belongs to one latent context; a context carries one label.
    Both views cluster postings by context: negative contexts scatter on a
    sphere, every positive context sits just off a large negative one, and a
    weak label-aligned first axis keeps the noiseless problem linearly
    separable per view. The two views draw independent geometries and pair
    each positive context with a different negative neighbor, so a cluster
    that is confusable in one view stays resolvable in the other.

    `noise` scales the within-cluster spread and, past zero, an
    annotation-noise process: gold labels flip with a probability that decays
    with the posting's distance-margin to the nearest opposite-class context,
    i.e. genuinely ambiguous postings are the mislabeled ones. Flip
    probabilities are class-rebalanced so the expected positive rate stays at
    pos_rate. At noise 0 there are no flips and each view is separable.
    """
    rng = np.random.default_rng(spec.seed)
    d_doc, d_word = spec.dims
    k = spec.contexts
    n_pos_ctx = max(1, math.ceil(k * spec.pos_rate))
    n_neg_ctx = k - n_pos_ctx
    ctx_labels = np.array([1] * n_pos_ctx + [-1] * n_neg_ctx)

    # Declining masses inside each class keep cluster sizes uneven.
    def masses(count, total):
        raw = np.array([1.0 / (i + 1) for i in range(count)])
        return raw / raw.sum() * total

    ctx_mass = np.concatenate(
        [masses(n_pos_ctx, spec.pos_rate), masses(n_neg_ctx, 1.0 - spec.pos_rate)]
    )

    def place_centers(dim: int, pair_shift: int, pair_offset: float = 1.2,
                      axis_margin: float = 0.5) -> np.ndarray:
        neg = rng.standard_normal((n_neg_ctx, dim))
        neg /= np.linalg.norm(neg, axis=1, keepdims=True)
        neg *= 3.0
        neg[:, 0] = -axis_margin
        pos = np.empty((n_pos_ctx, dim))
        for i in range(n_pos_ctx):
            offset = rng.standard_normal(dim)
            offset[0] = 0.0
            offset /= np.linalg.norm(offset)
            pos[i] = neg[(i + pair_shift) % n_neg_ctx] + pair_offset * offset
            pos[i, 0] = axis_margin
        return np.vstack([pos, neg])

    word_centers = place_centers(d_word, pair_shift=0)
    doc_centers = place_centers(d_doc, pair_shift=max(1, n_neg_ctx // 2))

    assignments = rng.choice(k, size=spec.n, p=ctx_mass)
    labels = ctx_labels[assignments]
    doc_vecs = doc_centers[assignments] + rng.standard_normal(
        (spec.n, d_doc)) * (0.45 * spec.noise)
    word_vecs = word_centers[assignments] + rng.standard_normal(
        (spec.n, d_word)) * (0.45 * spec.noise)

    gold = _flip_ambiguous_labels(
        rng, labels, assignments, ctx_labels,
        (doc_vecs, doc_centers), (word_vecs, word_centers), spec.noise,
    )

    postings = []
    vectors = {}
    split = {}
    n_train = int(round(spec.train_frac * spec.n))
    vocab = {c: [f"ctx{c}tok{j}" for j in range(6)] for c in range(k)}
    for i in range(spec.n):
        ctx = int(assignments[i])
        pid = f"s{i:05d}"
        vectors[pid] = ViewVectors(doc_vecs[i], word_vecs[i])
        toks = rng.choice(vocab[ctx], size=3, replace=True)
        text = f"{toks[0]} {toks[1]} {QUERY_TERM} {toks[2]}"
        start = text.index(QUERY_TERM)
        postings.append(
            Posting(pid, text, ((start, start + len(QUERY_TERM)),),
                    gold_label=int(gold[i]))
        )
        split[pid] = "train" if i < n_train else "test"

    dataset = Dataset(tuple(postings), (QUERY_TERM,), split, name=spec.name)
    snapshot = EmbeddingSnapshot(dims=spec.dims, vectors=vectors)
    return dataset, snapshot


def _flip_ambiguous_labels(rng, labels, assignments, ctx_labels, doc_pair,
                           word_pair, noise: float,
                           tau: float = 1.3) -> np.ndarray:
    """Annotation noise concentrated on ambiguous postings.

    A posting's margin is how much farther the nearest opposite-class
    context center is than its own center, averaged over the views; flip
    probability decays exponentially in that margin. Negative-class flip
    probabilities are rescaled so the expected label exchange balances and
    the positive rate is preserved.
    """
    from scipy.spatial.distance import cdist

    if noise <= 0:
        return labels.copy()
    f_max = min(0.5, 0.45 * noise)

    def view_margin(vectors, centers):
        dist = cdist(vectors, centers)
        own = dist[np.arange(len(vectors)), assignments]
        opposite = np.where(ctx_labels[None, :] != labels[:, None], dist, np.inf)
        return opposite.min(axis=1) - own

    margin = 0.5 * (view_margin(*doc_pair) + view_margin(*word_pair))
    flip_p = f_max * np.exp(-np.maximum(margin, 0.0) / tau)
    pos_mass = flip_p[labels == 1].sum()
    neg_mass = flip_p[labels == -1].sum()
    if neg_mass > 0:
        flip_p[labels == -1] *= min(1.0, pos_mass / neg_mass) if pos_mass > 0 else 0.0
    flips = rng.random(len(labels)) < flip_p
    return np.where(flips, -labels, labels)
