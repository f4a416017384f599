"""Parzen window density over contention-point vectors.

The kernel is triangular (linear decay) on Euclidean distance,
K(u) = max(0, 1 - u), averaged over the stored points, which keeps every
density in [0, 1] and on the same scale as learner confidences. Values are
deliberately not normalized by kernel volume.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist


class EmptySet(ValueError):
    """A density estimator needs at least one point."""


class NonPositiveBandwidth(ValueError):
    """Bandwidth must be strictly positive."""


class UndefinedBandwidth(ValueError):
    """Mean pairwise distance needs at least two points."""


class DimMismatch(ValueError):
    """Query dimension disagrees with the stored points."""


_PAIR_BUDGET = 2000


@dataclass
class ParzenEstimator:
    points: np.ndarray
    bandwidth: float
    kernel: str = "triangular"

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if self.points.size == 0:
            raise EmptySet("no points to estimate from")
        if self.bandwidth <= 0:
            raise NonPositiveBandwidth(f"bandwidth {self.bandwidth} must be > 0")
        if self.kernel != "triangular":
            raise ValueError(f"unsupported kernel {self.kernel!r}")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def density(self, x: np.ndarray) -> float:
        return float(self.density_many(np.atleast_2d(np.asarray(x, dtype=np.float64)))[0])

    def density_many(self, X: np.ndarray) -> np.ndarray:
        """Densities for a batch of row-vector queries."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.dim:
            raise DimMismatch(f"query dim {X.shape[1]} != points dim {self.dim}")
        dist = cdist(X, self.points)
        return np.maximum(0.0, 1.0 - dist / self.bandwidth).mean(axis=1)


def fit(points: np.ndarray, h: float) -> ParzenEstimator:
    """Store the contention vectors verbatim under bandwidth h."""
    return ParzenEstimator(points=np.asarray(points, dtype=np.float64), bandwidth=float(h))


def density(est: ParzenEstimator, x: np.ndarray) -> float:
    """Average triangular-kernel mass of x under the stored points, in [0, 1]."""
    return est.density(x)


def auto_bandwidth(points: np.ndarray, rng_seed: int = 0) -> float:
    """Mean pairwise Euclidean distance of the points.

    Exact over all unordered pairs up to 2,000 points; beyond that a seeded
    uniform sample of 2,000 distinct-index pairs estimates the mean.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = len(points)
    if n < 2:
        raise UndefinedBandwidth(f"need >= 2 points, have {n}")
    if n <= _PAIR_BUDGET:
        from scipy.spatial.distance import pdist

        return float(pdist(points).mean())
    rng = np.random.default_rng(rng_seed)
    left = rng.integers(0, n, size=2 * _PAIR_BUDGET)
    right = rng.integers(0, n, size=2 * _PAIR_BUDGET)
    keep = left != right
    left, right = left[keep][:_PAIR_BUDGET], right[keep][:_PAIR_BUDGET]
    while len(left) < _PAIR_BUDGET:  # top up after collision rejection
        i, j = rng.integers(0, n, size=2)
        if i != j:
            left = np.append(left, i)
            right = np.append(right, j)
    diffs = points[left] - points[right]
    return float(np.linalg.norm(diffs, axis=1).mean())
