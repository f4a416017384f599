"""Per-view base learner: logistic regression trained by full-batch gradient descent.

The single confidence currency everywhere is the signed margin
2*sigma(w.x + b) - 1 in [-1, +1]: its sign is the predicted class and its
magnitude the per-view confidence. Weights start at zero, so training is a
deterministic function of the training set and config.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit


class DegenerateSet(ValueError):
    """Training or gradient evaluation requested on an empty example set."""


class DimMismatch(ValueError):
    """Vector dimension disagrees with the learner's weight dimension."""


@dataclass(frozen=True)
class LearnerConfig:
    learning_rate: float = 0.1
    epochs: int = 200
    l2: float = 1e-4
    init_seed: int = 0  # reserved; zero-init makes training seed-free today

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 1 or self.l2 < 0:
            raise ValueError("learning_rate > 0, epochs >= 1, l2 >= 0 required")


@dataclass
class LinearLearner:
    weights: np.ndarray
    bias: float
    config: LearnerConfig
    loss_history: Optional[np.ndarray] = None

    @property
    def dim(self) -> int:
        return len(self.weights)

    def decision(self, x: np.ndarray) -> np.ndarray | float:
        """Raw margin w.x + b for one vector or a batch of row vectors."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise DimMismatch(f"input dim {x.shape[-1]} != learner dim {self.dim}")
        out = x @ self.weights + self.bias
        return float(out) if x.ndim == 1 else out

    def confidence(self, x: np.ndarray) -> np.ndarray | float:
        """Signed confidence 2*sigma(w.x + b) - 1 in [-1, +1]."""
        z = self.decision(x)
        return 2.0 * expit(z) - 1.0 if isinstance(z, np.ndarray) else float(2.0 * expit(z) - 1.0)


def _stack_examples(examples: Sequence[tuple[np.ndarray, int]]) -> tuple[np.ndarray, np.ndarray]:
    if len(examples) == 0:
        raise DegenerateSet("no training examples")
    xs, ys = zip(*examples)
    dims = {len(np.atleast_1d(x)) for x in xs}
    if len(dims) != 1:
        raise DimMismatch(f"examples carry mixed dims {sorted(dims)}")
    X = np.asarray(np.stack([np.asarray(x, dtype=np.float64) for x in xs]))
    y = np.asarray(ys, dtype=np.float64)
    if not np.isin(y, (-1.0, 1.0)).all():
        raise ValueError("labels must be +1/-1")
    return X, y


def _loss_terms(Xy: np.ndarray, y: np.ndarray, W: np.ndarray, b: np.ndarray,
                l2: float) -> np.ndarray:
    # Xy: (k, m, d) rows pre-multiplied by labels; W: (k, d); b: (k,)
    t = np.einsum("kmd,kd->km", Xy, W) + y * b[:, None]
    data = np.logaddexp(0.0, -t).mean(axis=1)
    return data + 0.5 * l2 * np.einsum("kd,kd->k", W, W)


def train_committee(X: np.ndarray, y: np.ndarray, config: LearnerConfig,
                    track_loss: bool = False) -> tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    """Train k learners at once on equally sized training sets.

    X has shape (k, m, d) and y shape (k, m) with labels +1/-1. Minimizes
    mean logistic loss plus 0.5*l2*||w||^2 (bias unpenalized) with
    `epochs` full-batch gradient steps from zero init. Returns (W, b,
    losses) where losses has one row per epoch boundary when tracked.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 3 or y.shape != X.shape[:2]:
        raise ValueError(f"expected X (k,m,d) and matching y, got {X.shape} / {y.shape}")
    k, m, d = X.shape
    if m == 0:
        raise DegenerateSet("no training examples")
    Xy = X * y[:, :, None]
    W = np.zeros((k, d))
    b = np.zeros(k)
    lr, l2 = config.learning_rate, config.l2
    losses = [] if track_loss else None
    for _ in range(config.epochs):
        if track_loss:
            losses.append(_loss_terms(Xy, y, W, b, l2))
        t = np.einsum("kmd,kd->km", Xy, W) + y * b[:, None]
        s = expit(-t)
        W -= lr * (-np.einsum("km,kmd->kd", s, Xy) / m + l2 * W)
        b -= lr * (-np.einsum("km,km->k", s, y) / m)
    if track_loss:
        losses.append(_loss_terms(Xy, y, W, b, l2))
        return W, b, np.asarray(losses)
    return W, b, None


def train(examples: Sequence[tuple[np.ndarray, int]], config: LearnerConfig = LearnerConfig(),
          track_loss: bool = False) -> LinearLearner:
    """Train one learner on (vector, label) pairs. Single-class sets are fine."""
    X, y = _stack_examples(examples)
    W, b, losses = train_committee(X[None], y[None], config, track_loss=track_loss)
    if not np.isfinite(W).all() or not np.isfinite(b).all():
        raise FloatingPointError("training diverged to non-finite weights")
    return LinearLearner(
        weights=W[0],
        bias=float(b[0]),
        config=config,
        loss_history=losses[:, 0] if losses is not None else None,
    )


def confidence(learner: LinearLearner, x: np.ndarray) -> float:
    """Signed confidence of one input under a trained learner."""
    return float(learner.confidence(np.asarray(x, dtype=np.float64)))


def gradient(learner: LinearLearner, examples: Sequence[tuple[np.ndarray, int]]) -> np.ndarray:
    """Analytic gradient of the training loss at the learner's current weights.

    Returned as one vector: d components for the weights, then the bias
    component last.
    """
    X, y = _stack_examples(examples)
    if X.shape[1] != learner.dim:
        raise DimMismatch(f"example dim {X.shape[1]} != learner dim {learner.dim}")
    m = len(y)
    t = y * (X @ learner.weights + learner.bias)
    s = expit(-t)
    grad_w = -(X * (s * y)[:, None]).sum(axis=0) / m + learner.config.l2 * learner.weights
    grad_b = -(s * y).sum() / m
    return np.concatenate([grad_w, [grad_b]])


def loss(learner: LinearLearner, examples: Sequence[tuple[np.ndarray, int]]) -> float:
    """Training objective value at the learner's current weights."""
    X, y = _stack_examples(examples)
    Xy = (X * y[:, None])[None]
    return float(_loss_terms(Xy, y[None], learner.weights[None], np.array([learner.bias]),
                             learner.config.l2)[0])
