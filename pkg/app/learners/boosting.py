"""Second-order gradient boosting on squared error.

Each round fits a tree to the gradients `g = pred - y` with unit hessians;
a leaf's weight is `-G / (H + l2)` and a split must strictly improve the
regularized objective. Predictions start from the training mean.
"""
import logging
from dataclasses import dataclass

import numpy as np

from app.learners.base import RegressorSpec, TrainedRegressor
from app.learners.tree import FeatureBins, RegressionTree, TreeBuilder

logger = logging.getLogger(__name__)

_MIN_RELATIVE_GAIN = 1e-12


@dataclass(frozen=True)
class BoostedModel(TrainedRegressor):
    base_score: float = 0.0
    learning_rate: float = 0.3
    trees: tuple[RegressionTree, ...] = ()
    train_loss: tuple[float, ...] = ()

    def _predict(self, X: np.ndarray) -> np.ndarray:
        out = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out

    def expected_value(self) -> float:
        return self.base_score + self.learning_rate * sum(t.expected_value() for t in self.trees)


def fit_boosted(X: np.ndarray, y: np.ndarray, spec: RegressorSpec) -> BoostedModel:
    """Fit `spec.trees` rounds; zero rounds gives the constant mean predictor."""
    bins = FeatureBins.from_matrix(X)
    rows = np.arange(y.size)
    hess = np.ones_like(y)
    base = float(y.mean())
    pred = np.full(y.size, base)
    losses = [float(np.mean((pred - y) ** 2))]
    trees = []

    for _ in range(spec.trees):
        grad = pred - y
        builder = TreeBuilder(bins, grad, hess, l2=spec.l2_leaf_penalty, sign=-1.0,
                              max_depth=spec.max_depth, min_samples_leaf=spec.min_samples_leaf,
                              min_gain=_MIN_RELATIVE_GAIN)
        tree = builder.build(rows)
        pred = pred + spec.learning_rate * tree.predict(X)
        losses.append(float(np.mean((pred - y) ** 2)))
        trees.append(tree)

    logger.debug("Boosted %d rounds (%d leaves), training MSE %.4f -> %.4f", len(trees),
                 sum(t.n_leaves for t in trees), losses[0], losses[-1])
    return BoostedModel(spec=spec, n_features=X.shape[1], base_score=base,
                        learning_rate=spec.learning_rate, trees=tuple(trees), train_loss=tuple(losses))
