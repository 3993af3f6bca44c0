"""Random forest of CART regression trees."""
import logging
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from app.learners.base import RegressorSpec, TrainedRegressor
from app.learners.tree import FeatureBins, RegressionTree, TreeBuilder

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ForestModel(TrainedRegressor):
    trees: tuple[RegressionTree, ...] = ()

    def _predict(self, X: np.ndarray) -> np.ndarray:
        return np.mean([tree.predict(X) for tree in self.trees], axis=0)

    def expected_value(self) -> float:
        return float(np.mean([tree.expected_value() for tree in self.trees]))


def features_per_split(spec: RegressorSpec, n_features: int) -> int:
    if spec.max_features == 'all':
        return n_features
    if spec.max_features == 'third':
        return max(1, n_features // 3)
    return min(n_features, int(spec.max_features))


def _fit_one(bins: FeatureBins, y: np.ndarray, spec: RegressorSpec, index: int) -> RegressionTree:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index]))
    n, p = bins.codes.shape
    rows = rng.integers(0, n, n) if spec.bootstrap else np.arange(n)
    k = features_per_split(spec, p)

    def sampler() -> np.ndarray:
        if k == p:
            return np.arange(p)
        return np.sort(rng.choice(p, size=k, replace=False))

    builder = TreeBuilder(bins, y, np.ones_like(y), max_depth=spec.max_depth,
                          min_samples_leaf=spec.min_samples_leaf, feature_sampler=sampler)
    return builder.build(rows)


def fit_forest(X: np.ndarray, y: np.ndarray, spec: RegressorSpec, n_jobs: int = 1) -> ForestModel:
    """Fit `spec.trees` trees; tree i draws from its own stream seeded by (seed, i)."""
    bins = FeatureBins.from_matrix(X)
    trees = Parallel(n_jobs=n_jobs)(
        delayed(_fit_one)(bins, y, spec, i) for i in range(spec.trees)
    )
    logger.debug("Forest of %d trees, mean depth %.1f, mean leaves %.1f", len(trees),
                 np.mean([t.depth() for t in trees]), np.mean([t.n_leaves for t in trees]))
    return ForestModel(spec=spec, n_features=X.shape[1], trees=tuple(trees))
