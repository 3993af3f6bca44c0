"""Exact Shapley attributions for tree ensembles and top-k simplification.

Attributions use tree-path-dependent conditional expectations: a feature
outside the conditioning set is integrated out by following both children
weighted by their training covers. `tree_shap` is the polynomial-time exact
algorithm; `brute_force_shap` enumerates all feature subsets and exists to
check it.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from joblib import Parallel, delayed

from app.cohort import SupervisedDataset
from app.errors import ConfigError, FitError
from app.evaluation import CvReport, FoldPlan, cross_validate
from app.learners import RegressorSpec, TrainedRegressor, predict
from app.learners.base import check_matrix
from app.learners.boosting import BoostedModel
from app.learners.forest import ForestModel
from app.learners.tree import LEAF, RegressionTree
from app.preprocess import PreprocessConfig

logger = logging.getLogger(__name__)

MAX_BRUTE_FORCE_FEATURES = 20
SIMPLIFIED_SPEC = RegressorSpec('boosted', trees=100, max_depth=2)
REDUCED_SET_SIZES = (10, 15, 20)

_ROWS_PER_TASK = 512


class UnsupportedModelError(FitError):
    """Raised when a model family has no tree attribution."""
    pass


class SelectionError(ConfigError):
    """Raised when top-k selection asks for more features than remain."""
    pass


@dataclass(frozen=True)
class AttributionMatrix:
    values: np.ndarray
    base_value: float
    feature_names: tuple[str, ...]
    sample_ids: tuple[str, ...] = ()

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    def predictions(self) -> np.ndarray:
        return self.base_value + self.values.sum(axis=1)


@dataclass(frozen=True)
class FeatureRanking:
    names: tuple[str, ...]
    importance: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.names)

    def position(self, name: str) -> int:
        return self.names.index(name)

    def top(self, m: int) -> list[str]:
        return list(self.names[:m])


# Path elements are [feature, zero_fraction, one_fraction, weight].

def _extend_path(path: list, zero_fraction: float, one_fraction: float, feature: int) -> list:
    depth = len(path)
    path = [e.copy() for e in path] + [[feature, zero_fraction, one_fraction, 1.0 if depth == 0 else 0.0]]
    for i in range(depth - 1, -1, -1):
        path[i + 1][3] += one_fraction * path[i][3] * (i + 1) / (depth + 1)
        path[i][3] = zero_fraction * path[i][3] * (depth - i) / (depth + 1)
    return path


def _unwind_path(path: list, index: int) -> list:
    depth = len(path) - 1
    path = [e.copy() for e in path]
    one_fraction, zero_fraction = path[index][2], path[index][1]
    carry = path[depth][3]
    for i in range(depth - 1, -1, -1):
        if one_fraction != 0:
            weight = path[i][3]
            path[i][3] = carry * (depth + 1) / ((i + 1) * one_fraction)
            carry = weight - path[i][3] * zero_fraction * (depth - i) / (depth + 1)
        else:
            path[i][3] = path[i][3] * (depth + 1) / (zero_fraction * (depth - i))
    for i in range(index, depth):
        path[i][0], path[i][1], path[i][2] = path[i + 1][0], path[i + 1][1], path[i + 1][2]
    return path[:depth]


def _unwound_path_sum(path: list, index: int) -> float:
    depth = len(path) - 1
    one_fraction, zero_fraction = path[index][2], path[index][1]
    total = 0.0
    if one_fraction != 0:
        carry = path[depth][3]
        for i in range(depth - 1, -1, -1):
            step = carry / ((i + 1) * one_fraction)
            total += step
            carry = path[i][3] - step * zero_fraction * (depth - i)
    elif zero_fraction != 0:
        for i in range(depth - 1, -1, -1):
            total += path[i][3] / ((depth - i) * zero_fraction)
    return total * (depth + 1)


def _tree_shap_pattern(tree: RegressionTree, goes_left: np.ndarray, phi: np.ndarray):
    """Accumulate one tree's attributions for a sample given its direction at every node."""
    def recurse(node: int, path: list, zero_fraction: float, one_fraction: float, feature: int):
        path = _extend_path(path, zero_fraction, one_fraction, feature)
        if tree.feature[node] == LEAF:
            for i in range(1, len(path)):
                weight = _unwound_path_sum(path, i)
                phi[path[i][0]] += weight * (path[i][2] - path[i][1]) * tree.value[node]
            return

        split = int(tree.feature[node])
        left, right = int(tree.left[node]), int(tree.right[node])
        hot, cold = (left, right) if goes_left[node] else (right, left)
        incoming_zero = incoming_one = 1.0
        for k in range(1, len(path)):
            if path[k][0] == split:
                incoming_zero, incoming_one = path[k][1], path[k][2]
                path = _unwind_path(path, k)
                break
        cover = tree.cover[node]
        recurse(hot, path, incoming_zero * tree.cover[hot] / cover, incoming_one, split)
        recurse(cold, path, incoming_zero * tree.cover[cold] / cover, 0.0, split)

    recurse(0, [], 1.0, 1.0, -1)


def tree_contributions(tree: RegressionTree, X: np.ndarray) -> np.ndarray:
    """Attributions of a single tree for every row of X.

    Samples that take the same direction at every node share one computation.
    """
    phi = np.zeros(X.shape)
    internal = np.flatnonzero(tree.feature != LEAF)
    if internal.size == 0:
        return phi
    directions = X[:, tree.feature[internal]] <= tree.threshold[internal]
    patterns, inverse = np.unique(directions, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    unique_phi = np.zeros((patterns.shape[0], X.shape[1]))
    goes_left = np.zeros(tree.n_nodes, dtype=bool)
    for row, pattern in enumerate(patterns):
        goes_left[internal] = pattern
        _tree_shap_pattern(tree, goes_left, unique_phi[row])
    return unique_phi[inverse]


def _ensemble(model: TrainedRegressor) -> tuple[tuple[RegressionTree, ...], float]:
    """Member trees and the weight applied to each tree's output."""
    if isinstance(model, ForestModel):
        return model.trees, 1.0 / len(model.trees)
    if isinstance(model, BoostedModel):
        return model.trees, model.learning_rate
    raise UnsupportedModelError(
        f"Tree attribution needs a forest or boosted model, got {model.spec.family}"
    )


def _ensemble_contributions(trees, weight: float, X: np.ndarray) -> np.ndarray:
    values = np.zeros(X.shape)
    for tree in trees:
        values += tree_contributions(tree, X)
    return weight * values


def tree_shap(model: TrainedRegressor, X, feature_names: Optional[list[str]] = None,
              sample_ids: Optional[list[str]] = None, n_jobs: int = 1) -> AttributionMatrix:
    """Exact path-dependent Shapley values of a forest or boosted model.

    Raises:
        UnsupportedModelError: for linear or dense models.
        DimensionMismatchError: if X has the wrong width.
    """
    trees, weight = _ensemble(model)
    X = check_matrix(X, model.n_features)
    chunks = [X[start:start + _ROWS_PER_TASK] for start in range(0, X.shape[0], _ROWS_PER_TASK)]
    parts = Parallel(n_jobs=n_jobs)(delayed(_ensemble_contributions)(trees, weight, c) for c in chunks)
    values = np.vstack(parts) if parts else np.zeros((0, model.n_features))
    values.setflags(write=False)
    names = tuple(feature_names) if feature_names is not None else tuple(
        f"x{j}" for j in range(model.n_features))
    logger.debug("Attributed %d samples over %d trees", X.shape[0], len(trees))
    return AttributionMatrix(
        values=values,
        base_value=float(model.expected_value()),
        feature_names=names,
        sample_ids=tuple(sample_ids) if sample_ids is not None else (),
    )


def _conditional_expectations(tree: RegressionTree, x: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """E[tree(X) | X_S = x_S] for every subset S encoded as a bitmask."""
    def recurse(node: int) -> np.ndarray:
        if tree.feature[node] == LEAF:
            return np.full(masks.size, tree.value[node])
        split = int(tree.feature[node])
        left, right = int(tree.left[node]), int(tree.right[node])
        left_value, right_value = recurse(left), recurse(right)
        known = (masks >> split) & 1 == 1
        followed = left_value if x[split] <= tree.threshold[node] else right_value
        averaged = (tree.cover[left] * left_value + tree.cover[right] * right_value) / tree.cover[node]
        return np.where(known, followed, averaged)
    return recurse(0)


def brute_force_shap(model: TrainedRegressor, x, background=None) -> np.ndarray:
    """Shapley values by enumerating all 2^p feature subsets.

    Without `background` the value of a subset is the path-dependent
    conditional expectation used by `tree_shap`. With a background matrix it is
    the mean prediction over background rows with the subset's features set to
    `x` (interventional), which works for any model family.
    """
    x = check_matrix(x, model.n_features)[0]
    p = x.size
    if p > MAX_BRUTE_FORCE_FEATURES:
        raise ConfigError(f"Brute-force Shapley supports at most {MAX_BRUTE_FORCE_FEATURES} features, got {p}")
    masks = np.arange(2 ** p, dtype=np.int64)

    if background is None:
        trees, weight = _ensemble(model)
        values = np.zeros(masks.size)
        for tree in trees:
            values += _conditional_expectations(tree, x, masks)
        values *= weight
        if isinstance(model, BoostedModel):
            values += model.base_score
    else:
        background = check_matrix(background, model.n_features)
        bits = ((masks[:, None] >> np.arange(p)) & 1).astype(bool)
        hybrid = np.where(bits[:, None, :], x[None, None, :], background[None, :, :])
        values = predict(model, hybrid.reshape(-1, p)).reshape(masks.size, -1).mean(axis=1)

    sizes = np.zeros(masks.size, dtype=np.int64)
    for j in range(p):
        sizes += (masks >> j) & 1
    weight_by_size = np.array([math.factorial(k) * math.factorial(p - k - 1) for k in range(p)]) / math.factorial(p)
    phi = np.zeros(p)
    for j in range(p):
        without = masks[(masks >> j) & 1 == 0]
        phi[j] = np.sum(weight_by_size[sizes[without]] * (values[without | (1 << j)] - values[without]))
    return phi


def rank_features(attr: AttributionMatrix) -> FeatureRanking:
    """Order features by mean |attribution|, descending; ties by name."""
    if attr.n_samples == 0:
        raise FitError("Cannot rank features of an empty attribution matrix")
    # sorted before averaging so the result does not depend on row order
    importance = np.sort(np.abs(attr.values), axis=0).mean(axis=0)
    order = sorted(range(len(attr.feature_names)), key=lambda j: (-importance[j], attr.feature_names[j]))
    return FeatureRanking(
        names=tuple(attr.feature_names[j] for j in order),
        importance=tuple(float(importance[j]) for j in order),
    )


def select_top_k(ranking: FeatureRanking, k: int, exclusions: Optional[list[str]] = None) -> list[str]:
    """First k ranked features after dropping `exclusions`."""
    excluded = set(exclusions or ())
    remaining = [name for name in ranking.names if name not in excluded]
    if not 1 <= k <= len(remaining):
        raise SelectionError(f"Cannot select {k} features; {len(remaining)} remain after exclusions")
    return remaining[:k]


def simplify_and_retrain(
    dataset: SupervisedDataset,
    ranking: FeatureRanking,
    k: int,
    fold_plan: FoldPlan,
    exclusions: Optional[list[str]] = None,
    spec: RegressorSpec = SIMPLIFIED_SPEC,
    preprocess_config: PreprocessConfig = PreprocessConfig(),
    n_jobs: int = 1,
) -> tuple[list[str], CvReport]:
    """Cross-validate `spec` on the top-k features; returns (features, report).

    Selected columns keep their dataset order.
    """
    if exclusions is None:
        exclusions = dataset.schema.sppb_related()
    selected = set(select_top_k(ranking, k, exclusions))
    columns = [name for name in dataset.feature_names if name in selected]
    report = cross_validate(dataset.select(columns), spec, fold_plan, preprocess_config, n_jobs=n_jobs)
    logger.debug("Top-%d model: MAE %.4f", k, report.mean_mae)
    return select_top_k(ranking, k, exclusions), report
