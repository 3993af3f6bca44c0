"""Binary regression trees shared by the forest and boosting learners.

A tree is stored as parallel node arrays. Internal nodes send a row left when
`x[feature] <= threshold`; leaves have `feature == -1`. `cover` is the number
of training rows (with bootstrap multiplicity) that reached the node.

Split search works on per-feature rank codes: every node accumulates
per-code target and weight sums with one bincount, and candidate thresholds
are midpoints between adjacent values present in the node. Ties in gain go to
the lower feature index, then the lower threshold.
"""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from app.learners.base import frozen_array

LEAF = -1


@dataclass(frozen=True)
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    @property
    def n_leaves(self) -> int:
        return int((self.feature == LEAF).sum())

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] == LEAF

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):
            if not self.is_leaf(node):
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] != LEAF
        while active.any():
            idx = rows[active]
            current = node[idx]
            go_left = X[idx, self.feature[current]] <= self.threshold[current]
            node[idx] = np.where(go_left, self.left[current], self.right[current])
            active = self.feature[node] != LEAF
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def expected_value(self) -> float:
        """Cover-weighted mean of the leaf values."""
        ev = np.array(self.value, dtype=float)
        for node in range(self.n_nodes - 1, -1, -1):
            if not self.is_leaf(node):
                l, r = self.left[node], self.right[node]
                ev[node] = (self.cover[l] * ev[l] + self.cover[r] * ev[r]) / (self.cover[l] + self.cover[r])
        return float(ev[0])

    def to_dict(self) -> dict:
        """Nested-node representation."""
        def node_dict(node: int) -> dict:
            data = {'value': float(self.value[node]), 'cover': float(self.cover[node])}
            if not self.is_leaf(node):
                data['feature'] = int(self.feature[node])
                data['threshold'] = float(self.threshold[node])
                data['left'] = node_dict(int(self.left[node]))
                data['right'] = node_dict(int(self.right[node]))
            return data
        return node_dict(0)

    @classmethod
    def from_dict(cls, data: dict) -> 'RegressionTree':
        columns = {k: [] for k in ('feature', 'threshold', 'left', 'right', 'value', 'cover')}

        def add(node: dict) -> int:
            index = len(columns['feature'])
            for key in columns:
                columns[key].append(LEAF if key in ('feature', 'left', 'right') else 0.0)
            columns['value'][index] = node['value']
            columns['cover'][index] = node['cover']
            if 'feature' in node:
                columns['feature'][index] = node['feature']
                columns['threshold'][index] = node['threshold']
                columns['left'][index] = add(node['left'])
                columns['right'][index] = add(node['right'])
            return index

        add(data)
        return _tree_from_columns(columns)


def _tree_from_columns(columns: dict) -> RegressionTree:
    return RegressionTree(
        feature=frozen_array(columns['feature'], np.int64),
        threshold=frozen_array(columns['threshold']),
        left=frozen_array(columns['left'], np.int64),
        right=frozen_array(columns['right'], np.int64),
        value=frozen_array(columns['value']),
        cover=frozen_array(columns['cover']),
    )


@dataclass(frozen=True)
class FeatureBins:
    """Sorted distinct values per feature and each row's rank code."""
    codes: np.ndarray
    uniques: tuple[np.ndarray, ...]
    n_bins: np.ndarray

    @classmethod
    def from_matrix(cls, X: np.ndarray) -> 'FeatureBins':
        uniques, codes = [], np.empty(X.shape, dtype=np.int64)
        for j in range(X.shape[1]):
            values, inverse = np.unique(X[:, j], return_inverse=True)
            uniques.append(values)
            codes[:, j] = inverse.ravel()
        return cls(codes=codes, uniques=tuple(uniques),
                   n_bins=np.array([u.size for u in uniques], dtype=np.int64))


class TreeBuilder:
    """Greedy depth-first grower for squared-error style objectives.

    Leaf value is `sign * T / (W + l2)` with T the summed target and W the
    summed weight of the node. With `target = y`, unit weights, `sign = 1` and
    `l2 = 0` this is a CART regression tree; with gradients, hessians and
    `sign = -1` it is a second-order boosting tree.
    """

    def __init__(
        self,
        bins: FeatureBins,
        target: np.ndarray,
        weight: np.ndarray,
        l2: float = 0.0,
        sign: float = 1.0,
        max_depth: Optional[int] = None,
        min_samples_leaf: int = 1,
        min_gain: Optional[float] = None,
        feature_sampler: Optional[Callable[[], np.ndarray]] = None,
    ):
        self.bins = bins
        self.target = target
        self.weight = weight
        self.l2 = l2
        self.sign = sign
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.min_gain = min_gain
        n_features = bins.codes.shape[1]
        self.feature_sampler = feature_sampler or (lambda: np.arange(n_features))

    def build(self, rows: np.ndarray) -> RegressionTree:
        self._columns = {k: [] for k in ('feature', 'threshold', 'left', 'right', 'value', 'cover')}
        self._grow(np.asarray(rows, dtype=np.int64), 0)
        return _tree_from_columns(self._columns)

    def _grow(self, rows: np.ndarray, depth: int) -> int:
        columns = self._columns
        node = len(columns['feature'])
        t, w = self.target[rows], self.weight[rows]
        total_t, total_w = t.sum(), w.sum()
        columns['feature'].append(LEAF)
        columns['threshold'].append(0.0)
        columns['left'].append(LEAF)
        columns['right'].append(LEAF)
        columns['value'].append(self.sign * total_t / (total_w + self.l2))
        columns['cover'].append(float(rows.size))

        if self.max_depth is not None and depth >= self.max_depth:
            return node
        if rows.size < 2 * self.min_samples_leaf or np.ptp(t) == 0:
            return node

        split = self._best_split(rows, t, w, total_t, total_w)
        if split is None:
            return node
        feature, code, threshold = split
        go_left = self.bins.codes[rows, feature] <= code
        columns['feature'][node] = feature
        columns['threshold'][node] = threshold
        columns['left'][node] = self._grow(rows[go_left], depth + 1)
        columns['right'][node] = self._grow(rows[~go_left], depth + 1)
        return node

    def _best_split(self, rows, t, w, total_t, total_w):
        features = self.feature_sampler()
        n_bins = self.bins.n_bins[features]
        offsets = np.concatenate(([0], np.cumsum(n_bins)[:-1]))
        size = int(n_bins.sum())
        q = features.size

        flat = (self.bins.codes[np.ix_(rows, features)] + offsets).ravel()
        if flat.size < size:
            # small node: accumulate over the bins actually present
            bin_ids, flat = np.unique(flat, return_inverse=True)
            flat = flat.ravel()
        else:
            bin_ids = np.arange(size)
        sum_t = np.bincount(flat, weights=np.repeat(t, q), minlength=bin_ids.size)
        sum_w = np.bincount(flat, weights=np.repeat(w, q), minlength=bin_ids.size)
        count = np.bincount(flat, minlength=bin_ids.size)

        segment_of = np.searchsorted(offsets, bin_ids, side='right') - 1
        starts = np.concatenate(([0], np.flatnonzero(np.diff(segment_of)) + 1))
        lengths = np.diff(np.append(starts, bin_ids.size))

        def within_segment(cum):
            before = np.concatenate(([0], cum[starts[1:] - 1]))
            return cum - np.repeat(before, lengths)

        left_t = within_segment(np.cumsum(sum_t))
        left_w = within_segment(np.cumsum(sum_w))
        left_n = within_segment(np.cumsum(count))
        right_n = rows.size - left_n

        valid = (count > 0) & (left_n >= self.min_samples_leaf) & (right_n >= self.min_samples_leaf)
        if not valid.any():
            return None
        with np.errstate(divide='ignore', invalid='ignore'):
            parent = total_t ** 2 / (total_w + self.l2)
            gain = (left_t ** 2 / (left_w + self.l2)
                    + (total_t - left_t) ** 2 / (total_w - left_w + self.l2)
                    - parent)
        gain = np.where(valid, gain, -np.inf)
        best = int(np.argmax(gain))
        if not np.isfinite(gain[best]):
            return None
        if self.min_gain is not None and gain[best] <= self.min_gain * max(1.0, abs(parent)):
            return None

        segment = int(segment_of[best])
        feature = int(features[segment])
        # right_n >= 1 guarantees a present bin after `best` in the same segment
        following = best + 1 + int(np.argmax(count[best + 1:] > 0))
        code = int(bin_ids[best] - offsets[segment])
        next_code = int(bin_ids[following] - offsets[segment])
        values = self.bins.uniques[feature]
        return feature, code, float((values[code] + values[next_code]) / 2.0)


def fit_tree(X: np.ndarray, y: np.ndarray, max_depth: Optional[int] = None,
             min_samples_leaf: int = 1) -> RegressionTree:
    """CART regression tree on all rows and all features."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    builder = TreeBuilder(FeatureBins.from_matrix(X), y, np.ones_like(y),
                          max_depth=max_depth, min_samples_leaf=min_samples_leaf)
    return builder.build(np.arange(y.size))
