"""Tests for the evaluation module."""
import numpy as np
import pytest

from app.cohort import SupervisedDataset
from app.errors import ConfigError
from app.evaluation import (
    DEFAULT_GRIDS,
    CvReport,
    FoldError,
    MetricError,
    STATUS_FAILED,
    cross_validate,
    expand_grid,
    grid_search,
    mae,
    make_folds,
    mse,
    prepare_fold,
    prepare_folds,
    rank_reports,
)
from app.learners import RegressorSpec
from app.preprocess import PreprocessConfig

# a step this large overflows the first update
EXPLODING_DENSE = RegressorSpec('dense', layer_sizes=(4,), epochs=3, batch_size=16, step_size=1e300)


def _report(spec, value):
    return CvReport(spec=spec, fold_mae=(value,), fold_mse=(value,))


class TestMetrics:
    """Tests for mae and mse."""

    def test_values(self):
        """Should average absolute and squared errors."""
        assert mae([1, 2, 3], [2, 2, 5]) == pytest.approx(1.0)
        assert mse([1, 2, 3], [2, 2, 5]) == pytest.approx(5.0 / 3.0)

    def test_perfect(self):
        """Should be zero for perfect predictions."""
        assert mae([4, 7], [4, 7]) == 0.0
        assert mse([4, 7], [4, 7]) == 0.0

    @pytest.mark.parametrize("y_true,y_pred", [
        ([], []),
        ([1, 2], [1]),
        ([1, np.nan], [1, 2]),
        ([1, 2], [1, np.inf]),
    ])
    def test_invalid(self, y_true, y_pred):
        """Should reject empty, mismatched or non-finite inputs."""
        with pytest.raises(MetricError):
            mae(y_true, y_pred)


class TestMakeFolds:
    """Tests for make_folds function."""

    @pytest.mark.parametrize("n,expected", [
        (100, [10] * 10),
        (105, [11] * 5 + [10] * 5),
    ])
    def test_sizes(self, n, expected):
        """Should give the first n % k folds one extra sample."""
        assert make_folds(n, 10, seed=0).fold_sizes() == expected

    def test_partition(self):
        """Should place every sample in exactly one test fold."""
        plan = make_folds(57, 10, seed=2)
        tests = np.concatenate([plan.test_indices(f) for f in range(10)])
        assert sorted(tests.tolist()) == list(range(57))
        for f in range(10):
            assert not set(plan.test_indices(f)) & set(plan.train_indices(f))

    def test_deterministic(self):
        """Should reproduce a plan from its seed."""
        np.testing.assert_array_equal(make_folds(50, 5, seed=9).assignments,
                                      make_folds(50, 5, seed=9).assignments)
        assert not np.array_equal(make_folds(50, 5, seed=9).assignments,
                                  make_folds(50, 5, seed=10).assignments)

    def test_stratified(self):
        """Should spread every target value evenly over the folds."""
        y = np.repeat(np.arange(5), 20)
        plan = make_folds(100, 10, seed=0, stratify_by=y)
        for value in range(5):
            counts = np.bincount(plan.assignments[y == value], minlength=10)
            assert counts.max() - counts.min() <= 1
        assert plan.fold_sizes() == [10] * 10

    @pytest.mark.parametrize("n,k", [(10, 1), (5, 10)])
    def test_invalid(self, n, k):
        """Should reject k < 2 and fewer samples than folds."""
        with pytest.raises(ConfigError):
            make_folds(n, k)


class TestPrepareFolds:
    """Tests for per-fold preprocessing."""

    def _poisoned(self, dataset, rows, column):
        X = dataset.X.copy()
        X[rows, dataset.feature_names.index(column)] = 1e6
        return SupervisedDataset(schema=dataset.schema, X=X, y=dataset.y, provenance=dataset.provenance)

    def test_test_rows_do_not_leak(self, small_dataset):
        """Should fit preprocessing without looking at the held-out rows."""
        plan = make_folds(small_dataset.n_samples, 5, seed=0)
        poisoned = self._poisoned(small_dataset, plan.test_indices(0), 'grip_strength_kg')
        clean = prepare_fold(small_dataset, plan, 0)
        dirty = prepare_fold(poisoned, plan, 0)
        np.testing.assert_array_equal(dirty.X_train, clean.X_train)
        np.testing.assert_array_equal(dirty.preprocess.maxs, clean.preprocess.maxs)
        column = small_dataset.feature_names.index('grip_strength_kg')
        assert (dirty.X_test[:, column] == 1.0).all()

    def test_global_scope_sees_everything(self, small_dataset):
        """Should fit on all rows when fit_scope is global."""
        plan = make_folds(small_dataset.n_samples, 5, seed=0)
        poisoned = self._poisoned(small_dataset, plan.test_indices(0), 'grip_strength_kg')
        folds = prepare_folds(poisoned, plan, PreprocessConfig(fit_scope='global'))
        column = small_dataset.feature_names.index('grip_strength_kg')
        assert folds[0].preprocess.maxs[column] == 1e6

    def test_scaled_train_side(self, small_dataset):
        """Should hand learners complete matrices in [0, 1]."""
        plan = make_folds(small_dataset.n_samples, 5, seed=1)
        for fold in prepare_folds(small_dataset, plan):
            assert not np.isnan(fold.X_train).any()
            assert fold.X_train.min() >= 0.0 and fold.X_train.max() <= 1.0
            assert fold.test_rows.size + fold.train_rows.size == small_dataset.n_samples

    def test_plan_size_mismatch(self, small_dataset):
        """Should reject a plan for another dataset."""
        with pytest.raises(ConfigError):
            prepare_folds(small_dataset, make_folds(small_dataset.n_samples + 1, 5))


class TestCrossValidate:
    """Tests for cross_validate function."""

    def test_report(self, small_dataset):
        """Should report one MAE and MSE per fold."""
        plan = make_folds(small_dataset.n_samples, 5, seed=0)
        report = cross_validate(small_dataset, RegressorSpec('linear'), plan)
        assert report.ok
        assert len(report.fold_mae) == len(report.fold_mse) == len(report.fold_seconds) == 5
        assert report.mean_mae == pytest.approx(np.mean(report.fold_mae))
        assert report.mean_mse >= report.mean_mae ** 2 - 1e-9

    def test_deterministic(self, small_dataset):
        """Should reproduce identical fold errors."""
        plan = make_folds(small_dataset.n_samples, 5, seed=0)
        spec = RegressorSpec('forest', trees=5, max_depth=4, seed=2)
        a = cross_validate(small_dataset, spec, plan)
        b = cross_validate(small_dataset, spec, plan)
        assert a.fold_mae == b.fold_mae

    def test_shared_preparation(self, small_dataset):
        """Should give the same result with folds prepared up front."""
        plan = make_folds(small_dataset.n_samples, 5, seed=0)
        prepared = prepare_folds(small_dataset, plan)
        spec = RegressorSpec('boosted', trees=10, max_depth=2)
        assert cross_validate(small_dataset, spec, plan, prepared=prepared).fold_mae == \
            cross_validate(small_dataset, spec, plan).fold_mae

    def test_failed_fold(self, small_dataset):
        """Should name the fold that failed."""
        plan = make_folds(small_dataset.n_samples, 5, seed=0)
        with pytest.raises(FoldError) as info:
            cross_validate(small_dataset, EXPLODING_DENSE, plan)
        assert info.value.fold == 0


class TestExpandGrid:
    """Tests for expand_grid function."""

    @pytest.mark.parametrize("family,cells", [('linear', 1), ('forest', 30), ('boosted', 30), ('dense', 21)])
    def test_default_grids(self, family, cells):
        """Should expand the default grids."""
        assert len(expand_grid(family, DEFAULT_GRIDS[family])) == cells

    def test_base_applied(self):
        """Should apply base hyperparameters to every cell."""
        specs = expand_grid('boosted', {'trees': [1, 2]}, base={'learning_rate': 0.1})
        assert [s.trees for s in specs] == [1, 2]
        assert {s.learning_rate for s in specs} == {0.1}

    def test_dense_layouts(self):
        """Should build uniform networks plus explicit layer sizes."""
        specs = expand_grid('dense', {'layers': [2], 'neurons': [8, 16], 'layer_sizes': [[8, 16, 8]]})
        assert [s.layer_sizes for s in specs] == [(8, 8), (16, 16), (8, 16, 8)]

    def test_unknown_axis(self):
        """Should reject hyperparameters the spec does not know."""
        with pytest.raises(ConfigError):
            expand_grid('forest', {'leaves': [4]})


class TestRanking:
    """Tests for rank_reports and grid_search."""

    def test_tie_breaks(self):
        """Should prefer fewer trees then shallower depth on equal MAE."""
        deep = _report(RegressorSpec('boosted', trees=10, max_depth=None), 1.0)
        shallow = _report(RegressorSpec('boosted', trees=10, max_depth=2), 1.0)
        big = _report(RegressorSpec('boosted', trees=50, max_depth=2), 1.0)
        best = _report(RegressorSpec('boosted', trees=300, max_depth=64), 0.5)
        assert rank_reports([deep, big, shallow, best]) == [best, shallow, deep, big]

    def test_failed_last(self):
        """Should rank failed cells after every successful one."""
        failed = CvReport(spec=RegressorSpec('linear'), status=STATUS_FAILED, error="boom")
        worse = _report(RegressorSpec('boosted', trees=10), 9.0)
        assert rank_reports([failed, worse]) == [worse, failed]
        assert failed.to_dict()['mean_mae'] is None

    def test_single_cell(self, small_dataset):
        """Should evaluate a one-cell grid."""
        plan = make_folds(small_dataset.n_samples, 5, seed=0)
        reports = grid_search(small_dataset, 'linear', None, plan)
        assert len(reports) == 1 and reports[0].ok

    def test_failed_cell_kept(self, small_dataset):
        """Should keep a diverging cell and rank it last."""
        plan = make_folds(small_dataset.n_samples, 5, seed=0)
        specs = [EXPLODING_DENSE, RegressorSpec('dense', layer_sizes=(4,), epochs=3)]
        reports = grid_search(small_dataset, 'dense', specs, plan)
        assert [r.ok for r in reports] == [True, False]
        assert reports[1].spec == EXPLODING_DENSE
        assert "fold 0" in reports[1].error

    def test_ranked_by_mae(self, small_dataset):
        """Should order cells by mean MAE."""
        plan = make_folds(small_dataset.n_samples, 5, seed=0)
        reports = grid_search(small_dataset, 'boosted', {'trees': [0, 20], 'max_depth': [2]}, plan)
        assert [r.mean_mae for r in reports] == sorted(r.mean_mae for r in reports)
        assert reports[0].spec.trees == 20
