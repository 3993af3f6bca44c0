"""Metrics, fold plans, cross-validation and grid search.

Every cell of a grid is evaluated on the same FoldPlan, and preprocessing is
fitted once per fold and shared across cells.
"""
import itertools
import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from joblib import Parallel, delayed
from sklearn.model_selection import KFold, StratifiedKFold
from tqdm import tqdm

from app.cohort import SupervisedDataset
from app.errors import ConfigError, DataError, FitError
from app.learners import RegressorSpec, TrainedRegressor, fit_model, predict
from app.preprocess import PreprocessConfig, PreprocessModel, fit_pipeline, transform

logger = logging.getLogger(__name__)

STATUS_OK = 'ok'
STATUS_FAILED = 'failed'

TREE_COUNTS = (10, 50, 100, 200, 300)
TREE_DEPTHS = (2, 8, 16, 32, 64, None)
DENSE_LAYERS = (2, 3, 4, 5)
DENSE_NEURONS = (8, 16, 32, 64, 128)
DENSE_EXTRA_LAYER_SIZES = ((8, 16, 8),)

DEFAULT_GRIDS = {
    'linear': {},
    'forest': {'trees': list(TREE_COUNTS), 'max_depth': list(TREE_DEPTHS)},
    'boosted': {'trees': list(TREE_COUNTS), 'max_depth': list(TREE_DEPTHS)},
    'dense': {
        'layers': list(DENSE_LAYERS),
        'neurons': list(DENSE_NEURONS),
        'layer_sizes': [list(s) for s in DENSE_EXTRA_LAYER_SIZES],
    },
}


class MetricError(DataError):
    """Raised when metric inputs are empty, mismatched or non-finite."""
    pass


class FoldError(FitError):
    """Raised when fitting or scoring fails inside a fold."""

    def __init__(self, message: str, fold: int):
        super().__init__(message)
        self.fold = fold


def _metric_inputs(y_true, y_pred) -> tuple[np.ndarray, np.ndarray]:
    y_true = np.asarray(y_true, dtype=float).ravel()
    y_pred = np.asarray(y_pred, dtype=float).ravel()
    if y_true.size == 0 or y_true.size != y_pred.size:
        raise MetricError(f"Metric inputs must be non-empty and equal length ({y_true.size} vs {y_pred.size})")
    if not (np.isfinite(y_true).all() and np.isfinite(y_pred).all()):
        raise MetricError("Metric inputs contain non-finite values")
    return y_true, y_pred


def mae(y_true, y_pred) -> float:
    y_true, y_pred = _metric_inputs(y_true, y_pred)
    return float(np.mean(np.abs(y_true - y_pred)))


def mse(y_true, y_pred) -> float:
    y_true, y_pred = _metric_inputs(y_true, y_pred)
    return float(np.mean((y_true - y_pred) ** 2))


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    assignments: np.ndarray

    @property
    def n(self) -> int:
        return self.assignments.size

    def fold_sizes(self) -> list[int]:
        return np.bincount(self.assignments, minlength=self.k).tolist()

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)


def make_folds(n: int, k: int = 10, seed: int = 0, stratify_by=None) -> FoldPlan:
    """Shuffle with `seed` and split into k near-equal folds.

    The first `n % k` folds get one extra sample. With `stratify_by`, each
    fold keeps the target's value proportions as closely as the counts allow.
    """
    if k < 2:
        raise ConfigError(f"cv.k must be >= 2, got {k}")
    if n < k:
        raise ConfigError(f"Cannot make {k} folds from {n} samples")
    assignments = np.empty(n, dtype=np.int64)
    placeholder = np.zeros((n, 1))

    if stratify_by is not None:
        target = np.asarray(stratify_by)
        if target.shape != (n,):
            raise ConfigError(f"Stratification target has shape {target.shape}, expected ({n},)")
        splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=seed)
        try:
            with warnings.catch_warnings():
                # values rarer than k are fine, they just cannot reach every fold
                warnings.simplefilter('ignore', UserWarning)
                splits = list(splitter.split(placeholder, target))
        except ValueError as e:
            raise ConfigError(f"Cannot stratify {k} folds: {e}") from e
    else:
        splits = KFold(n_splits=k, shuffle=True, random_state=seed).split(placeholder)

    for fold, (_, test) in enumerate(splits):
        assignments[test] = fold
    assignments.setflags(write=False)
    return FoldPlan(k=k, seed=seed, assignments=assignments)


@dataclass(frozen=True)
class FoldData:
    """Preprocessed train/test matrices of one fold."""
    fold: int
    train_rows: np.ndarray
    test_rows: np.ndarray
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    preprocess: PreprocessModel


def prepare_fold(dataset: SupervisedDataset, plan: FoldPlan, fold: int,
                 config: PreprocessConfig = PreprocessConfig(),
                 global_model: Optional[PreprocessModel] = None) -> FoldData:
    """Fit preprocessing on the training rows (or reuse `global_model`) and transform both sides."""
    train_rows, test_rows = plan.train_indices(fold), plan.test_indices(fold)
    if test_rows.size == 0 or train_rows.size == 0:
        raise FoldError(f"Fold {fold} has an empty train or test side", fold=fold)
    try:
        model = global_model or fit_pipeline(dataset.X[train_rows], config.k_neighbors, dataset.feature_names)
        X_train = transform(model, dataset.X[train_rows])
        X_test = transform(model, dataset.X[test_rows])
    except DataError as e:
        raise FoldError(f"Preprocessing failed in fold {fold}: {e}", fold=fold) from e
    return FoldData(
        fold=fold,
        train_rows=train_rows,
        test_rows=test_rows,
        X_train=X_train,
        y_train=dataset.y[train_rows].astype(float),
        X_test=X_test,
        y_test=dataset.y[test_rows].astype(float),
        preprocess=model,
    )


def prepare_folds(dataset: SupervisedDataset, plan: FoldPlan,
                  config: PreprocessConfig = PreprocessConfig(), n_jobs: int = 1) -> list[FoldData]:
    if plan.n != dataset.n_samples:
        raise ConfigError(f"Fold plan covers {plan.n} samples, dataset has {dataset.n_samples}")
    global_model = None
    if config.fit_scope == 'global':
        global_model = fit_pipeline(dataset.X, config.k_neighbors, dataset.feature_names)
    folds = Parallel(n_jobs=n_jobs)(
        delayed(prepare_fold)(dataset, plan, fold, config, global_model) for fold in range(plan.k)
    )
    logger.debug("Prepared %d folds (fit_scope=%s)", plan.k, config.fit_scope)
    return folds


@dataclass(frozen=True)
class CvReport:
    spec: RegressorSpec
    fold_mae: tuple[float, ...] = ()
    fold_mse: tuple[float, ...] = ()
    fold_seconds: tuple[float, ...] = ()
    status: str = STATUS_OK
    error: Optional[str] = None
    mean_mae: float = field(init=False)
    mean_mse: float = field(init=False)

    def __post_init__(self):
        ok = self.status == STATUS_OK and self.fold_mae
        object.__setattr__(self, 'mean_mae', float(np.mean(self.fold_mae)) if ok else float('inf'))
        object.__setattr__(self, 'mean_mse', float(np.mean(self.fold_mse)) if ok else float('inf'))

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK

    def sort_key(self) -> tuple:
        """Failed last, then mean MAE, fewer trees, shallower depth, fewer neurons."""
        return (not self.ok, self.mean_mae, self.spec.n_trees, self.spec.depth_key,
                self.spec.n_neurons, self.spec.label())

    def to_dict(self, timings: bool = True) -> dict:
        data = {
            'spec': self.spec.to_dict(),
            'label': self.spec.label(),
            'status': self.status,
            'fold_mae': list(self.fold_mae),
            'fold_mse': list(self.fold_mse),
            'mean_mae': self.mean_mae if self.ok else None,
            'mean_mse': self.mean_mse if self.ok else None,
        }
        if self.error:
            data['error'] = self.error
        if timings:
            data['fold_seconds'] = list(self.fold_seconds)
        return data


def fit_fold(fold: FoldData, spec: RegressorSpec, n_jobs: int = 1) -> tuple[TrainedRegressor, float, float, float]:
    """Fit on one prepared fold; returns (model, MAE, MSE, seconds)."""
    started = time.perf_counter()
    try:
        model = fit_model(spec, fold.X_train, fold.y_train, n_jobs=n_jobs)
        y_pred = predict(model, fold.X_test)
        fold_mae, fold_mse = mae(fold.y_test, y_pred), mse(fold.y_test, y_pred)
    except (FitError, DataError) as e:
        raise FoldError(f"{spec.label()} failed in fold {fold.fold}: {e}", fold=fold.fold) from e
    return model, fold_mae, fold_mse, time.perf_counter() - started


def cross_validate(
    dataset: SupervisedDataset,
    spec: RegressorSpec,
    fold_plan: FoldPlan,
    preprocess_config: PreprocessConfig = PreprocessConfig(),
    prepared: Optional[list[FoldData]] = None,
    n_jobs: int = 1,
) -> CvReport:
    """Per-fold fit and held-out MAE/MSE.

    Raises:
        FoldError: the first fold that fails, with its index.
    """
    if dataset.n_samples == 0:
        raise DataError("Cannot cross-validate an empty dataset")
    folds = prepared if prepared is not None else prepare_folds(dataset, fold_plan, preprocess_config, n_jobs)
    maes, mses, seconds = [], [], []
    for fold in folds:
        _, fold_mae, fold_mse, elapsed = fit_fold(fold, spec, n_jobs=n_jobs)
        maes.append(fold_mae)
        mses.append(fold_mse)
        seconds.append(elapsed)
    report = CvReport(spec=spec, fold_mae=tuple(maes), fold_mse=tuple(mses), fold_seconds=tuple(seconds))
    logger.debug("%s: MAE %.4f MSE %.4f", spec.label(), report.mean_mae, report.mean_mse)
    return report


def expand_grid(family: str, grid: dict, base: Optional[dict] = None) -> list[RegressorSpec]:
    """Cartesian product of the grid axes on top of `base` hyperparameters.

    Dense grids use `layers` x `neurons` for uniform networks; explicit
    `layer_sizes` entries are appended as extra cells.
    """
    base = dict(base or {})
    grid = dict(grid)
    extra_layer_sizes = grid.pop('layer_sizes', []) if family == 'dense' else []
    uniform = []
    if family == 'dense' and ('layers' in grid or 'neurons' in grid):
        layers = grid.pop('layers', [2])
        neurons = grid.pop('neurons', [32])
        uniform = [tuple([w] * d) for d, w in itertools.product(layers, neurons)]

    axes = sorted(grid)
    specs = []
    for values in itertools.product(*(grid[a] for a in axes)):
        params = {**base, **dict(zip(axes, values)), 'family': family}
        if family == 'dense' and (uniform or extra_layer_sizes):
            for sizes in uniform + [tuple(s) for s in extra_layer_sizes]:
                specs.append(RegressorSpec.from_dict({**params, 'layer_sizes': sizes}))
        else:
            specs.append(RegressorSpec.from_dict(params))
    if not specs:
        raise ConfigError(f"Grid for {family} is empty")
    return specs


def rank_reports(reports: list[CvReport]) -> list[CvReport]:
    return sorted(reports, key=CvReport.sort_key)


def _evaluate_cell(dataset, spec, fold_plan, prepared) -> CvReport:
    try:
        return cross_validate(dataset, spec, fold_plan, prepared=prepared)
    except FitError as e:
        logger.debug("Cell %s failed: %s", spec.label(), e)
        return CvReport(spec=spec, status=STATUS_FAILED, error=str(e))


def grid_search(
    dataset: SupervisedDataset,
    family: str,
    grid: Union[dict, list[RegressorSpec], None],
    fold_plan: FoldPlan,
    preprocess_config: PreprocessConfig = PreprocessConfig(),
    base: Optional[dict] = None,
    prepared: Optional[list[FoldData]] = None,
    n_jobs: int = 1,
    progress: bool = False,
) -> list[CvReport]:
    """Cross-validate every cell and rank; failed cells are kept and ranked last."""
    if grid is None:
        grid = DEFAULT_GRIDS[family]
    specs = grid if isinstance(grid, list) else expand_grid(family, grid, base)
    if not specs:
        raise ConfigError(f"Grid for {family} is empty")
    if prepared is None:
        prepared = prepare_folds(dataset, fold_plan, preprocess_config, n_jobs)

    cells = tqdm(specs, desc=f"{family} grid", disable=not progress, leave=False)
    reports = Parallel(n_jobs=n_jobs)(
        delayed(_evaluate_cell)(dataset, spec, fold_plan, prepared) for spec in cells
    )
    failed = sum(1 for r in reports if not r.ok)
    logger.debug("%s grid: %d cells evaluated, %d failed", family, len(reports), failed)
    return rank_reports(reports)
