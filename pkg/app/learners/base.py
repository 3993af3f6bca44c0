"""Regressor specs, the trained-model base class and the fit dispatcher."""
import logging
import math
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, fields
from typing import Optional, Union

import numpy as np

from app.errors import ConfigError, DataError, FitError

logger = logging.getLogger(__name__)

FAMILIES = ('linear', 'forest', 'boosted', 'dense')
MAX_FEATURES_CHOICES = ('third', 'all')


class SpecError(ConfigError):
    """Raised when a RegressorSpec has invalid hyperparameters."""
    pass


class DimensionMismatchError(DataError):
    """Raised when a matrix width does not match the model's feature count."""
    pass


class DivergenceError(FitError):
    """Raised when dense-network training produces a non-finite loss."""

    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


@dataclass(frozen=True)
class RegressorSpec:
    """Family plus hyperparameters; fields that do not apply to a family are ignored."""
    family: str
    trees: int = 100
    max_depth: Optional[int] = None
    learning_rate: float = 0.3
    l2_leaf_penalty: float = 1.0
    min_samples_leaf: int = 1
    max_features: Union[str, int] = 'third'
    bootstrap: bool = True
    layer_sizes: tuple[int, ...] = (32, 32)
    epochs: int = 200
    batch_size: int = 64
    step_size: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SpecError(f"Unknown model family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, 'layer_sizes', tuple(int(n) for n in self.layer_sizes))

        if self.family == 'forest' and self.trees < 1:
            raise SpecError(f"forest needs trees >= 1, got {self.trees}")
        if self.family == 'boosted' and self.trees < 0:
            raise SpecError(f"boosted needs trees >= 0, got {self.trees}")
        if self.family in ('forest', 'boosted'):
            if self.max_depth is not None and self.max_depth < 1:
                raise SpecError(f"max_depth must be >= 1 or None, got {self.max_depth}")
            if self.min_samples_leaf < 1:
                raise SpecError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")
        if self.family == 'forest':
            if isinstance(self.max_features, str):
                if self.max_features not in MAX_FEATURES_CHOICES:
                    raise SpecError(f"max_features must be an int or one of {MAX_FEATURES_CHOICES}")
            elif self.max_features < 1:
                raise SpecError(f"max_features must be >= 1, got {self.max_features}")
        if self.family == 'boosted':
            if not 0 < self.learning_rate <= 1:
                raise SpecError(f"learning_rate must lie in (0, 1], got {self.learning_rate}")
            if self.l2_leaf_penalty < 0:
                raise SpecError(f"l2_leaf_penalty must be >= 0, got {self.l2_leaf_penalty}")
        if self.family == 'dense':
            if not self.layer_sizes or any(n < 1 for n in self.layer_sizes):
                raise SpecError(f"layer_sizes must be non-empty positive sizes, got {self.layer_sizes}")
            if self.epochs < 0 or self.batch_size < 1 or self.step_size <= 0:
                raise SpecError("dense needs epochs >= 0, batch_size >= 1 and step_size > 0")

    @property
    def n_trees(self) -> int:
        return self.trees if self.family in ('forest', 'boosted') else 0

    @property
    def depth_key(self) -> float:
        if self.family not in ('forest', 'boosted'):
            return 0
        return math.inf if self.max_depth is None else self.max_depth

    @property
    def n_neurons(self) -> int:
        return sum(self.layer_sizes) if self.family == 'dense' else 0

    def label(self) -> str:
        """Short human-readable description of the cell."""
        if self.family == 'linear':
            return 'linear'
        if self.family == 'dense':
            return f"dense layers={list(self.layer_sizes)}"
        depth = 'None' if self.max_depth is None else self.max_depth
        return f"{self.family} trees={self.trees} depth={depth}"

    def to_dict(self) -> dict:
        data = asdict(self)
        data['layer_sizes'] = list(self.layer_sizes)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'RegressorSpec':
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise SpecError(f"Unknown model spec keys: {sorted(unknown)}")
        if 'family' not in data:
            raise SpecError("Model spec needs a 'family'")
        return cls(**data)


@dataclass(frozen=True)
class TrainedRegressor(ABC):
    spec: RegressorSpec
    n_features: int

    @abstractmethod
    def _predict(self, X: np.ndarray) -> np.ndarray:
        ...


def check_matrix(X, n_features: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != n_features:
        raise DimensionMismatchError(f"Expected a matrix with {n_features} columns, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise DataError("Model input must be complete and finite; preprocess first")
    return X


def check_training_data(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise DimensionMismatchError(f"X of shape {X.shape} does not match y of shape {y.shape}")
    if X.shape[0] == 0:
        raise DataError("Cannot fit on an empty training set")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise DataError("Training data must be complete and finite; preprocess first")
    return X, y


def frozen_array(values, dtype=float) -> np.ndarray:
    array = np.array(values, dtype=dtype)
    array.setflags(write=False)
    return array


def predict(model: TrainedRegressor, X) -> np.ndarray:
    """Predictions of any trained model, one per row."""
    return model._predict(check_matrix(X, model.n_features))


def fit_model(spec: RegressorSpec, X, y, n_jobs: int = 1) -> TrainedRegressor:
    """Fit the family named by `spec`."""
    from app.learners.boosting import fit_boosted
    from app.learners.dense import fit_dense
    from app.learners.forest import fit_forest
    from app.learners.linear import fit_linear

    X, y = check_training_data(X, y)
    logger.debug("Fitting %s on %d x %d", spec.label(), X.shape[0], X.shape[1])
    if spec.family == 'linear':
        return fit_linear(X, y, spec)
    if spec.family == 'forest':
        return fit_forest(X, y, spec, n_jobs=n_jobs)
    if spec.family == 'boosted':
        return fit_boosted(X, y, spec)
    return fit_dense(X, y, spec)
