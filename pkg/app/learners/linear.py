"""Ordinary least squares with an intercept."""
from dataclasses import dataclass

import numpy as np

from app.learners.base import RegressorSpec, TrainedRegressor, frozen_array

# ridge added to the normal equations so that collinear one-hot blocks stay solvable
_JITTER = 1e-10


@dataclass(frozen=True)
class LinearModel(TrainedRegressor):
    coef: np.ndarray = None
    intercept: float = 0.0
    feature_means: np.ndarray = None

    def _predict(self, X: np.ndarray) -> np.ndarray:
        return X @ self.coef + self.intercept


def fit_linear(X: np.ndarray, y: np.ndarray, spec: RegressorSpec = RegressorSpec('linear')) -> LinearModel:
    x_mean = X.mean(axis=0)
    y_mean = y.mean()
    Xc = X - x_mean
    gram = Xc.T @ Xc + _JITTER * np.eye(X.shape[1])
    coef = np.linalg.solve(gram, Xc.T @ (y - y_mean))
    return LinearModel(
        spec=spec,
        n_features=X.shape[1],
        coef=frozen_array(coef),
        intercept=float(y_mean - x_mean @ coef),
        feature_means=frozen_array(x_mean),
    )


def linear_attributions(model: LinearModel, X: np.ndarray) -> np.ndarray:
    """Exact Shapley values of a linear model under feature independence."""
    return (np.atleast_2d(X) - model.feature_means) * model.coef
