"""From-scratch regressors: linear, random forest, boosted trees, dense network."""
from app.learners.base import (
    FAMILIES,
    DimensionMismatchError,
    DivergenceError,
    RegressorSpec,
    SpecError,
    TrainedRegressor,
    fit_model,
    predict,
)

__all__ = [
    'FAMILIES',
    'DimensionMismatchError',
    'DivergenceError',
    'RegressorSpec',
    'SpecError',
    'TrainedRegressor',
    'fit_model',
    'predict',
]
