"""Versioned JSON documents for trained regressors."""
import json
import logging
from pathlib import Path

import numpy as np

from app.errors import DataError
from app.learners.base import RegressorSpec, TrainedRegressor, frozen_array
from app.learners.boosting import BoostedModel
from app.learners.dense import DenseModel
from app.learners.forest import ForestModel
from app.learners.linear import LinearModel
from app.learners.tree import RegressionTree

logger = logging.getLogger(__name__)

MODEL_FORMAT = 'sppb-regressor'
MODEL_VERSION = 1


class ModelFormatError(DataError):
    """Raised when a model document is unreadable or of an unknown version."""
    pass


def _arrays_to_json(arrays: dict) -> dict:
    return {key: np.asarray(value).tolist() for key, value in arrays.items()}


def _arrays_from_json(data: dict) -> dict:
    return {key: frozen_array(value) for key, value in data.items()}


def model_to_dict(model: TrainedRegressor) -> dict:
    document = {
        'format': MODEL_FORMAT,
        'version': MODEL_VERSION,
        'spec': model.spec.to_dict(),
        'n_features': model.n_features,
    }
    if isinstance(model, LinearModel):
        document['params'] = {
            'coef': model.coef.tolist(),
            'intercept': model.intercept,
            'feature_means': model.feature_means.tolist(),
        }
    elif isinstance(model, ForestModel):
        document['params'] = {'trees': [t.to_dict() for t in model.trees]}
    elif isinstance(model, BoostedModel):
        document['params'] = {
            'base_score': model.base_score,
            'learning_rate': model.learning_rate,
            'trees': [t.to_dict() for t in model.trees],
            'train_loss': list(model.train_loss),
        }
    elif isinstance(model, DenseModel):
        document['params'] = {
            'weights': _arrays_to_json(model.params),
            'running': _arrays_to_json(model.running),
            'train_loss': list(model.train_loss),
        }
    else:
        raise ModelFormatError(f"Cannot serialize {type(model).__name__}")
    return document


def model_from_dict(document: dict) -> TrainedRegressor:
    if document.get('format') != MODEL_FORMAT:
        raise ModelFormatError(f"Not a model document (format={document.get('format')!r})")
    if document.get('version') != MODEL_VERSION:
        raise ModelFormatError(f"Unsupported model version {document.get('version')!r}")
    try:
        spec = RegressorSpec.from_dict(document['spec'])
        n_features = int(document['n_features'])
        params = document['params']
        if spec.family == 'linear':
            return LinearModel(spec=spec, n_features=n_features,
                               coef=frozen_array(params['coef']),
                               intercept=float(params['intercept']),
                               feature_means=frozen_array(params['feature_means']))
        if spec.family == 'forest':
            return ForestModel(spec=spec, n_features=n_features,
                               trees=tuple(RegressionTree.from_dict(t) for t in params['trees']))
        if spec.family == 'boosted':
            return BoostedModel(spec=spec, n_features=n_features,
                                base_score=float(params['base_score']),
                                learning_rate=float(params['learning_rate']),
                                trees=tuple(RegressionTree.from_dict(t) for t in params['trees']),
                                train_loss=tuple(params.get('train_loss', ())))
        weights = _arrays_from_json(params['weights'])
        weights['b_out'] = weights['b_out'].reshape(1)
        return DenseModel(spec=spec, n_features=n_features, params=weights,
                          running=_arrays_from_json(params['running']),
                          train_loss=tuple(params.get('train_loss', ())))
    except (KeyError, TypeError, ValueError) as e:
        raise ModelFormatError(f"Malformed model document: {e}") from e


def save_model(model: TrainedRegressor, path: Path):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(model_to_dict(model), f)
    logger.debug("Saved %s to %s", model.spec.label(), path)


def load_model(path: Path) -> TrainedRegressor:
    try:
        with open(path, encoding='utf-8') as f:
            document = json.load(f)
    except OSError as e:
        raise ModelFormatError(f"Cannot read model file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ModelFormatError(f"Model file {path} is not valid JSON: {e}") from e
    return model_from_dict(document)
