"""One-hot encoding, KNN imputation and min-max scaling.

Statistics are fitted on a training split and applied unchanged to any other
split. Missing cells are NaN throughout.
"""
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from sklearn.metrics.pairwise import nan_euclidean_distances

from app.errors import ConfigError, DataError
from app.schema import FeatureKind, FeatureSchema

logger = logging.getLogger(__name__)

PREPROCESS_FORMAT = 'sppb-preprocess'
PREPROCESS_VERSION = 1
FIT_SCOPES = ('fold', 'global')

# rows per distance block; bounds the block's memory to rows x reference
_CHUNK_ROWS = 256


class EncodingError(DataError):
    """Raised when a nominal value falls outside its declared categories."""
    pass


class ImputationError(DataError):
    """Raised when a column cannot be imputed or the input is not complete."""
    pass


class ShapeMismatchError(DataError):
    """Raised when a matrix does not match the fitted feature count."""
    pass


@dataclass(frozen=True)
class PreprocessConfig:
    k_neighbors: int = 5
    fit_scope: str = 'fold'

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ConfigError(f"preprocess.k_neighbors must be >= 1, got {self.k_neighbors}")
        if self.fit_scope not in FIT_SCOPES:
            raise ConfigError(f"preprocess.fit_scope must be one of {FIT_SCOPES}, got {self.fit_scope!r}")


@dataclass(frozen=True)
class PreprocessModel:
    """Fitted imputation reference and scaling ranges."""
    feature_names: tuple[str, ...]
    k_neighbors: int = 5
    reference: Optional[np.ndarray] = None
    reference_means: Optional[np.ndarray] = None
    mins: Optional[np.ndarray] = None
    maxs: Optional[np.ndarray] = None

    @property
    def n_features(self) -> int:
        return len(self.feature_names)


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ShapeMismatchError(f"Expected a 2-D matrix, got shape {X.shape}")
    return X


def _check_width(model: PreprocessModel, X: np.ndarray):
    if X.shape[1] != model.n_features:
        raise ShapeMismatchError(
            f"Matrix has {X.shape[1]} columns, model was fitted on {model.n_features}"
        )


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


def one_hot_encode(X, schema: FeatureSchema) -> tuple[np.ndarray, FeatureSchema]:
    """Replace every nominal column by one binary column per declared category."""
    X = _as_matrix(X)
    if X.shape[1] != len(schema):
        raise ShapeMismatchError(f"Matrix has {X.shape[1]} columns, schema declares {len(schema)}")
    if not schema.nominal_features:
        return X.copy(), schema

    blocks = []
    for j, feature in enumerate(schema.features):
        column = X[:, j]
        if feature.kind is not FeatureKind.NOMINAL:
            blocks.append(column[:, None])
            continue

        codes = np.array([code for code, _ in feature.categories])
        missing = np.isnan(column)
        known = np.isin(column, codes) | missing
        if not known.all():
            bad = column[~known][0]
            raise EncodingError(
                f"Value {bad:g} is not a declared category of nominal feature '{feature.name}'"
            )
        encoded = (column[:, None] == codes[None, :]).astype(float)
        encoded[missing, :] = np.nan
        blocks.append(encoded)

    return np.hstack(blocks), schema.expanded()


def fit_impute(X_fit, k: int = 5, feature_names: Optional[list[str]] = None) -> PreprocessModel:
    """Keep the fit split as the neighbour reference for KNN imputation."""
    X_fit = _as_matrix(X_fit)
    if k < 1:
        raise ImputationError(f"k must be >= 1, got {k}")
    names = tuple(feature_names) if feature_names is not None else tuple(
        f"x{j}" for j in range(X_fit.shape[1])
    )
    if len(names) != X_fit.shape[1]:
        raise ShapeMismatchError(f"{len(names)} feature names for {X_fit.shape[1]} columns")

    observed = ~np.isnan(X_fit)
    empty = np.flatnonzero(~observed.any(axis=0))
    if empty.size:
        raise ImputationError(
            f"Column '{names[empty[0]]}' has no observed value in the fit split"
        )

    return PreprocessModel(
        feature_names=names,
        k_neighbors=k,
        reference=_frozen(X_fit),
        reference_means=_frozen(np.nanmean(X_fit, axis=0)),
    )


def impute(model: PreprocessModel, X) -> np.ndarray:
    """Fill missing cells with the mean of the k nearest reference rows.

    Candidate donors for cell (s, j) are reference rows with feature j observed
    and a defined distance to s; ties in distance go to the lower row index.
    With no candidate the reference column mean is used.
    """
    if model.reference is None:
        raise ImputationError("Preprocess model has no imputation reference; call fit_impute first")
    X = _as_matrix(X)
    _check_width(model, X)

    out = X.copy()
    missing = np.isnan(X)
    rows = np.flatnonzero(missing.any(axis=1))
    if rows.size == 0:
        return out

    reference = model.reference
    ref_observed = ~np.isnan(reference)
    k = model.k_neighbors

    for start in range(0, rows.size, _CHUNK_ROWS):
        block = rows[start:start + _CHUNK_ROWS]
        distances = nan_euclidean_distances(X[block], reference)
        for s, dist in zip(block, distances):
            columns = np.flatnonzero(missing[s])
            order = np.argsort(dist, kind='stable')
            order = order[np.isfinite(dist[order])]

            donors_ok = ref_observed[order][:, columns]
            ranks = np.cumsum(donors_ok, axis=0)
            chosen = donors_ok & (ranks <= k)
            counts = chosen.sum(axis=0)
            values = np.where(chosen, reference[order][:, columns], 0.0)
            with np.errstate(invalid='ignore', divide='ignore'):
                means = values.sum(axis=0) / counts
            out[s, columns] = np.where(counts > 0, means, model.reference_means[columns])

    logger.debug("Imputed %d cells in %d rows", int(missing.sum()), rows.size)
    return out


def fit_scale(X_fit, model: Optional[PreprocessModel] = None) -> PreprocessModel:
    """Record per-feature min/max of a complete fit split."""
    X_fit = _as_matrix(X_fit)
    if np.isnan(X_fit).any():
        raise ImputationError("fit_scale requires a complete matrix; impute first")
    if X_fit.shape[0] == 0:
        raise ShapeMismatchError("fit_scale requires at least one row")
    if model is None:
        model = PreprocessModel(feature_names=tuple(f"x{j}" for j in range(X_fit.shape[1])))
    _check_width(model, X_fit)
    return replace(model, mins=_frozen(X_fit.min(axis=0)), maxs=_frozen(X_fit.max(axis=0)))


def scale(model: PreprocessModel, X) -> np.ndarray:
    """Map onto [0, 1] with the fitted ranges; constant columns become 0."""
    if model.mins is None:
        raise ImputationError("Preprocess model has no scaling ranges; call fit_scale first")
    X = _as_matrix(X)
    _check_width(model, X)
    span = model.maxs - model.mins
    constant = span == 0
    with np.errstate(divide='ignore', invalid='ignore'):
        scaled = (X - model.mins) / np.where(constant, 1.0, span)
    scaled[:, constant] = 0.0
    return np.clip(scaled, 0.0, 1.0)


def unscale(model: PreprocessModel, X_scaled) -> np.ndarray:
    """Inverse of scale for values inside the fitted range."""
    X_scaled = _as_matrix(X_scaled)
    _check_width(model, X_scaled)
    return X_scaled * (model.maxs - model.mins) + model.mins


def fit_pipeline(X_fit, k: int = 5, feature_names: Optional[list[str]] = None) -> PreprocessModel:
    """Fit imputation then scaling on the same split."""
    model = fit_impute(X_fit, k, feature_names)
    return fit_scale(impute(model, X_fit), model)


def transform(model: PreprocessModel, X) -> np.ndarray:
    return scale(model, impute(model, X))


def _array_to_json(array: Optional[np.ndarray]):
    if array is None:
        return None
    return [[None if np.isnan(v) else float(v) for v in row] for row in np.atleast_2d(array)]


def _array_from_json(data, vector: bool = False) -> Optional[np.ndarray]:
    if data is None:
        return None
    array = np.array([[np.nan if v is None else v for v in row] for row in data], dtype=float)
    if vector:
        array = array[0]
    return _frozen(array)


def preprocess_to_dict(model: PreprocessModel) -> dict:
    return {
        'format': PREPROCESS_FORMAT,
        'version': PREPROCESS_VERSION,
        'feature_names': list(model.feature_names),
        'k_neighbors': model.k_neighbors,
        'reference': _array_to_json(model.reference),
        'reference_means': _array_to_json(model.reference_means),
        'mins': _array_to_json(model.mins),
        'maxs': _array_to_json(model.maxs),
    }


def preprocess_from_dict(data: dict) -> PreprocessModel:
    if data.get('format') != PREPROCESS_FORMAT:
        raise DataError(f"Not a preprocess model document (format={data.get('format')!r})")
    if data.get('version') != PREPROCESS_VERSION:
        raise DataError(f"Unsupported preprocess model version {data.get('version')!r}")
    return PreprocessModel(
        feature_names=tuple(data['feature_names']),
        k_neighbors=int(data['k_neighbors']),
        reference=_array_from_json(data['reference']),
        reference_means=_array_from_json(data['reference_means'], vector=True),
        mins=_array_from_json(data['mins'], vector=True),
        maxs=_array_from_json(data['maxs'], vector=True),
    )


def save_preprocess(model: PreprocessModel, path: Path):
    try:
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(preprocess_to_dict(model), f)
    except OSError as e:
        raise DataError(f"Cannot write preprocess model {path}: {e}") from e


def load_preprocess(path: Path) -> PreprocessModel:
    try:
        with open(path, encoding='utf-8') as f:
            data = json.load(f)
    except OSError as e:
        raise DataError(f"Cannot read preprocess model {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"Preprocess model {path} is not valid JSON: {e}") from e
    return preprocess_from_dict(data)
