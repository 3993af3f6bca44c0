"""Feature schema for questionnaire cohorts.

A schema lists every feature in model-column order together with its questionnaire
category, its encoding and the sentinel codes that mean "missing". Nominal
features are expanded into one binary column per category before modelling.
"""
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional

import yaml

from app.errors import DataError

logger = logging.getLogger(__name__)


class SchemaError(DataError):
    """Raised when a schema file is malformed or inconsistent."""
    pass


class FeatureCategory(str, Enum):
    DEMOGRAPHICS = 'demographics'
    FAMILY = 'family'
    HEALTH_STATE = 'health_state'
    MEDICAL_PROCEDURES = 'medical_procedures'
    RECENT_MEDICAL_HISTORY = 'recent_medical_history'
    PHYSICAL_CAPABILITIES = 'physical_capabilities'
    SENSORY_CAPABILITIES = 'sensory_capabilities'
    COGNITIVE_FUNCTIONS = 'cognitive_functions'
    FALLS = 'falls'
    PHYSICAL_PERFORMANCE = 'physical_performance'
    DAILY_FUNCTIONING = 'daily_functioning'
    HABITS = 'habits'
    PHYSICAL_MEASURES = 'physical_measures'


class FeatureKind(str, Enum):
    CONTINUOUS = 'continuous'
    BINARY = 'binary'
    ORDINAL = 'ordinal'
    NOMINAL = 'nominal'


class FeatureRole(str, Enum):
    ANSWER = 'answer'            # read from the cohort file
    MEASUREMENT = 'measurement'  # raw SPPB time, read through the measurement objects
    DERIVED = 'derived'          # computed by app.sppb at the feature wave


MEASUREMENT_SOURCES = (
    'balance_side_by_side',
    'balance_semi_tandem',
    'balance_full_tandem',
    'gait',
    'chair',
)
DERIVED_SOURCES = ('balance_score', 'gait_score', 'chair_score', 'sppb_total')


@dataclass(frozen=True)
class FeatureDef:
    """One schema entry."""
    name: str
    category: FeatureCategory
    kind: FeatureKind
    missing_codes: tuple[float, ...] = ()
    categories: tuple[tuple[float, str], ...] = ()
    role: FeatureRole = FeatureRole.ANSWER
    source: Optional[str] = None
    column: Optional[str] = None
    expanded_from: Optional[str] = None

    @property
    def file_column(self) -> str:
        return self.column or self.name

    def expanded_names(self) -> list[str]:
        if self.kind is FeatureKind.NOMINAL:
            return [f"{self.name}_{label}" for _, label in self.categories]
        return [self.name]


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature definitions plus cohort-file conventions."""
    features: tuple[FeatureDef, ...]
    name: str = 'schema'
    description: str = ''
    participant_column: str = 'participant_id'
    wave_column: str = 'wave'
    age_feature: str = 'age'
    course_length_column: Optional[str] = 'gait_course_m'
    default_course_length_m: float = 2.44
    not_attempted_code: float = -1.0
    unable_code: float = -2.0
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for i, feature in enumerate(self.features):
            if feature.name in index:
                raise SchemaError(f"Duplicate feature name '{feature.name}'")
            index[feature.name] = i
            _validate_feature(feature)
        if self.age_feature not in index:
            raise SchemaError(f"Age feature '{self.age_feature}' is not declared")
        object.__setattr__(self, '_index', index)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    def __len__(self) -> int:
        return len(self.features)

    def __getitem__(self, name: str) -> FeatureDef:
        try:
            return self.features[self._index[name]]
        except KeyError:
            raise SchemaError(f"Unknown feature '{name}'") from None

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def position(self, name: str) -> int:
        self[name]
        return self._index[name]

    @property
    def nominal_features(self) -> list[FeatureDef]:
        return [f for f in self.features if f.kind is FeatureKind.NOMINAL]

    def expanded_width(self) -> int:
        return sum(len(f.expanded_names()) for f in self.features)

    def expanded(self) -> 'FeatureSchema':
        """Schema after one-hot expansion of nominal features."""
        expanded = []
        for feature in self.features:
            if feature.kind is not FeatureKind.NOMINAL:
                expanded.append(feature)
                continue
            for (_, label), column_name in zip(feature.categories, feature.expanded_names()):
                expanded.append(FeatureDef(
                    name=column_name,
                    category=feature.category,
                    kind=FeatureKind.BINARY,
                    role=feature.role,
                    expanded_from=feature.name,
                ))
        return replace(self, features=tuple(expanded))

    def select(self, names: list[str]) -> 'FeatureSchema':
        """Sub-schema with the given features, in the given order."""
        subset = tuple(self[n] for n in names)
        age_feature = self.age_feature if self.age_feature in names else names[0]
        return replace(self, features=subset, age_feature=age_feature)

    def category_counts(self) -> dict[str, int]:
        """Expanded column count per questionnaire category."""
        counts = {c.value: 0 for c in FeatureCategory}
        for feature in self.features:
            counts[feature.category.value] += len(feature.expanded_names())
        return counts

    def sppb_related(self) -> list[str]:
        """Measurement and partial-score features, excluding the total score."""
        return [
            f.name for f in self.features
            if f.role is FeatureRole.MEASUREMENT
            or (f.role is FeatureRole.DERIVED and f.source != 'sppb_total')
        ]

    def to_dict(self) -> dict:
        return {
            'name': self.name,
            'description': self.description,
            'participant_column': self.participant_column,
            'wave_column': self.wave_column,
            'age_feature': self.age_feature,
            'course_length_column': self.course_length_column,
            'default_course_length_m': self.default_course_length_m,
            'not_attempted_code': self.not_attempted_code,
            'unable_code': self.unable_code,
            'features': [_feature_to_dict(f) for f in self.features],
        }


def _validate_feature(feature: FeatureDef):
    if not feature.name.isidentifier():
        raise SchemaError(f"Feature name '{feature.name}' is not an identifier")
    if feature.kind is FeatureKind.NOMINAL:
        if not feature.categories:
            raise SchemaError(f"Nominal feature '{feature.name}' declares no categories")
        codes = [code for code, _ in feature.categories]
        if len(set(codes)) != len(codes):
            raise SchemaError(f"Nominal feature '{feature.name}' repeats a category code")
    elif feature.categories:
        raise SchemaError(f"Only nominal features may declare categories ('{feature.name}')")
    if feature.role is FeatureRole.MEASUREMENT and feature.source not in MEASUREMENT_SOURCES:
        raise SchemaError(
            f"Measurement feature '{feature.name}' needs a source in {MEASUREMENT_SOURCES}"
        )
    if feature.role is FeatureRole.DERIVED and feature.source not in DERIVED_SOURCES:
        raise SchemaError(
            f"Derived feature '{feature.name}' needs a source in {DERIVED_SOURCES}"
        )


def _feature_to_dict(feature: FeatureDef) -> dict:
    data = {
        'name': feature.name,
        'category': feature.category.value,
        'kind': feature.kind.value,
    }
    if feature.missing_codes:
        data['missing_codes'] = list(feature.missing_codes)
    if feature.categories:
        data['categories'] = {code: label for code, label in feature.categories}
    if feature.role is not FeatureRole.ANSWER:
        data['role'] = feature.role.value
        data['source'] = feature.source
    if feature.column:
        data['column'] = feature.column
    return data


def _parse_feature(raw: dict, position: int) -> FeatureDef:
    try:
        name = raw['name']
        category = FeatureCategory(raw['category'])
        kind = FeatureKind(raw['kind'])
        role = FeatureRole(raw.get('role', 'answer'))
    except KeyError as e:
        raise SchemaError(f"Feature #{position} is missing key {e}") from None
    except ValueError as e:
        raise SchemaError(f"Feature #{position} ({raw.get('name')}): {e}") from None

    categories = raw.get('categories') or {}
    return FeatureDef(
        name=name,
        category=category,
        kind=kind,
        missing_codes=tuple(float(c) for c in raw.get('missing_codes', ())),
        categories=tuple((float(code), str(label)) for code, label in categories.items()),
        role=role,
        source=raw.get('source'),
        column=raw.get('column'),
    )


def parse_schema(data: dict) -> FeatureSchema:
    """Build a schema from its parsed YAML document."""
    if not isinstance(data, dict) or 'features' not in data:
        raise SchemaError("Schema document must be a mapping with a 'features' list")
    features = tuple(_parse_feature(raw, i) for i, raw in enumerate(data['features']))
    return FeatureSchema(
        features=features,
        name=data.get('name', 'schema'),
        description=data.get('description', ''),
        participant_column=data.get('participant_column', 'participant_id'),
        wave_column=data.get('wave_column', 'wave'),
        age_feature=data.get('age_feature', 'age'),
        course_length_column=data.get('course_length_column', 'gait_course_m'),
        default_course_length_m=float(data.get('default_course_length_m', 2.44)),
        not_attempted_code=float(data.get('not_attempted_code', -1)),
        unable_code=float(data.get('unable_code', -2)),
    )


def load_schema(path: Path) -> FeatureSchema:
    """Load a schema file."""
    path = Path(path)
    try:
        with open(path, encoding='utf-8') as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise SchemaError(f"Cannot read schema file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise SchemaError(f"Schema file {path} is not valid YAML: {e}") from e

    schema = parse_schema(data)
    logger.debug("Loaded schema %s: %d features, %d expanded columns",
                 schema.name, len(schema), schema.expanded_width())
    return schema
