"""Application configuration: paths, constants and the YAML run config."""
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from app.errors import ConfigError
from app.evaluation import DEFAULT_GRIDS
from app.learners import FAMILIES, RegressorSpec
from app.preprocess import PreprocessConfig
from app.sppb import DEFAULT_CUTOFFS, CutoffTable, InvalidScoreError

# Base paths
BASE_DIR = Path(__file__).resolve().parent.parent
SCHEMA_DIR = BASE_DIR / "schema"
DEFAULT_SCHEMA_PATH = SCHEMA_DIR / "elsa_default.yaml"
TEMPLATES_DIR = BASE_DIR / "templates"
DEFAULT_OUTPUT_DIR = Path("runs")

CONFIG_VERSION = 1
TOOL_VERSION = "1.0.0"

DATA_SOURCES = ('synthetic', 'file', 'dataset')
EXPLAIN_SPLITS = ('all', 'holdout')
OUTPUT_FORMATS = ('json', 'csv', 'markdown')


@dataclass(frozen=True)
class DataConfig:
    source: str = 'synthetic'
    path: Optional[Path] = None
    seed: int = 0
    n_participants: int = 8000
    schema: Path = DEFAULT_SCHEMA_PATH
    column_map: dict = field(default_factory=dict)
    delimiter: str = ','
    min_age: float = 55.0
    max_age: float = 85.0


@dataclass(frozen=True)
class ModelConfig:
    family: str = 'boosted'
    params: dict = field(default_factory=lambda: {'trees': 100, 'max_depth': 2})
    grid: Optional[dict] = None
    families: tuple[str, ...] = FAMILIES
    grids: dict = field(default_factory=dict)

    def spec(self) -> RegressorSpec:
        return RegressorSpec.from_dict({**self.params, 'family': self.family})

    def grid_for(self, family: str) -> dict:
        """Search grid for one family: per-family override, then `grid` for the main family, then the default."""
        if family in self.grids:
            return self.grids[family]
        if family == self.family and self.grid is not None:
            return self.grid
        return DEFAULT_GRIDS[family]


@dataclass(frozen=True)
class CvConfig:
    k: int = 10
    seed: int = 0
    stratify: bool = False


@dataclass(frozen=True)
class ExplainConfig:
    top_k: tuple[int, ...] = (10, 15, 20)
    exclusions: Optional[tuple[str, ...]] = None  # None: SPPB-related features except the total
    split: str = 'all'
    top_m: int = 15
    model: Optional[Path] = None


@dataclass(frozen=True)
class OutputConfig:
    directory: Path = DEFAULT_OUTPUT_DIR
    formats: tuple[str, ...] = OUTPUT_FORMATS


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    cutoffs: CutoffTable = DEFAULT_CUTOFFS
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    cv: CvConfig = field(default_factory=CvConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    config_version: int = CONFIG_VERSION


def _mapping(value: Any, key: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"'{key}' must be a mapping")
    return value


def _check_keys(section: dict, key: str, allowed: set):
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"Unknown key '{key}.{unknown[0]}'")


def _typed(section: dict, key: str, name: str, kind, default):
    value = section.get(name, default)
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, bool) != (kind is bool) or not isinstance(value, kind):
        raise ConfigError(f"'{key}.{name}' must be {kind.__name__}, got {value!r}")
    return value


def _parse_data(raw: dict) -> DataConfig:
    section = _mapping(raw, 'data')
    _check_keys(section, 'data', {'source', 'path', 'synthetic', 'schema', 'column_map',
                                  'delimiter', 'min_age', 'max_age'})
    source = section.get('source', 'synthetic')
    if source not in DATA_SOURCES:
        raise ConfigError(f"'data.source' must be one of {DATA_SOURCES}, got {source!r}")
    synthetic = _mapping(section.get('synthetic'), 'data.synthetic')
    _check_keys(synthetic, 'data.synthetic', {'seed', 'n_participants'})
    path = section.get('path')
    if source != 'synthetic' and not path:
        raise ConfigError(f"'data.path' is required when data.source is {source!r}")
    column_map = _mapping(section.get('column_map'), 'data.column_map')

    data = DataConfig(
        source=source,
        path=Path(path) if path else None,
        seed=_typed(synthetic, 'data.synthetic', 'seed', int, 0),
        n_participants=_typed(synthetic, 'data.synthetic', 'n_participants', int, 8000),
        schema=Path(section['schema']) if section.get('schema') else DEFAULT_SCHEMA_PATH,
        column_map={str(k): (None if v is None else str(v)) for k, v in column_map.items()},
        delimiter=_typed(section, 'data', 'delimiter', str, ','),
        min_age=_typed(section, 'data', 'min_age', float, 55.0),
        max_age=_typed(section, 'data', 'max_age', float, 85.0),
    )
    if data.n_participants < 1:
        raise ConfigError("'data.synthetic.n_participants' must be >= 1")
    if data.min_age > data.max_age:
        raise ConfigError("'data.min_age' must not exceed 'data.max_age'")
    if data.path is not None and not data.path.is_file():
        raise ConfigError(f"'data.path' does not exist: {data.path}")
    if not data.schema.is_file():
        raise ConfigError(f"'data.schema' does not exist: {data.schema}")
    return data


def _parse_grid(raw: Any, where: str) -> dict:
    grid = _mapping(raw, where)
    for axis, values in grid.items():
        if not isinstance(values, list) or not values:
            raise ConfigError(f"'{where}.{axis}' must be a non-empty list")
    return dict(grid)


def _parse_model(raw: dict) -> ModelConfig:
    section = _mapping(raw, 'model')
    _check_keys(section, 'model', {'family', 'params', 'grid', 'grids', 'families'})
    family = section.get('family', 'boosted')
    if family not in FAMILIES:
        raise ConfigError(f"'model.family' must be one of {FAMILIES}, got {family!r}")
    families = tuple(section.get('families', FAMILIES))
    unknown = [f for f in families if f not in FAMILIES]
    if unknown or not families:
        raise ConfigError(f"'model.families' must be a non-empty subset of {FAMILIES}")
    params = _mapping(section.get('params', {'trees': 100, 'max_depth': 2}), 'model.params')
    grid = section.get('grid')
    if grid is not None:
        grid = _parse_grid(grid, 'model.grid')
    grids = {}
    for name, override in _mapping(section.get('grids', {}), 'model.grids').items():
        if name not in FAMILIES:
            raise ConfigError(f"'model.grids' has unknown family {name!r}; expected one of {FAMILIES}")
        grids[name] = _parse_grid(override, f'model.grids.{name}')
    model = ModelConfig(family=family, params=dict(params), grid=grid, families=families, grids=grids)
    model.spec()
    return model


def _parse_explain(raw: dict) -> ExplainConfig:
    section = _mapping(raw, 'explain')
    _check_keys(section, 'explain', {'top_k', 'exclusions', 'split', 'top_m', 'model'})
    top_k = tuple(section.get('top_k', (10, 15, 20)))
    if any(not isinstance(k, int) or k < 1 for k in top_k):
        raise ConfigError(f"'explain.top_k' must be positive integers, got {list(top_k)}")
    exclusions = section.get('exclusions', 'default')
    if exclusions == 'default':
        exclusions = None
    elif isinstance(exclusions, list):
        exclusions = tuple(str(e) for e in exclusions)
    else:
        raise ConfigError("'explain.exclusions' must be 'default' or a list of feature names")
    split = section.get('split', 'all')
    if split not in EXPLAIN_SPLITS:
        raise ConfigError(f"'explain.split' must be one of {EXPLAIN_SPLITS}, got {split!r}")
    top_m = _typed(section, 'explain', 'top_m', int, 15)
    if top_m < 1:
        raise ConfigError("'explain.top_m' must be >= 1")
    model = section.get('model')
    if model and not Path(model).is_file():
        raise ConfigError(f"'explain.model' does not exist: {model}")
    return ExplainConfig(top_k=top_k, exclusions=exclusions, split=split, top_m=top_m,
                         model=Path(model) if model else None)


def parse_config(data: dict) -> RunConfig:
    """Validate a parsed YAML document."""
    data = _mapping(data, '<root>')
    _check_keys(data, '<root>', {'config_version', 'data', 'cutoffs', 'preprocess',
                                 'model', 'cv', 'explain', 'output'})
    if 'config_version' not in data:
        raise ConfigError("'config_version' is required")
    if data['config_version'] != CONFIG_VERSION:
        raise ConfigError(f"Unsupported config_version {data['config_version']!r} (expected {CONFIG_VERSION})")

    cutoffs_raw = _mapping(data.get('cutoffs'), 'cutoffs')
    _check_keys(cutoffs_raw, 'cutoffs', {'gait_4m', 'chair', 'balance_hold_s', 'full_tandem_floor_s'})
    try:
        cutoffs = CutoffTable.from_dict(cutoffs_raw)
    except (InvalidScoreError, TypeError, ValueError) as e:
        raise ConfigError(f"Invalid 'cutoffs': {e}") from e

    preprocess_raw = _mapping(data.get('preprocess'), 'preprocess')
    _check_keys(preprocess_raw, 'preprocess', {'k_neighbors', 'fit_scope'})
    preprocess = PreprocessConfig(
        k_neighbors=_typed(preprocess_raw, 'preprocess', 'k_neighbors', int, 5),
        fit_scope=preprocess_raw.get('fit_scope', 'fold'),
    )

    cv_raw = _mapping(data.get('cv'), 'cv')
    _check_keys(cv_raw, 'cv', {'k', 'seed', 'stratify'})
    cv = CvConfig(
        k=_typed(cv_raw, 'cv', 'k', int, 10),
        seed=_typed(cv_raw, 'cv', 'seed', int, 0),
        stratify=_typed(cv_raw, 'cv', 'stratify', bool, False),
    )
    if cv.k < 2:
        raise ConfigError("'cv.k' must be >= 2")

    output_raw = _mapping(data.get('output'), 'output')
    _check_keys(output_raw, 'output', {'directory', 'formats'})
    formats = tuple(output_raw.get('formats', OUTPUT_FORMATS))
    if any(f not in OUTPUT_FORMATS for f in formats):
        raise ConfigError(f"'output.formats' must be a subset of {OUTPUT_FORMATS}")
    output = OutputConfig(directory=Path(output_raw.get('directory', DEFAULT_OUTPUT_DIR)), formats=formats)

    return RunConfig(
        data=_parse_data(data.get('data')),
        cutoffs=cutoffs,
        preprocess=preprocess,
        model=_parse_model(data.get('model')),
        cv=cv,
        explain=_parse_explain(data.get('explain')),
        output=output,
        config_version=data['config_version'],
    )


def load_config(path: Path) -> RunConfig:
    """Read and validate a YAML run config."""
    try:
        with open(path, encoding='utf-8') as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"Config file {path} is not valid YAML: {e}") from e
    return parse_config(data)


def config_to_dict(config: RunConfig) -> dict:
    """Canonical JSON-safe form of a validated config."""
    data = config.data
    return {
        'config_version': config.config_version,
        'data': {
            'source': data.source,
            'path': str(data.path) if data.path else None,
            'synthetic': {'seed': data.seed, 'n_participants': data.n_participants},
            'schema': str(data.schema),
            'column_map': dict(data.column_map),
            'delimiter': data.delimiter,
            'min_age': data.min_age,
            'max_age': data.max_age,
        },
        'cutoffs': config.cutoffs.to_dict(),
        'preprocess': {'k_neighbors': config.preprocess.k_neighbors,
                       'fit_scope': config.preprocess.fit_scope},
        'model': {
            'family': config.model.family,
            'params': dict(config.model.params),
            'grid': config.model.grid,
            'grids': dict(config.model.grids),
            'families': list(config.model.families),
        },
        'cv': {'k': config.cv.k, 'seed': config.cv.seed, 'stratify': config.cv.stratify},
        'explain': {
            'top_k': list(config.explain.top_k),
            'exclusions': list(config.explain.exclusions) if config.explain.exclusions is not None else 'default',
            'split': config.explain.split,
            'top_m': config.explain.top_m,
            'model': str(config.explain.model) if config.explain.model else None,
        },
        'output': {'directory': str(config.output.directory), 'formats': list(config.output.formats)},
    }


def config_hash(config: RunConfig) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()
