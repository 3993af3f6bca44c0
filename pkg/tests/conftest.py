"""Pytest fixtures for the test suite."""
import sys
import tempfile
from pathlib import Path
from typing import Generator

import numpy as np
import pytest

# Add the project root to the path
sys.path.insert(0, str(Path(__file__).parent.parent))

from app.cohort import SupervisedDataset, build_wave_pairs
from app.config import DEFAULT_SCHEMA_PATH
from app.schema import FeatureSchema, load_schema, parse_schema
from app.synthetic import generate_synthetic_cohort

SMALL_SCHEMA = {
    'name': 'small',
    'features': [
        {'name': 'age', 'category': 'demographics', 'kind': 'continuous', 'missing_codes': [-9]},
        {'name': 'gender', 'category': 'demographics', 'kind': 'binary', 'missing_codes': [-9]},
        {'name': 'marital_status', 'category': 'demographics', 'kind': 'nominal', 'missing_codes': [-9],
         'categories': {1: 'married', 2: 'separated_divorced', 3: 'widowed', 4: 'never_married'}},
        {'name': 'self_rated_health', 'category': 'health_state', 'kind': 'ordinal', 'missing_codes': [-9]},
        {'name': 'grip_strength_kg', 'category': 'physical_measures', 'kind': 'continuous'},
        {'name': 'adl_dressing', 'category': 'daily_functioning', 'kind': 'binary'},
        {'name': 'smoker', 'category': 'habits', 'kind': 'binary'},
        {'name': 'gait_time_s', 'category': 'physical_performance', 'kind': 'continuous',
         'role': 'measurement', 'source': 'gait'},
        {'name': 'chair_time_s', 'category': 'physical_performance', 'kind': 'continuous',
         'role': 'measurement', 'source': 'chair'},
        {'name': 'balance_full_tandem_s', 'category': 'physical_performance', 'kind': 'continuous',
         'role': 'measurement', 'source': 'balance_full_tandem'},
        {'name': 'balance_side_by_side_s', 'category': 'physical_performance', 'kind': 'continuous',
         'role': 'measurement', 'source': 'balance_side_by_side'},
        {'name': 'balance_semi_tandem_s', 'category': 'physical_performance', 'kind': 'continuous',
         'role': 'measurement', 'source': 'balance_semi_tandem'},
        {'name': 'balance_score', 'category': 'physical_performance', 'kind': 'ordinal',
         'role': 'derived', 'source': 'balance_score'},
        {'name': 'gait_score', 'category': 'physical_performance', 'kind': 'ordinal',
         'role': 'derived', 'source': 'gait_score'},
        {'name': 'chair_score', 'category': 'physical_performance', 'kind': 'ordinal',
         'role': 'derived', 'source': 'chair_score'},
        {'name': 'sppb_total', 'category': 'physical_performance', 'kind': 'ordinal',
         'role': 'derived', 'source': 'sppb_total'},
    ],
}


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """Create a temporary directory for test files."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def small_schema() -> FeatureSchema:
    """A 16-feature schema that expands to 19 model columns."""
    return parse_schema(SMALL_SCHEMA)


@pytest.fixture(scope="session")
def default_schema() -> FeatureSchema:
    """The shipped questionnaire schema."""
    return load_schema(DEFAULT_SCHEMA_PATH)


@pytest.fixture
def small_cohort(small_schema: FeatureSchema) -> list:
    """Synthetic records for 150 participants over the small schema."""
    return generate_synthetic_cohort(seed=3, n_participants=150, schema=small_schema)


@pytest.fixture
def small_dataset(small_cohort, small_schema: FeatureSchema) -> SupervisedDataset:
    """Wave-pair dataset built from the small cohort."""
    return build_wave_pairs(small_cohort, small_schema)


@pytest.fixture
def regression_data() -> tuple[np.ndarray, np.ndarray]:
    """Scaled 200 x 6 matrix with a nonlinear target."""
    rng = np.random.default_rng(7)
    X = rng.random((200, 6))
    y = 3.0 * X[:, 0] + 2.0 * (X[:, 1] > 0.5) + X[:, 2] * X[:, 3] + rng.normal(0.0, 0.1, 200)
    return X, y
