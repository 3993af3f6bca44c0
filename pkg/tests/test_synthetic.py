"""Tests for the synthetic module."""
import numpy as np
import pytest

from app.cohort import MEASURED_WAVES, build_wave_pairs
from app.errors import DataError
from app.synthetic import generate_synthetic_cohort, write_cohort


class TestGenerateSyntheticCohort:
    """Tests for generate_synthetic_cohort function."""

    def test_three_waves_per_participant(self, small_schema):
        """Should emit one record per participant and measured wave."""
        records = generate_synthetic_cohort(seed=1, n_participants=20, schema=small_schema)
        assert len(records) == 60
        assert [r.wave for r in records[:3]] == list(MEASURED_WAVES)
        assert records[0].participant_id == 'P000001'

    def test_ages_advance(self, small_schema):
        """Should age participants four years per wave and keep the answer in sync."""
        records = generate_synthetic_cohort(seed=1, n_participants=10, schema=small_schema)
        for first, second in zip(records[::3], records[1::3]):
            assert second.age == pytest.approx(first.age + 4.0)
            assert second.values['age'] == second.age

    def test_deterministic(self, small_schema):
        """Should reproduce the same records for the same seed."""
        a = generate_synthetic_cohort(seed=5, n_participants=30, schema=small_schema)
        b = generate_synthetic_cohort(seed=5, n_participants=30, schema=small_schema)
        for x, y in zip(a, b):
            assert (x.participant_id, x.wave, x.age) == (y.participant_id, y.wave, y.age)
            assert (x.balance, x.gait, x.chair) == (y.balance, y.gait, y.chair)
            np.testing.assert_array_equal(list(x.values.values()), list(y.values.values()))

    def test_seed_changes_output(self, small_schema):
        """Should differ across seeds."""
        a = generate_synthetic_cohort(seed=1, n_participants=30, schema=small_schema)
        b = generate_synthetic_cohort(seed=2, n_participants=30, schema=small_schema)
        assert [r.age for r in a] != [r.age for r in b]

    def test_rejects_empty(self, small_schema):
        """Should reject a cohort with no participants."""
        with pytest.raises(DataError):
            generate_synthetic_cohort(seed=1, n_participants=0, schema=small_schema)

    def test_missingness(self, small_schema):
        """Should leave roughly a tenth of answers missing and age complete."""
        records = generate_synthetic_cohort(seed=2, n_participants=400, schema=small_schema)
        grip = np.array([r.values['grip_strength_kg'] for r in records])
        assert 0.05 < np.isnan(grip).mean() < 0.15
        assert not np.isnan([r.values['age'] for r in records]).any()

    def test_sppb_declines(self, small_schema):
        """Should lower the mean SPPB target from the first to the second pair."""
        records = generate_synthetic_cohort(seed=4, n_participants=600, schema=small_schema)
        dataset = build_wave_pairs(records, small_schema, min_age=0.1, max_age=200)
        first = dataset.y[[p[1] == 2 for p in dataset.provenance]]
        second = dataset.y[[p[1] == 4 for p in dataset.provenance]]
        assert second.mean() < first.mean()

    def test_grip_tracks_target(self, small_schema):
        """Should plant grip strength as a predictor of the future score."""
        records = generate_synthetic_cohort(seed=4, n_participants=600, schema=small_schema)
        dataset = build_wave_pairs(records, small_schema)
        grip = dataset.X[:, dataset.feature_names.index('grip_strength_kg')]
        male = dataset.X[:, dataset.feature_names.index('gender')] == 0
        keep = male & ~np.isnan(grip)
        assert np.corrcoef(grip[keep], dataset.y[keep])[0, 1] > 0.2


class TestWriteCohort:
    """Tests for write_cohort function."""

    def test_byte_identical(self, small_schema, temp_dir):
        """Should write identical files for the same seed."""
        paths = []
        for name in ("a.csv", "b.csv"):
            path = temp_dir / name
            write_cohort(generate_synthetic_cohort(seed=1, n_participants=25, schema=small_schema),
                         path, small_schema)
            paths.append(path)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_default_schema_columns(self, default_schema, temp_dir):
        """Should write one column per non-derived feature plus id, wave and course."""
        path = temp_dir / "cohort.csv"
        write_cohort(generate_synthetic_cohort(seed=1, n_participants=3, schema=default_schema),
                     path, default_schema)
        header = path.read_text().splitlines()[0].split(',')
        derived = sum(1 for f in default_schema.features if f.role.value == 'derived')
        assert len(header) == len(default_schema) - derived + 3
