"""Tests for the beeswarm module."""
import numpy as np
import pandas as pd
import pytest

from app.beeswarm import RECORD_COLUMNS, ExportError, beeswarm_records, export_beeswarm
from app.errors import DataError
from app.explain import AttributionMatrix, rank_features


@pytest.fixture
def attributions():
    rng = np.random.default_rng(0)
    values = rng.normal(size=(30, 5)) * np.array([0.1, 2.0, 0.5, 1.0, 0.01])
    return AttributionMatrix(values=values, base_value=8.0,
                             feature_names=('age', 'grip', 'smoker', 'sppb_total', 'bmi'),
                             sample_ids=tuple(f"P{i}:w2" for i in range(30)))


@pytest.fixture
def scaled():
    return np.random.default_rng(1).random((30, 5))


class TestBeeswarmRecords:
    """Tests for beeswarm_records function."""

    def test_layout(self, attributions, scaled):
        """Should emit one record per sample for each top feature, in rank order."""
        records = beeswarm_records(attributions, scaled, top_m=3)
        assert list(records.columns) == list(RECORD_COLUMNS)
        assert len(records) == 90
        assert list(dict.fromkeys(records['feature'])) == ['grip', 'sppb_total', 'smoker']
        assert records['rank'].tolist() == [1] * 30 + [2] * 30 + [3] * 30

    def test_values(self, attributions, scaled):
        """Should pair each attribution with its scaled value and sample id."""
        records = beeswarm_records(attributions, scaled, top_m=1)
        np.testing.assert_array_equal(records['shap_value'], attributions.values[:, 1])
        np.testing.assert_array_equal(records['scaled_value'], scaled[:, 1])
        assert records['sample_id'].iloc[4] == 'P4:w2'

    def test_given_ranking(self, attributions, scaled):
        """Should follow a supplied ranking."""
        ranking = rank_features(attributions)
        records = beeswarm_records(attributions, scaled, top_m=5, ranking=ranking)
        assert list(dict.fromkeys(records['feature'])) == list(ranking.names)

    def test_default_sample_ids(self, scaled):
        """Should number samples when no ids are attached."""
        attr = AttributionMatrix(values=np.ones((2, 5)), base_value=0.0, feature_names=tuple('abcde'))
        records = beeswarm_records(attr, scaled[:2], top_m=1)
        assert records['sample_id'].tolist() == ['0', '1']

    @pytest.mark.parametrize("top_m", [0, 6])
    def test_top_m_range(self, attributions, scaled, top_m):
        """Should reject top_m outside [1, features]."""
        with pytest.raises(DataError):
            beeswarm_records(attributions, scaled, top_m=top_m)

    def test_shape_mismatch(self, attributions, scaled):
        """Should reject a scaled matrix of another shape."""
        with pytest.raises(DataError):
            beeswarm_records(attributions, scaled[:, :4], top_m=2)


class TestExportBeeswarm:
    """Tests for export_beeswarm function."""

    def test_files(self, attributions, scaled, temp_dir):
        """Should write a readable table and an SVG."""
        csv_path, svg_path = export_beeswarm(attributions, scaled, temp_dir, top_m=4)
        frame = pd.read_csv(csv_path)
        assert len(frame) == 120
        assert svg_path.read_text().lstrip().startswith('<?xml')
        assert '<svg' in svg_path.read_text()

    def test_reproducible(self, attributions, scaled, temp_dir):
        """Should write byte-identical files on repeated runs."""
        first = [p.read_bytes() for p in export_beeswarm(attributions, scaled, temp_dir, top_m=3, stem='a')]
        second = [p.read_bytes() for p in export_beeswarm(attributions, scaled, temp_dir, top_m=3, stem='b')]
        assert first == second

    def test_unwritable(self, attributions, scaled, temp_dir):
        """Should raise ExportError when the directory is missing."""
        with pytest.raises(ExportError):
            export_beeswarm(attributions, scaled, temp_dir / 'absent', top_m=2)
