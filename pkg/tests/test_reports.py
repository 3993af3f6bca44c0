"""Tests for the reports module."""
import hashlib
import json

import numpy as np
import pandas as pd
import pytest
from jinja2 import UndefinedError

from app.config import TOOL_VERSION, config_hash, parse_config
from app.evaluation import STATUS_FAILED, CvReport
from app.explain import AttributionMatrix, FeatureRanking
from app.learners import RegressorSpec
from app.reports import (
    SUMMARY_COLUMNS,
    ReportError,
    attribution_frame,
    cells_frame,
    parameters_text,
    ranking_frame,
    render_report,
    summary_frame,
    summary_row,
    write_json,
    write_manifest,
    write_table,
)


def _report(spec, value=0.8):
    return CvReport(spec=spec, fold_mae=(value, value), fold_mse=(value + 0.5, value + 0.5))


class TestSummaries:
    """Tests for the summary and cell tables."""

    @pytest.mark.parametrize("spec,text", [
        (RegressorSpec('linear'), '-'),
        (RegressorSpec('boosted', trees=100, max_depth=2), 'trees: 100, depth: 2'),
        (RegressorSpec('forest', trees=300, max_depth=None), 'trees: 300, depth: None'),
        (RegressorSpec('dense', layer_sizes=(8, 16, 8)), 'layers: 8 16 8'),
    ])
    def test_parameters_text(self, spec, text):
        """Should describe the winning hyperparameters."""
        assert parameters_text(_report(spec)) == text

    def test_summary_row(self):
        """Should label the family and carry the mean errors."""
        row = summary_row(_report(RegressorSpec('boosted', trees=100, max_depth=2), 0.79))
        assert row == {'model': 'Gradient Boosted Trees', 'MAE': pytest.approx(0.79),
                       'MSE': pytest.approx(1.29), 'parameters': 'trees: 100, depth: 2'}

    def test_failed_row(self):
        """Should leave the errors of a failed cell empty."""
        failed = CvReport(spec=RegressorSpec('dense'), status=STATUS_FAILED, error="diverged")
        row = summary_row(failed)
        assert np.isnan(row['MAE']) and np.isnan(row['MSE'])

    def test_summary_frame_columns(self):
        """Should keep the summary column order."""
        frame = summary_frame([summary_row(_report(RegressorSpec('linear')))])
        assert list(frame.columns) == list(SUMMARY_COLUMNS)

    def test_cells_frame(self):
        """Should number cells in the given order."""
        reports = [_report(RegressorSpec('boosted', trees=10)),
                   CvReport(spec=RegressorSpec('linear'), status=STATUS_FAILED, error="x")]
        frame = cells_frame(reports)
        assert frame['rank'].tolist() == [1, 2]
        assert frame['status'].tolist() == ['ok', 'failed']

    def test_table_has_no_timings(self, temp_dir):
        """Should write tables without wall-clock columns."""
        path = temp_dir / 'cells.csv'
        write_table(path, cells_frame([_report(RegressorSpec('linear'))]))
        header = path.read_text().splitlines()[0]
        assert 'seconds' not in header
        assert path.read_text().splitlines()[1].endswith('0.800000,1.300000')


class TestFrames:
    """Tests for ranking_frame and attribution_frame."""

    def test_ranking_frame(self):
        """Should number features from one."""
        frame = ranking_frame(FeatureRanking(names=('age', 'grip'), importance=(0.5, 0.25)))
        assert frame['rank'].tolist() == [1, 2]
        assert frame['feature'].tolist() == ['age', 'grip']

    def test_attribution_frame(self):
        """Should lead with sample ids when present."""
        attr = AttributionMatrix(values=np.eye(2), base_value=0.0, feature_names=('a', 'b'),
                                 sample_ids=('P1:w2', 'P2:w4'))
        frame = attribution_frame(attr)
        assert list(frame.columns) == ['sample_id', 'a', 'b']


class TestWriters:
    """Tests for the JSON writer and the manifest."""

    def test_write_json_sorted(self, temp_dir):
        """Should write sorted keys with a trailing newline."""
        path = temp_dir / 'a.json'
        write_json(path, {'b': 1, 'a': 2})
        text = path.read_text()
        assert text.index('"a"') < text.index('"b"')
        assert text.endswith('\n')

    def test_unwritable(self, temp_dir):
        """Should raise ReportError for a missing directory."""
        with pytest.raises(ReportError):
            write_json(temp_dir / 'absent' / 'a.json', {})
        with pytest.raises(ReportError):
            write_table(temp_dir / 'absent' / 'a.csv', pd.DataFrame({'a': [1]}))

    def test_manifest(self, temp_dir):
        """Should record the config hash, tool version and artifact digests."""
        config = parse_config({'config_version': 1, 'output': {'directory': str(temp_dir)}})
        artifact = temp_dir / 'summary.csv'
        artifact.write_text("model,MAE\n")
        path = write_manifest(temp_dir, 'build', config, [config.data.schema], [artifact])
        manifest = json.loads(path.read_text())
        assert manifest['command'] == 'build'
        assert manifest['tool_version'] == TOOL_VERSION
        assert manifest['config_hash'] == config_hash(config)
        assert manifest['artifacts'] == [{
            'path': 'summary.csv',
            'sha256': hashlib.sha256(b"model,MAE\n").hexdigest(),
        }]
        assert manifest['inputs'][0]['path'] == str(config.data.schema)


class TestRenderReport:
    """Tests for render_report function."""

    def _context(self):
        boosted = summary_row(_report(RegressorSpec('boosted', trees=100, max_depth=2), 0.79))
        failed = summary_row(CvReport(spec=RegressorSpec('dense'), status=STATUS_FAILED))
        return {
            'tool_version': TOOL_VERSION,
            'config_hash': 'abc123',
            'data_description': 'synthetic cohort',
            'n_samples': 100,
            'n_features': 95,
            'cv_k': 10,
            'cv_seed': 0,
            'k_neighbors': 5,
            'fit_scope': 'fold',
            'selection': [('Records at wave 2', 140), ('Candidate wave pairs', 120),
                          ('Dropped: age outside the window or missing', 15), ('Wave pairs kept', 100)],
            'family_rows': [boosted, failed],
            'baseline': summary_row(_report(RegressorSpec('boosted', trees=0), 1.5), 'Mean predictor'),
            'failed_cells': 1,
            'explained_model': 'boosted trees=100 depth=2',
            'explain_split': 'all',
            'n_explained': 100,
            'top_features': [{'name': 'sppb_total', 'importance': 1.25}],
            'simplified_model': 'boosted trees=100 depth=2',
            'simplified_rows': [{'k': 15, **boosted}],
            'full_boosted': boosted,
        }

    def test_renders(self, temp_dir):
        """Should fill every table of the report."""
        path = temp_dir / 'report.md'
        render_report(self._context(), path)
        text = path.read_text()
        assert '| Gradient Boosted Trees | 0.7900 | 1.2900 | trees: 100, depth: 2 |' in text
        assert '| Dense Neural Network | failed | failed |' in text
        assert '| 1 | sppb_total | 1.2500 |' in text
        assert '| top 15 | 0.7900 | 1.2900 |' in text
        assert '1 grid cell(s) failed' in text
        assert '| Candidate wave pairs | 120 |' in text
        assert '| Wave pairs kept | 100 |' in text

    def test_selection_optional(self, temp_dir):
        """Should leave out the selection table for a prebuilt dataset."""
        path = temp_dir / 'report.md'
        render_report({**self._context(), 'selection': []}, path)
        assert '## Data selection' not in path.read_text()

    def test_missing_key(self, temp_dir):
        """Should refuse a context with a missing value."""
        context = self._context()
        del context['baseline']
        with pytest.raises(UndefinedError, match="baseline"):
            render_report(context, temp_dir / 'report.md')
