"""Tests for the schema module."""
import copy

import pytest

from app.schema import (
    FeatureCategory,
    FeatureKind,
    FeatureRole,
    SchemaError,
    load_schema,
    parse_schema,
)
from tests.conftest import SMALL_SCHEMA


class TestParseSchema:
    """Tests for parse_schema function."""

    def test_small_schema(self, small_schema):
        """Should keep declared order and roles."""
        assert small_schema.names[:3] == ['age', 'gender', 'marital_status']
        assert small_schema['gait_time_s'].role is FeatureRole.MEASUREMENT
        assert small_schema['sppb_total'].source == 'sppb_total'
        assert small_schema.position('smoker') == 6

    def test_duplicate_name(self):
        """Should reject a repeated feature name."""
        data = copy.deepcopy(SMALL_SCHEMA)
        data['features'].append(dict(data['features'][1]))
        with pytest.raises(SchemaError, match="Duplicate"):
            parse_schema(data)

    def test_unknown_category(self):
        """Should reject an undeclared category."""
        data = copy.deepcopy(SMALL_SCHEMA)
        data['features'][1]['category'] = 'hobbies'
        with pytest.raises(SchemaError):
            parse_schema(data)

    def test_missing_age(self):
        """Should require the age feature."""
        data = copy.deepcopy(SMALL_SCHEMA)
        data['features'] = data['features'][1:]
        with pytest.raises(SchemaError, match="Age feature"):
            parse_schema(data)

    def test_measurement_needs_source(self):
        """Should reject a measurement without a known source."""
        data = copy.deepcopy(SMALL_SCHEMA)
        data['features'][7]['source'] = 'stairs'
        with pytest.raises(SchemaError, match="needs a source"):
            parse_schema(data)

    def test_nominal_needs_categories(self):
        """Should reject a nominal feature without categories."""
        data = copy.deepcopy(SMALL_SCHEMA)
        del data['features'][2]['categories']
        with pytest.raises(SchemaError, match="declares no categories"):
            parse_schema(data)

    def test_unknown_feature_lookup(self, small_schema):
        """Should raise on lookup of an undeclared feature."""
        with pytest.raises(SchemaError):
            small_schema['height']


class TestExpanded:
    """Tests for FeatureSchema.expanded."""

    def test_one_column_per_category(self, small_schema):
        """Should replace the nominal feature by binary columns in place."""
        expanded = small_schema.expanded()
        assert len(expanded) == 19
        assert expanded.names[2:6] == [
            'marital_status_married',
            'marital_status_separated_divorced',
            'marital_status_widowed',
            'marital_status_never_married',
        ]
        assert expanded['marital_status_widowed'].kind is FeatureKind.BINARY
        assert expanded['marital_status_widowed'].expanded_from == 'marital_status'

    def test_expansion_idempotent(self, small_schema):
        """Should leave an already expanded schema unchanged."""
        expanded = small_schema.expanded()
        assert expanded.expanded().names == expanded.names


class TestSchemaHelpers:
    """Tests for select, category_counts and sppb_related."""

    def test_sppb_related(self, small_schema):
        """Should list raw times and partial scores but not the total."""
        related = small_schema.sppb_related()
        assert 'sppb_total' not in related
        assert set(related) == {
            'gait_time_s', 'chair_time_s', 'balance_full_tandem_s', 'balance_side_by_side_s',
            'balance_semi_tandem_s', 'balance_score', 'gait_score', 'chair_score',
        }

    def test_select_order(self, small_schema):
        """Should keep the requested order."""
        subset = small_schema.select(['smoker', 'age'])
        assert subset.names == ['smoker', 'age']

    def test_category_counts(self, small_schema):
        """Should count expanded columns per category."""
        counts = small_schema.category_counts()
        assert counts['demographics'] == 6
        assert counts['physical_performance'] == 9
        assert sum(counts.values()) == small_schema.expanded_width()


class TestDefaultSchema:
    """Tests for the shipped schema file."""

    def test_expands_to_95_columns(self, default_schema):
        """Should expand to 95 model columns."""
        assert default_schema.expanded_width() == 95
        assert len(default_schema.expanded()) == 95

    def test_all_categories_used(self, default_schema):
        """Should place features in all 13 categories."""
        counts = default_schema.category_counts()
        assert set(counts) == {c.value for c in FeatureCategory}
        assert all(n > 0 for n in counts.values())

    def test_round_trip(self, default_schema, temp_dir):
        """Should reload the same schema from its dict form."""
        assert parse_schema(default_schema.to_dict()) == default_schema

    def test_missing_file(self, temp_dir):
        """Should raise SchemaError for a missing file."""
        with pytest.raises(SchemaError):
            load_schema(temp_dir / "absent.yaml")

    def test_invalid_yaml(self, temp_dir):
        """Should raise SchemaError for malformed YAML."""
        path = temp_dir / "bad.yaml"
        path.write_text("features: [unclosed\n")
        with pytest.raises(SchemaError):
            load_schema(path)
