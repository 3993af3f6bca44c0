"""Cohort records and the wave-pair supervised dataset.

A cohort file is a delimited table with one row per (participant, wave).
Questionnaire answers use per-feature sentinel codes for "missing"; the SPPB
time columns additionally use the schema's not-attempted and unable codes.
"""
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Optional

import numpy as np
import pandas as pd

from app.errors import DataError
from app.preprocess import one_hot_encode
from app.schema import FeatureRole, FeatureSchema
from app.sppb import (
    DEFAULT_CUTOFFS,
    BalanceMeasurement,
    ChairStandMeasurement,
    CutoffTable,
    GaitMeasurement,
    InvalidMeasurementError,
    score_balance,
    score_chair,
    score_gait,
    score_measurements,
)

logger = logging.getLogger(__name__)

MEASURED_WAVES = (2, 4, 6)
WAVE_PAIRS = ((2, 4), (4, 6))
TARGET_COLUMN = 'target_sppb_total'
PROVENANCE_COLUMNS = ('participant_id', 'feature_wave', 'target_wave')


class CohortFormatError(DataError):
    """Raised when a cohort file is unreadable or a value cannot be parsed."""
    pass


class EmptyDatasetError(DataError):
    """Raised when no wave pair survives the filters."""
    pass


@dataclass(frozen=True)
class ParticipantWaveRecord:
    """Answers and SPPB measurements of one participant at one wave.

    `age` is NaN when the extract does not record it; such a record can still
    be a target but never passes the age window as a feature wave.
    """
    participant_id: str
    wave: int
    age: float
    values: Mapping[str, float] = field(default_factory=dict)
    balance: Optional[BalanceMeasurement] = None
    gait: Optional[GaitMeasurement] = None
    chair: Optional[ChairStandMeasurement] = None

    def __post_init__(self):
        if self.wave not in MEASURED_WAVES:
            raise CohortFormatError(
                f"Participant {self.participant_id}: wave {self.wave} is not one of {MEASURED_WAVES}"
            )
        if self.has_age and (math.isinf(self.age) or self.age <= 0):
            raise CohortFormatError(
                f"Participant {self.participant_id} wave {self.wave}: age must be positive, got {self.age}"
            )
        object.__setattr__(self, 'values', MappingProxyType(dict(self.values)))

    @property
    def has_age(self) -> bool:
        return not math.isnan(self.age)

    @property
    def has_complete_sppb(self) -> bool:
        return self.balance is not None and self.gait is not None and self.chair is not None


@dataclass(frozen=True)
class SupervisedDataset:
    """Feature matrix at wave w paired with the SPPB total at wave w+2.

    `X` columns follow `schema` (already one-hot expanded); missing cells are NaN.
    """
    schema: FeatureSchema
    X: np.ndarray
    y: np.ndarray
    provenance: tuple[tuple[str, int, int], ...]

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=np.int64)
        if X.ndim != 2 or X.shape[1] != len(self.schema):
            raise DataError(f"X has shape {X.shape}, schema declares {len(self.schema)} columns")
        if y.shape != (X.shape[0],) or len(self.provenance) != X.shape[0]:
            raise DataError("X, y and provenance must have the same number of rows")
        if y.size and (y.min() < 0 or y.max() > 12):
            raise DataError("Targets must lie in [0, 12]")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, 'X', X)
        object.__setattr__(self, 'y', y)
        object.__setattr__(self, 'provenance', tuple(tuple(p) for p in self.provenance))

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def feature_names(self) -> list[str]:
        return self.schema.names

    def select(self, names: list[str]) -> 'SupervisedDataset':
        """Keep only the named columns, in the given order."""
        columns = [self.schema.position(n) for n in names]
        return SupervisedDataset(
            schema=self.schema.select(names),
            X=self.X[:, columns],
            y=self.y,
            provenance=self.provenance,
        )

    def take(self, rows) -> 'SupervisedDataset':
        rows = np.asarray(rows)
        return SupervisedDataset(
            schema=self.schema,
            X=self.X[rows],
            y=self.y[rows],
            provenance=tuple(self.provenance[i] for i in rows),
        )


def _numeric_column(frame: pd.DataFrame, column: str) -> np.ndarray:
    raw = frame[column].astype(str).str.strip()
    blank = (raw == '') | raw.str.lower().isin(('na', 'nan'))
    values = pd.to_numeric(raw.where(~blank), errors='coerce')
    bad = values.isna() & ~blank
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise CohortFormatError(
            f"Non-numeric value {raw.iloc[row]!r} in column '{column}' at line {row + 2}"
        )
    return values.to_numpy(dtype=float)


def _read_frame(path: Path, delimiter: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path, sep=delimiter, dtype=str, keep_default_na=False, encoding='utf-8')
    except OSError as e:
        raise CohortFormatError(f"Cannot read cohort file {path}: {e}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise CohortFormatError(f"Cohort file {path} is malformed: {e}") from e


def _time_or_none(value: float, schema: FeatureSchema) -> Optional[float]:
    """Map the not-attempted and unable codes to None."""
    if value in (schema.not_attempted_code, schema.unable_code):
        return None
    return float(value)


def _measurements(times: dict[str, float], course: float, schema: FeatureSchema, line: int):
    """Assemble measurement objects for one row; a missing cell drops the whole test."""
    try:
        balance_raw = [times.get(s, np.nan) for s in
                       ('balance_side_by_side', 'balance_semi_tandem', 'balance_full_tandem')]
        balance = None
        if not any(np.isnan(v) for v in balance_raw):
            balance = BalanceMeasurement.from_raw(*(_time_or_none(v, schema) for v in balance_raw))

        gait = None
        if not np.isnan(times.get('gait', np.nan)):
            gait = GaitMeasurement(_time_or_none(times['gait'], schema), course_length_m=course)

        chair = None
        if not np.isnan(times.get('chair', np.nan)):
            chair = ChairStandMeasurement(_time_or_none(times['chair'], schema))
    except InvalidMeasurementError as e:
        raise CohortFormatError(f"Invalid SPPB measurement at line {line}: {e}") from e
    return balance, gait, chair


def ingest_cohort(
    path: Path,
    schema: FeatureSchema,
    column_map: Optional[dict[str, Optional[str]]] = None,
    delimiter: str = ',',
) -> list[ParticipantWaveRecord]:
    """Read a cohort file into one record per (participant, wave) row.

    `column_map` maps schema feature names (and the participant, wave and course
    columns) onto file columns; a feature mapped to None is absent from the
    extract and reads as missing. Rows at waves without SPPB measurements are
    skipped. A missing age (blank or a declared missing code) is kept as NaN.

    Raises:
        CohortFormatError: unreadable file, missing column, unparsable value,
            invalid time or duplicated (participant, wave).
    """
    path = Path(path)
    column_map = column_map or {}
    frame = _read_frame(path, delimiter)

    def file_column(key: str, default: Optional[str]) -> Optional[str]:
        column = column_map.get(key, default)
        if column is not None and column not in frame.columns:
            raise CohortFormatError(f"Column '{column}' (for '{key}') not found in {path}")
        return column

    pid_column = file_column(schema.participant_column, schema.participant_column)
    wave_column = file_column(schema.wave_column, schema.wave_column)
    waves = _numeric_column(frame, wave_column)
    if np.isnan(waves).any() or (waves != np.round(waves)).any():
        row = int(np.flatnonzero(np.isnan(waves) | (waves != np.round(waves)))[0])
        raise CohortFormatError(f"Wave label at line {row + 2} is not an integer")

    keep = np.isin(waves, MEASURED_WAVES)
    if (~keep).any():
        logger.debug("Skipping %d rows at waves without SPPB measurements", int((~keep).sum()))

    course = np.full(len(frame), schema.default_course_length_m)
    if schema.course_length_column is not None:
        course_column = column_map.get(schema.course_length_column, schema.course_length_column)
        if course_column is not None and course_column in frame.columns:
            parsed = _numeric_column(frame, course_column)
            course = np.where(np.isfinite(parsed), parsed, course)

    answers: dict[str, np.ndarray] = {}
    times: dict[str, np.ndarray] = {}
    for feature in schema.features:
        if feature.role is FeatureRole.DERIVED:
            continue
        column = file_column(feature.name, feature.file_column)
        if column is None:
            values = np.full(len(frame), np.nan)
        else:
            values = _numeric_column(frame, column)
            if feature.missing_codes:
                values[np.isin(values, feature.missing_codes)] = np.nan
        if feature.role is FeatureRole.MEASUREMENT:
            times[feature.source] = values
        else:
            answers[feature.name] = values

    participants = frame[pid_column].astype(str).str.strip().to_numpy()
    records = []
    seen = set()
    for row in np.flatnonzero(keep):
        pid, wave = participants[row], int(waves[row])
        if (pid, wave) in seen:
            raise CohortFormatError(f"Duplicate record for participant {pid} at wave {wave} (line {row + 2})")
        seen.add((pid, wave))

        balance, gait, chair = _measurements(
            {source: values[row] for source, values in times.items()},
            float(course[row]), schema, row + 2,
        )
        records.append(ParticipantWaveRecord(
            participant_id=pid,
            wave=wave,
            age=float(answers[schema.age_feature][row]),
            values={name: float(values[row]) for name, values in answers.items()},
            balance=balance,
            gait=gait,
            chair=chair,
        ))

    logger.debug("Ingested %d records for %d participants from %s",
                 len(records), len({r.participant_id for r in records}), path.name)
    no_age = sum(1 for r in records if not r.has_age)
    if no_age:
        logger.debug("%d records have no recorded age", no_age)
    return records


def _measurement_value(record: ParticipantWaveRecord, source: str) -> float:
    if source.startswith('balance_'):
        if record.balance is None:
            return np.nan
        held = {
            'balance_side_by_side': record.balance.side_by_side_held_s,
            'balance_semi_tandem': record.balance.semi_tandem_held_s,
            'balance_full_tandem': record.balance.full_tandem_held_s,
        }[source]
        return np.nan if held is None else held
    measurement = record.gait if source == 'gait' else record.chair
    if measurement is None or measurement.time_s is None:
        return np.nan
    return measurement.time_s


def _derived_value(record: ParticipantWaveRecord, source: str, cutoffs: CutoffTable) -> float:
    if source == 'balance_score':
        return np.nan if record.balance is None else score_balance(record.balance, cutoffs)
    if source == 'gait_score':
        return np.nan if record.gait is None else score_gait(record.gait, cutoffs)
    if source == 'chair_score':
        return np.nan if record.chair is None else score_chair(record.chair, cutoffs)
    if not record.has_complete_sppb:
        return np.nan
    return score_measurements(record.balance, record.gait, record.chair, cutoffs).total


def feature_row(record: ParticipantWaveRecord, schema: FeatureSchema,
                cutoffs: CutoffTable = DEFAULT_CUTOFFS) -> np.ndarray:
    """Raw (pre one-hot) feature vector of a record in schema order."""
    row = np.empty(len(schema))
    for j, feature in enumerate(schema.features):
        if feature.role is FeatureRole.MEASUREMENT:
            row[j] = _measurement_value(record, feature.source)
        elif feature.role is FeatureRole.DERIVED:
            row[j] = _derived_value(record, feature.source, cutoffs)
        else:
            row[j] = record.values.get(feature.name, np.nan)
    return row


@dataclass(frozen=True)
class SelectionFunnel:
    """Counts from cohort records down to the supervised dataset.

    `dropped_age` includes the `missing_age` pairs; candidate pairs split
    exactly into dropped-by-age, dropped-by-target and kept pairs.
    """
    records_per_wave: Mapping[int, int]
    participants: int
    candidate_pairs: int
    missing_age: int
    dropped_age: int
    dropped_target: int
    n_pairs: int

    def stages(self) -> list[tuple[str, int]]:
        """(label, count) rows in selection order."""
        stages = [(f"Records at wave {w}", n) for w, n in sorted(self.records_per_wave.items())]
        return stages + [
            ("Participants", self.participants),
            ("Candidate wave pairs", self.candidate_pairs),
            ("Dropped: age outside the window or missing", self.dropped_age),
            ("Dropped: incomplete SPPB at the target wave", self.dropped_target),
            ("Wave pairs kept", self.n_pairs),
        ]

    def to_dict(self) -> dict:
        return {
            'records_per_wave': {str(w): n for w, n in sorted(self.records_per_wave.items())},
            'participants': self.participants,
            'candidate_pairs': self.candidate_pairs,
            'missing_age': self.missing_age,
            'dropped_age': self.dropped_age,
            'dropped_target': self.dropped_target,
            'n_pairs': self.n_pairs,
        }


def select_wave_pairs(
    records: list[ParticipantWaveRecord],
    schema: FeatureSchema,
    min_age: float = 55,
    max_age: float = 85,
    cutoffs: CutoffTable = DEFAULT_CUTOFFS,
) -> tuple[SupervisedDataset, SelectionFunnel]:
    """Pair each record at wave w with the same participant's SPPB total at w+2.

    A pair is kept when the feature-wave age is recorded and lies in
    [min_age, max_age] and all three tests were recorded at the target wave.

    Raises:
        EmptyDatasetError: if no pair survives.
    """
    by_key = {(r.participant_id, r.wave): r for r in records}
    order = list(dict.fromkeys(r.participant_id for r in records))

    rows, targets, provenance = [], [], []
    candidates = missing_age = dropped_age = dropped_target = 0
    for pid in order:
        for feature_wave, target_wave in WAVE_PAIRS:
            source = by_key.get((pid, feature_wave))
            target = by_key.get((pid, target_wave))
            if source is None or target is None:
                continue
            candidates += 1
            if not source.has_age:
                missing_age += 1
                dropped_age += 1
                continue
            if not min_age <= source.age <= max_age:
                dropped_age += 1
                continue
            if not target.has_complete_sppb:
                dropped_target += 1
                continue
            rows.append(feature_row(source, schema, cutoffs))
            targets.append(score_measurements(target.balance, target.gait, target.chair, cutoffs).total)
            provenance.append((pid, feature_wave, target_wave))

    funnel = SelectionFunnel(
        records_per_wave={w: sum(1 for r in records if r.wave == w) for w in MEASURED_WAVES},
        participants=len(order),
        candidate_pairs=candidates,
        missing_age=missing_age,
        dropped_age=dropped_age,
        dropped_target=dropped_target,
        n_pairs=len(rows),
    )
    logger.debug("Built %d wave pairs from %d candidates (dropped %d by age, %d of them without an age; "
                 "%d without target SPPB)", len(rows), candidates, dropped_age, missing_age, dropped_target)
    if not rows:
        raise EmptyDatasetError(
            f"No wave pair with age in [{min_age}, {max_age}] and a complete target SPPB "
            f"({candidates} candidates, {dropped_age} dropped by age, {dropped_target} by target)"
        )

    X, expanded = one_hot_encode(np.vstack(rows), schema)
    dataset = SupervisedDataset(schema=expanded, X=X, y=np.array(targets), provenance=tuple(provenance))
    return dataset, funnel


def build_wave_pairs(
    records: list[ParticipantWaveRecord],
    schema: FeatureSchema,
    min_age: float = 55,
    max_age: float = 85,
    cutoffs: CutoffTable = DEFAULT_CUTOFFS,
) -> SupervisedDataset:
    """select_wave_pairs without the funnel."""
    return select_wave_pairs(records, schema, min_age, max_age, cutoffs)[0]


def write_dataset(dataset: SupervisedDataset, path: Path):
    """Write provenance, features and target as CSV."""
    frame = pd.DataFrame(dataset.X, columns=dataset.feature_names)
    for i, column in enumerate(PROVENANCE_COLUMNS):
        frame.insert(i, column, [p[i] for p in dataset.provenance])
    frame[TARGET_COLUMN] = dataset.y
    frame.to_csv(path, index=False, na_rep='', lineterminator='\n')
    logger.debug("Wrote dataset %s (%d x %d)", path, dataset.n_samples, dataset.n_features)


def read_dataset(path: Path, schema: FeatureSchema) -> SupervisedDataset:
    """Read a dataset written by write_dataset; `schema` must be the expanded schema."""
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype={'participant_id': str})
    except OSError as e:
        raise DataError(f"Cannot read dataset {path}: {e}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"Dataset {path} is malformed: {e}") from e

    expected = list(PROVENANCE_COLUMNS) + schema.names + [TARGET_COLUMN]
    if list(frame.columns) != expected:
        missing = [c for c in expected if c not in frame.columns]
        raise DataError(f"Dataset {path} does not match the schema (missing columns: {missing[:5]})")

    provenance = tuple(
        (str(p), int(fw), int(tw))
        for p, fw, tw in frame[list(PROVENANCE_COLUMNS)].itertuples(index=False)
    )
    return SupervisedDataset(
        schema=schema,
        X=frame[schema.names].to_numpy(dtype=float),
        y=frame[TARGET_COLUMN].to_numpy(),
        provenance=provenance,
    )
