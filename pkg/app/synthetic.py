"""Seeded synthetic cohort with a planted health signal.

Each participant carries a latent health level that declines with age, faster
after 70 and again after 80. The timed SPPB tests, grip strength, self-rated
health and the ADL/IADL/mobility difficulty items are driven by it; every
other answer is independent noise. About 10% of answer cells (age excluded)
and 2% of SPPB tests are missing.
"""
import logging
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from app.cohort import MEASURED_WAVES, ParticipantWaveRecord
from app.config import DEFAULT_SCHEMA_PATH
from app.errors import DataError
from app.schema import FeatureKind, FeatureRole, FeatureSchema, load_schema
from app.sppb import BalanceMeasurement, ChairStandMeasurement, GaitMeasurement

logger = logging.getLogger(__name__)

ANSWER_MISSING_RATE = 0.10
TEST_MISSING_RATE = 0.02
AGE_RANGE = (55.0, 85.0)
WAVE_GAP_YEARS = 4.0

# (mean, sd, lower bound) of continuous noise answers
_CONTINUOUS_NOISE = {
    'mother_age': (80.0, 10.0, 30.0),
    'father_age': (76.0, 10.0, 30.0),
    'height_cm': (166.0, 9.0, 130.0),
    'weight_kg': (76.0, 14.0, 35.0),
    'waist_cm': (95.0, 12.0, 55.0),
    'systolic_bp': (135.0, 18.0, 80.0),
    'diastolic_bp': (76.0, 10.0, 40.0),
    'cigarettes_per_day': (3.0, 6.0, 0.0),
    'drinks_per_week': (6.0, 6.0, 0.0),
}
_MARITAL_PROBS = (0.65, 0.12, 0.15, 0.08)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def _decline(age: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Loss of latent health over one wave gap."""
    accel = 0.03 * np.maximum(0.0, age - 70.0) + 0.06 * np.maximum(0.0, age - 80.0)
    return 0.25 + accel + rng.normal(0.0, 0.25, age.size)


def _balance(health: np.ndarray, rng: np.random.Generator) -> list[tuple]:
    """Stance holds; a failed stance stops the progression."""
    ability = health + rng.normal(0.0, 0.6, health.size)
    side = np.where(ability > -2.2, 10.0, rng.uniform(0.0, 10.0, health.size))
    semi = np.where(ability > -1.3, 10.0, rng.uniform(0.0, 10.0, health.size))
    full = np.where(ability > 0.3, 10.0,
                    np.where(ability > -0.8, rng.uniform(3.0, 10.0, health.size),
                             rng.uniform(0.0, 3.0, health.size)))
    holds = []
    for s, m, f in zip(side, semi, full):
        if s < 10.0:
            holds.append((round(s, 2), None, None))
        elif m < 10.0:
            holds.append((s, round(m, 2), None))
        else:
            holds.append((s, m, round(f, 2)))
    return holds


def _wave_answers(schema: FeatureSchema, health: np.ndarray, age: np.ndarray,
                  female: np.ndarray, marital: np.ndarray,
                  rng: np.random.Generator) -> dict[str, np.ndarray]:
    n = health.size
    answers = {}
    for feature in schema.features:
        if feature.role is not FeatureRole.ANSWER:
            continue
        name = feature.name
        if name == schema.age_feature:
            values = age
        elif name == 'gender':
            values = female.astype(float)
        elif name == 'marital_status':
            values = marital.astype(float)
        elif name == 'grip_strength_kg':
            values = np.maximum(4.0, 34.0 - 11.0 * female + 6.0 * health + rng.normal(0.0, 3.0, n))
        elif name == 'self_rated_health':
            values = np.clip(np.round(3.0 - 0.9 * health + rng.normal(0.0, 0.7, n)), 1, 5)
        elif name.startswith('adl_'):
            values = rng.binomial(1, _sigmoid(-2.5 - 1.3 * health)).astype(float)
        elif name.startswith('iadl_'):
            values = rng.binomial(1, _sigmoid(-2.8 - 1.2 * health)).astype(float)
        elif name.startswith('diff_'):
            values = rng.binomial(1, _sigmoid(-1.5 - 1.2 * health)).astype(float)
        elif name in _CONTINUOUS_NOISE:
            mean, sd, low = _CONTINUOUS_NOISE[name]
            values = np.round(np.maximum(low, rng.normal(mean, sd, n)), 1)
        elif feature.kind is FeatureKind.BINARY:
            values = rng.binomial(1, 0.2, n).astype(float)
        elif feature.kind is FeatureKind.ORDINAL:
            values = rng.integers(1, 5, n).astype(float)
        else:
            values = np.round(rng.normal(0.0, 1.0, n), 3)
        answers[name] = values

    if 'bmi' in answers and 'height_cm' in answers and 'weight_kg' in answers:
        answers['bmi'] = np.round(answers['weight_kg'] / (answers['height_cm'] / 100.0) ** 2, 1)

    for name, values in answers.items():
        if name == schema.age_feature:
            continue
        values[rng.random(n) < ANSWER_MISSING_RATE] = np.nan
    return answers


def generate_synthetic_cohort(
    seed: int,
    n_participants: int,
    schema: Optional[FeatureSchema] = None,
) -> list[ParticipantWaveRecord]:
    """Generate records for every participant at waves 2, 4 and 6.

    Deterministic in (seed, n_participants, schema).
    """
    if n_participants < 1:
        raise DataError(f"n_participants must be >= 1, got {n_participants}")
    schema = schema or load_schema(DEFAULT_SCHEMA_PATH)
    rng = np.random.default_rng(seed)
    n = n_participants

    age = np.round(rng.uniform(*AGE_RANGE, n), 1)
    female = rng.random(n) < 0.55
    marital = rng.choice(np.arange(1, 5), size=n, p=_MARITAL_PROBS)
    health = -0.06 * (age - 70.0) + rng.normal(0.0, 1.0, n)
    course = schema.default_course_length_m

    by_wave = {}
    for wave in MEASURED_WAVES:
        answers = _wave_answers(schema, health, age, female, marital, rng)

        speed = np.clip(0.95 + 0.22 * health + rng.normal(0.0, 0.1, n), 0.15, 2.0)
        gait_time = np.where(speed < 0.2, np.nan, np.round(course / speed, 2))
        chair_time = np.round(np.exp(np.log(12.5) - 0.18 * health + rng.normal(0.0, 0.12, n)), 2)
        chair_unable = (chair_time > 60.0) | (health + rng.normal(0.0, 0.3, n) < -2.8)
        holds = _balance(health, rng)
        test_missing = rng.random((n, 3)) < TEST_MISSING_RATE

        by_wave[wave] = []
        for i in range(n):
            balance = None if test_missing[i, 0] else BalanceMeasurement.from_raw(*holds[i])
            gait = None if test_missing[i, 1] else GaitMeasurement(
                None if np.isnan(gait_time[i]) else float(gait_time[i]), course_length_m=course)
            chair = None if test_missing[i, 2] else ChairStandMeasurement(
                None if chair_unable[i] else float(chair_time[i]))
            by_wave[wave].append(ParticipantWaveRecord(
                participant_id=f"P{i + 1:06d}",
                wave=wave,
                age=float(age[i]),
                values={name: float(values[i]) for name, values in answers.items()},
                balance=balance,
                gait=gait,
                chair=chair,
            ))

        health = health - _decline(age, rng)
        age = np.round(age + WAVE_GAP_YEARS, 1)

    records = [r for i in range(n) for r in (by_wave[w][i] for w in MEASURED_WAVES)]
    logger.debug("Generated %d synthetic records for %d participants (seed %d)", len(records), n, seed)
    return records


def _time_code(value: Optional[float], code: float) -> float:
    return code if value is None else value


def write_cohort(records: list[ParticipantWaveRecord], path: Path, schema: Optional[FeatureSchema] = None):
    """Write records in the cohort file layout that ingest_cohort reads."""
    schema = schema or load_schema(DEFAULT_SCHEMA_PATH)
    rows = []
    for record in records:
        row = {schema.participant_column: record.participant_id, schema.wave_column: record.wave}
        times = {}
        if record.balance is not None:
            times['balance_side_by_side'] = _time_code(record.balance.side_by_side_held_s, schema.not_attempted_code)
            times['balance_semi_tandem'] = _time_code(record.balance.semi_tandem_held_s, schema.not_attempted_code)
            times['balance_full_tandem'] = _time_code(record.balance.full_tandem_held_s, schema.not_attempted_code)
        if record.gait is not None:
            times['gait'] = _time_code(record.gait.time_s, schema.unable_code)
        if record.chair is not None:
            times['chair'] = _time_code(record.chair.time_s, schema.unable_code)

        for feature in schema.features:
            if feature.role is FeatureRole.DERIVED:
                continue
            if feature.role is FeatureRole.MEASUREMENT:
                row[feature.file_column] = times.get(feature.source, np.nan)
            else:
                row[feature.file_column] = record.values.get(feature.name, np.nan)
        if schema.course_length_column is not None:
            row[schema.course_length_column] = (
                record.gait.course_length_m if record.gait is not None else schema.default_course_length_m
            )
        rows.append(row)

    frame = pd.DataFrame(rows)
    frame.to_csv(path, index=False, na_rep='', lineterminator='\n')
    logger.debug("Wrote cohort file %s (%d rows)", path, len(frame))
