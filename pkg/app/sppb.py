"""Short Physical Performance Battery scoring.

Balance, gait and chair-stand measurements are converted to partial scores
(0-4 each) and summed to a 0-12 total. A `None` time inside a measurement
means the test was not attempted (balance) or could not be completed
(gait, chair stands); a whole measurement being `None` means it was not
recorded at all.
"""
import math
from dataclasses import dataclass, asdict
from enum import Enum
from typing import Optional

from app.errors import DataError

BALANCE_HOLD_LIMIT_S = 10.0
STANDARD_GAIT_COURSE_M = 4.0


class InvalidMeasurementError(DataError):
    """Raised when a timed measurement is negative, non-finite or malformed."""
    pass


class InvalidScoreError(DataError):
    """Raised when a partial or total score is out of range."""
    pass


@dataclass(frozen=True)
class CutoffTable:
    """Scoring thresholds in seconds.

    Gait cutoffs refer to the standard 4 m course and are rescaled
    proportionally for other course lengths.
    """
    gait_4m: tuple[float, float, float] = (4.82, 6.20, 8.70)
    chair: tuple[float, float, float, float] = (11.19, 13.69, 16.69, 60.0)
    balance_hold_s: float = 10.0
    full_tandem_floor_s: float = 3.0

    def __post_init__(self):
        for name in ('gait_4m', 'chair'):
            values = getattr(self, name)
            if any(b <= a for a, b in zip(values, values[1:])):
                raise InvalidScoreError(f"Cutoffs '{name}' must be strictly increasing: {values}")
            if any(v <= 0 for v in values):
                raise InvalidScoreError(f"Cutoffs '{name}' must be positive: {values}")
        if not 0 < self.balance_hold_s <= BALANCE_HOLD_LIMIT_S:
            raise InvalidScoreError(
                f"balance_hold_s must lie in (0, {BALANCE_HOLD_LIMIT_S}], got {self.balance_hold_s}"
            )
        if not 0 < self.full_tandem_floor_s < self.balance_hold_s:
            raise InvalidScoreError(
                f"full_tandem_floor_s must lie in (0, {self.balance_hold_s}), "
                f"got {self.full_tandem_floor_s}"
            )

    @classmethod
    def from_dict(cls, data: dict) -> 'CutoffTable':
        return cls(
            gait_4m=tuple(float(v) for v in data.get('gait_4m', cls.gait_4m)),
            chair=tuple(float(v) for v in data.get('chair', cls.chair)),
            balance_hold_s=float(data.get('balance_hold_s', cls.balance_hold_s)),
            full_tandem_floor_s=float(data.get('full_tandem_floor_s', cls.full_tandem_floor_s)),
        )

    def to_dict(self) -> dict:
        data = asdict(self)
        data['gait_4m'] = list(self.gait_4m)
        data['chair'] = list(self.chair)
        return data


DEFAULT_CUTOFFS = CutoffTable()


def _check_time(value: Optional[float], label: str):
    if value is None:
        return
    if not math.isfinite(value) or value < 0:
        raise InvalidMeasurementError(f"{label} must be a finite non-negative time, got {value}")


@dataclass(frozen=True)
class BalanceMeasurement:
    """Seconds held in the three stances; `None` marks a stance not attempted."""
    side_by_side_held_s: Optional[float]
    semi_tandem_held_s: Optional[float]
    full_tandem_held_s: Optional[float]

    def __post_init__(self):
        for name in ('side_by_side_held_s', 'semi_tandem_held_s', 'full_tandem_held_s'):
            value = getattr(self, name)
            _check_time(value, name)
            if value is not None and value > BALANCE_HOLD_LIMIT_S:
                raise InvalidMeasurementError(
                    f"{name} must not exceed {BALANCE_HOLD_LIMIT_S} s, got {value}"
                )

    @classmethod
    def from_raw(
        cls,
        side_by_side: Optional[float],
        semi_tandem: Optional[float],
        full_tandem: Optional[float],
    ) -> 'BalanceMeasurement':
        """Build a measurement from raw clock readings, capping holds at 10 s."""
        def cap(value):
            if value is None:
                return None
            _check_time(value, 'balance time')
            return min(float(value), BALANCE_HOLD_LIMIT_S)

        return cls(cap(side_by_side), cap(semi_tandem), cap(full_tandem))


@dataclass(frozen=True)
class GaitMeasurement:
    """Walk time over the course; `None` time means the walk could not be done."""
    time_s: Optional[float]
    course_length_m: float = STANDARD_GAIT_COURSE_M

    def __post_init__(self):
        if not math.isfinite(self.course_length_m) or self.course_length_m <= 0:
            raise InvalidMeasurementError(
                f"course_length_m must be positive, got {self.course_length_m}"
            )
        if self.time_s is not None and (not math.isfinite(self.time_s) or self.time_s <= 0):
            raise InvalidMeasurementError(f"gait time_s must be positive, got {self.time_s}")


@dataclass(frozen=True)
class ChairStandMeasurement:
    """Time for five rises; `None` means unable to complete."""
    time_s: Optional[float]

    def __post_init__(self):
        if self.time_s is not None and (not math.isfinite(self.time_s) or self.time_s <= 0):
            raise InvalidMeasurementError(f"chair time_s must be positive, got {self.time_s}")


class SppbCategory(str, Enum):
    GOOD = 'good'
    REDUCED = 'reduced'
    VERY_POOR = 'very_poor'


@dataclass(frozen=True)
class SppbScore:
    balance: int
    gait: int
    chair: int
    total: int


def score_balance(m: BalanceMeasurement, cutoffs: CutoffTable = DEFAULT_CUTOFFS) -> int:
    """Score the three balance stances (0-4)."""
    hold = cutoffs.balance_hold_s
    score = 0
    if m.side_by_side_held_s is not None and m.side_by_side_held_s >= hold:
        score += 1
    if m.semi_tandem_held_s is not None and m.semi_tandem_held_s >= hold:
        score += 1
    full = m.full_tandem_held_s
    if full is not None:
        if full >= hold:
            score += 2
        elif full >= cutoffs.full_tandem_floor_s:
            score += 1
    return score


def gait_thresholds(course_length_m: float, cutoffs: CutoffTable = DEFAULT_CUTOFFS) -> tuple[float, ...]:
    """Cutoffs rescaled to the given course length."""
    if not math.isfinite(course_length_m) or course_length_m <= 0:
        raise InvalidMeasurementError(f"course_length_m must be positive, got {course_length_m}")
    ratio = course_length_m / STANDARD_GAIT_COURSE_M
    return tuple(c * ratio for c in cutoffs.gait_4m)


def score_gait(m: GaitMeasurement, cutoffs: CutoffTable = DEFAULT_CUTOFFS) -> int:
    """Score the walk (0-4) against course-scaled cutoffs."""
    fast, mid, slow = gait_thresholds(m.course_length_m, cutoffs)
    if m.time_s is None:
        return 0
    if m.time_s < fast:
        return 4
    if m.time_s <= mid:
        return 3
    if m.time_s <= slow:
        return 2
    return 1


def score_chair(m: ChairStandMeasurement, cutoffs: CutoffTable = DEFAULT_CUTOFFS) -> int:
    """Score five chair rises (0-4); band upper edges belong to the higher score."""
    if m.time_s is None:
        return 0
    for points, limit in zip((4, 3, 2, 1), cutoffs.chair):
        if m.time_s <= limit:
            return points
    return 0


def _check_partial(value: int, name: str):
    if isinstance(value, bool) or int(value) != value or not 0 <= value <= 4:
        raise InvalidScoreError(f"{name} score must be an integer in [0, 4], got {value!r}")


def total_sppb(balance: int, gait: int, chair: int) -> SppbScore:
    """Combine partial scores into an SppbScore."""
    _check_partial(balance, 'balance')
    _check_partial(gait, 'gait')
    _check_partial(chair, 'chair')
    balance, gait, chair = int(balance), int(gait), int(chair)
    return SppbScore(balance=balance, gait=gait, chair=chair, total=balance + gait + chair)


def classify_sppb(total: int) -> SppbCategory:
    """Map a 0-12 total onto the clinical bands."""
    if isinstance(total, bool) or int(total) != total or not 0 <= total <= 12:
        raise InvalidScoreError(f"total must be an integer in [0, 12], got {total!r}")
    if total >= 10:
        return SppbCategory.GOOD
    if total >= 4:
        return SppbCategory.REDUCED
    return SppbCategory.VERY_POOR


def score_measurements(
    balance: BalanceMeasurement,
    gait: GaitMeasurement,
    chair: ChairStandMeasurement,
    cutoffs: CutoffTable = DEFAULT_CUTOFFS,
) -> SppbScore:
    """Score a complete measurement triple."""
    return total_sppb(
        score_balance(balance, cutoffs),
        score_gait(gait, cutoffs),
        score_chair(chair, cutoffs),
    )
