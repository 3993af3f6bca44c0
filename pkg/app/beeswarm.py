"""Beeswarm export: per-point records and an SVG rendering.

The delimited file is the contract. The picture draws one horizontal strip per
feature, top-ranked feature on top, points jittered vertically and colored by
the scaled feature value.
"""
import logging
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from app.errors import DataError
from app.explain import AttributionMatrix, FeatureRanking, rank_features

logger = logging.getLogger(__name__)

RECORD_COLUMNS = ('feature', 'rank', 'scaled_value', 'shap_value', 'sample_id')
JITTER_HALF_WIDTH = 0.3
JITTER_SEED = 0
COLOR_MAP = 'coolwarm'
POINT_SIZE = 6


class ExportError(DataError):
    """Raised when a beeswarm file cannot be written."""
    pass


def beeswarm_records(attr: AttributionMatrix, X_scaled: np.ndarray, top_m: int = 15,
                     ranking: Optional[FeatureRanking] = None) -> pd.DataFrame:
    """One record per (top feature, sample), features in ranking order."""
    X_scaled = np.asarray(X_scaled, dtype=float)
    if X_scaled.shape != attr.values.shape:
        raise DataError(f"Scaled matrix shape {X_scaled.shape} does not match attributions {attr.values.shape}")
    if not 1 <= top_m <= len(attr.feature_names):
        raise DataError(f"top_m must lie in [1, {len(attr.feature_names)}], got {top_m}")
    ranking = ranking or rank_features(attr)
    sample_ids = attr.sample_ids or tuple(str(i) for i in range(attr.n_samples))

    frames = []
    for rank, name in enumerate(ranking.top(top_m), start=1):
        j = attr.feature_names.index(name)
        frames.append(pd.DataFrame({
            'feature': name,
            'rank': rank,
            'scaled_value': X_scaled[:, j],
            'shap_value': attr.values[:, j],
            'sample_id': sample_ids,
        }))
    return pd.concat(frames, ignore_index=True)[list(RECORD_COLUMNS)]


def render_beeswarm(records: pd.DataFrame, path: Path):
    """Draw the records as an SVG without embedded dates or random ids."""
    features = list(dict.fromkeys(records['feature']))
    rng = np.random.default_rng(JITTER_SEED)
    plt.rcParams['svg.hashsalt'] = 'beeswarm'

    fig, ax = plt.subplots(figsize=(8, 0.4 * len(features) + 1.5))
    points = None
    for row, name in enumerate(features):
        strip = records[records['feature'] == name]
        y = len(features) - 1 - row + rng.uniform(-JITTER_HALF_WIDTH, JITTER_HALF_WIDTH, len(strip))
        points = ax.scatter(strip['shap_value'], y, c=strip['scaled_value'], cmap=COLOR_MAP,
                            vmin=0.0, vmax=1.0, s=POINT_SIZE, linewidths=0)
    ax.axvline(0.0, color='grey', linewidth=0.8)
    ax.set_yticks(range(len(features)))
    ax.set_yticklabels(list(reversed(features)))
    ax.set_xlabel('Shapley value (impact on predicted SPPB)')
    if points is not None:
        colorbar = fig.colorbar(points, ax=ax)
        colorbar.set_label('Scaled feature value')
    fig.tight_layout()
    fig.savefig(path, format='svg', metadata={'Date': None})
    plt.close(fig)


def export_beeswarm(attr: AttributionMatrix, X_scaled: np.ndarray, out_dir: Path, top_m: int = 15,
                    ranking: Optional[FeatureRanking] = None, stem: str = 'beeswarm') -> tuple[Path, Path]:
    """Write `<stem>.csv` and `<stem>.svg` under `out_dir`.

    Raises:
        ExportError: if either file cannot be written.
    """
    out_dir = Path(out_dir)
    records = beeswarm_records(attr, X_scaled, top_m, ranking)
    csv_path, svg_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.svg"
    try:
        records.to_csv(csv_path, index=False, lineterminator='\n')
        render_beeswarm(records, svg_path)
    except OSError as e:
        raise ExportError(f"Cannot write beeswarm files under {out_dir}: {e}") from e
    logger.debug("Beeswarm: %d records for %d features", len(records), top_m)
    return csv_path, svg_path
