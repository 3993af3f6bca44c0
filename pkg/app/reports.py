"""Report, summary table and manifest writers.

Summary tables carry no timings so that identical runs produce identical
bytes; per-fold wall times live only in the JSON reports.
"""
import hashlib
import json
import logging
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from jinja2 import Environment, FileSystemLoader, StrictUndefined

from app.config import TEMPLATES_DIR, TOOL_VERSION, RunConfig, config_hash, config_to_dict
from app.errors import DataError
from app.evaluation import CvReport
from app.explain import AttributionMatrix, FeatureRanking

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ('model', 'MAE', 'MSE', 'parameters')
FAMILY_LABELS = {
    'linear': 'Linear Regression',
    'forest': 'Random Forest',
    'boosted': 'Gradient Boosted Trees',
    'dense': 'Dense Neural Network',
}
FLOAT_FORMAT = '%.6f'


class ReportError(DataError):
    """Raised when an output artifact cannot be written."""
    pass


def write_json(path: Path, data):
    try:
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2, sort_keys=True)
            f.write('\n')
    except OSError as e:
        raise ReportError(f"Cannot write {path}: {e}") from e


def write_table(path: Path, frame: pd.DataFrame):
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    except OSError as e:
        raise ReportError(f"Cannot write {path}: {e}") from e


def parameters_text(report: CvReport) -> str:
    spec = report.spec
    if spec.family == 'linear':
        return '-'
    if spec.family == 'dense':
        return 'layers: ' + ' '.join(str(n) for n in spec.layer_sizes)
    depth = 'None' if spec.max_depth is None else spec.max_depth
    return f"trees: {spec.trees}, depth: {depth}"


def summary_row(report: CvReport, model: Optional[str] = None) -> dict:
    return {
        'model': model or FAMILY_LABELS[report.spec.family],
        'MAE': report.mean_mae if report.ok else np.nan,
        'MSE': report.mean_mse if report.ok else np.nan,
        'parameters': parameters_text(report),
    }


def summary_frame(rows: list[dict]) -> pd.DataFrame:
    return pd.DataFrame(rows, columns=list(SUMMARY_COLUMNS))


def cells_frame(reports: list[CvReport]) -> pd.DataFrame:
    """Every grid cell in rank order."""
    rows = []
    for rank, report in enumerate(reports, start=1):
        rows.append({
            'rank': rank,
            'family': report.spec.family,
            'parameters': parameters_text(report),
            'status': report.status,
            'MAE': report.mean_mae if report.ok else np.nan,
            'MSE': report.mean_mse if report.ok else np.nan,
        })
    return pd.DataFrame(rows, columns=['rank', 'family', 'parameters', 'status', 'MAE', 'MSE'])


def ranking_frame(ranking: FeatureRanking) -> pd.DataFrame:
    return pd.DataFrame({
        'rank': np.arange(1, len(ranking) + 1),
        'feature': ranking.names,
        'mean_abs_shap': ranking.importance,
    })


def attribution_frame(attr: AttributionMatrix) -> pd.DataFrame:
    frame = pd.DataFrame(attr.values, columns=list(attr.feature_names))
    if attr.sample_ids:
        frame.insert(0, 'sample_id', attr.sample_ids)
    return frame


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 16), b''):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(out_dir: Path, command: str, config: RunConfig,
                   inputs: list[Path], artifacts: list[Path]) -> Path:
    """Name inputs, the config hash, the tool version and every artifact's digest."""
    manifest = {
        'command': command,
        'tool_version': TOOL_VERSION,
        'config_hash': config_hash(config),
        'config': config_to_dict(config),
        'inputs': [{'path': str(p), 'sha256': sha256_file(p)} for p in inputs if Path(p).is_file()],
        'artifacts': [{'path': Path(p).name, 'sha256': sha256_file(p)} for p in artifacts],
    }
    path = Path(out_dir) / 'manifest.json'
    write_json(path, manifest)
    return path


def render_report(context: dict, path: Path, template: str = 'replicate_report.md.j2'):
    """Render a Markdown report from templates/."""
    environment = Environment(
        loader=FileSystemLoader(str(TEMPLATES_DIR)),
        undefined=StrictUndefined,
        trim_blocks=True,
        lstrip_blocks=True,
        keep_trailing_newline=True,
    )
    environment.filters['fmt'] = lambda value, digits=4: (
        'failed' if value is None or not np.isfinite(value) else f"{value:.{digits}f}")
    text = environment.get_template(template).render(**context)
    try:
        Path(path).write_text(text, encoding='utf-8')
    except OSError as e:
        raise ReportError(f"Cannot write {path}: {e}") from e
    logger.debug("Rendered %s", path)
