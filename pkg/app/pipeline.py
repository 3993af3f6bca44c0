"""Subcommands: synth, build, train, sweep, explain, simplify, replicate.

Every subcommand reads a RunConfig, writes its artifacts under
`output.directory` and finishes with a manifest.
"""
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from app.beeswarm import export_beeswarm
from app.cohort import (
    SelectionFunnel,
    SupervisedDataset,
    ingest_cohort,
    read_dataset,
    select_wave_pairs,
    write_dataset,
)
from app.config import TOOL_VERSION, RunConfig, config_hash
from app.evaluation import (
    CvReport,
    FoldData,
    FoldPlan,
    cross_validate,
    grid_search,
    make_folds,
    prepare_folds,
)
from app.explain import (
    SIMPLIFIED_SPEC,
    AttributionMatrix,
    FeatureRanking,
    UnsupportedModelError,
    rank_features,
    simplify_and_retrain,
    tree_shap,
)
from app.learners import RegressorSpec, TrainedRegressor, fit_model
from app.learners.linear import LinearModel, linear_attributions
from app.learners.serialization import load_model, save_model
from app.preprocess import PreprocessModel, fit_pipeline, load_preprocess, save_preprocess, transform
from app.reports import (
    attribution_frame,
    cells_frame,
    ranking_frame,
    render_report,
    summary_frame,
    summary_row,
    write_json,
    write_manifest,
    write_table,
)
from app.schema import FeatureSchema, load_schema
from app.synthetic import generate_synthetic_cohort, write_cohort

logger = logging.getLogger(__name__)

BASELINE_SPEC = RegressorSpec('boosted', trees=0)


@dataclass
class RunContext:
    """Runtime options shared by all subcommands."""
    config: RunConfig
    n_jobs: int = 1
    progress: bool = False
    command: str = ''

    @property
    def out_dir(self) -> Path:
        return self.config.output.directory

    def wants(self, fmt: str) -> bool:
        return fmt in self.config.output.formats


def _inputs(config: RunConfig) -> list[Path]:
    inputs = [config.data.schema]
    if config.data.path is not None:
        inputs.append(config.data.path)
    if config.explain.model is not None:
        inputs.append(config.explain.model)
    return inputs


def _finish(ctx: RunContext, artifacts: list[Path]) -> list[Path]:
    manifest = write_manifest(ctx.out_dir, ctx.command, ctx.config, _inputs(ctx.config), artifacts)
    logger.info("[OK] Wrote %d artifacts and %s", len(artifacts), manifest)
    return artifacts + [manifest]


def _records(config: RunConfig, schema: FeatureSchema):
    data = config.data
    if data.source == 'synthetic':
        records = generate_synthetic_cohort(data.seed, data.n_participants, schema)
        logger.info("[OK] Generated synthetic cohort (seed %d, %d participants)", data.seed, data.n_participants)
    else:
        records = ingest_cohort(data.path, schema, data.column_map, data.delimiter)
        logger.info("[OK] Ingested %d records from %s", len(records), data.path)
    return records


def select_dataset(config: RunConfig) -> tuple[SupervisedDataset, Optional[SelectionFunnel]]:
    """Assemble the supervised dataset the config points at, with its selection counts.

    A prebuilt dataset file carries no funnel.
    """
    schema = load_schema(config.data.schema)
    funnel = None
    if config.data.source == 'dataset':
        dataset = read_dataset(config.data.path, schema.expanded())
        logger.info("[OK] Loaded dataset %s", config.data.path)
    else:
        dataset, funnel = select_wave_pairs(_records(config, schema), schema, config.data.min_age,
                                            config.data.max_age, config.cutoffs)
        if funnel.missing_age:
            logger.warning("[!] Dropped %d wave pairs without a recorded age", funnel.missing_age)
        logger.info("[OK] Kept %d of %d candidate wave pairs (%d dropped by age, %d without target SPPB)",
                    funnel.n_pairs, funnel.candidate_pairs, funnel.dropped_age, funnel.dropped_target)
    logger.info("[OK] Dataset: %d wave pairs x %d features", dataset.n_samples, dataset.n_features)
    return dataset, funnel


def load_dataset(config: RunConfig) -> SupervisedDataset:
    return select_dataset(config)[0]


def fold_plan(config: RunConfig, dataset: SupervisedDataset) -> FoldPlan:
    return make_folds(dataset.n_samples, config.cv.k, config.cv.seed,
                      stratify_by=dataset.y if config.cv.stratify else None)


def _sample_ids(dataset: SupervisedDataset, rows: Optional[np.ndarray] = None) -> list[str]:
    rows = np.arange(dataset.n_samples) if rows is None else rows
    return [f"{dataset.provenance[i][0]}:w{dataset.provenance[i][1]}" for i in rows]


def run_synth(ctx: RunContext) -> list[Path]:
    config = ctx.config
    schema = load_schema(config.data.schema)
    records = generate_synthetic_cohort(config.data.seed, config.data.n_participants, schema)
    path = ctx.out_dir / 'cohort.csv'
    write_cohort(records, path, schema)
    logger.info("[OK] Synthetic cohort: %d records", len(records))
    return _finish(ctx, [path])


def run_build(ctx: RunContext) -> list[Path]:
    dataset, funnel = select_dataset(ctx.config)
    path = ctx.out_dir / 'dataset.csv'
    write_dataset(dataset, path)
    summary = ctx.out_dir / 'dataset_summary.json'
    write_json(summary, {
        'n_samples': dataset.n_samples,
        'n_features': dataset.n_features,
        'n_participants': len({p[0] for p in dataset.provenance}),
        'category_columns': dataset.schema.category_counts(),
        'target_counts': {str(t): int(c) for t, c in zip(*np.unique(dataset.y, return_counts=True))},
        'missing_fraction': float(np.isnan(dataset.X).mean()),
        'selection': funnel.to_dict() if funnel is not None else None,
    })
    return _finish(ctx, [path, summary])


def run_train(ctx: RunContext) -> list[Path]:
    config = ctx.config
    dataset = load_dataset(config)
    spec = config.model.spec()
    report = cross_validate(dataset, spec, fold_plan(config, dataset), config.preprocess, n_jobs=ctx.n_jobs)
    logger.info("[OK] %s: MAE %.4f, MSE %.4f", spec.label(), report.mean_mae, report.mean_mse)

    preprocess = fit_pipeline(dataset.X, config.preprocess.k_neighbors, dataset.feature_names)
    model = fit_model(spec, transform(preprocess, dataset.X), dataset.y, n_jobs=ctx.n_jobs)
    artifacts = [ctx.out_dir / 'cv_report.json', ctx.out_dir / 'model.json', ctx.out_dir / 'preprocess.json']
    write_json(artifacts[0], report.to_dict())
    save_model(model, artifacts[1])
    save_preprocess(preprocess, artifacts[2])
    return _finish(ctx, artifacts)


def _sweep(ctx: RunContext, dataset: SupervisedDataset, plan: FoldPlan,
           prepared: list[FoldData]) -> dict[str, list[CvReport]]:
    config = ctx.config
    results = {}
    for family in config.model.families:
        ranked = grid_search(dataset, family, config.model.grid_for(family), plan, config.preprocess,
                             prepared=prepared, n_jobs=ctx.n_jobs, progress=ctx.progress)
        failed = [r for r in ranked if not r.ok]
        for report in failed:
            logger.warning("[!] %s failed: %s", report.spec.label(), report.error)
        logger.info("[OK] %s: %d cells, best %s (MAE %.4f)", family, len(ranked),
                    ranked[0].spec.label(), ranked[0].mean_mae)
        results[family] = ranked
    return results


def _write_sweep(ctx: RunContext, results: dict[str, list[CvReport]]) -> list[Path]:
    artifacts = []
    if ctx.wants('json'):
        path = ctx.out_dir / 'sweep_report.json'
        write_json(path, {family: [r.to_dict() for r in ranked] for family, ranked in results.items()})
        artifacts.append(path)
    if ctx.wants('csv'):
        cells = ctx.out_dir / 'sweep_cells.csv'
        write_table(cells, cells_frame([r for ranked in results.values() for r in ranked]))
        summary = ctx.out_dir / 'sweep_summary.csv'
        write_table(summary, summary_frame([summary_row(ranked[0]) for ranked in results.values()]))
        artifacts += [cells, summary]
    return artifacts


def run_sweep(ctx: RunContext) -> list[Path]:
    config = ctx.config
    dataset = load_dataset(config)
    plan = fold_plan(config, dataset)
    prepared = prepare_folds(dataset, plan, config.preprocess, n_jobs=ctx.n_jobs)
    results = _sweep(ctx, dataset, plan, prepared)
    return _finish(ctx, _write_sweep(ctx, results))


@dataclass(frozen=True)
class Explanation:
    attributions: AttributionMatrix
    X_scaled: np.ndarray
    ranking: FeatureRanking
    model: TrainedRegressor


def _attribute(model: TrainedRegressor, X_scaled: np.ndarray, names: list[str],
               sample_ids: list[str], n_jobs: int) -> AttributionMatrix:
    if isinstance(model, LinearModel):
        values = linear_attributions(model, X_scaled)
        return AttributionMatrix(values=values, base_value=float(model.intercept + model.coef @ model.feature_means),
                                 feature_names=tuple(names), sample_ids=tuple(sample_ids))
    return tree_shap(model, X_scaled, names, sample_ids, n_jobs=n_jobs)


def explain_dataset(ctx: RunContext, dataset: SupervisedDataset, spec: RegressorSpec,
                    prepared: Optional[list[FoldData]] = None) -> Explanation:
    """Fit (or load) a model and attribute its predictions on the configured split."""
    config = ctx.config
    names = dataset.feature_names
    if config.explain.model is not None:
        model = load_model(config.explain.model)
        preprocess: PreprocessModel = load_preprocess(config.explain.model.with_name('preprocess.json'))
        X_scaled = transform(preprocess, dataset.X)
        rows = np.arange(dataset.n_samples)
    elif config.explain.split == 'holdout':
        fold = prepared[0] if prepared else prepare_folds(dataset, fold_plan(config, dataset),
                                                         config.preprocess, ctx.n_jobs)[0]
        model = fit_model(spec, fold.X_train, fold.y_train, n_jobs=ctx.n_jobs)
        X_scaled, rows = fold.X_test, fold.test_rows
    else:
        preprocess = fit_pipeline(dataset.X, config.preprocess.k_neighbors, names)
        X_scaled = transform(preprocess, dataset.X)
        model = fit_model(spec, X_scaled, dataset.y, n_jobs=ctx.n_jobs)
        rows = np.arange(dataset.n_samples)

    attributions = _attribute(model, X_scaled, names, _sample_ids(dataset, rows), ctx.n_jobs)
    ranking = rank_features(attributions)
    logger.info("[OK] Attributed %d samples; top features: %s",
                attributions.n_samples, ', '.join(ranking.top(5)))
    return Explanation(attributions, X_scaled, ranking, model)


def _write_explanation(ctx: RunContext, explanation: Explanation) -> list[Path]:
    out = ctx.out_dir
    artifacts = []
    if ctx.wants('csv'):
        write_table(out / 'ranking.csv', ranking_frame(explanation.ranking))
        write_table(out / 'attributions.csv', attribution_frame(explanation.attributions))
        artifacts += [out / 'ranking.csv', out / 'attributions.csv']
    top_m = min(ctx.config.explain.top_m, len(explanation.ranking))
    artifacts += list(export_beeswarm(explanation.attributions, explanation.X_scaled, out, top_m,
                                      explanation.ranking))
    if ctx.wants('json'):
        write_json(out / 'explain_report.json', {
            'model': explanation.model.spec.to_dict(),
            'split': ctx.config.explain.split,
            'n_samples': explanation.attributions.n_samples,
            'base_value': explanation.attributions.base_value,
            'ranking': [{'feature': n, 'mean_abs_shap': v}
                        for n, v in zip(explanation.ranking.names, explanation.ranking.importance)],
        })
        artifacts.append(out / 'explain_report.json')
    return artifacts


def run_explain(ctx: RunContext) -> list[Path]:
    dataset = load_dataset(ctx.config)
    explanation = explain_dataset(ctx, dataset, ctx.config.model.spec())
    return _finish(ctx, _write_explanation(ctx, explanation))


def _exclusions(config: RunConfig, dataset: SupervisedDataset) -> list[str]:
    if config.explain.exclusions is None:
        return dataset.schema.sppb_related()
    return list(config.explain.exclusions)


def _simplify(ctx: RunContext, dataset: SupervisedDataset, ranking: FeatureRanking,
              plan: FoldPlan) -> list[tuple[int, list[str], CvReport]]:
    results = []
    for k in ctx.config.explain.top_k:
        features, report = simplify_and_retrain(dataset, ranking, k, plan, _exclusions(ctx.config, dataset),
                                                SIMPLIFIED_SPEC, ctx.config.preprocess, n_jobs=ctx.n_jobs)
        logger.info("[OK] Top-%d simplified model: MAE %.4f, MSE %.4f", k, report.mean_mae, report.mean_mse)
        results.append((k, features, report))
    return results


def _write_simplify(ctx: RunContext, results) -> list[Path]:
    artifacts = []
    if ctx.wants('json'):
        path = ctx.out_dir / 'simplify_report.json'
        write_json(path, [{'k': k, 'features': features, 'report': report.to_dict()}
                          for k, features, report in results])
        artifacts.append(path)
    if ctx.wants('csv'):
        path = ctx.out_dir / 'simplify_summary.csv'
        write_table(path, summary_frame([summary_row(report, f"Boosted trees, top {k} features")
                                         for k, _, report in results]))
        artifacts.append(path)
    return artifacts


def run_simplify(ctx: RunContext) -> list[Path]:
    dataset = load_dataset(ctx.config)
    explanation = explain_dataset(ctx, dataset, ctx.config.model.spec())
    results = _simplify(ctx, dataset, explanation.ranking, fold_plan(ctx.config, dataset))
    return _finish(ctx, _write_explanation(ctx, explanation) + _write_simplify(ctx, results))


def _find(reports: list[CvReport], spec: RegressorSpec) -> Optional[CvReport]:
    for report in reports:
        if report.spec == spec:
            return report
    return None


def run_replicate(ctx: RunContext) -> list[Path]:
    """Sweep every family, explain the best boosted cell, simplify and summarize."""
    config = ctx.config
    if 'boosted' not in config.model.families:
        ctx = replace(ctx, config=replace(config, model=replace(
            config.model, families=tuple(config.model.families) + ('boosted',))))
        config = ctx.config
    dataset, funnel = select_dataset(config)
    plan = fold_plan(config, dataset)
    prepared = prepare_folds(dataset, plan, config.preprocess, n_jobs=ctx.n_jobs)
    logger.info("[OK] Prepared %d folds (preprocessing fitted per %s)", plan.k, config.preprocess.fit_scope)

    results = _sweep(ctx, dataset, plan, prepared)
    artifacts = _write_sweep(ctx, results)

    baseline = cross_validate(dataset, BASELINE_SPEC, plan, prepared=prepared)
    logger.info("[OK] Mean-predictor baseline: MAE %.4f", baseline.mean_mae)

    boosted = results['boosted']
    best = next((r for r in boosted if r.ok), None)
    if best is None:
        raise UnsupportedModelError("Every boosted cell failed; nothing to explain")
    explanation = explain_dataset(ctx, dataset, best.spec, prepared)
    artifacts += _write_explanation(ctx, explanation)

    simplified = _simplify(ctx, dataset, explanation.ranking, plan)
    artifacts += _write_simplify(ctx, simplified)
    full_boosted = _find(boosted, SIMPLIFIED_SPEC) or cross_validate(dataset, SIMPLIFIED_SPEC, plan,
                                                                     prepared=prepared)

    family_rows = [summary_row(results[f][0]) for f in config.model.families]
    summary = ctx.out_dir / 'summary.csv'
    write_table(summary, summary_frame(family_rows))
    artifacts.append(summary)

    if ctx.wants('markdown'):
        data = config.data
        report_path = ctx.out_dir / 'report.md'
        render_report({
            'tool_version': TOOL_VERSION,
            'config_hash': config_hash(config),
            'data_description': (f"synthetic cohort (seed {data.seed}, {data.n_participants} participants)"
                                 if data.source == 'synthetic' else str(data.path)),
            'selection': funnel.stages() if funnel is not None else [],
            'n_samples': dataset.n_samples,
            'n_features': dataset.n_features,
            'cv_k': plan.k,
            'cv_seed': plan.seed,
            'k_neighbors': config.preprocess.k_neighbors,
            'fit_scope': 'fold' if config.preprocess.fit_scope == 'fold' else 'full dataset',
            'family_rows': family_rows,
            'baseline': summary_row(baseline, 'Mean predictor'),
            'failed_cells': sum(1 for ranked in results.values() for r in ranked if not r.ok),
            'explained_model': best.spec.label(),
            'explain_split': config.explain.split,
            'n_explained': explanation.attributions.n_samples,
            'top_features': [{'name': n, 'importance': v} for n, v in
                             zip(explanation.ranking.top(20), explanation.ranking.importance[:20])],
            'simplified_model': SIMPLIFIED_SPEC.label(),
            'simplified_rows': [{'k': k, **summary_row(report)} for k, _, report in simplified],
            'full_boosted': summary_row(full_boosted),
        }, report_path)
        artifacts.append(report_path)
    return _finish(ctx, artifacts)


SUBCOMMANDS: dict[str, Callable[[RunContext], list[Path]]] = {
    'synth': run_synth,
    'build': run_build,
    'train': run_train,
    'sweep': run_sweep,
    'explain': run_explain,
    'simplify': run_simplify,
    'replicate': run_replicate,
}


def run(command: str, config: RunConfig, n_jobs: int = 1, progress: bool = False) -> list[Path]:
    """Run one subcommand; creates the output directory first."""
    config.output.directory.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(config=config, n_jobs=n_jobs, progress=progress, command=command)
    return SUBCOMMANDS[command](ctx)
