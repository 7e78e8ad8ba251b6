//! End-to-end experiment orchestration: tune on all features, attribute,
//! eliminate clusters across k, re-tune every distinct subset, and emit
//! tables and figures. A separate validation run compares the best subset
//! against complement, Pearson, Lasso and KernelSHAP selections.

use serde::{Deserialize, Serialize};

use crate::attribution::{
    aggregate, attribute_dataset, kernel_shap, Aggregation, CoalitionBudget, GlobalImportance,
    IgConfig,
};
use crate::config::{AttributionRows, DataSource, PipelineConfig, Selector};
use crate::data::{
    clean, fit_scaler, generate_dummy, read_csv, split, Dataset, GroundTruth, SplitPlan,
    SplitRows, StandardScaler,
};
use crate::error::{Error, Result};
use crate::nn::{self, TrainedModel};
use crate::report::{emit_report, write_json, Manifest};
use crate::seeding;
use crate::selection::{
    complement, eliminate_lowest, kmeans_1d, lasso_select, pearson_top_n, ClusterResult,
    FeatureSubset,
};
use crate::tuning::{cross_validate, tune, CvReport, HyperPoint, ObjectiveMode, TuningRun};

/// Dataset after cleaning and scaling, with the split and scaler that
/// produced it. All downstream stages consume the scaled view.
pub struct PreparedData {
    pub scaled: Dataset<f64>,
    pub scaler: StandardScaler<f64>,
    pub rows: SplitRows,
    pub truth: Option<GroundTruth<f64>>,
}

/// One evaluated feature subset: its provenance, tuned point and CV result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub subset: FeatureSubset,
    pub tuned_point: HyperPoint,
    pub cv: CvReport,
}

impl ReportRow {
    pub fn n_features(&self) -> usize {
        self.subset.len()
    }
}

/// Per-k clustering of the importance scores, kept for tables and figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterArtifact {
    pub k: usize,
    pub result: ClusterResult<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportKind {
    Pipeline,
    Validation,
}

/// Everything a pipeline or validation run produced; serialized as
/// `report.json` so tables and figures can be re-emitted later.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: ReportKind,
    /// For a pipeline run, row 0 is the full feature set and the remaining
    /// rows are the deduplicated elimination subsets.
    pub rows: Vec<ReportRow>,
    /// Index of the best row, excluding the full set for pipeline runs.
    pub best_index: usize,
    pub importance: Option<GlobalImportance<f64>>,
    pub clusters: Vec<ClusterArtifact>,
    /// k values whose elimination was skipped, with the reason.
    pub skipped: Vec<(usize, String)>,
    /// Generating coefficients when the data is synthetic.
    pub ground_truth: Option<Vec<f64>>,
    pub column_names: Vec<String>,
    pub n_folds: usize,
    pub seed: u64,
    /// Every tuning run of the experiment, labelled by the subset it tuned.
    pub tuning: Vec<(String, TuningRun)>,
}

impl ExperimentReport {
    pub fn best(&self) -> &ReportRow {
        &self.rows[self.best_index]
    }
}

/// Load, clean, split and standardize the configured data source. The
/// scaler is fitted on training rows only.
pub fn prepare_data(cfg: &PipelineConfig) -> Result<PreparedData> {
    let (data, truth) = match &cfg.source {
        DataSource::Dummy(spec) => {
            let mut spec = spec.clone();
            spec.seed = seeding::derive(cfg.seed, &[seeding::STAGE_DATA]);
            let (data, truth) = generate_dummy::<f64>(&spec)?;
            (data, Some(truth))
        }
        DataSource::Csv {
            path,
            target_column,
        } => (read_csv::<f64>(path, target_column)?, None),
    };
    let data = clean(&data, &cfg.clean_rules)?;
    let plan = SplitPlan {
        seed: seeding::derive(cfg.seed, &[seeding::STAGE_SPLIT]),
        ..cfg.split.clone()
    };
    let rows = split(&data, &plan)?;
    let scaler = fit_scaler(&data, &rows.train, cfg.scale_target)?;
    let scaled = scaler.transform(&data)?;
    Ok(PreparedData {
        scaled,
        scaler,
        rows,
        truth,
    })
}

/// Tune a subset and report its k-fold CV. With the CV objective the best
/// observation already carries the fold MSEs; with the holdout objective
/// the best point is cross-validated separately.
fn evaluate_subset(
    data: &Dataset<f64>,
    subset: FeatureSubset,
    label: String,
    cfg: &PipelineConfig,
    folds: &[Vec<usize>],
    tune_seed: u64,
    cv_seed: u64,
) -> Result<(ReportRow, TuningRun)> {
    let run = tune(
        data,
        &subset,
        &cfg.space,
        cfg.budget,
        tune_seed,
        folds,
        cfg.objective,
    )?;
    let tuned_point = run.best().point.clone();
    let cv = match cfg.objective {
        ObjectiveMode::CrossValidation => run.best().report.clone(),
        ObjectiveMode::Holdout => cross_validate(data, &subset, &tuned_point, folds, cv_seed)?,
    };
    Ok((
        ReportRow {
            label,
            subset,
            tuned_point,
            cv,
        },
        run,
    ))
}

fn full_feature_subset(n_cols: usize) -> Result<FeatureSubset> {
    FeatureSubset::new((0..n_cols).collect(), vec!["full".into()])
}

/// Train the attribution model: the tuned point fitted once on all
/// training rows.
fn train_final_model(
    data: &Dataset<f64>,
    train_rows: &[usize],
    point: &HyperPoint,
    seed: u64,
) -> Result<TrainedModel<f64>> {
    let arch = point.architecture(data.n_cols());
    let model = nn::build::<f64>(&arch, seed)?;
    nn::train(&model, data, train_rows, &point.train_config(seed))
}

/// How far a pipeline invocation runs; the CLI's `tune`, `attribute` and
/// `select` subcommands stop after the corresponding stage, leaving the
/// stage artifacts on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Data,
    Tune,
    Attribute,
    Select,
    Report,
}

/// Run the whole experiment. Stage artifacts are written into
/// `<out>/artifacts/` as each stage completes, so a failure leaves the
/// finished stages inspectable; the final tables, figures and manifest are
/// emitted by [`emit_report`].
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<(ExperimentReport, Manifest)> {
    run_stages(cfg, Stage::Report).map(|r| r.expect("full run yields a report"))
}

/// Run the pipeline up to and including `last`; returns the report only
/// when the run goes all the way through.
pub fn run_stages(
    cfg: &PipelineConfig,
    last: Stage,
) -> Result<Option<(ExperimentReport, Manifest)>> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let artifacts = cfg.out_dir.join("artifacts");
    std::fs::create_dir_all(&artifacts).map_err(|e| Error::from(e).in_stage("config"))?;
    let seed = cfg.seed;

    // stage 1: data
    let prep = prepare_data(cfg).map_err(|e| e.in_stage("data"))?;
    write_json(&artifacts.join("split.json"), &prep.rows).map_err(|e| e.in_stage("data"))?;
    write_json(&artifacts.join("scaler.json"), &prep.scaler).map_err(|e| e.in_stage("data"))?;
    if let Some(truth) = &prep.truth {
        write_json(&artifacts.join("ground_truth.json"), truth)
            .map_err(|e| e.in_stage("data"))?;
    }
    let data = &prep.scaled;
    let folds = &prep.rows.folds;
    if last == Stage::Data {
        return Ok(None);
    }

    // stage 2: tune on all features
    let (full_row, full_run) = evaluate_subset(
        data,
        full_feature_subset(data.n_cols()).map_err(|e| e.in_stage("tune"))?,
        "full".into(),
        cfg,
        folds,
        seeding::derive(seed, &[seeding::STAGE_TUNE, 0]),
        seeding::derive(seed, &[seeding::STAGE_CV, 0]),
    )
    .map_err(|e| e.in_stage("tune"))?;
    write_json(&artifacts.join("tuning_full.json"), &full_run)
        .map_err(|e| e.in_stage("tune"))?;
    let mut tuning_runs = vec![("full".to_string(), full_run)];
    if last == Stage::Tune {
        return Ok(None);
    }

    // stage 3: attribution on the tuned model
    let model = train_final_model(
        data,
        &prep.rows.train,
        &full_row.tuned_point,
        seeding::derive(seed, &[seeding::STAGE_TRAIN, 0]),
    )
    .map_err(|e| e.in_stage("attribution"))?;
    let attr_rows: Vec<usize> = match cfg.attribution_rows {
        AttributionRows::Train => prep.rows.train.clone(),
        AttributionRows::All => (0..data.n_rows()).collect(),
    };
    let ig_cfg = IgConfig::<f64> {
        baseline: vec![0.0; data.n_cols()],
        n_steps: cfg.ig_steps,
        quadrature: cfg.ig_quadrature,
    };
    let attributions = attribute_dataset(&model, data, &attr_rows, &ig_cfg)
        .map_err(|e| e.in_stage("attribution"))?;
    let importance =
        aggregate(&attributions, cfg.aggregation).map_err(|e| e.in_stage("attribution"))?;
    write_json(&artifacts.join("importance.json"), &importance)
        .map_err(|e| e.in_stage("attribution"))?;
    if last == Stage::Attribute {
        return Ok(None);
    }

    // stage 4: cluster elimination across k
    let outcome =
        eliminate_lowest(&importance, &cfg.k_values).map_err(|e| e.in_stage("selection"))?;
    let mut clusters = Vec::new();
    for &k in &cfg.k_values {
        match kmeans_1d(&importance, k) {
            Ok(result) => clusters.push(ClusterArtifact { k, result }),
            Err(Error::Clustering(_)) => {} // fewer distinct scores than k
            Err(e) => return Err(e.in_stage("selection")),
        }
    }
    write_json(&artifacts.join("subsets.json"), &outcome)
        .map_err(|e| e.in_stage("selection"))?;
    if last == Stage::Select {
        return Ok(None);
    }

    // stage 5: re-tune each distinct subset
    let mut rows = vec![full_row];
    for (i, subset) in outcome.subsets.iter().enumerate() {
        let label = subset.provenance.join(",");
        let counter = 1 + i as u64;
        let (row, run) = evaluate_subset(
            data,
            subset.clone(),
            label.clone(),
            cfg,
            folds,
            seeding::derive(seed, &[seeding::STAGE_TUNE, counter]),
            seeding::derive(seed, &[seeding::STAGE_CV, counter]),
        )
        .map_err(|e| e.in_stage("retune"))?;
        rows.push(row);
        tuning_runs.push((label, run));
        write_json(&artifacts.join("evaluations.json"), &rows)
            .map_err(|e| e.in_stage("retune"))?;
    }

    // best subset row, excluding the full set unless nothing else exists
    let best_index = rows
        .iter()
        .enumerate()
        .skip(if rows.len() > 1 { 1 } else { 0 })
        .min_by(|a, b| a.1.cv.mean_mse.total_cmp(&b.1.cv.mean_mse))
        .map(|(i, _)| i)
        .unwrap();

    let report = ExperimentReport {
        kind: ReportKind::Pipeline,
        rows,
        best_index,
        importance: Some(importance),
        clusters,
        skipped: outcome.skipped,
        ground_truth: prep.truth.map(|t| t.coefficients),
        column_names: data.column_names.clone(),
        n_folds: cfg.split.n_folds,
        seed,
        tuning: tuning_runs,
    };

    // stage 6: tables, figures, manifest
    let manifest = emit_report(&report, &cfg.out_dir).map_err(|e| e.in_stage("report"))?;
    Ok(Some((report, manifest)))
}

/// KernelSHAP global scores on the tuned full-feature model: mean absolute
/// sampled-coalition Shapley value over a fixed slice of training rows.
fn shap_importance(
    model: &TrainedModel<f64>,
    data: &Dataset<f64>,
    train_rows: &[usize],
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<GlobalImportance<f64>> {
    let n_rows = cfg.shap.rows.min(train_rows.len());
    let n_bg = cfg.shap.background.min(train_rows.len());
    let background: Vec<Vec<f64>> = train_rows[..n_bg]
        .iter()
        .map(|&r| data.row(r).to_vec())
        .collect();
    let budget = CoalitionBudget::Sampled(cfg.shap.coalitions.max(data.n_cols() + 2));
    let mut scores = vec![0.0f64; data.n_cols()];
    for (i, &r) in train_rows[..n_rows].iter().enumerate() {
        let shap = kernel_shap(
            model,
            data.row(r),
            &background,
            budget,
            seeding::derive(seed, &[i as u64]),
        )?;
        for (acc, v) in scores.iter_mut().zip(&shap.values) {
            *acc += v.abs();
        }
    }
    for s in &mut scores {
        *s /= n_rows as f64;
    }
    Ok(GlobalImportance {
        scores,
        aggregation: Aggregation::MeanAbsolute,
    })
}

/// Compare the best subset against the configured selectors, each given
/// n = |best| features, re-tuned and cross-validated like the pipeline
/// rows. Emits into `<out>/validation/`.
pub fn run_validation(
    cfg: &PipelineConfig,
    best: &FeatureSubset,
) -> Result<(ExperimentReport, Manifest)> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    if cfg.selectors.is_empty() {
        return Err(Error::Config("no selectors configured".into()).in_stage("config"));
    }
    let out = cfg.out_dir.join("validation");
    std::fs::create_dir_all(out.join("artifacts"))
        .map_err(|e| Error::from(e).in_stage("config"))?;
    let seed = cfg.seed;

    let prep = prepare_data(cfg).map_err(|e| e.in_stage("data"))?;
    let data = &prep.scaled;
    let n = best.len();
    if n == 0 || n >= data.n_cols() {
        return Err(Error::spec(format!(
            "best subset size {n} must be within 1..{}",
            data.n_cols()
        ))
        .in_stage("config"));
    }

    // the SHAP selector attributes the tuned full-feature model; rebuilding
    // it here repeats the pipeline's deterministic stage-2/3 computation
    let shap_scores = if cfg.selectors.contains(&Selector::Shap) {
        let (full_row, _) = evaluate_subset(
            data,
            full_feature_subset(data.n_cols()).map_err(|e| e.in_stage("selection"))?,
            "full".into(),
            cfg,
            &prep.rows.folds,
            seeding::derive(seed, &[seeding::STAGE_TUNE, 0]),
            seeding::derive(seed, &[seeding::STAGE_CV, 0]),
        )
        .map_err(|e| e.in_stage("selection"))?;
        let model = train_final_model(
            data,
            &prep.rows.train,
            &full_row.tuned_point,
            seeding::derive(seed, &[seeding::STAGE_TRAIN, 0]),
        )
        .map_err(|e| e.in_stage("selection"))?;
        let scores = shap_importance(
            &model,
            data,
            &prep.rows.train,
            cfg,
            seeding::derive(seed, &[seeding::STAGE_VALIDATION, 0]),
        )
        .map_err(|e| e.in_stage("selection"))?;
        write_json(&out.join("artifacts").join("shap_importance.json"), &scores)
            .map_err(|e| e.in_stage("selection"))?;
        Some(scores)
    } else {
        None
    };

    let mut rows = Vec::new();
    let mut tuning_runs = Vec::new();
    for (i, &selector) in cfg.selectors.iter().enumerate() {
        let subset = match selector {
            Selector::CrossCheck => complement(best, data.n_cols()),
            Selector::Pearson => pearson_top_n(data, &prep.rows.train, n),
            Selector::Lasso => lasso_select(data, &prep.rows.train, n).map(|r| r.subset),
            Selector::Shap => {
                let scores = shap_scores.as_ref().expect("computed above");
                crate::selection::top_n_by_score(scores, n).and_then(|s| {
                    FeatureSubset::new(s.indices, vec!["shap".into()])
                })
            }
        }
        .map_err(|e| e.in_stage("selection"))?;
        let counter = 1 + i as u64;
        let (row, run) = evaluate_subset(
            data,
            subset,
            selector.label().to_string(),
            cfg,
            &prep.rows.folds,
            seeding::derive(seed, &[seeding::STAGE_VALIDATION, counter, 0]),
            seeding::derive(seed, &[seeding::STAGE_VALIDATION, counter, 1]),
        )
        .map_err(|e| e.in_stage("retune"))?;
        rows.push(row);
        tuning_runs.push((selector.label().to_string(), run));
        write_json(&out.join("artifacts").join("evaluations.json"), &rows)
            .map_err(|e| e.in_stage("retune"))?;
    }

    let best_index = rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.cv.mean_mse.total_cmp(&b.1.cv.mean_mse))
        .map(|(i, _)| i)
        .unwrap();
    let report = ExperimentReport {
        kind: ReportKind::Validation,
        rows,
        best_index,
        importance: None,
        clusters: Vec::new(),
        skipped: Vec::new(),
        ground_truth: prep.truth.map(|t| t.coefficients),
        column_names: data.column_names.clone(),
        n_folds: cfg.split.n_folds,
        seed,
        tuning: tuning_runs,
    };
    let manifest = emit_report(&report, &out).map_err(|e| e.in_stage("report"))?;
    Ok((report, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Profile;
    use crate::data::DummySpec;
    use std::path::Path;

    /// A pipeline config small enough for unit tests: 8 features, a few
    /// hundred rows, narrow network, tiny tuning budget.
    fn tiny_config(out: &Path) -> PipelineConfig {
        let mut cfg = PipelineConfig::preset(Profile::Desk);
        cfg.source = DataSource::Dummy(DummySpec {
            n_features: 8,
            n_positive: 3,
            n_negative: 2,
            n_zero: 3,
            n_samples: 300,
            ..DummySpec::default()
        });
        cfg.space.l1_exp = (4, 4);
        cfg.space.epochs_exp = (5, 6);
        cfg.space.dropout_prob = (0.0, 0.05);
        cfg.budget = (2, 1);
        cfg.k_values = vec![2, 3];
        cfg.out_dir = out.to_path_buf();
        cfg.seed = 5;
        cfg
    }

    #[test]
    fn pipeline_report_accounting() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let (report, manifest) = run_pipeline(&cfg).unwrap();

        // one row for the full set, one per deduplicated subset
        assert_eq!(report.rows[0].label, "full");
        assert_eq!(report.rows[0].subset.len(), 8);
        assert!(report.rows.len() >= 2);
        assert!(report.rows.len() <= 1 + cfg.k_values.len());
        let mut seen = std::collections::BTreeSet::new();
        for row in &report.rows {
            assert_eq!(row.n_features(), row.subset.indices.len());
            assert_eq!(row.cv.fold_mses.len(), cfg.split.n_folds);
            assert!(seen.insert(row.subset.indices.clone()), "duplicate subset row");
        }
        assert!(report.best_index > 0);
        assert!(!manifest.entries.is_empty());
        assert!(dir.path().join("tables").join("results.csv").exists());
        assert!(dir.path().join("report.json").exists());
    }

    #[test]
    fn pipeline_is_deterministic() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let (report_a, manifest_a) = run_pipeline(&tiny_config(dir_a.path())).unwrap();
        let (report_b, manifest_b) = run_pipeline(&tiny_config(dir_b.path())).unwrap();
        assert_eq!(report_a, report_b);
        assert_eq!(manifest_a.entries, manifest_b.entries);
        let table_a = std::fs::read(dir_a.path().join("tables").join("results.csv")).unwrap();
        let table_b = std::fs::read(dir_b.path().join("tables").join("results.csv")).unwrap();
        assert_eq!(table_a, table_b);
    }

    #[test]
    fn empty_k_values_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.k_values = Vec::new();
        match run_pipeline(&cfg) {
            Err(Error::Stage { stage, .. }) => assert_eq!(stage, "config"),
            other => panic!("expected config stage error, got {other:?}"),
        }
    }

    #[test]
    fn validation_cross_check_present() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.selectors = vec![Selector::CrossCheck, Selector::Pearson];
        let best = FeatureSubset::new(vec![0, 1, 2, 3, 4], vec!["k=2".into()]).unwrap();
        let (report, _) = run_validation(&cfg, &best).unwrap();
        assert_eq!(report.rows.len(), 2);
        let cross = &report.rows[0];
        assert_eq!(cross.label, "cross-check");
        assert_eq!(cross.subset.provenance, vec!["cross-check".to_string()]);
        // complement of {0..4} in 8 features
        assert_eq!(cross.subset.indices, vec![5, 6, 7]);
        // n passed to the comparison selectors equals |best|
        assert_eq!(report.rows[1].subset.len(), best.len());
        assert!(dir
            .path()
            .join("validation")
            .join("tables")
            .join("results.csv")
            .exists());
    }

    #[test]
    fn prepare_data_standardizes_on_train_rows() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let prep = prepare_data(&cfg).unwrap();
        for c in 0..prep.scaled.n_cols() {
            let values: Vec<f64> = prep
                .rows
                .train
                .iter()
                .map(|&r| prep.scaled.value(r, c))
                .collect();
            let mean: f64 = values.iter().sum::<f64>() / values.len() as f64;
            let var: f64 =
                values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / values.len() as f64;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-10);
        }
    }
}
