//! Flat key=value configuration for the experiment pipeline.
//!
//! The file format is one `key = value` pair per line, `#` starts a
//! comment, and unknown or duplicate keys are rejected. A config file
//! overrides a profile preset ([`PipelineConfig::preset`]), so a minimal
//! file only names the fields that differ from the chosen profile.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attribution::Aggregation;
use crate::data::{CleanRule, DummySpec, SplitPlan};
use crate::error::{Error, Result};
use crate::quadrature::Quadrature;
use crate::tuning::{ObjectiveMode, SearchSpace};

/// Built-in scale presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    /// Small dataset and tuning budget; finishes in minutes.
    Desk,
    /// Full-size dataset and budget; hours on a workstation.
    Full,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => Err(Error::Config(format!(
                "unknown profile '{other}' (expected desk or full)"
            ))),
        }
    }
}

/// Where the feature matrix comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Dummy(DummySpec),
    Csv { path: PathBuf, target_column: String },
}

/// Which rows feed the attribution stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttributionRows {
    /// Training rows only (default; keeps test rows out of selection).
    Train,
    /// Every row of the dataset.
    All,
}

/// Comparison selectors available to the validation stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Selector {
    CrossCheck,
    Pearson,
    Lasso,
    Shap,
}

impl Selector {
    pub fn label(self) -> &'static str {
        match self {
            Selector::CrossCheck => "cross-check",
            Selector::Pearson => "pearson",
            Selector::Lasso => "lasso",
            Selector::Shap => "shap",
        }
    }
}

impl std::str::FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross-check" => Ok(Selector::CrossCheck),
            "pearson" => Ok(Selector::Pearson),
            "lasso" => Ok(Selector::Lasso),
            "shap" => Ok(Selector::Shap),
            other => Err(Error::Config(format!("unknown selector '{other}'"))),
        }
    }
}

/// Sampling sizes for the KernelSHAP comparison selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapSettings {
    /// Training rows to attribute.
    pub rows: usize,
    /// Background rows masked features are drawn from.
    pub background: usize,
    /// Sampled coalitions per attributed row.
    pub coalitions: usize,
}

/// Everything the pipeline needs, resolvable from a profile preset plus an
/// optional config file and CLI overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub source: DataSource,
    pub clean_rules: Vec<CleanRule>,
    pub split: SplitPlan,
    pub ig_steps: usize,
    pub ig_quadrature: Quadrature,
    pub attribution_rows: AttributionRows,
    pub aggregation: Aggregation,
    /// Cluster counts for the elimination sweep.
    pub k_values: Vec<usize>,
    /// (initial design size, infill evaluations) per tuning run.
    pub budget: (usize, usize),
    pub objective: ObjectiveMode,
    pub space: SearchSpace,
    pub selectors: Vec<Selector>,
    pub shap: ShapSettings,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Standardize the target alongside the features.
    pub scale_target: bool,
}

impl PipelineConfig {
    pub fn preset(profile: Profile) -> Self {
        let (n_samples, budget, objective, space) = match profile {
            // The desk preset trims the sample count, the tuning budget and
            // the width/epoch ceilings so a full pipeline finishes in
            // minutes on one core.
            Profile::Desk => (
                2_000,
                (5, 10),
                ObjectiveMode::Holdout,
                SearchSpace {
                    l1_exp: (5, 7),
                    epochs_exp: (5, 8),
                    ..SearchSpace::default()
                },
            ),
            Profile::Full => (
                27_857,
                (10, 30),
                ObjectiveMode::CrossValidation,
                SearchSpace::default(),
            ),
        };
        PipelineConfig {
            source: DataSource::Dummy(DummySpec {
                n_samples,
                ..DummySpec::default()
            }),
            clean_rules: Vec::new(),
            split: SplitPlan::default(),
            ig_steps: 50,
            ig_quadrature: Quadrature::GaussLegendre,
            attribution_rows: AttributionRows::Train,
            aggregation: Aggregation::MeanAbsolute,
            k_values: (2..=10).collect(),
            budget,
            objective,
            space,
            selectors: vec![
                Selector::CrossCheck,
                Selector::Pearson,
                Selector::Lasso,
                Selector::Shap,
            ],
            shap: ShapSettings {
                rows: 32,
                background: 16,
                coalitions: 512,
            },
            out_dir: PathBuf::from("out"),
            seed: 0,
            scale_target: false,
        }
    }

    /// Apply a config file on top of `self` (typically a profile preset).
    pub fn apply_file(self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        self.apply_str(&text)
    }

    /// Apply config text on top of `self`; every known key overrides the
    /// corresponding field, unknown keys are errors.
    pub fn apply_str(mut self, text: &str) -> Result<Self> {
        let mut map = parse_kv(text)?;

        if let Some(v) = map.remove("data.source") {
            self.source = match v.as_str() {
                "dummy" => match self.source {
                    DataSource::Dummy(spec) => DataSource::Dummy(spec),
                    DataSource::Csv { .. } => DataSource::Dummy(DummySpec::default()),
                },
                "csv" => DataSource::Csv {
                    path: PathBuf::new(),
                    target_column: "target".into(),
                },
                other => {
                    return Err(Error::Config(format!(
                        "data.source must be dummy or csv, got '{other}'"
                    )))
                }
            };
        }
        match &mut self.source {
            DataSource::Dummy(spec) => {
                if let Some(v) = map.remove("dummy.features") {
                    spec.n_features = parse_num(&v, "dummy.features")?;
                }
                if let Some(v) = map.remove("dummy.positive") {
                    spec.n_positive = parse_num(&v, "dummy.positive")?;
                }
                if let Some(v) = map.remove("dummy.negative") {
                    spec.n_negative = parse_num(&v, "dummy.negative")?;
                }
                if let Some(v) = map.remove("dummy.zero") {
                    spec.n_zero = parse_num(&v, "dummy.zero")?;
                }
                if let Some(v) = map.remove("dummy.samples") {
                    spec.n_samples = parse_num(&v, "dummy.samples")?;
                }
                if let Some(v) = map.remove("dummy.positive_range") {
                    spec.positive_range = parse_f64_range(&v, "dummy.positive_range")?;
                }
                if let Some(v) = map.remove("dummy.negative_range") {
                    spec.negative_range = parse_f64_range(&v, "dummy.negative_range")?;
                }
            }
            DataSource::Csv {
                path,
                target_column,
            } => {
                if let Some(v) = map.remove("data.path") {
                    *path = PathBuf::from(v);
                }
                if let Some(v) = map.remove("data.target") {
                    *target_column = v;
                }
            }
        }
        // keys for the other source kind are config errors, not unknowns
        for key in ["data.path", "data.target"] {
            if map.contains_key(key) {
                return Err(Error::Config(format!("{key} requires data.source = csv")));
            }
        }
        for key in map.keys() {
            if key.starts_with("dummy.") {
                return Err(Error::Config(format!(
                    "{key} requires data.source = dummy"
                )));
            }
        }

        if let Some(v) = map.remove("data.clean") {
            self.clean_rules = v
                .split(';')
                .filter(|s| !s.trim().is_empty())
                .map(CleanRule::parse)
                .collect::<Result<_>>()?;
        }
        if let Some(v) = map.remove("split.train_fraction") {
            self.split.train_fraction = parse_num(&v, "split.train_fraction")?;
        }
        if let Some(v) = map.remove("split.folds") {
            self.split.n_folds = parse_num(&v, "split.folds")?;
        }
        if let Some(v) = map.remove("ig.steps") {
            self.ig_steps = parse_num(&v, "ig.steps")?;
        }
        if let Some(v) = map.remove("ig.quadrature") {
            self.ig_quadrature = match v.as_str() {
                "gauss-legendre" => Quadrature::GaussLegendre,
                "riemann" => Quadrature::Riemann,
                other => {
                    return Err(Error::Config(format!(
                        "ig.quadrature must be gauss-legendre or riemann, got '{other}'"
                    )))
                }
            };
        }
        if let Some(v) = map.remove("ig.rows") {
            self.attribution_rows = match v.as_str() {
                "train" => AttributionRows::Train,
                "all" => AttributionRows::All,
                other => {
                    return Err(Error::Config(format!(
                        "ig.rows must be train or all, got '{other}'"
                    )))
                }
            };
        }
        if let Some(v) = map.remove("aggregation") {
            self.aggregation = match v.as_str() {
                "mean-absolute" => Aggregation::MeanAbsolute,
                "mean-signed" => Aggregation::MeanSigned,
                other => {
                    return Err(Error::Config(format!(
                        "aggregation must be mean-absolute or mean-signed, got '{other}'"
                    )))
                }
            };
        }
        if let Some(v) = map.remove("k_values") {
            self.k_values = parse_usize_list(&v, "k_values")?;
        }
        if let Some(v) = map.remove("tune.initial") {
            self.budget.0 = parse_num(&v, "tune.initial")?;
        }
        if let Some(v) = map.remove("tune.infill") {
            self.budget.1 = parse_num(&v, "tune.infill")?;
        }
        if let Some(v) = map.remove("tune.objective") {
            self.objective = match v.as_str() {
                "cv" => ObjectiveMode::CrossValidation,
                "holdout" => ObjectiveMode::Holdout,
                other => {
                    return Err(Error::Config(format!(
                        "tune.objective must be cv or holdout, got '{other}'"
                    )))
                }
            };
        }
        if let Some(v) = map.remove("space.l1_exp") {
            self.space.l1_exp = parse_u32_range(&v, "space.l1_exp")?;
        }
        if let Some(v) = map.remove("space.epochs_exp") {
            self.space.epochs_exp = parse_u32_range(&v, "space.epochs_exp")?;
        }
        if let Some(v) = map.remove("space.batch_exp") {
            self.space.batch_exp = parse_u32_range(&v, "space.batch_exp")?;
        }
        if let Some(v) = map.remove("space.patience_exp") {
            self.space.patience_exp = parse_u32_range(&v, "space.patience_exp")?;
        }
        if let Some(v) = map.remove("space.dropout") {
            self.space.dropout_prob = parse_f64_range(&v, "space.dropout")?;
        }
        if let Some(v) = map.remove("space.lr_mult") {
            self.space.lr_mult = parse_f64_range(&v, "space.lr_mult")?;
        }
        if let Some(v) = map.remove("selectors") {
            self.selectors = v
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<Result<_>>()?;
        }
        if let Some(v) = map.remove("shap.rows") {
            self.shap.rows = parse_num(&v, "shap.rows")?;
        }
        if let Some(v) = map.remove("shap.background") {
            self.shap.background = parse_num(&v, "shap.background")?;
        }
        if let Some(v) = map.remove("shap.coalitions") {
            self.shap.coalitions = parse_num(&v, "shap.coalitions")?;
        }
        if let Some(v) = map.remove("out") {
            self.out_dir = PathBuf::from(v);
        }
        if let Some(v) = map.remove("seed") {
            self.seed = parse_num(&v, "seed")?;
        }
        if let Some(v) = map.remove("scale_target") {
            self.scale_target = match v.as_str() {
                "true" => true,
                "false" => false,
                other => {
                    return Err(Error::Config(format!(
                        "scale_target must be true or false, got '{other}'"
                    )))
                }
            };
        }

        if let Some(key) = map.keys().next() {
            return Err(Error::Config(format!("unknown config key '{key}'")));
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.source {
            DataSource::Dummy(spec) => spec.validate()?,
            DataSource::Csv { path, .. } => {
                if path.as_os_str().is_empty() {
                    return Err(Error::Config("data.path is required for csv input".into()));
                }
            }
        }
        self.split.validate()?;
        self.space.validate()?;
        if self.k_values.is_empty() {
            return Err(Error::Config("k_values must be nonempty".into()));
        }
        if let Some(&k) = self.k_values.iter().find(|&&k| k < 2) {
            return Err(Error::Config(format!("k_values entries must be >= 2, got {k}")));
        }
        if self.budget.0 < 2 {
            return Err(Error::Config("tune.initial must be at least 2".into()));
        }
        if self.ig_steps == 0 {
            return Err(Error::Config("ig.steps must be at least 1".into()));
        }
        if self.shap.rows == 0 || self.shap.background == 0 {
            return Err(Error::Config("shap.rows and shap.background must be positive".into()));
        }
        Ok(())
    }
}

/// Parse `key = value` lines into a map; comments start with `#`.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!("duplicate key '{key}'")));
        }
    }
    Ok(map)
}

fn parse_num<T: std::str::FromStr>(value: &str, key: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

/// `lo..hi` with inclusive endpoints.
fn parse_f64_range(value: &str, key: &str) -> Result<(f64, f64)> {
    let (lo, hi) = value
        .split_once("..")
        .ok_or_else(|| Error::Config(format!("{key}: expected 'lo..hi', got '{value}'")))?;
    Ok((parse_num(lo.trim(), key)?, parse_num(hi.trim(), key)?))
}

fn parse_u32_range(value: &str, key: &str) -> Result<(u32, u32)> {
    let (lo, hi) = value
        .split_once("..")
        .ok_or_else(|| Error::Config(format!("{key}: expected 'lo..hi', got '{value}'")))?;
    Ok((parse_num(lo.trim(), key)?, parse_num(hi.trim(), key)?))
}

/// Either an inclusive range `2..10` or a comma list `2,3,5`.
fn parse_usize_list(value: &str, key: &str) -> Result<Vec<usize>> {
    if let Some((lo, hi)) = value.split_once("..") {
        let lo: usize = parse_num(lo.trim(), key)?;
        let hi: usize = parse_num(hi.trim(), key)?;
        if hi < lo {
            return Err(Error::Config(format!("{key}: empty range '{value}'")));
        }
        return Ok((lo..=hi).collect());
    }
    value
        .split(',')
        .map(|s| parse_num(s.trim(), key))
        .collect()
}
