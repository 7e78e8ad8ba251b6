//! Synthetic data generation, CSV ingestion and preprocessing.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{self, Real};
use crate::seeding;

/// Immutable feature matrix with target vector and column metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<S> {
    features: Vec<S>,
    n_rows: usize,
    n_cols: usize,
    target: Vec<S>,
    pub column_names: Vec<String>,
    pub categorical_columns: BTreeSet<usize>,
}

impl<S: Real> Dataset<S> {
    pub fn new(
        features: Vec<S>,
        n_rows: usize,
        n_cols: usize,
        target: Vec<S>,
        column_names: Vec<String>,
        categorical_columns: BTreeSet<usize>,
    ) -> Result<Self> {
        if features.len() != n_rows * n_cols {
            return Err(Error::Shape {
                expected: n_rows * n_cols,
                got: features.len(),
                context: "feature buffer".into(),
            });
        }
        if target.len() != n_rows {
            return Err(Error::Shape {
                expected: n_rows,
                got: target.len(),
                context: "target length".into(),
            });
        }
        if column_names.len() != n_cols {
            return Err(Error::Shape {
                expected: n_cols,
                got: column_names.len(),
                context: "column names".into(),
            });
        }
        Ok(Dataset {
            features,
            n_rows,
            n_cols,
            target,
            column_names,
            categorical_columns,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.features[r * self.n_cols..(r + 1) * self.n_cols]
    }

    pub fn value(&self, r: usize, c: usize) -> S {
        self.features[r * self.n_cols + c]
    }

    pub fn target(&self) -> &[S] {
        &self.target
    }

    pub fn column(&self, c: usize) -> Vec<S> {
        (0..self.n_rows).map(|r| self.value(r, c)).collect()
    }

    /// Feature values of one row restricted to a sorted index subset.
    pub fn row_subset(&self, r: usize, cols: &[usize]) -> Vec<S> {
        cols.iter().map(|&c| self.value(r, c)).collect()
    }

    /// True if no feature or target entry is NaN or infinite.
    pub fn all_finite(&self) -> bool {
        self.features.iter().all(|v| v.is_finite()) && self.target.iter().all(|v| v.is_finite())
    }

    /// New dataset keeping only the given feature columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&c) = cols.iter().find(|&&c| c >= self.n_cols) {
            return Err(Error::spec(format!("select_columns: column {c} out of range")));
        }
        let mut features = Vec::with_capacity(self.n_rows * cols.len());
        for r in 0..self.n_rows {
            for &c in cols {
                features.push(self.value(r, c));
            }
        }
        let categorical_columns = cols
            .iter()
            .enumerate()
            .filter(|(_, &c)| self.categorical_columns.contains(&c))
            .map(|(i, _)| i)
            .collect();
        Dataset::new(
            features,
            self.n_rows,
            cols.len(),
            self.target.clone(),
            cols.iter().map(|&c| self.column_names[c].clone()).collect(),
            categorical_columns,
        )
    }

    /// New dataset keeping only the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut features = Vec::with_capacity(rows.len() * self.n_cols);
        let mut target = Vec::with_capacity(rows.len());
        for &r in rows {
            features.extend_from_slice(self.row(r));
            target.push(self.target[r]);
        }
        Dataset {
            features,
            n_rows: rows.len(),
            n_cols: self.n_cols,
            target,
            column_names: self.column_names.clone(),
            categorical_columns: self.categorical_columns.clone(),
        }
    }
}

/// Specification of the synthetic linear-model dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DummySpec {
    pub n_features: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    pub n_zero: usize,
    pub positive_range: (f64, f64),
    pub negative_range: (f64, f64),
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for DummySpec {
    fn default() -> Self {
        DummySpec {
            n_features: 86,
            n_positive: 29,
            n_negative: 29,
            n_zero: 28,
            positive_range: (0.1, 1.0),
            negative_range: (-1.0, -0.1),
            n_samples: 27_857,
            seed: 0,
        }
    }
}

impl DummySpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_positive + self.n_negative + self.n_zero != self.n_features {
            return Err(Error::spec(format!(
                "coefficient counts {}+{}+{} do not sum to n_features {}",
                self.n_positive, self.n_negative, self.n_zero, self.n_features
            )));
        }
        if self.positive_range.0 <= 0.0 || self.positive_range.1 <= self.positive_range.0 {
            return Err(Error::spec("positive_range must be an interval above 0"));
        }
        if self.negative_range.1 >= 0.0 || self.negative_range.1 <= self.negative_range.0 {
            return Err(Error::spec("negative_range must be an interval below 0"));
        }
        if self.n_samples == 0 || self.n_features == 0 {
            return Err(Error::spec("n_samples and n_features must be positive"));
        }
        Ok(())
    }
}

/// Generating coefficients of the synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth<S> {
    pub coefficients: Vec<S>,
    pub zero_indices: BTreeSet<usize>,
}

/// Generate the synthetic dataset: uniform coefficients, uniform [0,1)
/// features, target = X·w. Deterministic per seed.
pub fn generate_dummy<S: Real>(spec: &DummySpec) -> Result<(Dataset<S>, GroundTruth<S>)> {
    spec.validate()?;
    let mut rng = seeding::rng(spec.seed);

    let mut coefficients = Vec::with_capacity(spec.n_features);
    for _ in 0..spec.n_positive {
        coefficients.push(rng.gen_range(spec.positive_range.0..spec.positive_range.1));
    }
    for _ in 0..spec.n_negative {
        coefficients.push(rng.gen_range(spec.negative_range.0..spec.negative_range.1));
    }
    coefficients.resize(spec.n_features, 0.0);
    let zero_indices: BTreeSet<usize> = (spec.n_positive + spec.n_negative..spec.n_features).collect();

    let mut features = Vec::with_capacity(spec.n_samples * spec.n_features);
    let mut target = Vec::with_capacity(spec.n_samples);
    for _ in 0..spec.n_samples {
        let mut y = 0.0f64;
        for &w in &coefficients {
            let x: f64 = rng.gen();
            y += w * x;
            features.push(S::of_f64(x));
        }
        target.push(S::of_f64(y));
    }

    let column_names = (0..spec.n_features).map(|i| format!("f{i:03}")).collect();
    let dataset = Dataset::new(
        features,
        spec.n_samples,
        spec.n_features,
        target,
        column_names,
        BTreeSet::new(),
    )?;
    let truth = GroundTruth {
        coefficients: coefficients.into_iter().map(S::of_f64).collect(),
        zero_indices,
    };
    Ok((dataset, truth))
}

/// Per-column standardization statistics fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardScaler<S> {
    pub means: Vec<S>,
    pub stds: Vec<S>,
    pub fitted_on: usize,
    /// Present only when target scaling is enabled.
    pub target_stats: Option<(S, S)>,
}

/// Fit per-column mean and population std over the given rows.
/// A constant column gets std 1 so the transform reduces to a shift.
pub fn fit_scaler<S: Real>(
    data: &Dataset<S>,
    rows: &[usize],
    scale_target: bool,
) -> Result<StandardScaler<S>> {
    if rows.is_empty() {
        return Err(Error::spec("fit_scaler: empty row set"));
    }
    if let Some(&r) = rows.iter().find(|&&r| r >= data.n_rows()) {
        return Err(Error::spec(format!("fit_scaler: row {r} out of range")));
    }
    let mut means = Vec::with_capacity(data.n_cols());
    let mut stds = Vec::with_capacity(data.n_cols());
    for c in 0..data.n_cols() {
        let values: Vec<S> = rows.iter().map(|&r| data.value(r, c)).collect();
        let m = scalar::mean(&values);
        let s = scalar::population_std(&values, m);
        means.push(m);
        stds.push(if s == S::zero() { S::one() } else { s });
    }
    let target_stats = if scale_target {
        let values: Vec<S> = rows.iter().map(|&r| data.target()[r]).collect();
        let m = scalar::mean(&values);
        let s = scalar::population_std(&values, m);
        Some((m, if s == S::zero() { S::one() } else { s }))
    } else {
        None
    };
    Ok(StandardScaler {
        means,
        stds,
        fitted_on: rows.len(),
        target_stats,
    })
}

impl<S: Real> StandardScaler<S> {
    /// Map every entry to (x - mean) / std; the target is standardized
    /// only when the scaler was fitted with target scaling enabled.
    pub fn transform(&self, data: &Dataset<S>) -> Result<Dataset<S>> {
        if data.n_cols() != self.means.len() {
            return Err(Error::Shape {
                expected: self.means.len(),
                got: data.n_cols(),
                context: "scaler transform".into(),
            });
        }
        let n_cols = data.n_cols();
        let features = data
            .features
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - self.means[i % n_cols]) / self.stds[i % n_cols])
            .collect();
        let target = match self.target_stats {
            Some((m, s)) => data.target.iter().map(|&v| (v - m) / s).collect(),
            None => data.target.clone(),
        };
        Dataset::new(
            features,
            data.n_rows(),
            n_cols,
            target,
            data.column_names.clone(),
            data.categorical_columns.clone(),
        )
    }

    pub fn inverse_transform(&self, data: &Dataset<S>) -> Result<Dataset<S>> {
        if data.n_cols() != self.means.len() {
            return Err(Error::Shape {
                expected: self.means.len(),
                got: data.n_cols(),
                context: "scaler inverse transform".into(),
            });
        }
        let n_cols = data.n_cols();
        let features = data
            .features
            .iter()
            .enumerate()
            .map(|(i, &v)| v * self.stds[i % n_cols] + self.means[i % n_cols])
            .collect();
        let target = match self.target_stats {
            Some((m, s)) => data.target.iter().map(|&v| v * s + m).collect(),
            None => data.target.clone(),
        };
        Dataset::new(
            features,
            data.n_rows(),
            n_cols,
            target,
            data.column_names.clone(),
            data.categorical_columns.clone(),
        )
    }
}

/// Deterministic label -> code mapping in lexicographic label order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalEncoder {
    mapping: BTreeMap<String, usize>,
}

impl OrdinalEncoder {
    pub fn fit(labels: &[String]) -> Self {
        let distinct: BTreeSet<&String> = labels.iter().collect();
        let mapping = distinct
            .into_iter()
            .enumerate()
            .map(|(code, label)| (label.clone(), code))
            .collect();
        OrdinalEncoder { mapping }
    }

    pub fn transform(&self, labels: &[String]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.mapping
                    .get(l)
                    .copied()
                    .ok_or_else(|| Error::Encoding(format!("unseen label '{l}'")))
            })
            .collect()
    }

    pub fn n_levels(&self) -> usize {
        self.mapping.len()
    }
}

/// Fit-and-transform a single categorical column.
pub fn ordinal_encode(labels: &[String]) -> Vec<usize> {
    let enc = OrdinalEncoder::fit(labels);
    enc.transform(labels).expect("labels seen during fit")
}

/// Train/test split plan with k-fold partitioning of the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train_fraction: f64,
    pub n_folds: usize,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            train_fraction: 0.7,
            n_folds: 5,
            seed: 0,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::spec("train_fraction must be in (0, 1)"));
        }
        if self.n_folds < 2 {
            return Err(Error::spec("n_folds must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRows {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub folds: Vec<Vec<usize>>,
}

/// Shuffle rows, take round(train_fraction*n) for training, partition the
/// training rows into n_folds near-equal folds. Deterministic per seed.
pub fn split<S: Real>(data: &Dataset<S>, plan: &SplitPlan) -> Result<SplitRows> {
    plan.validate()?;
    let n = data.n_rows();
    let n_train = (plan.train_fraction * n as f64).round() as usize;
    if plan.n_folds > n_train {
        return Err(Error::spec(format!(
            "n_folds {} exceeds training rows {}",
            plan.n_folds, n_train
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = seeding::rng(plan.seed);
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
    let train: Vec<usize> = indices[..n_train].to_vec();
    let test: Vec<usize> = indices[n_train..].to_vec();

    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); plan.n_folds];
    let base = n_train / plan.n_folds;
    let extra = n_train % plan.n_folds;
    let mut cursor = 0;
    for (f, fold) in folds.iter_mut().enumerate() {
        let len = base + usize::from(f < extra);
        fold.extend_from_slice(&train[cursor..cursor + len]);
        cursor += len;
    }
    Ok(SplitRows { train, test, folds })
}

/// Row filter predicate, parseable from the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CleanRule {
    /// Drop rows with any NaN or infinite feature/target entry.
    Finite,
    /// Keep rows whose target satisfies the comparison.
    Target(CmpOp, f64),
    /// Keep rows whose named column satisfies the comparison.
    Column(String, CmpOp, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Gt,
    Ge,
    Lt,
    Le,
}

impl CmpOp {
    fn eval(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
        }
    }
}

impl CleanRule {
    /// Parse rules like `finite`, `target > 0`, `col:f003 <= 1.5`.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text == "finite" || text == "no_nan" {
            return Ok(CleanRule::Finite);
        }
        for (sym, op) in [
            (">=", CmpOp::Ge),
            ("<=", CmpOp::Le),
            (">", CmpOp::Gt),
            ("<", CmpOp::Lt),
        ] {
            if let Some((lhs, rhs)) = text.split_once(sym) {
                let value: f64 = rhs
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad number in clean rule '{text}'")))?;
                let lhs = lhs.trim();
                if lhs == "target" {
                    return Ok(CleanRule::Target(op, value));
                }
                if let Some(col) = lhs.strip_prefix("col:") {
                    return Ok(CleanRule::Column(col.to_string(), op, value));
                }
                return Err(Error::Config(format!("unknown field in clean rule '{text}'")));
            }
        }
        Err(Error::Config(format!("unparseable clean rule '{text}'")))
    }

    fn keeps<S: Real>(&self, data: &Dataset<S>, row: usize) -> Result<bool> {
        Ok(match self {
            CleanRule::Finite => {
                data.row(row).iter().all(|v| v.is_finite()) && data.target()[row].is_finite()
            }
            CleanRule::Target(op, value) => op.eval(data.target()[row].to_f64_(), *value),
            CleanRule::Column(name, op, value) => {
                let c = data
                    .column_names
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| Error::Config(format!("clean rule: unknown column '{name}'")))?;
                op.eval(data.value(row, c).to_f64_(), *value)
            }
        })
    }
}

/// Keep exactly the rows passing all rules. An empty result is permitted.
pub fn clean<S: Real>(data: &Dataset<S>, rules: &[CleanRule]) -> Result<Dataset<S>> {
    let mut kept = Vec::new();
    'rows: for r in 0..data.n_rows() {
        for rule in rules {
            if !rule.keeps(data, r)? {
                continue 'rows;
            }
        }
        kept.push(r);
    }
    Ok(data.select_rows(&kept))
}

/// Write the dataset as CSV with a header row; the target is the last column.
pub fn write_csv<S: Real>(data: &Dataset<S>, path: &Path, target_name: &str) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = data.column_names.join(",");
    header.push(',');
    header.push_str(target_name);
    writeln!(out, "{header}")?;
    for r in 0..data.n_rows() {
        let mut line = String::new();
        for c in 0..data.n_cols() {
            line.push_str(&format!("{}", data.value(r, c).to_f64_()));
            line.push(',');
        }
        line.push_str(&format!("{}", data.target()[r].to_f64_()));
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Read a CSV with a header row. Non-numeric columns are ordinal-encoded
/// (lexicographic label order) and recorded as categorical.
pub fn read_csv<S: Real>(path: &Path, target_column: &str) -> Result<Dataset<S>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::Config(format!("target column '{target_column}' not in header")))?;

    let mut raw: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    for record in reader.records() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Encoding("ragged CSV row".into()));
        }
        for (c, field) in record.iter().enumerate() {
            raw[c].push(field.to_string());
        }
    }
    let n_rows = raw[0].len();

    let mut columns: Vec<Vec<S>> = Vec::new();
    let mut column_names = Vec::new();
    let mut categorical_columns = BTreeSet::new();
    let mut target = Vec::new();
    for (c, name) in headers.iter().enumerate() {
        let numeric: Option<Vec<f64>> = raw[c].iter().map(|v| v.trim().parse().ok()).collect();
        if c == target_idx {
            let values = numeric
                .ok_or_else(|| Error::Encoding("non-numeric target column".into()))?;
            target = values.into_iter().map(S::of_f64).collect();
            continue;
        }
        let values: Vec<S> = match numeric {
            Some(values) => values.into_iter().map(S::of_f64).collect(),
            None => {
                categorical_columns.insert(columns.len());
                ordinal_encode(&raw[c])
                    .into_iter()
                    .map(S::of_usize)
                    .collect()
            }
        };
        column_names.push(name.clone());
        columns.push(values);
    }

    let n_cols = columns.len();
    let mut features = Vec::with_capacity(n_rows * n_cols);
    for r in 0..n_rows {
        for col in &columns {
            features.push(col[r]);
        }
    }
    Dataset::new(features, n_rows, n_cols, target, column_names, categorical_columns)
}

/// Emit ground-truth coefficients as a two-column CSV (index, coefficient).
pub fn write_ground_truth<S: Real>(truth: &GroundTruth<S>, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "index,coefficient")?;
    for (i, w) in truth.coefficients.iter().enumerate() {
        writeln!(out, "{i},{}", w.to_f64_())?;
    }
    Ok(())
}
