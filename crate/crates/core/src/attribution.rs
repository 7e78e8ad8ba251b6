//! Integrated Gradients and KernelSHAP feature attributions plus global
//! aggregation of per-sample values.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::TrainedModel;
use crate::quadrature::{self, Quadrature};
use crate::scalar::Real;
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgConfig<S> {
    /// Baseline input x'; interpreted in the scaled feature space, so the
    /// all-zero default is the per-feature training mean.
    pub baseline: Vec<S>,
    pub n_steps: usize,
    pub quadrature: Quadrature,
}

impl<S: Real> IgConfig<S> {
    pub fn zero_baseline(input_dim: usize) -> Self {
        IgConfig {
            baseline: vec![S::zero(); input_dim],
            n_steps: 50,
            quadrature: Quadrature::GaussLegendre,
        }
    }

    fn validate(&self, input_dim: usize) -> Result<()> {
        if self.n_steps == 0 {
            return Err(Error::spec("n_steps must be at least 1"));
        }
        if self.baseline.len() != input_dim {
            return Err(Error::Shape {
                expected: input_dim,
                got: self.baseline.len(),
                context: "IG baseline".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttributionMethod {
    IntegratedGradients,
    KernelShap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    MeanAbsolute,
    MeanSigned,
}

/// Per-sample, per-feature attribution values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMatrix<S> {
    values: Vec<S>,
    n_rows: usize,
    n_cols: usize,
    pub method: AttributionMethod,
    pub baseline_record: Vec<S>,
}

impl<S: Real> AttributionMatrix<S> {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.values[r * self.n_cols..(r + 1) * self.n_cols]
    }
}

/// Non-negative (for MeanAbsolute) per-feature importance scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalImportance<S> {
    pub scores: Vec<S>,
    pub aggregation: Aggregation,
}

/// Integrated Gradients along the straight path from the baseline to x:
/// (x_i - x'_i) times the quadrature approximation of the path integral
/// of the input gradient.
pub fn integrated_gradients<S: Real>(
    model: &TrainedModel<S>,
    x: &[S],
    cfg: &IgConfig<S>,
) -> Result<Vec<S>> {
    cfg.validate(model.architecture.input_dim)?;
    let (nodes, weights) = quadrature::rule(cfg.quadrature, cfg.n_steps);
    let n = x.len();
    let mut integral = vec![S::zero(); n];
    let mut point = vec![S::zero(); n];
    for (alpha, w) in nodes.iter().zip(&weights) {
        let alpha = S::of_f64(*alpha);
        for i in 0..n {
            point[i] = cfg.baseline[i] + alpha * (x[i] - cfg.baseline[i]);
        }
        let grad = model.input_gradient(&point)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Attribution(
                "non-finite gradient along the integration path".into(),
            ));
        }
        let w = S::of_f64(*w);
        for i in 0..n {
            integral[i] = integral[i] + w * grad[i];
        }
    }
    Ok((0..n)
        .map(|i| (x[i] - cfg.baseline[i]) * integral[i])
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoalitionBudget {
    /// Enumerate all 2^M - 2 proper coalitions.
    Exhaustive,
    /// Sample this many coalitions proportionally to the Shapley kernel.
    Sampled(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapResult<S> {
    pub values: Vec<S>,
    /// Set when the regression system was singular and a ridge term was added.
    pub ridge_fallback: bool,
}

/// KernelSHAP: Shapley values estimated by a kernel-weighted linear
/// regression over feature coalitions. Masked features take values from
/// the background rows; model outputs are averaged over the background set.
pub fn kernel_shap<S: Real>(
    model: &TrainedModel<S>,
    x: &[S],
    background: &[Vec<S>],
    budget: CoalitionBudget,
    seed: u64,
) -> Result<ShapResult<S>> {
    let m = x.len();
    if m != model.architecture.input_dim {
        return Err(Error::Shape {
            expected: model.architecture.input_dim,
            got: m,
            context: "kernel_shap input".into(),
        });
    }
    if background.is_empty() {
        return Err(Error::spec("kernel_shap: empty background set"));
    }
    if m < 2 {
        return Err(Error::spec("kernel_shap: need at least 2 features"));
    }
    if let CoalitionBudget::Sampled(budget) = budget {
        if budget < m + 2 {
            return Err(Error::spec(format!(
                "kernel_shap: budget {budget} below n_features + 2"
            )));
        }
    }

    // value of the empty coalition and of the full input
    let value_empty = mean_output(model, background, x, &vec![false; m])?;
    let value_full = model.forward(x)?.to_f64_();

    // coalition list: (mask, regression weight)
    let mut coalitions: Vec<(Vec<bool>, f64)> = Vec::new();
    match budget {
        CoalitionBudget::Exhaustive => {
            for bits in 1..(1u64 << m) - 1 {
                let mask: Vec<bool> = (0..m).map(|i| bits >> i & 1 == 1).collect();
                let size = mask.iter().filter(|&&b| b).count();
                coalitions.push((mask, shapley_kernel_weight(m, size)));
            }
        }
        CoalitionBudget::Sampled(budget) => {
            let mut rng = seeding::rng(seed);
            // size distribution proportional to (M-1)/(s(M-s)); subsets of a
            // given size are drawn uniformly, so sampled coalitions carry
            // uniform regression weight.
            let size_weights: Vec<f64> = (1..m)
                .map(|s| (m - 1) as f64 / (s * (m - s)) as f64)
                .collect();
            let total: f64 = size_weights.iter().sum();
            for _ in 0..budget {
                let mut u = rand::Rng::gen::<f64>(&mut rng) * total;
                let mut size = 1;
                for (s, w) in size_weights.iter().enumerate() {
                    if u < *w {
                        size = s + 1;
                        break;
                    }
                    u -= w;
                }
                let mask = random_mask(&mut rng, m, size);
                coalitions.push((mask, 1.0));
            }
        }
    }

    // weighted least squares with the completeness constraint eliminated:
    // v(z) - v0 - z_M * (v1 - v0) = sum_{i<M} phi_i (z_i - z_M)
    let span = value_full - value_empty;
    let dim = m - 1;
    let mut normal = vec![0.0f64; dim * dim];
    let mut rhs = vec![0.0f64; dim];
    let mut design_row = vec![0.0f64; dim];
    for (mask, weight) in &coalitions {
        let v = mean_output(model, background, x, mask)?;
        let z_last = if mask[m - 1] { 1.0 } else { 0.0 };
        for i in 0..dim {
            let z_i = if mask[i] { 1.0 } else { 0.0 };
            design_row[i] = z_i - z_last;
        }
        let target = v - value_empty - z_last * span;
        for i in 0..dim {
            if design_row[i] == 0.0 {
                continue;
            }
            rhs[i] += weight * design_row[i] * target;
            for j in 0..dim {
                normal[i * dim + j] += weight * design_row[i] * design_row[j];
            }
        }
    }

    let (solution, ridge_fallback) = solve_normal_equations(normal, rhs, dim)?;
    let mut phi: Vec<f64> = solution;
    let last = span - phi.iter().sum::<f64>();
    phi.push(last);
    Ok(ShapResult {
        values: phi.into_iter().map(S::of_f64).collect(),
        ridge_fallback,
    })
}

fn shapley_kernel_weight(m: usize, size: usize) -> f64 {
    let binom = binomial(m, size);
    (m - 1) as f64 / (binom * (size * (m - size)) as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

fn random_mask(rng: &mut rand_chacha::ChaCha8Rng, m: usize, size: usize) -> Vec<bool> {
    use rand::Rng;
    let mut indices: Vec<usize> = (0..m).collect();
    for i in (1..m).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
    let mut mask = vec![false; m];
    for &i in indices.iter().take(size) {
        mask[i] = true;
    }
    mask
}

/// Model output for x with masked-out features replaced by background
/// values, averaged over the background set.
fn mean_output<S: Real>(
    model: &TrainedModel<S>,
    background: &[Vec<S>],
    x: &[S],
    mask: &[bool],
) -> Result<f64> {
    let mut acc = 0.0;
    let mut composite = vec![S::zero(); x.len()];
    for row in background {
        for i in 0..x.len() {
            composite[i] = if mask[i] { x[i] } else { row[i] };
        }
        acc += model.forward(&composite)?.to_f64_();
    }
    Ok(acc / background.len() as f64)
}

/// Solve (A + maybe ridge) s = b by Cholesky; returns the ridge flag.
fn solve_normal_equations(
    mut a: Vec<f64>,
    b: Vec<f64>,
    dim: usize,
) -> Result<(Vec<f64>, bool)> {
    if let Some(solution) = crate::linalg::cholesky_solve(&a, &b, dim) {
        return Ok((solution, false));
    }
    let scale = (0..dim).map(|i| a[i * dim + i]).fold(0.0f64, f64::max);
    let ridge = 1e-8 * scale.max(1.0);
    for i in 0..dim {
        a[i * dim + i] += ridge;
    }
    crate::linalg::cholesky_solve(&a, &b, dim)
        .map(|s| (s, true))
        .ok_or_else(|| Error::Attribution("singular kernel regression system".into()))
}

/// One attribution row per sample; rows are independent.
pub fn attribute_dataset<S: Real>(
    model: &TrainedModel<S>,
    data: &Dataset<S>,
    rows: &[usize],
    cfg: &IgConfig<S>,
) -> Result<AttributionMatrix<S>> {
    if rows.is_empty() {
        return Err(Error::spec("attribute_dataset: empty row set"));
    }
    let n_cols = data.n_cols();
    let mut values = Vec::with_capacity(rows.len() * n_cols);
    for &r in rows {
        let attr = integrated_gradients(model, data.row(r), cfg)
            .map_err(|e| Error::Attribution(format!("sample {r}: {e}")))?;
        values.extend(attr);
    }
    Ok(AttributionMatrix {
        values,
        n_rows: rows.len(),
        n_cols,
        method: AttributionMethod::IntegratedGradients,
        baseline_record: cfg.baseline.clone(),
    })
}

/// Collapse local attributions into one global score per feature.
pub fn aggregate<S: Real>(
    attr: &AttributionMatrix<S>,
    mode: Aggregation,
) -> Result<GlobalImportance<S>> {
    if attr.n_rows == 0 {
        return Err(Error::spec("aggregate: empty attribution matrix"));
    }
    let n = S::of_usize(attr.n_rows);
    let scores = (0..attr.n_cols)
        .map(|c| {
            let mut acc = S::zero();
            for r in 0..attr.n_rows {
                let v = attr.row(r)[c];
                acc = acc + match mode {
                    Aggregation::MeanAbsolute => v.abs(),
                    Aggregation::MeanSigned => v,
                };
            }
            let mean = acc / n;
            match mode {
                Aggregation::MeanAbsolute => mean,
                Aggregation::MeanSigned => mean.abs(),
            }
        })
        .collect();
    Ok(GlobalImportance {
        scores,
        aggregation: mode,
    })
}

/// Min-max affine map of the scores onto [lo, hi].
pub fn scale_to_range<S: Real>(scores: &GlobalImportance<S>, lo: S, hi: S) -> Result<Vec<S>> {
    if hi <= lo {
        return Err(Error::spec("scale_to_range: hi must exceed lo"));
    }
    let min = scores
        .scores
        .iter()
        .copied()
        .fold(S::infinity(), S::min);
    let max = scores
        .scores
        .iter()
        .copied()
        .fold(S::neg_infinity(), S::max);
    if max == min {
        return Err(Error::spec("scale_to_range: all scores equal"));
    }
    Ok(scores
        .scores
        .iter()
        .map(|&s| lo + (s - min) / (max - min) * (hi - lo))
        .collect())
}
