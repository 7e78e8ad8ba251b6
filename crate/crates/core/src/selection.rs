//! Feature subset construction: 1-D k-means cluster elimination on global
//! importance scores, plus the Pearson, Lasso, and top-n comparison
//! selectors.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::attribution::GlobalImportance;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult<S> {
    pub k: usize,
    /// Cluster id per feature.
    pub assignments: Vec<usize>,
    pub centroids: Vec<S>,
    /// Cluster whose centroid is minimal.
    pub lowest_cluster: usize,
    pub inertia: S,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSubset {
    /// Sorted, deduplicated retained column indices.
    pub indices: Vec<usize>,
    /// The k values or method name that produced this subset.
    pub provenance: Vec<String>,
}

impl FeatureSubset {
    pub fn new(mut indices: Vec<usize>, provenance: Vec<String>) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if indices.is_empty() {
            return Err(Error::spec("feature subset must be nonempty"));
        }
        Ok(FeatureSubset {
            indices,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Exact 1-D k-means: optimal clusters are contiguous in sorted order, so
/// dynamic programming over the sorted scores finds the global inertia
/// minimum in O(k n^2). Clusters are numbered by ascending centroid, so
/// `lowest_cluster` is always 0.
pub fn kmeans_1d<S: Real>(scores: &GlobalImportance<S>, k: usize) -> Result<ClusterResult<S>> {
    let points = &scores.scores;
    let n = points.len();
    if k < 2 || k > n {
        return Err(Error::spec(format!(
            "k = {k} out of range for {n} features"
        )));
    }
    let distinct = points
        .iter()
        .map(|s| s.to_f64_().to_bits())
        .collect::<BTreeSet<_>>()
        .len();
    if k > distinct {
        return Err(Error::Clustering(format!(
            "k = {k} exceeds the {distinct} distinct score values"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| points[a].to_f64_().total_cmp(&points[b].to_f64_()));
    let sorted: Vec<f64> = order.iter().map(|&i| points[i].to_f64_()).collect();

    // within-segment sum of squared deviations via prefix sums
    let mut ps = vec![0.0f64; n + 1];
    let mut ps2 = vec![0.0f64; n + 1];
    for (i, &x) in sorted.iter().enumerate() {
        ps[i + 1] = ps[i] + x;
        ps2[i + 1] = ps2[i] + x * x;
    }
    let cost = |i: usize, j: usize| -> f64 {
        let s = ps[j] - ps[i];
        (ps2[j] - ps2[i] - s * s / (j - i) as f64).max(0.0)
    };

    // dp[m][j]: best cost of the first j sorted points in m+1 clusters
    let mut dp = vec![vec![f64::INFINITY; n + 1]; k];
    let mut cut = vec![vec![0usize; n + 1]; k];
    for j in 1..=n {
        dp[0][j] = cost(0, j);
    }
    for m in 1..k {
        for j in m + 1..=n {
            for i in m..j {
                let c = dp[m - 1][i] + cost(i, j);
                if c < dp[m][j] {
                    dp[m][j] = c;
                    cut[m][j] = i;
                }
            }
        }
    }

    // recover segment boundaries, then map back to the original indices;
    // segment 0 holds the smallest scores, so clusters are centroid-sorted
    let mut bounds = vec![n; k + 1];
    bounds[0] = 0;
    let mut j = n;
    for m in (1..k).rev() {
        j = cut[m][j];
        bounds[m] = j;
    }
    let mut assignments = vec![0usize; n];
    let mut centroids = Vec::with_capacity(k);
    for c in 0..k {
        let (lo, hi) = (bounds[c], bounds[c + 1]);
        let members: Vec<S> = order[lo..hi].iter().map(|&i| points[i]).collect();
        if members.is_empty() {
            return Err(Error::Clustering("empty cluster in optimal partition".into()));
        }
        for &i in &order[lo..hi] {
            assignments[i] = c;
        }
        centroids.push(crate::scalar::mean(&members));
    }
    let inertia = points
        .iter()
        .zip(&assignments)
        .map(|(&p, &a)| (p - centroids[a]) * (p - centroids[a]))
        .sum::<S>();
    Ok(ClusterResult {
        k,
        assignments,
        centroids,
        lowest_cluster: 0,
        inertia,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EliminationOutcome {
    pub subsets: Vec<FeatureSubset>,
    /// k values skipped because elimination would empty the subset.
    pub skipped: Vec<(usize, String)>,
}

/// For each k: cluster the scores, drop the lowest-centroid cluster, and
/// keep the complement. Identical subsets are deduplicated with merged
/// provenance.
pub fn eliminate_lowest<S: Real>(
    scores: &GlobalImportance<S>,
    k_values: &[usize],
) -> Result<EliminationOutcome> {
    if k_values.is_empty() {
        return Err(Error::spec("eliminate_lowest: empty k list"));
    }
    let mut subsets: Vec<FeatureSubset> = Vec::new();
    let mut skipped = Vec::new();
    for &k in k_values {
        let clusters = kmeans_1d(scores, k)?;
        let retained: Vec<usize> = clusters
            .assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a != clusters.lowest_cluster)
            .map(|(i, _)| i)
            .collect();
        if retained.is_empty() {
            skipped.push((k, "elimination would remove every feature".into()));
            continue;
        }
        let provenance = format!("k={k}");
        match subsets.iter_mut().find(|s| s.indices == retained) {
            Some(existing) => existing.provenance.push(provenance),
            None => subsets.push(FeatureSubset::new(retained, vec![provenance])?),
        }
    }
    Ok(EliminationOutcome { subsets, skipped })
}

/// Top n features by absolute Pearson correlation with the target over the
/// given rows; constant columns correlate 0. Ties break by lower index.
pub fn pearson_top_n<S: Real>(
    data: &Dataset<S>,
    rows: &[usize],
    n: usize,
) -> Result<FeatureSubset> {
    validate_top_n(n, data.n_cols())?;
    if rows.len() < 2 {
        return Err(Error::spec("pearson_top_n: need at least 2 rows"));
    }
    let y: Vec<f64> = rows.iter().map(|&r| data.target()[r].to_f64_()).collect();
    let scores: Vec<f64> = (0..data.n_cols())
        .map(|c| {
            let x: Vec<f64> = rows.iter().map(|&r| data.value(r, c).to_f64_()).collect();
            pearson(&x, &y).abs()
        })
        .collect();
    let indices = top_indices(&scores, n);
    FeatureSubset::new(indices, vec!["pearson".into()])
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Indices of the n largest values; ties broken by ascending index.
fn top_indices(scores: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(n);
    order
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoResult {
    pub subset: FeatureSubset,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    /// False when no lambda yields exactly the requested nonzero count and
    /// the nearest achievable count was returned instead.
    pub exact: bool,
}

const LASSO_TOL: f64 = 1e-12;
const LASSO_MAX_SWEEPS: usize = 100_000;
const LAMBDA_BISECTION_ITERS: usize = 100;

/// Coordinate-descent Lasso minimizing (1/2n)||y - Xb||^2 + lambda*||b||_1
/// with the penalty found by bisection so that exactly n coefficients are
/// nonzero. Inputs are expected to be standardized; no intercept is fitted.
pub fn lasso_select<S: Real>(data: &Dataset<S>, rows: &[usize], n: usize) -> Result<LassoResult> {
    validate_top_n(n, data.n_cols())?;
    if rows.is_empty() {
        return Err(Error::spec("lasso_select: empty row set"));
    }
    let p = data.n_cols();
    let cols: Vec<Vec<f64>> = (0..p)
        .map(|c| rows.iter().map(|&r| data.value(r, c).to_f64_()).collect())
        .collect();
    let y: Vec<f64> = rows.iter().map(|&r| data.target()[r].to_f64_()).collect();
    let lambda_max = lambda_kill_point(&cols, &y);

    let nonzeros = |beta: &[f64]| beta.iter().filter(|b| b.abs() > 0.0).count();

    // Bisection on lambda: the active count grows as lambda shrinks.
    let mut lo = 0.0f64;
    let mut hi = lambda_max;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..LAMBDA_BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        let beta = coordinate_descent(&cols, &y, mid);
        let count = nonzeros(&beta);
        let better = match &best {
            None => true,
            Some((l, b)) => {
                let d_new = (count as i64 - n as i64).abs();
                let d_old = (nonzeros(b) as i64 - n as i64).abs();
                d_new < d_old || (d_new == d_old && mid > *l)
            }
        };
        if better {
            best = Some((mid, beta.clone()));
        }
        if count == n {
            break;
        }
        if count > n {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (lambda, beta) = best.unwrap();
    let exact = nonzeros(&beta) == n;
    let indices: Vec<usize> = beta
        .iter()
        .enumerate()
        .filter(|(_, b)| b.abs() > 0.0)
        .map(|(i, _)| i)
        .collect();
    if indices.is_empty() {
        return Err(Error::spec(
            "lasso_select: no achievable lambda retains any feature",
        ));
    }
    Ok(LassoResult {
        subset: FeatureSubset::new(indices, vec!["lasso".into()])?,
        coefficients: beta,
        lambda,
        exact,
    })
}

/// Smallest penalty that zeroes every coefficient: max_j |x_j.y| / n_rows.
pub fn lambda_kill_point(cols: &[Vec<f64>], y: &[f64]) -> f64 {
    let n = y.len() as f64;
    cols.iter()
        .map(|x| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>().abs() / n)
        .fold(0.0, f64::max)
}

/// Cyclic coordinate descent for the Lasso objective.
pub fn coordinate_descent(cols: &[Vec<f64>], y: &[f64], lambda: f64) -> Vec<f64> {
    let p = cols.len();
    let n = y.len() as f64;
    let col_sq: Vec<f64> = cols
        .iter()
        .map(|x| x.iter().map(|v| v * v).sum::<f64>() / n)
        .collect();
    let mut beta = vec![0.0f64; p];
    let mut residual = y.to_vec();
    for _ in 0..LASSO_MAX_SWEEPS {
        let mut max_delta = 0.0f64;
        for j in 0..p {
            if col_sq[j] <= 0.0 {
                continue;
            }
            let old = beta[j];
            // rho = (1/n) x_j . (residual + x_j * beta_j)
            let mut rho = 0.0;
            for (x, r) in cols[j].iter().zip(&residual) {
                rho += x * r;
            }
            rho = rho / n + col_sq[j] * old;
            let new = soft_threshold(rho, lambda) / col_sq[j];
            if new != old {
                let delta = new - old;
                for (x, r) in cols[j].iter().zip(residual.iter_mut()) {
                    *r -= x * delta;
                }
                beta[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < LASSO_TOL {
            break;
        }
    }
    beta
}

pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// KKT residual of the Lasso solution: for active coordinates the
/// stationarity violation, for zero coordinates the excess of the loss
/// gradient over lambda. Zero (up to tolerance) certifies optimality.
pub fn lasso_kkt_violation(cols: &[Vec<f64>], y: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let n = y.len() as f64;
    let mut residual = y.to_vec();
    for (j, x) in cols.iter().enumerate() {
        if beta[j] != 0.0 {
            for (xv, r) in x.iter().zip(residual.iter_mut()) {
                *r -= xv * beta[j];
            }
        }
    }
    let mut worst = 0.0f64;
    for (j, x) in cols.iter().enumerate() {
        let grad = -x.iter().zip(&residual).map(|(a, b)| a * b).sum::<f64>() / n;
        if beta[j] == 0.0 {
            worst = worst.max(grad.abs() - lambda);
        } else {
            worst = worst.max((grad + lambda * beta[j].signum()).abs());
        }
    }
    worst.max(0.0)
}

/// Indices of the n largest scores; ties break by lower index.
pub fn top_n_by_score<S: Real>(scores: &GlobalImportance<S>, n: usize) -> Result<FeatureSubset> {
    validate_top_n(n, scores.scores.len())?;
    let as_f64: Vec<f64> = scores.scores.iter().map(|s| s.to_f64_()).collect();
    FeatureSubset::new(top_indices(&as_f64, n), vec!["top-n".into()])
}

/// Set difference against the full feature range; provenance "cross-check".
pub fn complement(subset: &FeatureSubset, n_features: usize) -> Result<FeatureSubset> {
    if subset.indices.iter().any(|&i| i >= n_features) {
        return Err(Error::spec("complement: subset index out of range"));
    }
    let members: BTreeSet<usize> = subset.indices.iter().copied().collect();
    let rest: Vec<usize> = (0..n_features).filter(|i| !members.contains(i)).collect();
    if rest.is_empty() {
        return Err(Error::spec("complement: subset covers every feature"));
    }
    FeatureSubset::new(rest, vec!["cross-check".into()])
}

fn validate_top_n(n: usize, n_features: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::spec("n must be at least 1"));
    }
    if n > n_features {
        return Err(Error::spec(format!(
            "n = {n} exceeds the {n_features} features"
        )));
    }
    Ok(())
}
