//! Surrogate-based hyperparameter tuning: Latin-hypercube initial design,
//! Gaussian-process surrogate with expected-improvement infill, and a
//! k-fold cross-validation objective.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::nn::{self, Activation, Architecture, OptimizerKind, TrainConfig};
use crate::scalar::Real;
use crate::seeding;
use crate::selection::FeatureSubset;

/// Bounds for the tunable hyperparameters. Integer parameters suffixed
/// `_exp` enter the network as powers of two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub l1_exp: (u32, u32),
    pub epochs_exp: (u32, u32),
    pub batch_exp: (u32, u32),
    pub dropout_prob: (f64, f64),
    pub lr_mult: (f64, f64),
    pub patience_exp: (u32, u32),
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            l1_exp: (5, 9),
            epochs_exp: (5, 10),
            batch_exp: (3, 6),
            dropout_prob: (0.005, 0.25),
            lr_mult: (0.25, 5.0),
            patience_exp: (3, 5),
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let ok = self.l1_exp.0 <= self.l1_exp.1
            && self.epochs_exp.0 <= self.epochs_exp.1
            && self.batch_exp.0 <= self.batch_exp.1
            && self.patience_exp.0 <= self.patience_exp.1
            && self.dropout_prob.0 <= self.dropout_prob.1
            && (0.0..1.0).contains(&self.dropout_prob.0)
            && self.dropout_prob.1 < 1.0
            && self.lr_mult.0 > 0.0
            && self.lr_mult.0 <= self.lr_mult.1
            && self.l1_exp.0 >= 2;
        if ok {
            Ok(())
        } else {
            Err(Error::spec("invalid search space bounds"))
        }
    }

    pub fn contains(&self, p: &HyperPoint) -> bool {
        (self.l1_exp.0..=self.l1_exp.1).contains(&p.l1_exp)
            && (self.epochs_exp.0..=self.epochs_exp.1).contains(&p.epochs_exp)
            && (self.batch_exp.0..=self.batch_exp.1).contains(&p.batch_exp)
            && (self.dropout_prob.0..=self.dropout_prob.1).contains(&p.dropout_prob)
            && (self.lr_mult.0..=self.lr_mult.1).contains(&p.lr_mult)
            && (self.patience_exp.0..=self.patience_exp.1).contains(&p.patience_exp)
    }
}

pub const OPTIMIZERS: [OptimizerKind; 3] = [
    OptimizerKind::Adadelta,
    OptimizerKind::Adamax,
    OptimizerKind::Adagrad,
];
pub const ACTIVATIONS: [Activation; 2] = [Activation::ReLU, Activation::LeakyReLU];

/// One hyperparameter configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperPoint {
    pub l1_exp: u32,
    pub epochs_exp: u32,
    pub batch_exp: u32,
    pub dropout_prob: f64,
    pub lr_mult: f64,
    pub patience_exp: u32,
    pub optimizer: OptimizerKind,
    pub act_fn: Activation,
}

impl HyperPoint {
    /// Apply the 2^x transforms and build the network architecture.
    pub fn architecture(&self, input_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            l1: 1usize << self.l1_exp,
            activation: self.act_fn,
            dropout_prob: self.dropout_prob,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 1usize << self.epochs_exp,
            batch_size: 1usize << self.batch_exp,
            optimizer: self.optimizer,
            lr_mult: self.lr_mult,
            patience: 1usize << self.patience_exp,
            seed,
            validation_fraction: 0.2,
        }
    }

    /// Normalized GP encoding: six numeric coordinates scaled to [0,1]
    /// followed by one-hot optimizer (3) and activation (2) blocks.
    pub fn encode(&self, space: &SearchSpace) -> Vec<f64> {
        fn unit_u32(v: u32, (lo, hi): (u32, u32)) -> f64 {
            if hi == lo {
                0.5
            } else {
                (v - lo) as f64 / (hi - lo) as f64
            }
        }
        fn unit_f64(v: f64, (lo, hi): (f64, f64)) -> f64 {
            if hi == lo {
                0.5
            } else {
                (v - lo) / (hi - lo)
            }
        }
        let mut enc = vec![
            unit_u32(self.l1_exp, space.l1_exp),
            unit_u32(self.epochs_exp, space.epochs_exp),
            unit_u32(self.batch_exp, space.batch_exp),
            unit_f64(self.dropout_prob, space.dropout_prob),
            unit_f64(self.lr_mult, space.lr_mult),
            unit_u32(self.patience_exp, space.patience_exp),
        ];
        for kind in OPTIMIZERS {
            enc.push(if self.optimizer == kind { 1.0 } else { 0.0 });
        }
        for act in ACTIVATIONS {
            enc.push(if self.act_fn == act { 1.0 } else { 0.0 });
        }
        enc
    }
}

fn snap_u32(u: f64, (lo, hi): (u32, u32)) -> u32 {
    let span = (hi - lo) as f64;
    lo + (u * (span + 1.0)).floor().min(span) as u32
}

/// Materialize a point from normalized unit-cube coordinates (six numeric
/// axes plus two categorical draws in [0,1)).
fn materialize(space: &SearchSpace, u: &[f64; 8]) -> HyperPoint {
    HyperPoint {
        l1_exp: snap_u32(u[0], space.l1_exp),
        epochs_exp: snap_u32(u[1], space.epochs_exp),
        batch_exp: snap_u32(u[2], space.batch_exp),
        dropout_prob: space.dropout_prob.0 + u[3] * (space.dropout_prob.1 - space.dropout_prob.0),
        lr_mult: space.lr_mult.0 + u[4] * (space.lr_mult.1 - space.lr_mult.0),
        patience_exp: snap_u32(u[5], space.patience_exp),
        optimizer: OPTIMIZERS[(u[6] * 3.0).floor().min(2.0) as usize],
        act_fn: ACTIVATIONS[(u[7] * 2.0).floor().min(1.0) as usize],
    }
}

/// Latin-hypercube initial design: each of the eight unit-cube axes is
/// stratified into `size` bands with one sample per band, independently
/// permuted per axis. Deterministic per seed.
pub fn initial_design(space: &SearchSpace, size: usize, seed: u64) -> Result<Vec<HyperPoint>> {
    space.validate()?;
    if size < 2 {
        return Err(Error::spec("initial design needs at least 2 points"));
    }
    let mut rng = seeding::rng(seed);
    let mut strata: Vec<Vec<usize>> = (0..8)
        .map(|_| {
            let mut order: Vec<usize> = (0..size).collect();
            for i in (1..size).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            order
        })
        .collect();
    let mut points = Vec::with_capacity(size);
    for i in 0..size {
        let mut u = [0.0f64; 8];
        for (axis, stratum) in strata.iter_mut().enumerate() {
            u[axis] = (stratum[i] as f64 + rng.gen::<f64>()) / size as f64;
        }
        points.push(materialize(space, &u));
    }
    Ok(points)
}

fn random_point(space: &SearchSpace, rng: &mut rand_chacha::ChaCha8Rng) -> HyperPoint {
    let mut u = [0.0f64; 8];
    for v in u.iter_mut() {
        *v = rng.gen::<f64>();
    }
    materialize(space, &u)
}

/// Fitted Gaussian-process surrogate over normalized hyperparameter
/// encodings, with an anisotropic squared-exponential kernel.
#[derive(Debug, Clone)]
pub struct Surrogate {
    x: Vec<Vec<f64>>,
    /// Lower Cholesky factor of the kernel matrix.
    chol: Vec<f64>,
    /// K^{-1} (y - mean).
    alpha: Vec<f64>,
    lengthscales: Vec<f64>,
    signal_var: f64,
    jitter: f64,
    y_mean: f64,
    y_std: f64,
}

const GP_RESTARTS: usize = 8;
const GP_BASE_JITTER: f64 = 1e-10;

fn kernel(a: &[f64], b: &[f64], lengthscales: &[f64], signal_var: f64) -> f64 {
    let mut d2 = 0.0;
    for ((&x, &y), &l) in a.iter().zip(b).zip(lengthscales) {
        let d = (x - y) / l;
        d2 += d * d;
    }
    signal_var * (-0.5 * d2).exp()
}

/// Negative log marginal likelihood for the given kernel hyperparameters,
/// or None when the kernel matrix is not positive definite.
fn neg_log_likelihood(
    x: &[Vec<f64>],
    y: &[f64],
    lengthscales: &[f64],
    signal_var: f64,
    jitter: f64,
) -> Option<f64> {
    let n = x.len();
    let mut k = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel(&x[i], &x[j], lengthscales, signal_var);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
        k[i * n + i] += jitter;
    }
    let l = linalg::cholesky(&k, n)?;
    let alpha = linalg::cholesky_substitute(&l, y, n);
    let data_fit: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let log_det: f64 = (0..n).map(|i| l[i * n + i].ln()).sum::<f64>() * 2.0;
    Some(0.5 * data_fit + 0.5 * log_det)
}

/// Fit the GP by multi-start gradient-free likelihood maximization
/// (coordinate pattern search over log lengthscales and log signal
/// variance), escalating jitter when the kernel matrix is singular.
pub fn fit_surrogate(x: &[Vec<f64>], y: &[f64], seed: u64) -> Result<Surrogate> {
    if x.len() < 2 || x.len() != y.len() {
        return Err(Error::spec("fit_surrogate: need >= 2 matching observations"));
    }
    let dim = x[0].len();
    let n = x.len();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let var = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / n as f64;
    let y_std = var.sqrt().max(1e-12);
    let yn: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();

    let mut rng = seeding::rng(seed);
    let mut best: Option<(f64, Vec<f64>, f64, f64)> = None; // (nll, ls, sv, jitter)
    for restart in 0..GP_RESTARTS {
        // log-space parameters: lengthscales in [e^-2, e^1], signal in [e^-1, e^1]
        let mut log_ls: Vec<f64> = if restart == 0 {
            vec![0.0; dim]
        } else {
            (0..dim).map(|_| rng.gen_range(-2.0..1.0)).collect()
        };
        let mut log_sv = if restart == 0 {
            0.0
        } else {
            rng.gen_range(-1.0..1.0)
        };
        let mut jitter = GP_BASE_JITTER;
        let eval = |log_ls: &[f64], log_sv: f64, jitter: f64| {
            let ls: Vec<f64> = log_ls.iter().map(|v| v.exp()).collect();
            neg_log_likelihood(x, &yn, &ls, log_sv.exp(), jitter)
        };
        // escalate jitter until the starting point factorizes
        let mut current = loop {
            match eval(&log_ls, log_sv, jitter) {
                Some(v) => break v,
                None => {
                    jitter *= 100.0;
                    if jitter > 1.0 {
                        break f64::INFINITY;
                    }
                }
            }
        };
        if !current.is_finite() {
            continue;
        }
        let mut step = 0.5;
        while step > 1e-3 {
            let mut improved = false;
            for p in 0..=dim {
                for dir in [-1.0, 1.0] {
                    let mut ls = log_ls.clone();
                    let mut sv = log_sv;
                    if p < dim {
                        ls[p] += dir * step;
                    } else {
                        sv += dir * step;
                    }
                    if let Some(v) = eval(&ls, sv, jitter) {
                        if v < current {
                            current = v;
                            log_ls = ls;
                            log_sv = sv;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        if best.as_ref().is_none_or(|(b, ..)| current < *b) {
            best = Some((
                current,
                log_ls.iter().map(|v| v.exp()).collect(),
                log_sv.exp(),
                jitter,
            ));
        }
    }
    let (_, lengthscales, signal_var, jitter) =
        best.ok_or_else(|| Error::Surrogate("kernel matrix singular at every restart".into()))?;

    let mut k = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel(&x[i], &x[j], &lengthscales, signal_var);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
        k[i * n + i] += jitter;
    }
    let chol = linalg::cholesky(&k, n)
        .ok_or_else(|| Error::Surrogate("kernel matrix singular after jitter".into()))?;
    let alpha = linalg::cholesky_substitute(&chol, &yn, n);
    Ok(Surrogate {
        x: x.to_vec(),
        chol,
        alpha,
        lengthscales,
        signal_var,
        jitter,
        y_mean,
        y_std,
    })
}

impl Surrogate {
    /// Posterior mean and variance at a normalized point (original y units).
    pub fn predict(&self, point: &[f64]) -> (f64, f64) {
        let n = self.x.len();
        let kx: Vec<f64> = self
            .x
            .iter()
            .map(|xi| kernel(xi, point, &self.lengthscales, self.signal_var))
            .collect();
        let mean_n: f64 = kx.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
        // v = L^{-1} k_x by forward substitution
        let mut v = vec![0.0f64; n];
        for i in 0..n {
            let mut sum = kx[i];
            for k in 0..i {
                sum -= self.chol[i * n + k] * v[k];
            }
            v[i] = sum / self.chol[i * n + i];
        }
        let var_n = (self.signal_var + self.jitter - v.iter().map(|a| a * a).sum::<f64>()).max(0.0);
        (
            self.y_mean + self.y_std * mean_n,
            var_n * self.y_std * self.y_std,
        )
    }

    /// Expected improvement below `best` (minimization).
    pub fn expected_improvement(&self, point: &[f64], best: f64) -> f64 {
        let (mu, var) = self.predict(point);
        let sigma = var.sqrt();
        if sigma <= 1e-12 {
            return (best - mu).max(0.0);
        }
        let z = (best - mu) / sigma;
        (best - mu) * linalg::normal_cdf(z) + sigma * linalg::normal_pdf(z)
    }
}

const PROPOSAL_CANDIDATES: usize = 512;
const PROPOSAL_NEIGHBORS: usize = 64;

/// Propose the next point: maximize expected improvement over a random
/// candidate set plus local perturbations of the incumbent best, skipping
/// points already evaluated. Falls back to a random feasible point.
pub fn propose_next(
    surrogate: &Surrogate,
    space: &SearchSpace,
    evaluated: &[(HyperPoint, f64)],
    seed: u64,
) -> Result<HyperPoint> {
    if evaluated.is_empty() {
        return Err(Error::spec("propose_next: no observations"));
    }
    let mut rng = seeding::rng(seed);
    let best_obs = evaluated
        .iter()
        .map(|(_, v)| *v)
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);
    let incumbent = evaluated
        .iter()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(p, _)| p.clone());

    let mut candidates: Vec<HyperPoint> = (0..PROPOSAL_CANDIDATES)
        .map(|_| random_point(space, &mut rng))
        .collect();
    if let Some(inc) = &incumbent {
        for _ in 0..PROPOSAL_NEIGHBORS {
            candidates.push(perturb(inc, space, &mut rng));
        }
    }

    let mut best_point: Option<(f64, HyperPoint)> = None;
    for cand in candidates {
        if evaluated.iter().any(|(p, _)| *p == cand) {
            continue;
        }
        let ei = surrogate.expected_improvement(&cand.encode(space), best_obs);
        if best_point.as_ref().is_none_or(|(b, _)| ei > *b) {
            best_point = Some((ei, cand));
        }
    }
    match best_point {
        Some((_, p)) => Ok(p),
        // every candidate was already evaluated: perturbed re-draw
        None => {
            for _ in 0..10_000 {
                let p = random_point(space, &mut rng);
                if !evaluated.iter().any(|(q, _)| *q == p) {
                    return Ok(p);
                }
            }
            Err(Error::Surrogate("search space exhausted".into()))
        }
    }
}

/// Local move: jiggle continuous axes by ~10% of their range, step integer
/// axes by at most one, occasionally flip a categorical level.
fn perturb(p: &HyperPoint, space: &SearchSpace, rng: &mut rand_chacha::ChaCha8Rng) -> HyperPoint {
    fn step_u32(v: u32, (lo, hi): (u32, u32), rng: &mut rand_chacha::ChaCha8Rng) -> u32 {
        let delta: i64 = rng.gen_range(-1..=1);
        (v as i64 + delta).clamp(lo as i64, hi as i64) as u32
    }
    fn jiggle(v: f64, (lo, hi): (f64, f64), rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
        (v + rng.gen_range(-0.1..0.1) * (hi - lo)).clamp(lo, hi)
    }
    HyperPoint {
        l1_exp: step_u32(p.l1_exp, space.l1_exp, rng),
        epochs_exp: step_u32(p.epochs_exp, space.epochs_exp, rng),
        batch_exp: step_u32(p.batch_exp, space.batch_exp, rng),
        dropout_prob: jiggle(p.dropout_prob, space.dropout_prob, rng),
        lr_mult: jiggle(p.lr_mult, space.lr_mult, rng),
        patience_exp: step_u32(p.patience_exp, space.patience_exp, rng),
        optimizer: if rng.gen::<f64>() < 0.2 {
            OPTIMIZERS[rng.gen_range(0..3)]
        } else {
            p.optimizer
        },
        act_fn: if rng.gen::<f64>() < 0.2 {
            ACTIVATIONS[rng.gen_range(0..2)]
        } else {
            p.act_fn
        },
    }
}

/// Per-fold MSEs with their mean and sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub fold_mses: Vec<f64>,
    pub mean_mse: f64,
    pub sd_mse: f64,
    /// Folds whose training diverged; their entries are +inf and excluded
    /// from the mean.
    pub failed_folds: Vec<usize>,
}

impl CvReport {
    pub fn from_folds(fold_mses: Vec<f64>) -> Self {
        let failed_folds: Vec<usize> = fold_mses
            .iter()
            .enumerate()
            .filter(|(_, m)| !m.is_finite())
            .map(|(i, _)| i)
            .collect();
        let finite: Vec<f64> = fold_mses.iter().copied().filter(|m| m.is_finite()).collect();
        let (mean_mse, sd_mse) = if finite.is_empty() {
            (f64::INFINITY, f64::INFINITY)
        } else {
            let mean = crate::scalar::mean(&finite);
            (mean, crate::scalar::sample_std(&finite, mean))
        };
        CvReport {
            fold_mses,
            mean_mse,
            sd_mse,
            failed_folds,
        }
    }
}

/// k-fold cross-validation of one hyperparameter point on the given
/// feature subset: each fold is held out once while the others train.
/// Fold seeds derive deterministically from `seed`.
pub fn cross_validate<S: Real>(
    data: &Dataset<S>,
    subset: &FeatureSubset,
    point: &HyperPoint,
    folds: &[Vec<usize>],
    seed: u64,
) -> Result<CvReport> {
    if folds.len() < 2 {
        return Err(Error::spec("cross_validate: need at least 2 folds"));
    }
    let view = data.select_columns(&subset.indices)?;
    let arch = point.architecture(view.n_cols());
    let mut fold_mses = Vec::with_capacity(folds.len());
    for (i, holdout) in folds.iter().enumerate() {
        let train_rows: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        let fold_seed = seeding::derive(seed, &[seeding::STAGE_CV, i as u64]);
        let model = nn::build::<S>(&arch, fold_seed)?;
        let mse = match nn::train(&model, &view, &train_rows, &point.train_config(fold_seed)) {
            Ok(trained) => trained.evaluate_mse(&view, holdout)?.to_f64_(),
            Err(Error::Training(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        fold_mses.push(mse);
    }
    Ok(CvReport::from_folds(fold_mses))
}

/// Single-holdout objective: train on all folds but the first, score on the
/// first. Cheaper stand-in for the full CV objective at desk scale.
pub fn holdout_objective<S: Real>(
    data: &Dataset<S>,
    subset: &FeatureSubset,
    point: &HyperPoint,
    folds: &[Vec<usize>],
    seed: u64,
) -> Result<CvReport> {
    if folds.len() < 2 {
        return Err(Error::spec("holdout_objective: need at least 2 folds"));
    }
    let view = data.select_columns(&subset.indices)?;
    let arch = point.architecture(view.n_cols());
    let train_rows: Vec<usize> = folds[1..].iter().flatten().copied().collect();
    let fold_seed = seeding::derive(seed, &[seeding::STAGE_CV, 0]);
    let model = nn::build::<S>(&arch, fold_seed)?;
    let mse = match nn::train(&model, &view, &train_rows, &point.train_config(fold_seed)) {
        Ok(trained) => trained.evaluate_mse(&view, &folds[0])?.to_f64_(),
        Err(Error::Training(_)) => f64::INFINITY,
        Err(e) => return Err(e),
    };
    Ok(CvReport::from_folds(vec![mse]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveMode {
    /// Mean MSE over all folds.
    CrossValidation,
    /// First-fold holdout; cheaper objective for desk-scale runs.
    Holdout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub point: HyperPoint,
    pub report: CvReport,
    /// Objective value seen by the tuner (+inf imputed on failure).
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRun {
    pub observations: Vec<Observation>,
    pub best_index: usize,
    pub initial_design_size: usize,
}

impl TuningRun {
    pub fn best(&self) -> &Observation {
        &self.observations[self.best_index]
    }

    /// Best objective value after each evaluation; non-increasing.
    pub fn incumbent_trace(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.observations
            .iter()
            .map(|o| {
                best = best.min(o.objective);
                best
            })
            .collect()
    }
}

/// Core SPOT loop over an arbitrary objective: initial design, evaluate,
/// fit surrogate, propose by expected improvement, evaluate, repeat.
pub fn tune_with_objective<F>(
    space: &SearchSpace,
    budget: (usize, usize),
    seed: u64,
    mut objective: F,
) -> Result<TuningRun>
where
    F: FnMut(&HyperPoint) -> Result<CvReport>,
{
    let (initial, infill) = budget;
    let design = initial_design(space, initial, seeding::derive(seed, &[seeding::STAGE_TUNE, 0]))?;
    let mut observations: Vec<Observation> = Vec::with_capacity(initial + infill);
    for point in design {
        let report = objective(&point)?;
        let value = report.mean_mse;
        observations.push(Observation {
            point,
            report,
            objective: if value.is_finite() { value } else { f64::INFINITY },
        });
    }
    for round in 0..infill {
        let pairs: Vec<(HyperPoint, f64)> = observations
            .iter()
            .map(|o| (o.point.clone(), o.objective))
            .collect();
        let encoded: Vec<Vec<f64>> = pairs.iter().map(|(p, _)| p.encode(space)).collect();
        // impute failed evaluations as worst-finite plus a margin so the
        // surrogate steers away without poisoning the fit
        let finite: Vec<f64> = pairs
            .iter()
            .map(|(_, v)| *v)
            .filter(|v| v.is_finite())
            .collect();
        let worst = finite.iter().copied().fold(0.0f64, f64::max);
        let spread = if finite.is_empty() {
            1.0
        } else {
            let best = finite.iter().copied().fold(f64::INFINITY, f64::min);
            (worst - best).max(1e-6)
        };
        let ys: Vec<f64> = pairs
            .iter()
            .map(|(_, v)| if v.is_finite() { *v } else { worst + spread })
            .collect();
        let round_seed = seeding::derive(seed, &[seeding::STAGE_TUNE, 1 + round as u64]);
        let proposal = match fit_surrogate(&encoded, &ys, round_seed) {
            Ok(surrogate) => propose_next(&surrogate, space, &pairs, round_seed)?,
            // degenerate surrogate: fall back to a random feasible point
            Err(Error::Surrogate(_)) => {
                let mut rng = seeding::rng(round_seed);
                random_point(space, &mut rng)
            }
            Err(e) => return Err(e),
        };
        let report = objective(&proposal)?;
        let value = report.mean_mse;
        observations.push(Observation {
            point: proposal,
            report,
            objective: if value.is_finite() { value } else { f64::INFINITY },
        });
    }
    let best_index = observations
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.objective.total_cmp(&b.1.objective))
        .map(|(i, _)| i)
        .unwrap();
    Ok(TuningRun {
        observations,
        best_index,
        initial_design_size: initial,
    })
}

/// Full tuner: the SPOT loop with the cross-validation (or holdout)
/// training objective on the given feature subset.
pub fn tune<S: Real>(
    data: &Dataset<S>,
    subset: &FeatureSubset,
    space: &SearchSpace,
    budget: (usize, usize),
    seed: u64,
    folds: &[Vec<usize>],
    mode: ObjectiveMode,
) -> Result<TuningRun> {
    tune_with_objective(space, budget, seed, |point| match mode {
        ObjectiveMode::CrossValidation => cross_validate(data, subset, point, folds, seed),
        ObjectiveMode::Holdout => holdout_objective(data, subset, point, folds, seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dummy, split, DummySpec, SplitPlan};
    use approx::assert_abs_diff_eq;

    #[test]
    fn design_respects_bounds_and_strata() {
        let space = SearchSpace::default();
        let design = initial_design(&space, 10, 7).unwrap();
        assert_eq!(design.len(), 10);
        for p in &design {
            assert!(space.contains(p));
        }
        // continuous axes hit 10 distinct Latin strata
        let check = |values: Vec<f64>, (lo, hi): (f64, f64)| {
            let mut strata: Vec<usize> = values
                .iter()
                .map(|v| (((v - lo) / (hi - lo)) * 10.0).floor().min(9.0) as usize)
                .collect();
            strata.sort_unstable();
            strata.dedup();
            assert_eq!(strata.len(), 10);
        };
        check(
            design.iter().map(|p| p.dropout_prob).collect(),
            space.dropout_prob,
        );
        check(design.iter().map(|p| p.lr_mult).collect(), space.lr_mult);
    }

    #[test]
    fn design_is_seed_deterministic() {
        let space = SearchSpace::default();
        assert_eq!(
            initial_design(&space, 8, 1).unwrap(),
            initial_design(&space, 8, 1).unwrap()
        );
        assert_ne!(
            initial_design(&space, 8, 1).unwrap(),
            initial_design(&space, 8, 2).unwrap()
        );
    }

    fn encode_1d(values: &[f64]) -> Vec<Vec<f64>> {
        values.iter().map(|&v| vec![v]).collect()
    }

    #[test]
    fn gp_interpolates_observations() {
        let x = encode_1d(&[0.0, 0.25, 0.5, 0.75, 1.0]);
        let y = vec![1.0, 0.2, -0.3, 0.1, 0.8];
        let gp = fit_surrogate(&x, &y, 0).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let (mu, _) = gp.predict(xi);
            assert_abs_diff_eq!(mu, yi, epsilon = 1e-4);
        }
    }

    #[test]
    fn gp_midpoint_between_two_points() {
        let x = encode_1d(&[0.0, 1.0]);
        let y = vec![0.0, 1.0];
        let gp = fit_surrogate(&x, &y, 0).unwrap();
        let (mu, var) = gp.predict(&[0.5]);
        assert!(mu > 0.0 && mu < 1.0, "midpoint mean {mu}");
        assert!(var >= 0.0);
    }

    #[test]
    fn gp_constant_observations_predict_constant() {
        let x = encode_1d(&[0.0, 0.3, 0.7, 1.0]);
        let y = vec![2.5; 4];
        let gp = fit_surrogate(&x, &y, 0).unwrap();
        for q in [0.1, 0.5, 0.9] {
            let (mu, _) = gp.predict(&[q]);
            assert_abs_diff_eq!(mu, 2.5, epsilon = 1e-8);
        }
    }

    #[test]
    fn gp_posterior_variance_shrinks_at_data() {
        let x = encode_1d(&[0.0, 0.5, 1.0]);
        let y = vec![0.0, 1.0, 0.5];
        let gp = fit_surrogate(&x, &y, 3).unwrap();
        let (_, var_at_data) = gp.predict(&[0.5]);
        let (_, var_away) = gp.predict(&[0.25]);
        assert!(var_at_data < var_away);
    }

    #[test]
    fn proposal_is_feasible_and_new() {
        let space = SearchSpace::default();
        let design = initial_design(&space, 6, 4).unwrap();
        let encoded: Vec<Vec<f64>> = design.iter().map(|p| p.encode(&space)).collect();
        let ys: Vec<f64> = design.iter().map(|p| (p.lr_mult - 1.0).powi(2)).collect();
        let gp = fit_surrogate(&encoded, &ys, 0).unwrap();
        let pairs: Vec<(HyperPoint, f64)> = design.into_iter().zip(ys).collect();
        let p = propose_next(&gp, &space, &pairs, 9).unwrap();
        assert!(space.contains(&p));
        assert!(pairs.iter().all(|(q, _)| *q != p));
        // integer materialization: l1 is an exact power of two in range
        let l1 = p.architecture(4).l1;
        assert!(l1.is_power_of_two() && (32..=512).contains(&l1));
    }

    #[test]
    fn tuner_locates_injected_quadratic_minimum() {
        let space = SearchSpace::default();
        let run = tune_with_objective(&space, (10, 30), 11, |p| {
            Ok(CvReport::from_folds(vec![(p.lr_mult - 1.0).powi(2)]))
        })
        .unwrap();
        assert_eq!(run.observations.len(), 40);
        let best = run.best();
        assert!(
            (best.point.lr_mult - 1.0).abs() <= 0.25,
            "best lr_mult {}",
            best.point.lr_mult
        );
        let trace = run.incumbent_trace();
        for w in trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn degenerate_budget_is_pure_design_search() {
        let space = SearchSpace::default();
        let run = tune_with_objective(&space, (5, 0), 2, |p| {
            Ok(CvReport::from_folds(vec![p.dropout_prob]))
        })
        .unwrap();
        assert_eq!(run.observations.len(), 5);
        let manual_best = run
            .observations
            .iter()
            .map(|o| o.objective)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(run.best().objective, manual_best);
    }

    #[test]
    fn failed_evaluations_are_imputed_not_fatal() {
        let space = SearchSpace::default();
        let mut calls = 0;
        let run = tune_with_objective(&space, (4, 3), 5, |p| {
            calls += 1;
            if calls % 3 == 0 {
                Ok(CvReport::from_folds(vec![f64::INFINITY]))
            } else {
                Ok(CvReport::from_folds(vec![(p.lr_mult - 2.0).powi(2)]))
            }
        })
        .unwrap();
        assert_eq!(run.observations.len(), 7);
        assert!(run.best().objective.is_finite());
    }

    #[test]
    fn cv_report_consistency() {
        let r = CvReport::from_folds(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(r.fold_mses.len(), 5);
        assert_abs_diff_eq!(r.mean_mse, 3.0, epsilon = 1e-12);
        let mean = r.fold_mses.iter().sum::<f64>() / 5.0;
        let sd = (r
            .fold_mses
            .iter()
            .map(|m| (m - mean) * (m - mean))
            .sum::<f64>()
            / 4.0)
            .sqrt();
        assert_abs_diff_eq!(r.sd_mse, sd, epsilon = 1e-12);
        assert!(r.failed_folds.is_empty());

        let with_failure = CvReport::from_folds(vec![1.0, f64::INFINITY, 3.0]);
        assert_eq!(with_failure.failed_folds, vec![1]);
        assert_abs_diff_eq!(with_failure.mean_mse, 2.0, epsilon = 1e-12);
    }

    fn small_linear_data() -> (Dataset<f64>, Vec<Vec<usize>>) {
        let spec = DummySpec {
            n_features: 4,
            n_positive: 2,
            n_negative: 1,
            n_zero: 1,
            n_samples: 300,
            seed: 3,
            ..DummySpec::default()
        };
        let (data, _) = generate_dummy::<f64>(&spec).unwrap();
        let rows = split(
            &data,
            &SplitPlan {
                train_fraction: 0.7,
                n_folds: 5,
                seed: 1,
            },
        )
        .unwrap();
        (data, rows.folds)
    }

    #[test]
    fn cross_validation_learns_linear_data() {
        let (data, folds) = small_linear_data();
        let subset = FeatureSubset::new(vec![0, 1, 2, 3], vec!["full".into()]).unwrap();
        let point = HyperPoint {
            l1_exp: 4,
            epochs_exp: 9,
            batch_exp: 4,
            dropout_prob: 0.0,
            lr_mult: 2.0,
            patience_exp: 6,
            optimizer: OptimizerKind::Adamax,
            act_fn: Activation::LeakyReLU,
        };
        let report = cross_validate(&data, &subset, &point, &folds, 8).unwrap();
        assert_eq!(report.fold_mses.len(), 5);
        assert!(report.failed_folds.is_empty());
        for m in &report.fold_mses {
            assert!(*m < 1e-2, "fold mse {m}");
        }
        assert_abs_diff_eq!(
            report.mean_mse,
            report.fold_mses.iter().sum::<f64>() / 5.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn cross_validation_is_deterministic() {
        let (data, folds) = small_linear_data();
        let subset = FeatureSubset::new(vec![0, 1], vec!["s".into()]).unwrap();
        let point = HyperPoint {
            l1_exp: 3,
            epochs_exp: 5,
            batch_exp: 4,
            dropout_prob: 0.1,
            lr_mult: 1.0,
            patience_exp: 4,
            optimizer: OptimizerKind::Adagrad,
            act_fn: Activation::ReLU,
        };
        let a = cross_validate(&data, &subset, &point, &folds, 8).unwrap();
        let b = cross_validate(&data, &subset, &point, &folds, 8).unwrap();
        assert_eq!(a, b);
    }
}
