//! Four-hidden-layer MLP for scalar regression with exact reverse-mode
//! gradients for both parameters and inputs.

use std::path::Path;

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seeding;

pub const LEAKY_SLOPE: f64 = 0.01;
/// Relative validation-loss improvement below which an epoch does not
/// reset the early-stopping counter.
const MIN_REL_IMPROVEMENT: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
    LeakyReLU,
}

impl Activation {
    #[inline]
    fn apply<S: Real>(self, z: S) -> S {
        if z >= S::zero() {
            z
        } else {
            match self {
                Activation::ReLU => S::zero(),
                Activation::LeakyReLU => z * S::of_f64(LEAKY_SLOPE),
            }
        }
    }

    #[inline]
    fn derivative<S: Real>(self, z: S) -> S {
        if z >= S::zero() {
            S::one()
        } else {
            match self {
                Activation::ReLU => S::zero(),
                Activation::LeakyReLU => S::of_f64(LEAKY_SLOPE),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adadelta,
    Adamax,
    Adagrad,
}

impl OptimizerKind {
    /// Base learning rate; the effective rate is base * lr_mult.
    pub fn base_rate(self) -> f64 {
        match self {
            OptimizerKind::Adagrad => 0.01,
            OptimizerKind::Adamax => 0.002,
            OptimizerKind::Adadelta => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub l1: usize,
    pub activation: Activation,
    pub dropout_prob: f64,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::spec("input_dim must be positive"));
        }
        if self.l1 == 0 || self.l1 % 4 != 0 {
            return Err(Error::spec("l1 must be a positive multiple of 4"));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(Error::spec("dropout_prob must be in [0, 1)"));
        }
        Ok(())
    }

    /// Hidden widths [l1, l1/2, l1/2, l1/4].
    pub fn hidden_widths(&self) -> [usize; 4] {
        [self.l1, self.l1 / 2, self.l1 / 2, self.l1 / 4]
    }

    /// Layer dimensions including the scalar output layer.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let h = self.hidden_widths();
        vec![
            (self.input_dim, h[0]),
            (h[0], h[1]),
            (h[1], h[2]),
            (h[2], h[3]),
            (h[3], 1),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer<S> {
    /// Row-major (out_dim x in_dim).
    pub w: Vec<S>,
    pub b: Vec<S>,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel<S> {
    pub architecture: Architecture,
    pub layers: Vec<Layer<S>>,
    pub training_log: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr_mult: f64,
    pub patience: usize,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::spec("epochs, batch_size and patience must be >= 1"));
        }
        if self.lr_mult <= 0.0 {
            return Err(Error::spec("lr_mult must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::spec("validation_fraction must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Initialize weights uniformly in +-1/sqrt(fan_in), deterministic per seed.
pub fn build<S: Real>(arch: &Architecture, seed: u64) -> Result<TrainedModel<S>> {
    arch.validate()?;
    let mut rng = seeding::rng(seed);
    let layers = arch
        .layer_dims()
        .into_iter()
        .map(|(in_dim, out_dim)| {
            let bound = 1.0 / (in_dim as f64).sqrt();
            let w = (0..in_dim * out_dim)
                .map(|_| S::of_f64(rng.gen_range(-bound..bound)))
                .collect();
            let b = (0..out_dim)
                .map(|_| S::of_f64(rng.gen_range(-bound..bound)))
                .collect();
            Layer {
                w,
                b,
                in_dim,
                out_dim,
            }
        })
        .collect();
    Ok(TrainedModel {
        architecture: arch.clone(),
        layers,
        training_log: Vec::new(),
    })
}

/// Per-layer forward caches reused across samples.
struct Workspace<S> {
    /// Pre-activations per layer.
    z: Vec<Vec<S>>,
    /// Post-activation (and post-dropout) outputs per layer.
    a: Vec<Vec<S>>,
    /// Dropout scale factors per hidden layer (1/(1-p) for kept units, 0 for dropped).
    mask: Vec<Vec<S>>,
    delta: Vec<Vec<S>>,
}

impl<S: Real> Workspace<S> {
    fn new(model: &TrainedModel<S>) -> Self {
        let z: Vec<Vec<S>> = model
            .layers
            .iter()
            .map(|l| vec![S::zero(); l.out_dim])
            .collect();
        Workspace {
            a: z.clone(),
            mask: z.clone(),
            delta: z.clone(),
            z,
        }
    }
}

impl<S: Real> TrainedModel<S> {
    fn check_input(&self, x: &[S]) -> Result<()> {
        if x.len() != self.architecture.input_dim {
            return Err(Error::Shape {
                expected: self.architecture.input_dim,
                got: x.len(),
                context: "model input".into(),
            });
        }
        Ok(())
    }

    /// Deterministic inference forward pass (dropout disabled).
    pub fn forward(&self, x: &[S]) -> Result<S> {
        self.check_input(x)?;
        let mut ws = Workspace::new(self);
        Ok(self.forward_cached(x, &mut ws, None))
    }

    pub fn forward_batch(&self, data: &Dataset<S>, rows: &[usize]) -> Result<Vec<S>> {
        let mut ws = Workspace::new(self);
        rows.iter()
            .map(|&r| {
                let x = data.row(r);
                self.check_input(x)?;
                Ok(self.forward_cached(x, &mut ws, None))
            })
            .collect()
    }

    /// Forward pass filling the workspace caches. When `dropout` carries an
    /// RNG, dropout masks are drawn and applied (training mode).
    fn forward_cached(
        &self,
        x: &[S],
        ws: &mut Workspace<S>,
        mut dropout: Option<&mut rand_chacha::ChaCha8Rng>,
    ) -> S {
        let n_layers = self.layers.len();
        let p = self.architecture.dropout_prob;
        let keep_scale = S::of_f64(1.0 / (1.0 - p));
        let act = self.architecture.activation;
        for (li, layer) in self.layers.iter().enumerate() {
            let last = li == n_layers - 1;
            let prev_a: &[S] = if li == 0 { x } else { &ws.a[li - 1] };
            let z_buf = &mut ws.z[li];
            for o in 0..layer.out_dim {
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                let mut acc = layer.b[o];
                for (wv, av) in row.iter().zip(prev_a.iter()) {
                    acc = acc + *wv * *av;
                }
                z_buf[o] = acc;
            }
            if last {
                ws.a[li][0] = ws.z[li][0];
            } else {
                for o in 0..layer.out_dim {
                    let h = act.apply(ws.z[li][o]);
                    let scale = match dropout.as_deref_mut() {
                        Some(rng) if p > 0.0 => {
                            if rng.gen::<f64>() < p {
                                S::zero()
                            } else {
                                keep_scale
                            }
                        }
                        _ => S::one(),
                    };
                    ws.mask[li][o] = scale;
                    ws.a[li][o] = h * scale;
                }
            }
        }
        ws.a[n_layers - 1][0]
    }

    /// Gradient of the output with respect to the input, by reverse mode.
    pub fn input_gradient(&self, x: &[S]) -> Result<Vec<S>> {
        self.check_input(x)?;
        let mut ws = Workspace::new(self);
        self.forward_cached(x, &mut ws, None);
        Ok(self.backward_input(x, &mut ws))
    }

    /// Backward pass producing d(output)/d(input); assumes forward caches
    /// are fresh. Dropout masks in the workspace are honored.
    fn backward_input(&self, _x: &[S], ws: &mut Workspace<S>) -> Vec<S> {
        let n_layers = self.layers.len();
        let act = self.architecture.activation;
        ws.delta[n_layers - 1][0] = S::one();
        for li in (0..n_layers).rev() {
            let layer = &self.layers[li];
            if li < n_layers - 1 {
                // delta currently holds dL/da; fold in dropout and activation
                for o in 0..layer.out_dim {
                    ws.delta[li][o] =
                        ws.delta[li][o] * ws.mask[li][o] * act.derivative(ws.z[li][o]);
                }
            }
            if li == 0 {
                let mut grad = vec![S::zero(); layer.in_dim];
                for o in 0..layer.out_dim {
                    let d = ws.delta[0][o];
                    let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (g, wv) in grad.iter_mut().zip(row.iter()) {
                        *g = *g + d * *wv;
                    }
                }
                return grad;
            }
            let (head, tail) = ws.delta.split_at_mut(li);
            let prev_delta = &mut head[li - 1];
            let cur_delta = &tail[0];
            for v in prev_delta.iter_mut() {
                *v = S::zero();
            }
            for o in 0..layer.out_dim {
                let d = cur_delta[o];
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (pv, wv) in prev_delta.iter_mut().zip(row.iter()) {
                    *pv = *pv + d * *wv;
                }
            }
        }
        unreachable!()
    }

    /// Mean squared error over the given rows.
    pub fn evaluate_mse(&self, data: &Dataset<S>, rows: &[usize]) -> Result<S> {
        if rows.is_empty() {
            return Err(Error::spec("evaluate_mse: empty row set"));
        }
        let mut ws = Workspace::new(self);
        let mut acc = S::zero();
        for &r in rows {
            let x = data.row(r);
            self.check_input(x)?;
            let yhat = self.forward_cached(x, &mut ws, None);
            let d = yhat - data.target()[r];
            acc = acc + d * d;
        }
        Ok(acc / S::of_usize(rows.len()))
    }

    pub fn save(&self, path: &Path) -> Result<()>
    where
        S: Serialize,
    {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self>
    where
        S: DeserializeOwned,
    {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(file)?)
    }
}

/// Per-tensor optimizer state (two slots cover all three optimizers).
struct OptState<S> {
    s1: Vec<S>,
    s2: Vec<S>,
}

struct Optimizer<S> {
    kind: OptimizerKind,
    lr: f64,
    /// (weight state, bias state) per layer.
    states: Vec<(OptState<S>, OptState<S>)>,
    step: usize,
}

impl<S: Real> Optimizer<S> {
    fn new(kind: OptimizerKind, lr_mult: f64, model: &TrainedModel<S>) -> Self {
        let states = model
            .layers
            .iter()
            .map(|l| {
                (
                    OptState {
                        s1: vec![S::zero(); l.w.len()],
                        s2: vec![S::zero(); l.w.len()],
                    },
                    OptState {
                        s1: vec![S::zero(); l.b.len()],
                        s2: vec![S::zero(); l.b.len()],
                    },
                )
            })
            .collect();
        Optimizer {
            kind,
            lr: kind.base_rate() * lr_mult,
            states,
            step: 0,
        }
    }

    fn apply(&mut self, model: &mut TrainedModel<S>, grads: &[(Vec<S>, Vec<S>)]) {
        self.step += 1;
        for (li, layer) in model.layers.iter_mut().enumerate() {
            let (wg, bg) = &grads[li];
            let (ws, bs) = &mut self.states[li];
            update_tensor(self.kind, self.lr, self.step, &mut layer.w, wg, ws);
            update_tensor(self.kind, self.lr, self.step, &mut layer.b, bg, bs);
        }
    }
}

fn update_tensor<S: Real>(
    kind: OptimizerKind,
    lr: f64,
    step: usize,
    params: &mut [S],
    grads: &[S],
    state: &mut OptState<S>,
) {
    let lr = S::of_f64(lr);
    match kind {
        OptimizerKind::Adagrad => {
            let eps = S::of_f64(1e-10);
            for i in 0..params.len() {
                let g = grads[i];
                state.s1[i] = state.s1[i] + g * g;
                params[i] = params[i] - lr * g / (state.s1[i].sqrt() + eps);
            }
        }
        OptimizerKind::Adamax => {
            let beta1 = S::of_f64(0.9);
            let beta2 = S::of_f64(0.999);
            let eps = S::of_f64(1e-8);
            let correction = S::of_f64(1.0 - 0.9f64.powi(step as i32));
            for i in 0..params.len() {
                let g = grads[i];
                state.s1[i] = beta1 * state.s1[i] + (S::one() - beta1) * g;
                state.s2[i] = (beta2 * state.s2[i]).max(g.abs());
                params[i] =
                    params[i] - (lr / correction) * state.s1[i] / (state.s2[i] + eps);
            }
        }
        OptimizerKind::Adadelta => {
            let rho = S::of_f64(0.9);
            let eps = S::of_f64(1e-6);
            for i in 0..params.len() {
                let g = grads[i];
                state.s1[i] = rho * state.s1[i] + (S::one() - rho) * g * g;
                let delta = (state.s2[i] + eps).sqrt() / (state.s1[i] + eps).sqrt() * g;
                state.s2[i] = rho * state.s2[i] + (S::one() - rho) * delta * delta;
                params[i] = params[i] - lr * delta;
            }
        }
    }
}

/// Train a copy of the model by mini-batch gradient descent on MSE with
/// early stopping on a held-out validation fraction. Deterministic per seed.
pub fn train<S: Real>(
    model: &TrainedModel<S>,
    data: &Dataset<S>,
    rows: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainedModel<S>> {
    cfg.validate()?;
    if rows.is_empty() {
        return Err(Error::spec("train: empty row set"));
    }
    if data.n_cols() != model.architecture.input_dim {
        return Err(Error::Shape {
            expected: model.architecture.input_dim,
            got: data.n_cols(),
            context: "training data width".into(),
        });
    }
    let mut rng = seeding::rng(cfg.seed);

    // validation holdout for early stopping
    let mut shuffled: Vec<usize> = rows.to_vec();
    for i in (1..shuffled.len()).rev() {
        let j = rng.gen_range(0..=i);
        shuffled.swap(i, j);
    }
    let n_val = ((cfg.validation_fraction * shuffled.len() as f64).round() as usize)
        .min(shuffled.len() - 1);
    let (val_rows, train_rows) = shuffled.split_at(n_val);
    let train_rows = train_rows.to_vec();
    let val_rows = val_rows.to_vec();

    let mut model = model.clone();
    model.training_log.clear();
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.lr_mult, &model);
    let mut ws = Workspace::new(&model);
    let mut grads: Vec<(Vec<S>, Vec<S>)> = model
        .layers
        .iter()
        .map(|l| (vec![S::zero(); l.w.len()], vec![S::zero(); l.b.len()]))
        .collect();

    let mut order = train_rows.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_layers = model.layers.clone();

    for epoch in 1..=cfg.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            for (wg, bg) in grads.iter_mut() {
                wg.iter_mut().for_each(|v| *v = S::zero());
                bg.iter_mut().for_each(|v| *v = S::zero());
            }
            let scale = S::of_f64(2.0 / batch.len() as f64);
            for &r in batch {
                let x = data.row(r);
                let yhat = self_forward_train(&model, x, &mut ws, &mut rng);
                let residual = yhat - data.target()[r];
                epoch_loss += (residual * residual).to_f64_();
                backward_params(&model, x, &mut ws, residual * scale, &mut grads);
            }
            optimizer.apply(&mut model, &grads);
        }
        let train_loss = epoch_loss / order.len() as f64;
        let val_loss = if val_rows.is_empty() {
            train_loss
        } else {
            model.evaluate_mse(data, &val_rows)?.to_f64_()
        };
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss at epoch {epoch} (train {train_loss}, val {val_loss})"
            )));
        }
        model.training_log.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best_val * (1.0 - MIN_REL_IMPROVEMENT) {
            best_val = val_loss;
            best_epoch = epoch;
            best_layers.clone_from(&model.layers);
        } else if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    model.layers = best_layers;
    Ok(model)
}

fn self_forward_train<S: Real>(
    model: &TrainedModel<S>,
    x: &[S],
    ws: &mut Workspace<S>,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> S {
    if model.architecture.dropout_prob > 0.0 {
        model.forward_cached(x, ws, Some(rng))
    } else {
        model.forward_cached(x, ws, None)
    }
}

/// Accumulate parameter gradients for one sample; `upstream` is dL/dyhat.
fn backward_params<S: Real>(
    model: &TrainedModel<S>,
    x: &[S],
    ws: &mut Workspace<S>,
    upstream: S,
    grads: &mut [(Vec<S>, Vec<S>)],
) {
    let n_layers = model.layers.len();
    let act = model.architecture.activation;
    let has_dropout = model.architecture.dropout_prob > 0.0;
    ws.delta[n_layers - 1][0] = upstream;
    for li in (0..n_layers).rev() {
        let layer = &model.layers[li];
        if li < n_layers - 1 {
            for o in 0..layer.out_dim {
                let mask = if has_dropout { ws.mask[li][o] } else { S::one() };
                ws.delta[li][o] = ws.delta[li][o] * mask * act.derivative(ws.z[li][o]);
            }
        }
        {
            let (wg, bg) = &mut grads[li];
            let prev_a: &[S] = if li == 0 { x } else { &ws.a[li - 1] };
            for o in 0..layer.out_dim {
                let d = ws.delta[li][o];
                bg[o] = bg[o] + d;
                let row = &mut wg[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, av) in row.iter_mut().zip(prev_a.iter()) {
                    *g = *g + d * *av;
                }
            }
        }
        if li > 0 {
            let (head, tail) = ws.delta.split_at_mut(li);
            let prev_delta = &mut head[li - 1];
            let cur_delta = &tail[0];
            for v in prev_delta.iter_mut() {
                *v = S::zero();
            }
            for o in 0..layer.out_dim {
                let d = cur_delta[o];
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (pv, wv) in prev_delta.iter_mut().zip(row.iter()) {
                    *pv = *pv + d * *wv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dummy, DummySpec};
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeSet;

    fn arch(input_dim: usize, l1: usize, activation: Activation) -> Architecture {
        Architecture {
            input_dim,
            l1,
            activation,
            dropout_prob: 0.0,
        }
    }

    #[test]
    fn derived_widths() {
        let a = arch(86, 32, Activation::ReLU);
        assert_eq!(a.hidden_widths(), [32, 16, 16, 8]);
        let a = arch(86, 512, Activation::ReLU);
        assert_eq!(a.hidden_widths(), [512, 256, 256, 128]);
    }

    #[test]
    fn build_is_deterministic() {
        let a = arch(10, 16, Activation::ReLU);
        let m1 = build::<f64>(&a, 5).unwrap();
        let m2 = build::<f64>(&a, 5).unwrap();
        assert_eq!(m1.layers, m2.layers);
        let m3 = build::<f64>(&a, 6).unwrap();
        assert_ne!(m1.layers, m3.layers);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let a = arch(4, 8, Activation::ReLU);
        let mut m = build::<f64>(&a, 0).unwrap();
        for layer in &mut m.layers {
            layer.w.iter_mut().for_each(|v| *v = 0.0);
            layer.b.iter_mut().for_each(|v| *v = 0.0);
        }
        assert_eq!(m.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), 0.0);
    }

    /// Hand-evaluated composition through a width-constrained net.
    #[test]
    fn forward_matches_hand_computation() {
        let a = arch(1, 4, Activation::ReLU);
        let mut m = build::<f64>(&a, 0).unwrap();
        // route the signal through unit 0 of every hidden layer
        for layer in &mut m.layers {
            layer.w.iter_mut().for_each(|v| *v = 0.0);
            layer.b.iter_mut().for_each(|v| *v = 0.0);
        }
        m.layers[0].w[0] = 2.0; // 1 -> 4
        m.layers[0].b[0] = 0.5;
        m.layers[1].w[0] = 3.0; // 4 -> 2
        m.layers[2].w[0] = 1.0; // 2 -> 2
        m.layers[3].w[0] = 0.5; // 2 -> 1
        m.layers[4].w[0] = -2.0; // 1 -> out
        m.layers[4].b[0] = 1.0;
        let x = 1.5;
        let expected = -2.0 * (0.5 * (3.0 * (2.0 * x + 0.5))) + 1.0;
        assert_abs_diff_eq!(m.forward(&[x]).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn batch_forward_equals_single_rows() {
        let spec = DummySpec {
            n_features: 5,
            n_positive: 2,
            n_negative: 2,
            n_zero: 1,
            n_samples: 100,
            seed: 1,
            ..DummySpec::default()
        };
        let (data, _) = generate_dummy::<f64>(&spec).unwrap();
        let m = build::<f64>(&arch(5, 8, Activation::LeakyReLU), 2).unwrap();
        let rows: Vec<usize> = (0..100).collect();
        let batch = m.forward_batch(&data, &rows).unwrap();
        for &r in &rows {
            assert_eq!(batch[r], m.forward(data.row(r)).unwrap());
        }
    }

    #[test]
    fn forward_shape_error() {
        let m = build::<f64>(&arch(3, 4, Activation::ReLU), 0).unwrap();
        assert!(matches!(m.forward(&[1.0, 2.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn inference_is_pure_despite_dropout_architecture() {
        let a = Architecture {
            input_dim: 4,
            l1: 8,
            activation: Activation::ReLU,
            dropout_prob: 0.5,
        };
        let m = build::<f64>(&a, 3).unwrap();
        let x = [0.3, -0.2, 0.9, 0.1];
        let y1 = m.forward(&x).unwrap();
        let y2 = m.forward(&x).unwrap();
        assert_eq!(y1.to_bits(), y2.to_bits());
    }

    #[test]
    fn input_gradient_of_linear_net_equals_weights() {
        // Make every hidden layer an identity-ish pass-through on unit 0.
        let a = arch(3, 4, Activation::ReLU);
        let mut m = build::<f64>(&a, 0).unwrap();
        for layer in &mut m.layers {
            layer.w.iter_mut().for_each(|v| *v = 0.0);
            layer.b.iter_mut().for_each(|v| *v = 0.0);
        }
        // first layer unit 0 computes w.x with a large positive bias so ReLU stays linear
        m.layers[0].w[0] = 0.25;
        m.layers[0].w[1] = -0.5;
        m.layers[0].w[2] = 1.5;
        m.layers[0].b[0] = 100.0;
        m.layers[1].w[0] = 1.0;
        m.layers[1].b[0] = 100.0;
        m.layers[2].w[0] = 1.0;
        m.layers[2].b[0] = 100.0;
        m.layers[3].w[0] = 1.0;
        m.layers[3].b[0] = 100.0;
        m.layers[4].w[0] = 1.0;
        let g = m.input_gradient(&[0.1, 0.2, 0.3]).unwrap();
        assert_abs_diff_eq!(g[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(g[2], 1.5, epsilon = 1e-12);
    }

    fn finite_difference_gradient(m: &TrainedModel<f64>, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[i] += h;
                xm[i] -= h;
                (m.forward(&xp).unwrap() - m.forward(&xm).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = seeding::rng(77);
        for trial in 0..100 {
            let m = build::<f64>(&arch(6, 8, Activation::LeakyReLU), trial).unwrap();
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let g = m.input_gradient(&x).unwrap();
            let fd = finite_difference_gradient(&m, &x, 1e-5);
            for (a, b) in g.iter().zip(&fd) {
                let denom = b.abs().max(1e-6);
                assert!(
                    (a - b).abs() / denom <= 1e-4,
                    "trial {trial}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn relu_gradient_locally_linear() {
        let a = arch(2, 4, Activation::ReLU);
        let mut m = build::<f64>(&a, 9).unwrap();
        // push all first-layer pre-activations far positive
        m.layers[0].b.iter_mut().for_each(|b| *b = 50.0);
        let g1 = m.input_gradient(&[0.1, 0.2]).unwrap();
        let g2 = m.input_gradient(&[0.11, 0.21]).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    fn linear_1d_dataset(n: usize) -> Dataset<f64> {
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 - 0.5).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x).collect();
        Dataset::new(xs, n, 1, ys, vec!["x".into()], BTreeSet::new()).unwrap()
    }

    #[test]
    fn fits_linear_data() {
        let data = linear_1d_dataset(200);
        let rows: Vec<usize> = (0..200).collect();
        let m = build::<f64>(&arch(1, 8, Activation::LeakyReLU), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 300,
            batch_size: 16,
            optimizer: OptimizerKind::Adagrad,
            lr_mult: 5.0,
            patience: 50,
            seed: 4,
            validation_fraction: 0.2,
        };
        let trained = train(&m, &data, &rows, &cfg).unwrap();
        let mse = trained.evaluate_mse(&data, &rows).unwrap();
        assert!(mse < 1e-3, "mse = {mse}");
    }

    #[test]
    fn early_stopping_contract() {
        // A zeroed model on all-zero targets has zero gradients, so the
        // validation loss plateaus at exactly 0 from epoch 1. Training must
        // stop after best_epoch + patience epochs.
        let data = Dataset::new(
            vec![0.25; 50],
            50,
            1,
            vec![0.0; 50],
            vec!["x".into()],
            BTreeSet::new(),
        )
        .unwrap();
        let rows: Vec<usize> = (0..50).collect();
        let mut m = build::<f64>(&arch(1, 8, Activation::ReLU), 1).unwrap();
        for layer in &mut m.layers {
            layer.w.iter_mut().for_each(|v| *v = 0.0);
            layer.b.iter_mut().for_each(|v| *v = 0.0);
        }
        let cfg = TrainConfig {
            epochs: 100,
            batch_size: 8,
            optimizer: OptimizerKind::Adagrad,
            lr_mult: 1.0,
            patience: 3,
            seed: 2,
            validation_fraction: 0.2,
        };
        let trained = train(&m, &data, &rows, &cfg).unwrap();
        assert_eq!(trained.training_log.len(), 1 + cfg.patience);
    }

    #[test]
    fn epochs_bounded_by_best_plus_patience() {
        let data = linear_1d_dataset(100);
        let rows: Vec<usize> = (0..100).collect();
        let m = build::<f64>(&arch(1, 8, Activation::ReLU), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 16,
            optimizer: OptimizerKind::Adamax,
            lr_mult: 1.0,
            patience: 5,
            seed: 3,
            validation_fraction: 0.2,
        };
        let trained = train(&m, &data, &rows, &cfg).unwrap();
        let best_epoch = trained
            .training_log
            .iter()
            .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
            .unwrap()
            .epoch;
        assert!(trained.training_log.len() <= (best_epoch + cfg.patience).min(cfg.epochs));
    }

    #[test]
    fn training_is_deterministic() {
        let data = linear_1d_dataset(80);
        let rows: Vec<usize> = (0..80).collect();
        let m = build::<f64>(
            &Architecture {
                input_dim: 1,
                l1: 8,
                activation: Activation::ReLU,
                dropout_prob: 0.1,
            },
            1,
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 8,
            optimizer: OptimizerKind::Adadelta,
            lr_mult: 1.0,
            patience: 10,
            seed: 9,
            validation_fraction: 0.2,
        };
        let t1 = train(&m, &data, &rows, &cfg).unwrap();
        let t2 = train(&m, &data, &rows, &cfg).unwrap();
        assert_eq!(t1.layers, t2.layers);
    }

    #[test]
    fn adagrad_step_matches_hand_derivation() {
        // Single linear layer y = w*x + b trained on one sample.
        let a = arch(1, 4, Activation::ReLU);
        let mut m = build::<f64>(&a, 0).unwrap();
        for layer in &mut m.layers {
            layer.w.iter_mut().for_each(|v| *v = 0.0);
            layer.b.iter_mut().for_each(|v| *v = 0.0);
        }
        // collapse to y = w*x with w along unit 0 and large biases keeping ReLU linear
        m.layers[0].w[0] = 1.0;
        m.layers[1].w[0] = 1.0;
        m.layers[2].w[0] = 1.0;
        m.layers[3].w[0] = 1.0;
        m.layers[4].w[0] = 0.5; // the two trainable parameters are layer 4's w and b

        let x = 2.0;
        let y = 3.0;
        let yhat = m.forward(&[x]).unwrap(); // 0.5 * 2 = 1
        assert_abs_diff_eq!(yhat, 1.0, epsilon = 1e-12);

        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = m
            .layers
            .iter()
            .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
            .collect();
        let mut ws = Workspace::new(&m);
        let out = m.forward_cached(&[x], &mut ws, None);
        backward_params(&m, &[x], &mut ws, 2.0 * (out - y), &mut grads);

        // dL/dw4 = 2(yhat-y)*a3 where a3 = 2 (the signal after identity layers)
        let gw = grads[4].0[0];
        let gb = grads[4].1[0];
        assert_abs_diff_eq!(gw, 2.0 * (1.0 - 3.0) * 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gb, 2.0 * (1.0 - 3.0), epsilon = 1e-12);

        let mut opt = Optimizer::new(OptimizerKind::Adagrad, 1.0, &m);
        opt.apply(&mut m, &grads);
        // Adagrad: acc = g^2, step = lr * g / (|g| + eps) ~ lr * sign(g)
        let expected_w = 0.5 - 0.01 * gw / (gw.abs() + 1e-10);
        let expected_b = 0.0 - 0.01 * gb / (gb.abs() + 1e-10);
        assert_abs_diff_eq!(m.layers[4].w[0], expected_w, epsilon = 1e-10);
        assert_abs_diff_eq!(m.layers[4].b[0], expected_b, epsilon = 1e-10);
    }

    #[test]
    fn evaluate_mse_examples() {
        let data = linear_1d_dataset(4);
        let rows: Vec<usize> = (0..4).collect();
        // zeroed model predicts 0 everywhere
        let mut m = build::<f64>(&arch(1, 4, Activation::ReLU), 0).unwrap();
        for layer in &mut m.layers {
            layer.w.iter_mut().for_each(|v| *v = 0.0);
            layer.b.iter_mut().for_each(|v| *v = 0.0);
        }
        let expected: f64 = data.target().iter().map(|y| y * y).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(
            m.evaluate_mse(&data, &rows).unwrap(),
            expected,
            epsilon = 1e-12
        );
        assert!(matches!(m.evaluate_mse(&data, &[]), Err(Error::Spec(_))));
    }

    #[test]
    fn constant_zero_prediction_on_unit_targets() {
        let data = Dataset::new(
            vec![0.0, 0.0],
            2,
            1,
            vec![1.0, -1.0],
            vec!["x".into()],
            BTreeSet::new(),
        )
        .unwrap();
        let mut m = build::<f64>(&arch(1, 4, Activation::ReLU), 0).unwrap();
        for layer in &mut m.layers {
            layer.w.iter_mut().for_each(|v| *v = 0.0);
            layer.b.iter_mut().for_each(|v| *v = 0.0);
        }
        assert_eq!(m.evaluate_mse(&data, &[0, 1]).unwrap(), 1.0);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_identical() {
        let data = linear_1d_dataset(50);
        let rows: Vec<usize> = (0..50).collect();
        let m = build::<f64>(&arch(1, 8, Activation::LeakyReLU), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            batch_size: 8,
            optimizer: OptimizerKind::Adamax,
            lr_mult: 1.0,
            patience: 5,
            seed: 1,
            validation_fraction: 0.2,
        };
        let trained = train(&m, &data, &rows, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        trained.save(&path).unwrap();
        let loaded = TrainedModel::<f64>::load(&path).unwrap();
        for &r in &rows {
            let a = trained.forward(data.row(r)).unwrap();
            let b = loaded.forward(data.row(r)).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
