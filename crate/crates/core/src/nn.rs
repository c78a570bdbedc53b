//! Conventionally trained MLP baseline for head-to-head comparisons.
//!
//! A fully connected ReLU network (default input -> 50 -> 30 -> output)
//! trained by handwritten backpropagation and Adam with decoupled L2 weight
//! decay, inverted dropout on the hidden layers, and early stopping on a
//! held-out validation split. Inputs are standardized per feature using the
//! training-split statistics; inference is deterministic with dropout off.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub dropout_rate: f64,
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![50, 30],
            dropout_rate: 0.2,
            weight_decay: 1e-3,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            patience: 20,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Parameter("hidden layer sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Parameter(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Parameter(format!(
                "patience ({}) exceeds max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        if !(0.0 < self.val_fraction && self.val_fraction < 1.0) {
            return Err(Error::Parameter(format!(
                "val_fraction must be in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Parameter(
                "learning_rate must be positive and weight_decay nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// One dense layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseLayer {
    /// (outputs x inputs) weight matrix.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

/// Fully connected network with per-feature input standardization baked in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    /// Hidden layers followed by the single-output layer.
    pub layers: Vec<DenseLayer>,
    pub input_mean: Array1<f64>,
    pub input_sd: Array1<f64>,
}

impl Mlp {
    /// Scaled-normal initialization: weights N(0, 1/fan_in), zero biases,
    /// identity input standardization.
    pub fn init(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Parameter("input dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = StandardNormal;
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for &units in hidden.iter().chain(std::iter::once(&1usize)) {
            let scale = 1.0 / (fan_in as f64).sqrt();
            let mut weights = Array2::<f64>::zeros((units, fan_in));
            for v in weights.iter_mut() {
                let z: f64 = normal.sample(&mut rng);
                *v = z * scale;
            }
            layers.push(DenseLayer {
                weights,
                biases: Array1::zeros(units),
            });
            fan_in = units;
        }
        Ok(Self {
            layers,
            input_mean: Array1::zeros(input_dim),
            input_sd: Array1::from_elem(input_dim, 1.0),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    fn standardize_input(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        Array1::from_iter(
            x.iter()
                .zip(self.input_mean.iter())
                .zip(self.input_sd.iter())
                .map(|((v, m), s)| (v - m) / s),
        )
    }

    /// Deterministic forward pass (dropout off).
    fn forward_output(&self, x: ArrayView1<'_, f64>) -> f64 {
        let n_layers = self.layers.len();
        let mut h = self.standardize_input(x);
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weights.dot(&h) + &layer.biases;
            if l + 1 < n_layers {
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = z;
        }
        h[0]
    }

    /// Scalar prediction for one input row.
    pub fn predict_one(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(self.forward_output(x))
    }
}

/// Per-epoch loss record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

/// Training history.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose parameters were restored (minimal validation loss).
    pub best_epoch: Option<usize>,
}

struct AdamState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    step: usize,
}

impl AdamState {
    fn new(model: &Mlp) -> Self {
        Self {
            m_w: model.layers.iter().map(|l| Array2::zeros(l.weights.dim())).collect(),
            v_w: model.layers.iter().map(|l| Array2::zeros(l.weights.dim())).collect(),
            m_b: model.layers.iter().map(|l| Array1::zeros(l.biases.len())).collect(),
            v_b: model.layers.iter().map(|l| Array1::zeros(l.biases.len())).collect(),
            step: 0,
        }
    }

    /// One Adam step with decoupled weight decay on the weight matrices.
    fn update(&mut self, model: &mut Mlp, grads: &Gradients, lr: f64, weight_decay: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for (l, layer) in model.layers.iter_mut().enumerate() {
            for (w, (g, (m, v))) in layer.weights.iter_mut().zip(
                grads.weights[l]
                    .iter()
                    .zip(self.m_w[l].iter_mut().zip(self.v_w[l].iter_mut())),
            ) {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let step = lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
                *w -= step + lr * weight_decay * *w;
            }
            for (b, (g, (m, v))) in layer.biases.iter_mut().zip(
                grads.biases[l]
                    .iter()
                    .zip(self.m_b[l].iter_mut().zip(self.v_b[l].iter_mut())),
            ) {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                *b -= lr * (*m / bc1) / ((*v / bc2).sqrt() + ADAM_EPS);
            }
        }
    }
}

struct Gradients {
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

/// Mean squared error and its parameter gradients on one minibatch.
///
/// `dropout` carries one inverted-scaling mask per hidden layer (rows indexed
/// by batch position), or `None` for a deterministic pass. `x_std` holds the
/// already-standardized feature rows.
fn batch_loss_and_grads(
    model: &Mlp,
    x_std: &Array2<f64>,
    y: ArrayView1<'_, f64>,
    rows: &[usize],
    dropout: Option<&[Array2<f64>]>,
) -> (f64, Gradients) {
    let n_layers = model.layers.len();
    let batch = rows.len() as f64;
    let mut grads = Gradients {
        weights: model.layers.iter().map(|l| Array2::zeros(l.weights.dim())).collect(),
        biases: model.layers.iter().map(|l| Array1::zeros(l.biases.len())).collect(),
    };
    let mut loss = 0.0;
    for (b, &row) in rows.iter().enumerate() {
        // Forward with cached activations (post dropout where enabled).
        let mut activations: Vec<Array1<f64>> = Vec::with_capacity(n_layers + 1);
        activations.push(x_std.row(row).to_owned());
        for (l, layer) in model.layers.iter().enumerate() {
            let mut z = layer.weights.dot(activations.last().unwrap()) + &layer.biases;
            if l + 1 < n_layers {
                z.mapv_inplace(|v| v.max(0.0));
                if let Some(masks) = dropout {
                    for (zv, mask) in z.iter_mut().zip(masks[l].row(b).iter()) {
                        *zv *= mask;
                    }
                }
            }
            activations.push(z);
        }
        let pred = activations[n_layers][0];
        let err = pred - y[row];
        loss += err * err;

        // Backward pass: delta is d loss / d z for the current layer.
        let mut delta = Array1::from_elem(1, 2.0 * err / batch);
        for l in (0..n_layers).rev() {
            let input = &activations[l];
            for (i, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    grads.biases[l][i] += d;
                    let mut grad_row = grads.weights[l].row_mut(i);
                    for (gw, &inp) in grad_row.iter_mut().zip(input.iter()) {
                        *gw += d * inp;
                    }
                }
            }
            if l == 0 {
                break;
            }
            // Propagate through W, then through ReLU (and the dropout mask).
            let mut next = model.layers[l].weights.t().dot(&delta);
            for (i, nv) in next.iter_mut().enumerate() {
                // activations[l] holds the post-ReLU (and post-mask) value;
                // its positivity decides the ReLU subgradient, zero at zero.
                if activations[l][i] <= 0.0 {
                    *nv = 0.0;
                } else if let Some(masks) = dropout {
                    *nv *= masks[l - 1][[b, i]];
                }
            }
            delta = next;
        }
    }
    (loss / batch, grads)
}

fn mse_on(model: &Mlp, x_std: &Array2<f64>, y: ArrayView1<'_, f64>, rows: &[usize]) -> f64 {
    let n_layers = model.layers.len();
    let mut loss = 0.0;
    for &row in rows {
        let mut h = x_std.row(row).to_owned();
        for (l, layer) in model.layers.iter().enumerate() {
            let mut z = layer.weights.dot(&h) + &layer.biases;
            if l + 1 < n_layers {
                z.mapv_inplace(|v| v.max(0.0));
            }
            h = z;
        }
        let err = h[0] - y[row];
        loss += err * err;
    }
    loss / rows.len() as f64
}

/// Trains the baseline MLP.
///
/// Minimizes MSE with Adam and decoupled L2 decay, early-stops on the
/// validation split with the configured patience, and restores the
/// best-validation parameters. Deterministic given the seed.
pub fn train_mlp(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    cfg: &TrainConfig,
) -> Result<(Mlp, TrainingLog)> {
    cfg.validate()?;
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(Error::Dimension(format!(
            "features have {n} rows but targets have length {}",
            y.len()
        )));
    }
    if n <= cfg.batch_size {
        return Err(Error::Parameter(format!(
            "need more than batch_size = {} training samples, got {n}",
            cfg.batch_size
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init_seed: u64 = rng.gen();
    let mut model = Mlp::init(p, &cfg.hidden, init_seed)?;

    // Validation split from a seeded shuffle.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64 * cfg.val_fraction).round() as usize).clamp(1, n - 1);
    let val_rows = order[..n_val].to_vec();
    let mut train_rows = order[n_val..].to_vec();
    if train_rows.len() < cfg.batch_size {
        return Err(Error::Parameter(format!(
            "validation split leaves {} training samples, fewer than one batch of {}",
            train_rows.len(),
            cfg.batch_size
        )));
    }

    // Input standardization from the training split (population SD; constant
    // features keep scale 1).
    let mut mean = Array1::<f64>::zeros(p);
    let mut sd = Array1::<f64>::zeros(p);
    for k in 0..p {
        let mut acc = 0.0;
        for &i in &train_rows {
            acc += x[[i, k]];
        }
        let m = acc / train_rows.len() as f64;
        let mut ss = 0.0;
        for &i in &train_rows {
            ss += (x[[i, k]] - m) * (x[[i, k]] - m);
        }
        let s = (ss / train_rows.len() as f64).sqrt();
        mean[k] = m;
        sd[k] = if s > 0.0 { s } else { 1.0 };
    }
    model.input_mean = mean;
    model.input_sd = sd;
    let mut x_std = x.to_owned();
    for k in 0..p {
        let (m, s) = (model.input_mean[k], model.input_sd[k]);
        for i in 0..n {
            x_std[[i, k]] = (x_std[[i, k]] - m) / s;
        }
    }

    let mut log = TrainingLog::default();
    if cfg.max_epochs == 0 {
        return Ok((model, log));
    }

    let keep = 1.0 - cfg.dropout_rate;
    let mut adam = AdamState::new(&model);
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params: Option<Vec<DenseLayer>> = None;
    let mut since_best = 0usize;

    for epoch in 0..cfg.max_epochs {
        train_rows.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch_rows in train_rows.chunks(cfg.batch_size) {
            let masks: Option<Vec<Array2<f64>>> = if cfg.dropout_rate > 0.0 {
                Some(
                    cfg.hidden
                        .iter()
                        .map(|&units| {
                            let mut mask = Array2::<f64>::zeros((batch_rows.len(), units));
                            for v in mask.iter_mut() {
                                if rng.gen::<f64>() < keep {
                                    *v = 1.0 / keep;
                                }
                            }
                            mask
                        })
                        .collect(),
                )
            } else {
                None
            };
            let (loss, grads) =
                batch_loss_and_grads(&model, &x_std, y, batch_rows, masks.as_deref());
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged: non-finite loss at epoch {epoch}"
                )));
            }
            adam.update(&mut model, &grads, cfg.learning_rate, cfg.weight_decay);
            epoch_loss += loss;
            batches += 1;
        }
        let train_mse = epoch_loss / batches as f64;
        let val_mse = mse_on(&model, &x_std, y, &val_rows);
        if !val_mse.is_finite() {
            return Err(Error::Numeric(format!(
                "training diverged: non-finite validation loss at epoch {epoch}"
            )));
        }
        log.epochs.push(EpochStats {
            epoch,
            train_mse,
            val_mse,
        });
        if val_mse < best_val {
            best_val = val_mse;
            best_epoch = epoch;
            best_params = Some(model.layers.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    if let Some(params) = best_params {
        model.layers = params;
        log.best_epoch = Some(best_epoch);
    }
    Ok((model, log))
}

/// Deterministic predictions for a feature matrix (dropout disabled).
pub fn predict_mlp(model: &Mlp, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    if x.ncols() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "input has {} features, model expects {}",
            x.ncols(),
            model.input_dim()
        )));
    }
    let mut out = Array1::<f64>::zeros(x.nrows());
    for (i, row) in x.rows().into_iter().enumerate() {
        out[i] = model.predict_one(row)?;
    }
    Ok(out)
}
