use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Model, ModelError, TrainConfig};
use crate::UserId;

pub const EMBEDDING_DIM: usize = 64;

const EMBEDDING_INIT_STD: f64 = 0.05;
const DIVERGENCE_LIMIT: f64 = 1e12;

/// Layer widths. The default is the published network: a 64-wide person
/// embedding, extractor `(D + 64) → 256 → 128` and head `(128 + 64) → 64 → 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhmShape {
    pub embed_dim: usize,
    pub extractor_hidden: usize,
    pub extractor_out: usize,
    pub head_hidden: usize,
}

impl Default for PhmShape {
    fn default() -> Self {
        Self { embed_dim: EMBEDDING_DIM, extractor_hidden: 256, extractor_out: 128, head_hidden: 64 }
    }
}

/// Fully connected layer; `w` is `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn he(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid std");
        Self {
            w: Array2::from_shape_fn((fan_out, fan_in), |_| normal.sample(rng)),
            b: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self { w: Array2::zeros(self.w.raw_dim()), b: Array1::zeros(self.b.raw_dim()) }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }

    fn forward_vec(&self, x: &Array1<f64>) -> Array1<f64> {
        self.w.dot(x) + &self.b
    }

    pub fn fan_in(&self) -> usize {
        self.w.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.w.nrows()
    }
}

/// Parameters of the person-embedding network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhmWeights {
    pub n_features: usize,
    /// One row per known user.
    pub embedding: Array2<f64>,
    pub extractor: [Dense; 2],
    pub head: [Dense; 2],
    pub dropout_p: f64,
    pub l2_lambda: f64,
}

impl PhmWeights {
    pub fn init(n_features: usize, n_users: usize, shape: PhmShape, rng: &mut ChaCha8Rng) -> Self {
        let e = shape.embed_dim;
        let normal = Normal::new(0.0, EMBEDDING_INIT_STD).expect("valid std");
        let embedding = Array2::from_shape_fn((n_users, e), |_| normal.sample(rng));
        Self {
            n_features,
            embedding,
            extractor: [
                Dense::he(n_features + e, shape.extractor_hidden, rng),
                Dense::he(shape.extractor_hidden, shape.extractor_out, rng),
            ],
            head: [Dense::he(shape.extractor_out + e, shape.head_hidden, rng), Dense::he(shape.head_hidden, 1, rng)],
            dropout_p: 0.5,
            l2_lambda: 1e-5,
        }
    }

    pub fn n_users(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.ncols()
    }

    fn zeros_like(&self) -> Self {
        Self {
            n_features: self.n_features,
            embedding: Array2::zeros(self.embedding.raw_dim()),
            extractor: [self.extractor[0].zeros_like(), self.extractor[1].zeros_like()],
            head: [self.head[0].zeros_like(), self.head[1].zeros_like()],
            dropout_p: self.dropout_p,
            l2_lambda: self.l2_lambda,
        }
    }

    /// Every parameter tensor as a flat slice, in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![self.embedding.as_slice().expect("standard layout")];
        for d in self.extractor.iter().chain(&self.head) {
            v.push(d.w.as_slice().expect("standard layout"));
            v.push(d.b.as_slice().expect("standard layout"));
        }
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![self.embedding.as_slice_mut().expect("standard layout")];
        for d in self.extractor.iter_mut().chain(self.head.iter_mut()) {
            v.push(d.w.as_slice_mut().expect("standard layout"));
            v.push(d.b.as_slice_mut().expect("standard layout"));
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn squared_norm(&self) -> f64 {
        self.tensors().iter().map(|t| t.iter().map(|v| v * v).sum::<f64>()).sum()
    }

    fn mean_embedding(&self) -> Array1<f64> {
        self.embedding.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(self.embed_dim()))
    }
}

/// Inference forward pass for user row `user`.
pub fn phm_forward(w: &PhmWeights, features: &[f64], user: usize) -> Result<f64, ModelError> {
    phm_forward_traced(w, features, user).map(|(y, _)| y)
}

/// Forward pass that also reports the width of every intermediate vector:
/// extractor input, extractor hidden, extractor output, head input, head
/// hidden, output.
pub fn phm_forward_traced(w: &PhmWeights, features: &[f64], user: usize) -> Result<(f64, Vec<usize>), ModelError> {
    if features.len() != w.n_features {
        return Err(ModelError::DimensionMismatch { expected: w.n_features, got: features.len() });
    }
    if user >= w.n_users() {
        return Err(ModelError::UnknownUser(format!("embedding row {user} of {}", w.n_users())));
    }
    let emb = w.embedding.row(user).to_owned();
    Ok(forward_one(w, features, &emb))
}

fn forward_one(w: &PhmWeights, features: &[f64], emb: &Array1<f64>) -> (f64, Vec<usize>) {
    let relu = |v: f64| v.max(0.0);
    let x = Array1::from(features.to_vec());
    let a0 = concatenate![Axis(0), x, *emb];
    let h1 = w.extractor[0].forward_vec(&a0).mapv(relu);
    let h2 = w.extractor[1].forward_vec(&h1).mapv(relu);
    let a2 = concatenate![Axis(0), h2, *emb];
    let h3 = w.head[0].forward_vec(&a2).mapv(relu);
    let out = w.head[1].forward_vec(&h3);
    let widths = vec![a0.len(), h1.len(), h2.len(), a2.len(), h3.len(), out.len()];
    (out[0], widths)
}

/// Activations of one mini-batch kept for backpropagation.
struct BatchPass {
    a0: Array2<f64>,
    z1: Array2<f64>,
    h1: Array2<f64>,
    z2: Array2<f64>,
    a2: Array2<f64>,
    z3: Array2<f64>,
    h3: Array2<f64>,
    out: Array1<f64>,
    masks: Option<[Array2<f64>; 3]>,
}

fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let keep = 1.0 - p;
    Array2::from_shape_fn((rows, cols), |_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
}

fn forward_batch(w: &PhmWeights, x: &Array2<f64>, users: &[usize], dropout: Option<&mut ChaCha8Rng>) -> BatchPass {
    let b = x.nrows();
    let emb = w.embedding.select(Axis(0), users);
    let a0 = concatenate![Axis(1), *x, emb];
    let masks = dropout.map(|rng| {
        [
            dropout_mask(b, w.extractor[0].fan_out(), w.dropout_p, rng),
            dropout_mask(b, w.extractor[1].fan_out(), w.dropout_p, rng),
            dropout_mask(b, w.head[0].fan_out(), w.dropout_p, rng),
        ]
    });
    let act = |z: &Array2<f64>, k: usize| {
        let mut h = z.mapv(|v| v.max(0.0));
        if let Some(m) = &masks {
            h *= &m[k];
        }
        h
    };
    let z1 = w.extractor[0].forward(&a0);
    let h1 = act(&z1, 0);
    let z2 = w.extractor[1].forward(&h1);
    let h2 = act(&z2, 1);
    let a2 = concatenate![Axis(1), h2, emb];
    let z3 = w.head[0].forward(&a2);
    let h3 = act(&z3, 2);
    let out = w.head[1].forward(&h3).column(0).to_owned();
    BatchPass { a0, z1, h1, z2, a2, z3, h3, out, masks }
}

/// Gradient of `mean((out - y)^2) + λ‖θ‖²` for the batch, and that loss.
fn backward(w: &PhmWeights, pass: &BatchPass, users: &[usize], y: &Array1<f64>) -> (PhmWeights, f64) {
    let n = y.len() as f64;
    let d = w.n_features;
    let resid = &pass.out - y;
    let mse = resid.mapv(|r| r * r).sum() / n;
    let mut g = w.zeros_like();

    let relu_back = |dh: Array2<f64>, z: &Array2<f64>, k: usize| {
        let mut dz = dh;
        if let Some(m) = &pass.masks {
            dz *= &m[k];
        }
        dz.zip_mut_with(z, |g, &z| {
            if z <= 0.0 {
                *g = 0.0;
            }
        });
        dz
    };

    let d_out = (resid * (2.0 / n)).insert_axis(Axis(1));
    g.head[1].w = d_out.t().dot(&pass.h3);
    g.head[1].b = d_out.sum_axis(Axis(0));
    let dz3 = relu_back(d_out.dot(&w.head[1].w), &pass.z3, 2);
    g.head[0].w = dz3.t().dot(&pass.a2);
    g.head[0].b = dz3.sum_axis(Axis(0));
    let da2 = dz3.dot(&w.head[0].w);
    let h_width = w.extractor[1].fan_out();
    let dz2 = relu_back(da2.slice(s![.., ..h_width]).to_owned(), &pass.z2, 1);
    g.extractor[1].w = dz2.t().dot(&pass.h1);
    g.extractor[1].b = dz2.sum_axis(Axis(0));
    let dz1 = relu_back(dz2.dot(&w.extractor[1].w), &pass.z1, 0);
    g.extractor[0].w = dz1.t().dot(&pass.a0);
    g.extractor[0].b = dz1.sum_axis(Axis(0));
    let da0 = dz1.dot(&w.extractor[0].w);
    for (r, &u) in users.iter().enumerate() {
        let mut row = g.embedding.row_mut(u);
        row += &da0.slice(s![r, d..]);
        row += &da2.slice(s![r, h_width..]);
    }

    for d in g.extractor.iter_mut().chain(g.head.iter_mut()) {
        if !d.w.is_standard_layout() {
            d.w = d.w.as_standard_layout().into_owned();
        }
    }
    let lambda = w.l2_lambda;
    if lambda > 0.0 {
        for (gt, pt) in g.tensors_mut().into_iter().zip(w.tensors()) {
            for (gv, pv) in gt.iter_mut().zip(pt) {
                *gv += 2.0 * lambda * pv;
            }
        }
    }
    (g, mse + lambda * w.squared_norm())
}

/// Per-column standardization fitted on training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let n = x.len().max(1) as f64;
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let std = (0..d)
            .map(|j| {
                let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v > 1e-24 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn identity(d: usize) -> Self {
        Self { mean: vec![0.0; d], std: vec![1.0; d] }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.mean.iter().zip(&self.std)).map(|(v, (m, s))| (v - m) / s).collect()
    }
}

/// A trained embedding network plus the metadata needed to serve it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhmModel {
    /// Users in embedding-row order. Empty when all users share one row.
    pub users: Vec<UserId>,
    pub personalized: bool,
    pub scaler: Scaler,
    pub weights: PhmWeights,
    pub config: TrainConfig,
    /// Mean training loss of every epoch run so far.
    pub loss_trace: Vec<f64>,
}

/// Trains a personalized network with one embedding row per user.
pub fn phm_train(data: &Dataset, config: &TrainConfig) -> Result<PhmModel, ModelError> {
    PhmModel::train(data, config, true)
}

impl PhmModel {
    /// The non-personalized baseline: identical network, one shared row.
    pub fn train_shared(data: &Dataset, config: &TrainConfig) -> Result<Self, ModelError> {
        Self::train(data, config, false)
    }

    fn train(data: &Dataset, config: &TrainConfig, personalized: bool) -> Result<Self, ModelError> {
        config.validate()?;
        if data.is_empty() {
            return Err(ModelError::NoLabeledData);
        }
        let d = data.check_width()?;
        let data = &data.subset(&data.canonical_order());
        let mut users: Vec<UserId> = if personalized { data.users.clone() } else { Vec::new() };
        users.sort();
        users.dedup();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut weights = PhmWeights::init(d, users.len().max(1), config.shape, &mut rng);
        weights.dropout_p = config.dropout_p;
        weights.l2_lambda = config.l2_lambda;
        weights.head[1].b[0] = data.y.iter().sum::<f64>() / data.len() as f64;
        let mut model = PhmModel {
            users,
            personalized,
            scaler: Scaler::fit(&data.x),
            weights,
            config: config.clone(),
            loss_trace: Vec::new(),
        };
        model.run_epochs(data, config.epochs, &mut rng)?;
        Ok(model)
    }

    /// Continues training on `data` for `epochs` more epochs. Users not yet
    /// in the table get the mean of the existing rows as their starting row.
    pub fn fine_tune(&mut self, data: &Dataset, epochs: usize, seed: u64) -> Result<(), ModelError> {
        if data.is_empty() {
            return Err(ModelError::NoLabeledData);
        }
        let d = data.check_width()?;
        if d != self.weights.n_features {
            return Err(ModelError::DimensionMismatch { expected: self.weights.n_features, got: d });
        }
        if self.personalized {
            for u in &data.users {
                self.add_user(u);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.run_epochs(data, epochs, &mut rng)
    }

    /// Appends an embedding row initialized to the mean row. No-op for a
    /// known user or a shared-row model.
    pub fn add_user(&mut self, user: &UserId) {
        if !self.personalized {
            return;
        }
        if let Err(pos) = self.users.binary_search(user) {
            let mean = self.weights.mean_embedding();
            let mut rows: Vec<Array1<f64>> = self.weights.embedding.outer_iter().map(|r| r.to_owned()).collect();
            rows.insert(pos, mean);
            let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
            self.weights.embedding = ndarray::stack(Axis(0), &views).expect("rows share a width");
            self.users.insert(pos, user.clone());
        }
    }

    /// Embedding row of `user`, if it has one.
    pub fn user_index(&self, user: &UserId) -> Option<usize> {
        if self.personalized {
            self.users.binary_search(user).ok()
        } else {
            Some(0)
        }
    }

    fn run_epochs(&mut self, data: &Dataset, epochs: usize, rng: &mut ChaCha8Rng) -> Result<(), ModelError> {
        let order = data.canonical_order();
        let x: Vec<Vec<f64>> = order.iter().map(|&i| self.scaler.apply(&data.x[i])).collect();
        let y: Vec<f64> = order.iter().map(|&i| data.y[i]).collect();
        let rows: Vec<usize> = order
            .iter()
            .map(|&i| self.user_index(&data.users[i]).expect("every training user has a row"))
            .collect();
        let d = self.weights.n_features;
        let lr = self.config.learning_rate;
        let mu = self.config.momentum;
        let mut velocity = self.weights.zeros_like();
        let mut perm: Vec<usize> = (0..y.len()).collect();
        let start_epoch = self.loss_trace.len();
        for epoch in 0..epochs {
            perm.shuffle(rng);
            let mut total = 0.0;
            for batch in perm.chunks(self.config.batch_size) {
                let xb = Array2::from_shape_fn((batch.len(), d), |(r, c)| x[batch[r]][c]);
                let yb = Array1::from_iter(batch.iter().map(|&i| y[i]));
                let ub: Vec<usize> = batch.iter().map(|&i| rows[i]).collect();
                let pass = forward_batch(&self.weights, &xb, &ub, Some(&mut *rng));
                let (grad, loss) = backward(&self.weights, &pass, &ub, &yb);
                if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
                    return Err(ModelError::DivergedLoss { epoch: start_epoch + epoch });
                }
                total += loss * batch.len() as f64;
                for ((p, v), g) in self.weights.tensors_mut().into_iter().zip(velocity.tensors_mut()).zip(grad.tensors())
                {
                    for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                        *v = mu * *v - lr * g;
                        *p += *v;
                    }
                }
            }
            self.loss_trace.push(total / y.len() as f64);
        }
        if !self.weights.is_finite() {
            return Err(ModelError::DivergedLoss { epoch: start_epoch + epochs });
        }
        Ok(())
    }

    /// Inference on raw (unstandardized) features.
    pub fn predict_raw(&self, user: &UserId, features: &[f64]) -> Result<f64, ModelError> {
        if features.len() != self.weights.n_features {
            return Err(ModelError::DimensionMismatch { expected: self.weights.n_features, got: features.len() });
        }
        let x = self.scaler.apply(features);
        match self.user_index(user) {
            Some(i) => phm_forward(&self.weights, &x, i),
            None => Ok(forward_one(&self.weights, &x, &self.weights.mean_embedding()).0),
        }
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        serde_json::to_string(self).map_err(|e| ModelError::Snapshot(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        let m: Self = serde_json::from_str(s).map_err(|e| ModelError::Snapshot(e.to_string()))?;
        if !m.weights.is_finite() {
            return Err(ModelError::Snapshot("non-finite parameters".into()));
        }
        Ok(m)
    }
}

impl Model for PhmModel {
    fn predict(&self, user: &UserId, x: &[f64]) -> Result<f64, ModelError> {
        self.predict_raw(user, x)
    }
}

/// Outcome of comparing backpropagated gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub checked: usize,
    pub max_relative_error: f64,
    /// `(tensor, element)` of the worst disagreement.
    pub worst: (usize, usize),
}

/// Checks the analytic gradient of the training loss (dropout off) against
/// central finite differences. `stride` > 1 checks every `stride`-th element
/// of each tensor. Relative error is `|a − n| / max(|a|, |n|, floor)`.
pub fn gradient_check(
    w: &PhmWeights,
    x: &[Vec<f64>],
    users: &[usize],
    y: &[f64],
    eps: f64,
    floor: f64,
    stride: usize,
) -> GradientCheck {
    let xb = Array2::from_shape_fn((x.len(), w.n_features), |(r, c)| x[r][c]);
    let yb = Array1::from(y.to_vec());
    let loss = |w: &PhmWeights| {
        let pass = forward_batch(w, &xb, users, None);
        backward(w, &pass, users, &yb).1
    };
    let pass = forward_batch(w, &xb, users, None);
    let (analytic, _) = backward(w, &pass, users, &yb);
    let analytic: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.to_vec()).collect();

    let mut probe = w.clone();
    let mut result = GradientCheck { checked: 0, max_relative_error: 0.0, worst: (0, 0) };
    for (t, grads) in analytic.iter().enumerate() {
        for e in (0..grads.len()).step_by(stride.max(1)) {
            let orig = probe.tensors()[t][e];
            probe.tensors_mut()[t][e] = orig + eps;
            let up = loss(&probe);
            probe.tensors_mut()[t][e] = orig - eps;
            let down = loss(&probe);
            probe.tensors_mut()[t][e] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = grads[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            if rel > result.max_relative_error {
                result.max_relative_error = rel;
                result.worst = (t, e);
            }
            result.checked += 1;
        }
    }
    result
}
