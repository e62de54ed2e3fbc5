//! Single-hidden-layer regression network with a hand-written ADAM optimizer.
//!
//! `ŷ = sigmoid(w2 · relu(w1ᵀ x̃ + b1) + b2)`, where `x̃` is the input after
//! per-feature z-scoring. The z-score statistics are fitted once on the data a
//! model is first trained on and then travel with it; the public API offers no
//! way to refit them on other data.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

pub const DEFAULT_HIDDEN: usize = 16;
pub const MODEL_MAGIC: &[u8; 8] = b"QFEDMLP1";
pub const MODEL_HEADER_BYTES: usize = 16;

// keeps the output strictly inside (0, 1) where sigmoid rounds to 0 or 1
const OUTPUT_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegressorError {
    #[error("input width {got} does not match model width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("{0} rows of features but {1} targets")]
    LengthMismatch(usize, usize),
    #[error("no training or evaluation rows")]
    EmptyData,
    #[error("network widths must be at least 1 (got m_in={m_in}, h={h})")]
    ZeroWidth { m_in: usize, h: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("models to combine have different shapes")]
    ShapeMismatch,
    #[error("averaging weights must be non-negative and sum to 1")]
    InvalidWeights,
    #[error("malformed model file: {0}")]
    BadModelFile(String),
}

pub type Result<T> = std::result::Result<T, RegressorError>;

/// Network parameters; `w1[i * h + j]` connects input `i` to hidden unit `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    m_in: usize,
    h: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl MlpParams {
    /// All-zero parameters; also the shape of a gradient.
    pub fn zeros(m_in: usize, h: usize) -> Self {
        Self {
            m_in,
            h,
            w1: vec![0.0; m_in * h],
            b1: vec![0.0; h],
            w2: vec![0.0; h],
            b2: 0.0,
        }
    }

    /// Xavier-uniform weights, zero biases.
    pub fn init(m_in: usize, h: usize, seed: u64) -> Result<Self> {
        if m_in == 0 || h == 0 {
            return Err(RegressorError::ZeroWidth { m_in, h });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(m_in, h);
        let a1 = (6.0 / (m_in + h) as f64).sqrt();
        for w in &mut p.w1 {
            *w = rng.random_range(-a1..=a1);
        }
        let a2 = (6.0 / (h + 1) as f64).sqrt();
        for w in &mut p.w2 {
            *w = rng.random_range(-a2..=a2);
        }
        Ok(p)
    }

    pub fn m_in(&self) -> usize {
        self.m_in
    }

    pub fn hidden(&self) -> usize {
        self.h
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.m_in == other.m_in && self.h == other.h
    }

    /// Parameter tensors in serialization order: w1, b1, w2, b2.
    pub fn tensors(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, std::slice::from_ref(&self.b2)]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            std::slice::from_mut(&mut self.b2),
        ]
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors().into_iter().flatten().copied()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    /// Size of the wire/model-file encoding in bytes.
    pub fn encoded_len(&self) -> usize {
        MODEL_HEADER_BYTES + 8 * self.n_params()
    }

    /// Magic, `m_in` and `h` as little-endian u32, then every value as a
    /// little-endian f64 in the order w1 (row-major), b1, w2, b2.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(self.m_in as u32).to_le_bytes());
        out.extend_from_slice(&(self.h as u32).to_le_bytes());
        for v in self.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| RegressorError::BadModelFile(m.to_string());
        if bytes.len() < MODEL_HEADER_BYTES || &bytes[..8] != MODEL_MAGIC {
            return Err(bad("missing header"));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
        let (m_in, h) = (word(8), word(12));
        if m_in == 0 || h == 0 {
            return Err(RegressorError::ZeroWidth { m_in, h });
        }
        let mut p = Self::zeros(m_in, h);
        if bytes.len() != p.encoded_len() {
            return Err(bad(&format!(
                "expected {} bytes for m_in={m_in}, h={h}, found {}",
                p.encoded_len(),
                bytes.len()
            )));
        }
        let mut chunks = bytes[MODEL_HEADER_BYTES..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                *v = chunks.next().expect("length checked");
            }
        }
        if !p.is_finite() {
            return Err(RegressorError::NonFinite("model file"));
        }
        Ok(p)
    }

    /// Output for an already-normalized input; fills `hidden` with the ReLU
    /// activations and returns `(clamped output, unclamped sigmoid)`.
    fn forward_normalized(&self, x: &[f64], hidden: &mut [f64]) -> (f64, f64) {
        hidden.copy_from_slice(&self.b1);
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.w1[i * self.h..(i + 1) * self.h];
            for (a, &w) in hidden.iter_mut().zip(row) {
                *a += w * xi;
            }
        }
        let mut z = self.b2;
        for (a, &w) in hidden.iter_mut().zip(&self.w2) {
            *a = a.max(0.0);
            z += w * *a;
        }
        let s = sigmoid(z);
        (s.clamp(OUTPUT_MARGIN, 1.0 - OUTPUT_MARGIN), s)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-feature z-score statistics. Constant features keep unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Normalization {
    pub(crate) fn fit(x: &Matrix) -> Result<Self> {
        if x.n_rows() == 0 {
            return Err(RegressorError::EmptyData);
        }
        let n = x.n_rows() as f64;
        let mut mean = vec![0.0; x.n_cols()];
        for row in x.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; x.n_cols()];
        for row in x.rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let std: Vec<f64> = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 { sd } else { 1.0 }
            })
            .collect();
        if mean.iter().chain(&std).any(|v| !v.is_finite()) {
            return Err(RegressorError::NonFinite("features"));
        }
        Ok(Self { mean, std })
    }

    /// Pass-through statistics (mean 0, scale 1).
    pub fn identity(width: usize) -> Self {
        Self {
            mean: vec![0.0; width],
            std: vec![1.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    /// Statistics of a column subset, in the given order.
    pub fn select(&self, columns: &[usize]) -> Self {
        Self {
            mean: columns.iter().map(|&j| self.mean[j]).collect(),
            std: columns.iter().map(|&j| self.std[j]).collect(),
        }
    }

    fn apply_into(&self, row: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(row).zip(&self.mean).zip(&self.std) {
            *o = (v - m) / s;
        }
    }

    fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.n_rows(), x.n_cols());
        let w = x.n_cols();
        for (i, row) in x.rows().enumerate() {
            self.apply_into(row, &mut out.as_mut_slice()[i * w..(i + 1) * w]);
        }
        out
    }
}

fn check_width(params: &MlpParams, stats: &Normalization, width: usize) -> Result<()> {
    if stats.width() != params.m_in {
        return Err(RegressorError::WidthMismatch {
            expected: params.m_in,
            got: stats.width(),
        });
    }
    if width != params.m_in {
        return Err(RegressorError::WidthMismatch {
            expected: params.m_in,
            got: width,
        });
    }
    Ok(())
}

/// Prediction for one raw feature row.
pub fn forward(params: &MlpParams, x: &[f64], stats: &Normalization) -> Result<f64> {
    check_width(params, stats, x.len())?;
    let mut xn = vec![0.0; x.len()];
    stats.apply_into(x, &mut xn);
    let mut hidden = vec![0.0; params.h];
    Ok(params.forward_normalized(&xn, &mut hidden).0)
}

/// Pointwise predictions for every row of `x`.
pub fn soft_label(params: &MlpParams, x: &Matrix, stats: &Normalization) -> Result<Vec<f64>> {
    check_width(params, stats, x.n_cols())?;
    let mut xn = vec![0.0; x.n_cols()];
    let mut hidden = vec![0.0; params.h];
    Ok(x.rows()
        .map(|row| {
            stats.apply_into(row, &mut xn);
            params.forward_normalized(&xn, &mut hidden).0
        })
        .collect())
}

pub fn rmse(params: &MlpParams, x: &Matrix, y: &[f64], stats: &Normalization) -> Result<f64> {
    if x.n_rows() != y.len() {
        return Err(RegressorError::LengthMismatch(x.n_rows(), y.len()));
    }
    if y.is_empty() {
        return Err(RegressorError::EmptyData);
    }
    let pred = soft_label(params, x, stats)?;
    let sse: f64 = pred.iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

/// Mean squared error over the rows and its gradient.
pub fn loss_and_grad(params: &MlpParams, x: &Matrix, y: &[f64], stats: &Normalization) -> Result<(f64, MlpParams)> {
    check_width(params, stats, x.n_cols())?;
    let xn = stats.apply(x);
    let rows: Vec<usize> = (0..x.n_rows()).collect();
    batch_loss_and_grad(params, &xn, y, &rows)
}

/// Same as `loss_and_grad` on pre-normalized rows `batch` of `xn`.
fn batch_loss_and_grad(params: &MlpParams, xn: &Matrix, y: &[f64], batch: &[usize]) -> Result<(f64, MlpParams)> {
    if xn.n_rows() != y.len() {
        return Err(RegressorError::LengthMismatch(xn.n_rows(), y.len()));
    }
    if batch.is_empty() {
        return Err(RegressorError::EmptyData);
    }
    let h = params.h;
    let scale = 1.0 / batch.len() as f64;
    let mut grad = MlpParams::zeros(params.m_in, h);
    let mut hidden = vec![0.0; h];
    let mut loss = 0.0;
    for &r in batch {
        let x = xn.row(r);
        let (out, s) = params.forward_normalized(x, &mut hidden);
        let resid = out - y[r];
        loss += resid * resid;
        // d(mean sq)/dz through the sigmoid
        let dz = 2.0 * resid * s * (1.0 - s) * scale;
        grad.b2 += dz;
        for (j, &a) in hidden.iter().enumerate() {
            grad.w2[j] += dz * a;
            if a > 0.0 {
                let da = dz * params.w2[j];
                grad.b1[j] += da;
                for (i, &xi) in x.iter().enumerate() {
                    grad.w1[i * h + j] += da * xi;
                }
            }
        }
    }
    let loss = loss * scale;
    if !loss.is_finite() || !grad.is_finite() {
        return Err(RegressorError::NonFinite("loss or gradient"));
    }
    Ok((loss, grad))
}

/// ADAM moments and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: MlpParams,
    pub v: MlpParams,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl AdamState {
    /// Fresh state with the usual defaults (lr 1e-3, 0.9, 0.999, 1e-8).
    pub fn new(shape: &MlpParams) -> Self {
        Self {
            m: MlpParams::zeros(shape.m_in, shape.h),
            v: MlpParams::zeros(shape.m_in, shape.h),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr: 1e-3,
        }
    }
}

/// One bias-corrected ADAM update of `params` in place.
pub fn adam_step(params: &mut MlpParams, grads: &MlpParams, state: &mut AdamState) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) || !params.same_shape(&state.v) {
        return Err(RegressorError::ShapeMismatch);
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
    {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Mini-batch ADAM training; returns the mean training loss of each epoch.
///
/// The row order is reshuffled every epoch from `config.seed`. `state` is
/// updated in place so callers can continue training later with the same
/// moments; its learning rate is set to `config.lr`.
pub fn train(
    params: &mut MlpParams,
    state: &mut AdamState,
    stats: &Normalization,
    x: &Matrix,
    y: &[f64],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    check_width(params, stats, x.n_cols())?;
    if x.n_rows() != y.len() {
        return Err(RegressorError::LengthMismatch(x.n_rows(), y.len()));
    }
    if y.is_empty() {
        return Err(RegressorError::EmptyData);
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(RegressorError::NonFinite("targets"));
    }
    state.lr = config.lr;
    let xn = stats.apply(x);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size.max(1)) {
            let (loss, grad) = batch_loss_and_grad(params, &xn, y, batch)?;
            total += loss * batch.len() as f64;
            adam_step(params, &grad, state)?;
        }
        log.push(total / y.len() as f64);
    }
    Ok(log)
}

/// Componentwise convex combination; uniform weights when `weights` is None.
pub fn average_models(models: &[MlpParams], weights: Option<&[f64]>) -> Result<MlpParams> {
    let first = models.first().ok_or(RegressorError::EmptyData)?;
    if models.iter().any(|m| !m.same_shape(first)) {
        return Err(RegressorError::ShapeMismatch);
    }
    let uniform = vec![1.0 / models.len() as f64; models.len()];
    let w = weights.unwrap_or(&uniform);
    let sum: f64 = w.iter().sum();
    if w.len() != models.len() || !w.iter().all(|&q| q >= 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(RegressorError::InvalidWeights);
    }
    let mut out = MlpParams::zeros(first.m_in, first.h);
    for (model, &q) in models.iter().zip(w) {
        for (acc, src) in out.tensors_mut().into_iter().zip(model.tensors()) {
            for (a, &s) in acc.iter_mut().zip(src) {
                *a += q * s;
            }
        }
    }
    Ok(out)
}

/// Parameters bundled with the statistics they were trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub params: MlpParams,
    pub stats: Normalization,
}

impl Model {
    /// Fits normalization on `x`, initializes from `seed` and trains.
    pub fn fit(x: &Matrix, y: &[f64], hidden: usize, config: &TrainConfig) -> Result<(Self, Vec<f64>)> {
        let stats = Normalization::fit(x)?;
        let mut params = MlpParams::init(x.n_cols(), hidden, config.seed)?;
        let mut state = AdamState::new(&params);
        let log = train(&mut params, &mut state, &stats, x, y, config)?;
        Ok((Self { params, stats }, log))
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        soft_label(&self.params, x, &self.stats)
    }

    pub fn rmse(&self, x: &Matrix, y: &[f64]) -> Result<f64> {
        rmse(&self.params, x, y, &self.stats)
    }
}
