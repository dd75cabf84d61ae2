//! The scalar-output feed-forward scorer, its two-logit loss, and the
//! mini-batch Adam inner loop.
//!
//! The network maps a feature vector to one real score z. Class probabilities
//! come from the two logits (z, 1 - z): p_minority = e^z / (e^z + e^(1-z)),
//! which is sigmoid(2z - 1). All loss terms are evaluated in log-sum-exp form;
//! z is never exponentiated directly because trained scores reach magnitudes
//! around 18.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::util::rng_stream;

const TAG_INIT: u64 = 0x494e4954;
const TAG_SHUFFLE: u64 = 0x53485546;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("training produced a non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Layer widths of the scorer: input -> hidden[0] -> hidden[1] -> hidden[2] -> 1.
///
/// The first two hidden layers are followed by a rectifier; the third is a
/// plain linear layer, as is the scalar output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: [usize; 3],
}

impl Architecture {
    pub const STANDARD_HIDDEN: [usize; 3] = [256, 128, 128];

    /// The fixed experiment architecture; only the input width varies by dataset.
    pub fn standard(input: usize) -> Self {
        Self { input, hidden: Self::STANDARD_HIDDEN }
    }

    /// (rows, cols) of the four weight matrices, in forward order.
    fn layer_dims(&self) -> [(usize, usize); 4] {
        let [h1, h2, h3] = self.hidden;
        [(h1, self.input), (h2, h1), (h3, h2), (1, h3)]
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(r, c)| r * c + r).sum()
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.input == 0 || self.hidden.contains(&0) {
            return Err(ModelError::Argument(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }
}

/// Network parameters in one flat buffer, laid out layer by layer as
/// row-major weights followed by biases.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    arch: Architecture,
    seed: u64,
    params: Vec<f64>,
}

/// Stochastic-gradient settings for the inner training loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub grad_tol: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            grad_tol: 1e-3,
            max_epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.batch_size == 0 {
            return Err(ModelError::Argument("batch_size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(ModelError::Argument("learning_rate must be positive".into()));
        }
        if self.grad_tol < 0.0 {
            return Err(ModelError::Argument("grad_tol must be non-negative".into()));
        }
        if self.max_epochs == 0 {
            return Err(ModelError::Argument("max_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Loss of one sample split into its class parts; `total = minority + majority`
/// with both parts averaged by the full sample size.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleLoss {
    pub total: f64,
    pub minority: f64,
    pub majority: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Class probabilities implied by score z: (p_minority, p_majority).
pub fn point_probabilities(z: f64) -> (f64, f64) {
    let p_minority = sigmoid(2.0 * z - 1.0);
    (p_minority, 1.0 - p_minority)
}

/// Hard classification of a score: 1 iff z > 1/2; the tie goes to the majority class.
pub fn classify(z: f64) -> u8 {
    u8::from(z > 0.5)
}

/// Per-point loss term: -log of the probability assigned to the true class.
fn loss_term(z: f64, label: u8) -> f64 {
    let t = 2.0 * z - 1.0;
    if label == 1 {
        softplus(-t)
    } else {
        softplus(t)
    }
}

/// d(loss term)/dz.
fn loss_term_grad(z: f64, label: u8) -> f64 {
    let t = 2.0 * z - 1.0;
    if label == 1 {
        -2.0 * sigmoid(-t)
    } else {
        2.0 * sigmoid(t)
    }
}

/// Scratch buffers reused across forward/backward passes.
struct Workspace {
    act: [Vec<f64>; 3],
    delta: [Vec<f64>; 3],
}

impl Workspace {
    fn new(arch: &Architecture) -> Self {
        let [h1, h2, h3] = arch.hidden;
        Self {
            act: [vec![0.0; h1], vec![0.0; h2], vec![0.0; h3]],
            delta: [vec![0.0; h1], vec![0.0; h2], vec![0.0; h3]],
        }
    }
}

fn matvec(w: &[f64], bias: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate().take(rows) {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = bias[i];
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o = acc;
    }
}

impl ModelState {
    /// Deterministic uniform fan-in initialization: every weight and bias of a
    /// layer with `fan_in` inputs is drawn from U(-1/sqrt(fan_in), +1/sqrt(fan_in)).
    pub fn init(arch: Architecture, seed: u64) -> Result<Self, ModelError> {
        arch.validate()?;
        let mut rng = rng_stream(seed, TAG_INIT);
        let mut params = Vec::with_capacity(arch.param_count());
        for (rows, cols) in arch.layer_dims() {
            let bound = 1.0 / (cols as f64).sqrt();
            for _ in 0..rows * cols + rows {
                params.push(rng.gen_range(-bound..bound));
            }
        }
        Ok(Self { arch, seed, params })
    }

    /// All-zero parameters; the forward pass is the constant 0.
    pub fn zeros(arch: Architecture) -> Result<Self, ModelError> {
        arch.validate()?;
        let params = vec![0.0; arch.param_count()];
        Ok(Self { arch, seed: 0, params })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self, ModelError> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(ModelError::Argument(format!(
                "expected {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        Ok(Self { arch, seed: 0, params })
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Flat-buffer offsets of layer `l`: (weight offset, bias offset, rows, cols).
    fn layer(&self, l: usize) -> (usize, usize, usize, usize) {
        let dims = self.arch.layer_dims();
        let mut off = 0;
        for (i, (rows, cols)) in dims.iter().enumerate() {
            if i == l {
                return (off, off + rows * cols, *rows, *cols);
            }
            off += rows * cols + rows;
        }
        unreachable!("layer index out of range")
    }

    fn forward_cached(&self, x: &[f64], ws: &mut Workspace) -> f64 {
        // Two rectified layers, one plain linear layer, then the scalar head.
        for l in 0..3 {
            let (w_off, b_off, rows, cols) = self.layer(l);
            let w = &self.params[w_off..w_off + rows * cols];
            let b = &self.params[b_off..b_off + rows];
            if l == 0 {
                matvec(w, b, rows, cols, x, &mut ws.act[0]);
            } else {
                let (prev, rest) = ws.act.split_at_mut(l);
                matvec(w, b, rows, cols, &prev[l - 1], &mut rest[0]);
            }
            if l < 2 {
                for v in ws.act[l].iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        let (w_off, b_off, _, cols) = self.layer(3);
        let w = &self.params[w_off..w_off + cols];
        let mut z = self.params[b_off];
        for (a, b) in w.iter().zip(&ws.act[2]) {
            z += a * b;
        }
        z
    }

    /// Scalar score of one input.
    pub fn forward(&self, x: &[f64]) -> Result<f64, ModelError> {
        if x.len() != self.arch.input {
            return Err(ModelError::Argument(format!(
                "input width {} does not match model input {}",
                x.len(),
                self.arch.input
            )));
        }
        let mut ws = Workspace::new(&self.arch);
        Ok(self.forward_cached(x, &mut ws))
    }

    /// Scores for every point of a dataset, in dataset order.
    pub fn z_outputs(&self, data: &Dataset) -> Result<Vec<f64>, ModelError> {
        if data.n_features() != self.arch.input {
            return Err(ModelError::Argument(format!(
                "dataset width {} does not match model input {}",
                data.n_features(),
                self.arch.input
            )));
        }
        let mut ws = Workspace::new(&self.arch);
        Ok(data.points().iter().map(|p| self.forward_cached(&p.features, &mut ws)).collect())
    }

    /// Backward pass for one point; adds the unscaled parameter gradient of its
    /// loss term into `grad` and returns the term itself.
    fn accumulate_point(&self, x: &[f64], label: u8, ws: &mut Workspace, grad: &mut [f64]) -> f64 {
        let z = self.forward_cached(x, ws);
        let term = loss_term(z, label);
        let dz = loss_term_grad(z, label);

        // Output head.
        let (w_off, b_off, _, cols) = self.layer(3);
        {
            let w = &self.params[w_off..w_off + cols];
            for ((g, a), (d, wv)) in grad[w_off..w_off + cols]
                .iter_mut()
                .zip(&ws.act[2])
                .zip(ws.delta[2].iter_mut().zip(w))
            {
                *g += dz * a;
                *d = dz * wv;
            }
            grad[b_off] += dz;
        }

        // Hidden layers 2 -> 0; layer 2 is linear, layers 1 and 0 carry rectifier masks.
        for l in (0..3).rev() {
            let (w_off, b_off, rows, cols) = self.layer(l);
            let w = &self.params[w_off..w_off + rows * cols];
            let (below, above) = ws.delta.split_at_mut(l.max(1));
            let delta_here: &[f64] = if l == 0 { &below[0] } else { &above[0] };
            let input: &[f64] = if l == 0 { x } else { &ws.act[l - 1] };
            // Weight and bias gradients for this layer.
            for (i, &d) in delta_here.iter().enumerate().take(rows) {
                if d != 0.0 {
                    let g_row = &mut grad[w_off + i * cols..w_off + (i + 1) * cols];
                    for (g, a) in g_row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                    grad[b_off + i] += d;
                }
            }
            if l == 0 {
                break;
            }
            // Propagate to the layer below, applying that layer's rectifier mask.
            let delta_below = &mut below[l - 1];
            delta_below.iter_mut().for_each(|d| *d = 0.0);
            for (i, &d) in delta_here.iter().enumerate().take(rows) {
                if d != 0.0 {
                    let row = &w[i * cols..(i + 1) * cols];
                    for (dst, wv) in delta_below.iter_mut().zip(row) {
                        *dst += d * wv;
                    }
                }
            }
            if l - 1 < 2 {
                for (dst, a) in delta_below.iter_mut().zip(&ws.act[l - 1]) {
                    if *a <= 0.0 {
                        *dst = 0.0;
                    }
                }
            }
        }
        term
    }

    /// Mean loss and mean parameter gradient over the points of `data` selected
    /// by `idx`. `grad` is overwritten.
    fn batch_gradient(
        &self,
        data: &Dataset,
        idx: &[usize],
        ws: &mut Workspace,
        grad: &mut [f64],
    ) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for &i in idx {
            let p = data.point(i);
            loss += self.accumulate_point(&p.features, p.label, ws, grad);
        }
        let scale = 1.0 / idx.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        loss * scale
    }

    /// Full-batch loss and gradient of the sample loss on `data`.
    pub fn loss_gradient(&self, data: &Dataset) -> Result<(f64, Vec<f64>), ModelError> {
        if data.is_empty() {
            return Err(ModelError::Argument("empty sample".into()));
        }
        if data.n_features() != self.arch.input {
            return Err(ModelError::Argument("dataset width does not match model input".into()));
        }
        let mut ws = Workspace::new(&self.arch);
        let mut grad = vec![0.0; self.arch.param_count()];
        let idx: Vec<usize> = (0..data.len()).collect();
        let loss = self.batch_gradient(data, &idx, &mut ws, &mut grad);
        Ok((loss, grad))
    }
}

/// Sample loss split into minority and majority parts, each averaged by the
/// full sample size, so `total = minority + majority` holds exactly.
pub fn sample_loss(model: &ModelState, data: &Dataset) -> Result<SampleLoss, ModelError> {
    if data.is_empty() {
        return Err(ModelError::Argument("empty sample".into()));
    }
    let z = model.z_outputs(data)?;
    let mut minority_sum = 0.0;
    let mut majority_sum = 0.0;
    for (zi, p) in z.iter().zip(data.points()) {
        if p.is_minority() {
            minority_sum += loss_term(*zi, 1);
        } else {
            majority_sum += loss_term(*zi, 0);
        }
    }
    let n = data.len() as f64;
    let minority = minority_sum / n;
    let majority = majority_sum / n;
    Ok(SampleLoss { total: minority + majority, minority, majority })
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let lr_t = cfg.learning_rate * (1.0 - cfg.beta2.powi(t)).sqrt() / (1.0 - cfg.beta1.powi(t));
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= lr_t * *m / (v.sqrt() + cfg.epsilon);
        }
    }
}

/// Epoch-wise mini-batch Adam on the sample loss. Stops when the full-batch
/// gradient norm drops to `grad_tol` or after `max_epochs` epochs. Batches are
/// reshuffled every epoch with a seed derived from `cfg.seed`; the final short
/// batch is kept.
pub fn train(model: &ModelState, data: &Dataset, cfg: &TrainConfig) -> Result<ModelState, ModelError> {
    cfg.validate()?;
    if data.minority_count() == 0 || data.majority_count() == 0 {
        return Err(ModelError::Argument("training sample must contain both classes".into()));
    }
    if data.n_features() != model.arch.input {
        return Err(ModelError::Argument("dataset width does not match model input".into()));
    }

    let mut m = model.clone();
    let mut ws = Workspace::new(&m.arch);
    let mut grad = vec![0.0; m.arch.param_count()];
    let full_idx: Vec<usize> = (0..data.len()).collect();
    let mut order = full_idx.clone();
    let mut adam = Adam::new(grad.len());

    for epoch in 0..cfg.max_epochs {
        let full_loss = m.batch_gradient(data, &full_idx, &mut ws, &mut grad);
        if !full_loss.is_finite() {
            return Err(ModelError::Diverged { epoch });
        }
        if l2_norm(&grad) <= cfg.grad_tol {
            break;
        }
        order.shuffle(&mut rng_stream(cfg.seed, TAG_SHUFFLE ^ epoch as u64));
        for batch in order.chunks(cfg.batch_size) {
            let batch_loss = m.batch_gradient(data, batch, &mut ws, &mut grad);
            if !batch_loss.is_finite() {
                return Err(ModelError::Diverged { epoch });
            }
            adam.update(&mut m.params, &grad, cfg);
        }
    }
    Ok(m)
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    input: usize,
    hidden: [usize; 3],
    seed: u64,
    param_count: usize,
}

/// Writes a checkpoint: one JSON header line, then the flat parameter array as
/// little-endian 64-bit floats.
pub fn save_checkpoint(model: &ModelState, path: &Path) -> Result<(), ModelError> {
    let header = CheckpointHeader {
        input: model.arch.input,
        hidden: model.arch.hidden,
        seed: model.seed,
        param_count: model.params.len(),
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    out.write_all(b"\n")?;
    for v in &model.params {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState, ModelError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header_line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        reader.read_exact(&mut byte).map_err(|_| {
            ModelError::Checkpoint("missing newline after checkpoint header".into())
        })?;
        if byte[0] == b'\n' {
            break;
        }
        header_line.push(byte[0]);
    }
    let header: CheckpointHeader = serde_json::from_slice(&header_line)
        .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let arch = Architecture { input: header.input, hidden: header.hidden };
    arch.validate()?;
    if header.param_count != arch.param_count() {
        return Err(ModelError::Checkpoint(format!(
            "header declares {} parameters but the architecture needs {}",
            header.param_count,
            arch.param_count()
        )));
    }
    let mut params = vec![0.0; header.param_count];
    let mut buf = [0u8; 8];
    for p in &mut params {
        reader
            .read_exact(&mut buf)
            .map_err(|_| ModelError::Checkpoint("truncated parameter array".into()))?;
        *p = f64::from_le_bytes(buf);
    }
    Ok(ModelState { arch, seed: header.seed, params })
}
