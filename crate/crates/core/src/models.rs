//! Small models with hand-written backpropagation over flat parameter
//! vectors.
//!
//! Layouts (row-major):
//! - `LinearBinary`: `w[D]`, logit `w·x`, no bias.
//! - `Logistic`: `W[C×D]`, `b[C]`.
//! - `Mlp1`: `W1[H×D]`, `b1[H]`, `W2[C×H]`, `b2[C]`, tanh hidden layer.
//!
//! Losses are the mean cross-entropy over a batch (sigmoid for
//! `LinearBinary`, softmax otherwise).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearBinary,
    Logistic,
    Mlp1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_dim: Option<usize>,
}

impl ModelSpec {
    /// The two-weight toy classifier.
    pub fn linear_binary() -> Self {
        ModelSpec {
            kind: ModelKind::LinearBinary,
            input_dim: 2,
            num_classes: 2,
            hidden_dim: None,
        }
    }

    pub fn logistic(input_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Logistic,
            input_dim,
            num_classes,
            hidden_dim: None,
        }
    }

    pub fn mlp1(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp1,
            input_dim,
            num_classes,
            hidden_dim: Some(hidden_dim),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.input_dim == 0 {
            return Err(("input_dim", "must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(("num_classes", "must be >= 2".into()));
        }
        match self.kind {
            ModelKind::LinearBinary => {
                if self.num_classes != 2 {
                    return Err(("num_classes", "linear_binary requires 2 classes".into()));
                }
                if self.hidden_dim.is_some() {
                    return Err(("hidden_dim", "only valid for mlp1".into()));
                }
            }
            ModelKind::Logistic => {
                if self.hidden_dim.is_some() {
                    return Err(("hidden_dim", "only valid for mlp1".into()));
                }
            }
            ModelKind::Mlp1 => match self.hidden_dim {
                Some(h) if h >= 1 => {}
                _ => return Err(("hidden_dim", "mlp1 requires hidden_dim >= 1".into())),
            },
        }
        Ok(())
    }

    fn hidden(&self) -> usize {
        self.hidden_dim.unwrap_or(0)
    }

    /// Parameter count `M`.
    pub fn param_count(&self) -> usize {
        let (d, c) = (self.input_dim, self.num_classes);
        match self.kind {
            ModelKind::LinearBinary => d,
            ModelKind::Logistic => c * d + c,
            ModelKind::Mlp1 => {
                let h = self.hidden();
                h * d + h + c * h + c
            }
        }
    }
}

/// Rows of features with class labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    inputs: Vec<f64>,
    dim: usize,
    labels: Vec<usize>,
}

impl Batch {
    /// `inputs` is row-major with `dim` columns.
    pub fn new(inputs: Vec<f64>, dim: usize, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("batch feature dimension is zero".into()));
        }
        if labels.is_empty() {
            return Err(Error::InvalidInput("batch is empty".into()));
        }
        if inputs.len() != dim * labels.len() {
            return Err(Error::Dimension(format!(
                "{} inputs for {} rows of width {dim}",
                inputs.len(),
                labels.len()
            )));
        }
        if inputs.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("batch contains non-finite inputs".into()));
        }
        Ok(Batch { inputs, dim, labels })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<usize>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Dimension("ragged batch rows".into()));
        }
        Batch::new(rows.concat(), dim, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Batch> {
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
        }
        Batch::new(inputs, self.dim, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// Rows of all batches, in order.
    pub fn concat(batches: &[&Batch]) -> Result<Batch> {
        let Some(first) = batches.first() else {
            return Err(Error::InvalidInput("nothing to concatenate".into()));
        };
        let dim = first.dim;
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for b in batches {
            if b.dim != dim {
                return Err(Error::dim(dim, b.dim));
            }
            inputs.extend_from_slice(&b.inputs);
            labels.extend_from_slice(&b.labels);
        }
        Batch::new(inputs, dim, labels)
    }

    pub fn num_classes_seen(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }
}

fn check_inputs(spec: &ModelSpec, theta: &ParamVector, batch: &Batch) -> Result<()> {
    spec.validate()
        .map_err(|(f, m)| Error::InvalidInput(format!("model spec {f}: {m}")))?;
    if theta.len() != spec.param_count() {
        return Err(Error::dim(spec.param_count(), theta.len()));
    }
    if batch.dim() != spec.input_dim {
        return Err(Error::Dimension(format!(
            "batch has {} features, model expects {}",
            batch.dim(),
            spec.input_dim
        )));
    }
    if let Some(&y) = batch.labels().iter().find(|&&y| y >= spec.num_classes) {
        return Err(Error::InvalidInput(format!(
            "label {y} out of range for {} classes",
            spec.num_classes
        )));
    }
    Ok(())
}

/// Seeded Glorot-uniform weights; biases start at zero.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut glorot = |fan_in: usize, fan_out: usize, count: usize, out: &mut Vec<f64>| {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        out.extend((0..count).map(|_| rng.random_range(-a..=a)));
    };
    let (d, c) = (spec.input_dim, spec.num_classes);
    let mut theta = Vec::with_capacity(spec.param_count());
    match spec.kind {
        ModelKind::LinearBinary => glorot(d, 1, d, &mut theta),
        ModelKind::Logistic => {
            glorot(d, c, c * d, &mut theta);
            theta.extend(std::iter::repeat_n(0.0, c));
        }
        ModelKind::Mlp1 => {
            let h = spec.hidden();
            glorot(d, h, h * d, &mut theta);
            theta.extend(std::iter::repeat_n(0.0, h));
            glorot(h, c, c * h, &mut theta);
            theta.extend(std::iter::repeat_n(0.0, c));
        }
    }
    ParamVector::from_vec_unchecked(theta)
}

/// Numerically stable `ln(1 + e^z)`.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
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

/// Turns `logits` into softmax probabilities in place; returns
/// `−ln p[label]`.
fn softmax_xent(logits: &mut [f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted_label = logits[label] - max;
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    let loss = sum.ln() - shifted_label;
    for p in logits.iter_mut() {
        *p /= sum;
    }
    loss
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (k, o) in out.iter_mut().enumerate() {
        let row = &w[k * d..(k + 1) * d];
        *o = b[k] + row.iter().zip(x).fold(0.0, |acc, (wi, xi)| acc + wi * xi);
    }
}

/// Accumulates the summed loss and gradient of the rows at `indices` into
/// `grad`; returns the summed loss.
fn accumulate(
    spec: &ModelSpec,
    theta: &[f64],
    batch: &Batch,
    indices: &[usize],
    grad: &mut [f64],
) -> f64 {
    let (d, c) = (spec.input_dim, spec.num_classes);
    let mut total = 0.0;
    match spec.kind {
        ModelKind::LinearBinary => {
            for &i in indices {
                let x = batch.row(i);
                let y = batch.labels[i] as f64;
                let z = theta.iter().zip(x).fold(0.0, |acc, (w, xi)| acc + w * xi);
                // BCE with logits: softplus(z) − y·z
                total += softplus(z) - y * z;
                let delta = sigmoid(z) - y;
                for (g, xi) in grad.iter_mut().zip(x) {
                    *g += delta * xi;
                }
            }
        }
        ModelKind::Logistic => {
            let (w, b) = theta.split_at(c * d);
            let mut probs = vec![0.0; c];
            for &i in indices {
                let x = batch.row(i);
                let y = batch.labels[i];
                affine(w, b, x, &mut probs);
                total += softmax_xent(&mut probs, y);
                probs[y] -= 1.0;
                let (gw, gb) = grad.split_at_mut(c * d);
                for k in 0..c {
                    let delta = probs[k];
                    for (g, xi) in gw[k * d..(k + 1) * d].iter_mut().zip(x) {
                        *g += delta * xi;
                    }
                    gb[k] += delta;
                }
            }
        }
        ModelKind::Mlp1 => {
            let h = spec.hidden();
            let (w1, rest) = theta.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            let mut hidden = vec![0.0; h];
            let mut probs = vec![0.0; c];
            let mut back = vec![0.0; h];
            for &i in indices {
                let x = batch.row(i);
                let y = batch.labels[i];
                affine(w1, b1, x, &mut hidden);
                for a in hidden.iter_mut() {
                    *a = a.tanh();
                }
                affine(w2, b2, &hidden, &mut probs);
                total += softmax_xent(&mut probs, y);
                probs[y] -= 1.0;

                let (gw1, grest) = grad.split_at_mut(h * d);
                let (gb1, grest) = grest.split_at_mut(h);
                let (gw2, gb2) = grest.split_at_mut(c * h);
                back.iter_mut().for_each(|v| *v = 0.0);
                for k in 0..c {
                    let delta = probs[k];
                    let row = &w2[k * h..(k + 1) * h];
                    for j in 0..h {
                        gw2[k * h + j] += delta * hidden[j];
                        back[j] += delta * row[j];
                    }
                    gb2[k] += delta;
                }
                for j in 0..h {
                    let pre = back[j] * (1.0 - hidden[j] * hidden[j]);
                    for (g, xi) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *g += pre * xi;
                    }
                    gb1[j] += pre;
                }
            }
        }
    }
    total
}

fn mean_loss_and_grad(
    spec: &ModelSpec,
    theta: &ParamVector,
    batch: &Batch,
    indices: &[usize],
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; spec.param_count()];
    let total = accumulate(spec, theta.as_slice(), batch, indices, &mut grad);
    let n = indices.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (total / n, grad)
}

/// Mean cross-entropy over `batch` and its gradient.
pub fn loss_and_grad(
    spec: &ModelSpec,
    theta: &ParamVector,
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    check_inputs(spec, theta, batch)?;
    let indices: Vec<usize> = (0..batch.len()).collect();
    let (loss, grad) = mean_loss_and_grad(spec, theta, batch, &indices);
    Ok((loss, ParamVector::new(grad)?))
}

/// One shuffled pass of mini-batch SGD.
///
/// When `batch_size` covers the whole batch the single step uses the rows
/// in their original order, so it equals `θ − lr·∇ℰ(θ)` exactly.
pub fn sgd_epoch(
    spec: &ModelSpec,
    theta: &ParamVector,
    data: &Batch,
    lr: f64,
    batch_size: usize,
    rng_seed: u64,
) -> Result<ParamVector> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::InvalidInput(format!("learning rate must be > 0, got {lr}")));
    }
    if batch_size == 0 {
        return Err(Error::InvalidInput("batch size must be >= 1".into()));
    }
    check_inputs(spec, theta, data)?;

    let mut order: Vec<usize> = (0..data.len()).collect();
    if batch_size < data.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        order.shuffle(&mut rng);
    }
    let mut params = theta.clone().into_inner();
    for chunk in order.chunks(batch_size) {
        let current = ParamVector::from_vec_unchecked(params);
        let (_, grad) = mean_loss_and_grad(spec, &current, data, chunk);
        params = current.into_inner();
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= lr * g;
        }
    }
    ParamVector::new(params).map_err(|_| Error::Numerical {
        iteration: 0,
        what: "SGD produced non-finite parameters".into(),
    })
}

/// Predicted class; ties go to the lower class index.
pub fn predict(spec: &ModelSpec, theta: &ParamVector, x: &[f64]) -> usize {
    let (d, c) = (spec.input_dim, spec.num_classes);
    let t = theta.as_slice();
    let argmax = |scores: &[f64]| {
        let mut best = 0;
        for k in 1..scores.len() {
            if scores[k] > scores[best] {
                best = k;
            }
        }
        best
    };
    match spec.kind {
        ModelKind::LinearBinary => {
            let z = t.iter().zip(x).fold(0.0, |acc, (w, xi)| acc + w * xi);
            usize::from(z > 0.0)
        }
        ModelKind::Logistic => {
            let (w, b) = t.split_at(c * d);
            let mut scores = vec![0.0; c];
            affine(w, b, x, &mut scores);
            argmax(&scores)
        }
        ModelKind::Mlp1 => {
            let h = spec.hidden();
            let (w1, rest) = t.split_at(h * d);
            let (b1, rest) = rest.split_at(h);
            let (w2, b2) = rest.split_at(c * h);
            let mut hidden = vec![0.0; h];
            affine(w1, b1, x, &mut hidden);
            hidden.iter_mut().for_each(|a| *a = a.tanh());
            let mut scores = vec![0.0; c];
            affine(w2, b2, &hidden, &mut scores);
            argmax(&scores)
        }
    }
}

/// Fraction of rows whose predicted class matches the label.
pub fn accuracy(spec: &ModelSpec, theta: &ParamVector, data: &Batch) -> Result<f64> {
    check_inputs(spec, theta, data)?;
    let correct = (0..data.len())
        .filter(|&i| predict(spec, theta, data.row(i)) == data.labels[i])
        .count();
    Ok(correct as f64 / data.len() as f64)
}
