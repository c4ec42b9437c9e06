//! Differentiable stand-ins for the black box.
//!
//! Each surrogate is a multinomial logistic regression trained on
//! pseudo-labeled auxiliary vectors. The cluster loss is the mean
//! cross-entropy over models, and its input gradient is exact:
//! `(1/m) * sum_i W_i^T (softmax(W_i x + b_i) - onehot(y))`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxSurrogate {
    /// `K` rows of length `d`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub trained_on: String,
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl SoftmaxSurrogate {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>, trained_on: impl Into<String>) -> Result<Self> {
        let d = weights.first().map(Vec::len).unwrap_or(0);
        if weights.is_empty() || d == 0 {
            return Err(Error::Config("surrogate needs K >= 1 rows of dimension >= 1".into()));
        }
        if weights.iter().any(|r| r.len() != d) {
            return Err(Error::Config("surrogate rows must share one dimension".into()));
        }
        if bias.len() != weights.len() {
            return Err(Error::dim(weights.len(), bias.len()));
        }
        Ok(Self {
            weights,
            bias,
            trained_on: trained_on.into(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights[0].len()
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::dim(self.dim(), x.len()));
        }
        Ok(self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect())
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    pub fn cross_entropy(&self, x: &[f64], label: usize) -> Result<f64> {
        self.check_label(label)?;
        Ok(-log_softmax(&self.logits(x)?)[label])
    }

    /// `W^T (softmax(Wx + b) - onehot(y))`.
    pub fn input_gradient(&self, x: &[f64], label: usize) -> Result<Vec<f64>> {
        self.check_label(label)?;
        let mut residual = self.predict_proba(x)?;
        residual[label] -= 1.0;
        let mut grad = vec![0.0; self.dim()];
        for (row, r) in self.weights.iter().zip(&residual) {
            for (g, w) in grad.iter_mut().zip(row) {
                *g += r * w;
            }
        }
        Ok(grad)
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.num_classes() {
            return Err(Error::Input(format!(
                "label {label} outside [0, {})",
                self.num_classes()
            )));
        }
        Ok(())
    }

    fn mean_loss(&self, data: &[Vec<f64>], labels: &[usize]) -> f64 {
        data.iter()
            .zip(labels)
            .map(|(x, &y)| -log_softmax(&self.logits(x).expect("checked"))[y])
            .sum::<f64>()
            / data.len() as f64
    }

    /// Gradient of the mean training loss w.r.t. `(weights, bias)`.
    fn parameter_gradient(&self, data: &[Vec<f64>], labels: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let k = self.num_classes();
        let mut gw = vec![vec![0.0; self.dim()]; k];
        let mut gb = vec![0.0; k];
        let scale = 1.0 / data.len() as f64;
        for (x, &y) in data.iter().zip(labels) {
            let mut p = softmax(&self.logits(x).expect("checked"));
            p[y] -= 1.0;
            for c in 0..k {
                gb[c] += scale * p[c];
                for (g, v) in gw[c].iter_mut().zip(x) {
                    *g += scale * p[c] * v;
                }
            }
        }
        (gw, gb)
    }

    fn stepped(&self, gw: &[Vec<f64>], gb: &[f64], lr: f64) -> Self {
        Self {
            weights: self
                .weights
                .iter()
                .zip(gw)
                .map(|(w, g)| w.iter().zip(g).map(|(a, b)| a - lr * b).collect())
                .collect(),
            bias: self.bias.iter().zip(gb).map(|(a, b)| a - lr * b).collect(),
            trained_on: self.trained_on.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            lr: 0.5,
            seed: 0,
        }
    }
}

/// Full-batch gradient descent on mean cross-entropy.
///
/// Weights start at `0.01 * N(0, 1)`. A step that would raise the loss is
/// retried with half the learning rate, so the loss never increases.
pub fn train_surrogate(
    data: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    cfg: &TrainConfig,
    trained_on: &str,
) -> Result<SoftmaxSurrogate> {
    let d = data
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Input("training data is empty".into()))?;
    if d == 0 || data.iter().any(|x| x.len() != d) {
        return Err(Error::Input("training vectors must share a nonzero dimension".into()));
    }
    if labels.len() != data.len() {
        return Err(Error::dim(data.len(), labels.len()));
    }
    if num_classes == 0 {
        return Err(Error::Config("num_classes must be at least 1".into()));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::Input(format!("label {bad} outside [0, {num_classes})")));
    }
    if !(cfg.lr > 0.0) {
        return Err(Error::Config("training lr must be > 0".into()));
    }
    let mut rng = seeds::rng(cfg.seed);
    let init = (0..num_classes)
        .map(|_| seeds::normal_vec(&mut rng, d).into_iter().map(|v| 0.01 * v).collect())
        .collect();
    let mut model = SoftmaxSurrogate::new(init, vec![0.0; num_classes], trained_on)?;
    let mut loss = model.mean_loss(data, labels);
    let mut lr = cfg.lr;
    for _ in 0..cfg.epochs {
        let (gw, gb) = model.parameter_gradient(data, labels);
        loop {
            let candidate = model.stepped(&gw, &gb, lr);
            let cand_loss = candidate.mean_loss(data, labels);
            if cand_loss <= loss {
                model = candidate;
                loss = cand_loss;
                break;
            }
            lr *= 0.5;
            if lr < 1e-12 {
                return Ok(model);
            }
        }
    }
    Ok(model)
}

/// Bootstrap resample of `n` indices, used to diversify cluster members.
pub fn bootstrap_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeds::rng(seed);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateCluster {
    pub models: Vec<SoftmaxSurrogate>,
}

impl SurrogateCluster {
    pub fn new(models: Vec<SoftmaxSurrogate>) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::Config("surrogate cluster needs m >= 1 models".into()))?;
        let (k, d) = (first.num_classes(), first.dim());
        if models.iter().any(|m| m.num_classes() != k || m.dim() != d) {
            return Err(Error::Config("cluster members must share (K, d)".into()));
        }
        Ok(Self { models })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.models[0].dim()
    }

    pub fn num_classes(&self) -> usize {
        self.models[0].num_classes()
    }

    /// Label with the largest mean probability over the cluster.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let mut mean = vec![0.0; self.num_classes()];
        for m in &self.models {
            for (acc, p) in mean.iter_mut().zip(m.predict_proba(x)?) {
                *acc += p;
            }
        }
        Ok(mean
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
            .0)
    }
}

/// Mean cross-entropy of the cluster at `x` for label `y`.
pub fn surrogate_loss(cluster: &SurrogateCluster, x: &[f64], label: usize) -> Result<f64> {
    let total = cluster
        .models
        .iter()
        .map(|m| m.cross_entropy(x, label))
        .sum::<Result<f64>>()?;
    Ok(total / cluster.len() as f64)
}

pub fn surrogate_loss_grad(cluster: &SurrogateCluster, x: &[f64], label: usize) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; x.len()];
    for m in &cluster.models {
        for (g, v) in grad.iter_mut().zip(m.input_gradient(x, label)?) {
            *g += v;
        }
    }
    let inv = 1.0 / cluster.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self::with_lr(0.0015)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, dim: usize) -> Self {
        Self {
            config,
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update of `x` in place.
    pub fn step(&mut self, x: &mut [f64], grad: &[f64]) -> Result<()> {
        if x.len() != self.first_moment.len() {
            return Err(Error::dim(self.first_moment.len(), x.len()));
        }
        if grad.len() != x.len() {
            return Err(Error::dim(x.len(), grad.len()));
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for i in 0..x.len() {
            let g = grad[i];
            self.first_moment[i] = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
            self.second_moment[i] = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
            let m_hat = self.first_moment[i] / c1;
            let v_hat = self.second_moment[i] / c2;
            x[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
