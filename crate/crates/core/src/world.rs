//! Synthetic stand-in for private/auxiliary data and the deep-hashing model.
//!
//! Data are drawn from an isotropic Gaussian mixture; the black box is a
//! linear sign hash `sign(Wx + b)` with `sign(0) = +1`. Because every class
//! conditional is Gaussian, the noise predictor that minimizes the DDPM
//! objective is available in closed form ([`AnalyticPredictor`]).

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::centers::{majority_code, CenterSet};
use crate::diffusion::{DiffusionSchedule, NoisePredictor};
use crate::error::{Error, Result};
use crate::hamming::{BitCode, CodeMatrix};
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub dim: usize,
    /// Component means, `k` rows of length `dim`.
    pub means: Vec<Vec<f64>>,
    /// Shared isotropic standard deviation.
    pub sigma: f64,
    pub weights: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(means: Vec<Vec<f64>>, sigma: f64, weights: Vec<f64>) -> Result<Self> {
        let dim = means.first().map(Vec::len).unwrap_or(0);
        let spec = Self {
            dim,
            means,
            sigma,
            weights,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn uniform(means: Vec<Vec<f64>>, sigma: f64) -> Result<Self> {
        let k = means.len();
        Self::new(means, sigma, vec![1.0 / k as f64; k])
    }

    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() || self.dim == 0 {
            return Err(Error::Config("mixture needs at least one component of dimension >= 1".into()));
        }
        if self.means.iter().any(|m| m.len() != self.dim) {
            return Err(Error::Config("all means must have length dim".into()));
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("means must be finite".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.weights.len() != self.k() || self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("weights must be K nonnegative numbers".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("weights sum to {total}, not 1")));
        }
        Ok(())
    }

    fn pick_component<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        // Rounding left u above the running sum; take the last positive weight.
        self.weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }
}

/// Draws `n` i.i.d. samples; sample `i` uses stream `i` of `seed`.
pub fn sample_mixture(
    spec: &MixtureSpec,
    n: usize,
    seed: u64,
    component: Option<usize>,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if let Some(k) = component {
        if k >= spec.k() {
            return Err(Error::Input(format!("component {k} outside [0, {})", spec.k())));
        }
    }
    let mut xs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = seeds::rng_at(seed, i as u64);
        let k = component.unwrap_or_else(|| spec.pick_component(&mut rng));
        let x = spec.means[k]
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + spec.sigma * z
            })
            .collect();
        xs.push(x);
        labels.push(k);
    }
    Ok((xs, labels))
}

/// Black-box linear sign hash with an exact query counter.
#[derive(Debug, Serialize, Deserialize)]
pub struct HashOracle {
    /// `l` rows of length `d`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    #[serde(skip)]
    queries: AtomicU64,
}

impl Clone for HashOracle {
    fn clone(&self) -> Self {
        Self {
            weights: self.weights.clone(),
            bias: self.bias.clone(),
            queries: AtomicU64::new(self.query_count()),
        }
    }
}

impl PartialEq for HashOracle {
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights && self.bias == other.bias
    }
}

impl HashOracle {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        let d = weights.first().map(Vec::len).unwrap_or(0);
        if weights.is_empty() || d == 0 {
            return Err(Error::Config("oracle needs l >= 1 rows of dimension >= 1".into()));
        }
        if weights.iter().any(|r| r.len() != d) {
            return Err(Error::Config("oracle rows must share one dimension".into()));
        }
        if bias.len() != weights.len() {
            return Err(Error::dim(weights.len(), bias.len()));
        }
        Ok(Self {
            weights,
            bias,
            queries: AtomicU64::new(0),
        })
    }

    pub fn code_len(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights[0].len()
    }

    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::SeqCst)
    }

    pub fn reset_queries(&self) {
        self.queries.store(0, Ordering::SeqCst);
    }

    /// `sign(Wx + b)` with `sign(0) = +1`; counts as one query.
    pub fn hash(&self, x: &[f64]) -> Result<BitCode> {
        if x.len() != self.dim() {
            return Err(Error::dim(self.dim(), x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("oracle input must be finite".into()));
        }
        self.queries.fetch_add(1, Ordering::SeqCst);
        let bits: Vec<bool> = self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b >= 0.0)
            .collect();
        BitCode::from_bits(&bits)
    }

    pub fn hash_all(&self, xs: &[Vec<f64>]) -> Result<CodeMatrix> {
        let rows = xs.iter().map(|x| self.hash(x)).collect::<Result<Vec<_>>>()?;
        CodeMatrix::new(rows)
    }
}

/// Per-class majority code of `n_per_class` hashed conditional samples.
pub fn ground_truth_centers(
    oracle: &HashOracle,
    spec: &MixtureSpec,
    n_per_class: usize,
    seed: u64,
) -> Result<CenterSet> {
    if n_per_class == 0 {
        return Err(Error::Input("n_per_class must be at least 1".into()));
    }
    let centers = (0..spec.k())
        .map(|k| {
            let (xs, _) = sample_mixture(spec, n_per_class, seeds::derive(seed, "truth", k as u64), Some(k))?;
            let codes = oracle.hash_all(&xs)?;
            majority_code(&codes.rows().iter().collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    CenterSet::new(centers)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    /// Number of augmentations `M`.
    pub count: usize,
    pub noise_sigma: f64,
    /// Per-coordinate dropout probability.
    pub mask_prob: f64,
    pub seed: u64,
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("augmentation count M must be at least 1".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.mask_prob) {
            return Err(Error::Config("mask_prob must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// The `draw`-th augmentation (1-based) of `x`: additive Gaussian noise,
/// then independent coordinate dropout. Depends only on `(seed, draw)`.
pub fn augment(x: &[f64], spec: &AugmentationSpec, draw: usize) -> Vec<f64> {
    let mut rng = seeds::rng_at(spec.seed, draw as u64);
    x.iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            let drop: f64 = rng.random();
            if drop < spec.mask_prob {
                0.0
            } else {
                v + spec.noise_sigma * z
            }
        })
        .collect()
}

/// Exact posterior-mean noise predictor for a Gaussian mixture under the
/// forward model `x_t = sqrt(abar) x_0 + sqrt(1 - abar) eps`.
#[derive(Debug, Clone)]
pub struct AnalyticPredictor {
    spec: MixtureSpec,
}

impl AnalyticPredictor {
    pub fn new(spec: MixtureSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }

    /// Posterior component probabilities of `x_t` at noise level `abar`.
    pub fn responsibilities(&self, x_t: &[f64], alpha_bar: f64) -> Vec<f64> {
        let sa = alpha_bar.sqrt();
        let var = alpha_bar * self.spec.sigma.powi(2) + 1.0 - alpha_bar;
        let logits: Vec<f64> = self
            .spec
            .means
            .iter()
            .zip(&self.spec.weights)
            .map(|(mu, w)| {
                let sq: f64 = x_t.iter().zip(mu).map(|(x, m)| (x - sa * m).powi(2)).sum();
                w.ln() - sq / (2.0 * var)
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.iter().map(|e| e / total).collect()
    }

    /// `E[x_0 | x_t, component k]`.
    fn posterior_mean(&self, x_t: &[f64], alpha_bar: f64, k: usize) -> Vec<f64> {
        let sa = alpha_bar.sqrt();
        let s2 = self.spec.sigma.powi(2);
        let gain = sa * s2 / (alpha_bar * s2 + 1.0 - alpha_bar);
        self.spec.means[k]
            .iter()
            .zip(x_t)
            .map(|(m, x)| m + gain * (x - sa * m))
            .collect()
    }

    fn eps_from_mean(x_t: &[f64], alpha_bar: f64, mean: &[f64]) -> Vec<f64> {
        let sa = alpha_bar.sqrt();
        let sd = (1.0 - alpha_bar).sqrt();
        x_t.iter().zip(mean).map(|(x, m)| (x - sa * m) / sd).collect()
    }

    pub fn predict_at(&self, x_t: &[f64], alpha_bar: f64, label: Option<usize>) -> Result<Vec<f64>> {
        if x_t.len() != self.spec.dim {
            return Err(Error::dim(self.spec.dim, x_t.len()));
        }
        let mean = match label {
            Some(k) => {
                if k >= self.spec.k() {
                    return Err(Error::Input(format!("label {k} outside [0, {})", self.spec.k())));
                }
                self.posterior_mean(x_t, alpha_bar, k)
            }
            None => {
                let gamma = self.responsibilities(x_t, alpha_bar);
                let mut mean = vec![0.0; self.spec.dim];
                for (k, g) in gamma.iter().enumerate() {
                    if *g == 0.0 {
                        continue;
                    }
                    for (acc, v) in mean.iter_mut().zip(self.posterior_mean(x_t, alpha_bar, k)) {
                        *acc += g * v;
                    }
                }
                mean
            }
        };
        Ok(Self::eps_from_mean(x_t, alpha_bar, &mean))
    }
}

impl NoisePredictor for AnalyticPredictor {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn predict(
        &self,
        x_t: &[f64],
        t: usize,
        label: Option<usize>,
        schedule: &DiffusionSchedule,
    ) -> Result<Vec<f64>> {
        schedule.check_step(t)?;
        self.predict_at(x_t, schedule.alpha_bar(t), label)
    }
}

/// Parameters of a generated mixture world and its oracle.
///
/// Class means are orthogonal with equal norm `mean_norm`, so every pair of
/// classes is equally confusable. The oracle stands in for a hashing
/// network trained toward per-class hash centers: bit `j` has weight
/// `sum_k C[k][j] * mu_k / |mu_k|^2` for random centers `C`, which sends
/// each mean to its own center, plus optional isotropic weight noise and
/// random biases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub dim: usize,
    pub code_len: usize,
    pub k: usize,
    pub sigma: f64,
    pub mean_norm: f64,
    /// Scale of `N(0, I / dim)` noise added to each oracle weight row.
    pub weight_noise: f64,
    /// Oracle biases are `bias_scale * N(0, 1)`.
    pub bias_scale: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            code_len: 32,
            k: 10,
            sigma: 0.25,
            mean_norm: 1.2,
            weight_noise: 0.0,
            bias_scale: 0.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.code_len == 0 || self.k == 0 {
            return Err(Error::Config("world dim, code_len and k must be >= 1".into()));
        }
        if self.k > self.dim {
            return Err(Error::Config(format!(
                "orthogonal means need k <= dim, got k = {} dim = {}",
                self.k, self.dim
            )));
        }
        let scales = [self.mean_norm, self.weight_noise, self.bias_scale];
        if !(self.sigma > 0.0) || !(self.mean_norm > 0.0) || scales.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Config("world sigma and mean_norm must be > 0, other scales >= 0".into()));
        }
        Ok(())
    }

    /// Generates the mixture and the oracle from one seed.
    pub fn generate(&self, seed: u64) -> Result<(MixtureSpec, HashOracle)> {
        self.validate()?;
        let mut rng = seeds::rng(seeds::derive(seed, "mixture", 0));
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(self.k);
        while basis.len() < self.k {
            let mut v = seeds::normal_vec(&mut rng, self.dim);
            for q in &basis {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= d * qi);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                basis.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        let means: Vec<Vec<f64>> = basis
            .iter()
            .map(|q| q.iter().map(|x| x * self.mean_norm).collect())
            .collect();

        let mut rng = seeds::rng(seeds::derive(seed, "oracle", 0));
        let centers: Vec<Vec<f64>> = (0..self.k)
            .map(|_| (0..self.code_len).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect())
            .collect();
        let noise_scale = self.weight_noise / (self.dim as f64).sqrt();
        let weights = (0..self.code_len)
            .map(|j| {
                let mut row: Vec<f64> = seeds::normal_vec(&mut rng, self.dim).into_iter().map(|z| z * noise_scale).collect();
                for (c, q) in centers.iter().zip(&basis) {
                    row.iter_mut().zip(q).for_each(|(r, qi)| *r += c[j] * qi / self.mean_norm);
                }
                row
            })
            .collect();
        let bias = seeds::normal_vec(&mut rng, self.code_len)
            .into_iter()
            .map(|b| b * self.bias_scale)
            .collect();
        Ok((MixtureSpec::uniform(means, self.sigma)?, HashOracle::new(weights, bias)?))
    }
}

/// Isotropic mixture fitted to labeled vectors: per-class means, pooled
/// per-coordinate spread, and empirical class weights.
pub fn fit_mixture(vectors: &[Vec<f64>], labels: &[usize], k: usize) -> Result<MixtureSpec> {
    if vectors.len() != labels.len() {
        return Err(Error::dim(vectors.len(), labels.len()));
    }
    let d = vectors.first().map(Vec::len).ok_or_else(|| Error::Input("no vectors to fit".into()))?;
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (x, &y) in vectors.iter().zip(labels) {
        if y >= k {
            return Err(Error::Input(format!("label {y} outside [0, {k})")));
        }
        if x.len() != d {
            return Err(Error::dim(d, x.len()));
        }
        counts[y] += 1;
        sums[y].iter_mut().zip(x).for_each(|(s, v)| *s += v);
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::State(format!("class {empty} has no members to fit")));
    }
    let means: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect();
    let sq: f64 = vectors
        .iter()
        .zip(labels)
        .map(|(x, &y)| x.iter().zip(&means[y]).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum();
    let sigma = (sq / (vectors.len() * d) as f64).sqrt().max(1e-9);
    let n = vectors.len() as f64;
    MixtureSpec::new(means, sigma, counts.iter().map(|&c| c as f64 / n).collect())
}

/// Codes drawn around planted random centers with independent bit flips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedCodes {
    pub k: usize,
    pub code_len: usize,
    pub n: usize,
    pub flip_prob: f64,
}

impl PlantedCodes {
    /// Returns labeled codes and the planted centers. Class sizes are
    /// multinomial with uniform probabilities.
    pub fn generate(&self, seed: u64) -> Result<(CodeMatrix, CenterSet)> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config("flip_prob must lie in [0, 1]".into()));
        }
        let truth = crate::centers::random_centers(self.k, self.code_len, seeds::derive(seed, "planted", 0))?;
        let rows = self.draw(&truth, self.n, seeds::derive(seed, "planted-rows", 0))?;
        Ok((rows, truth))
    }

    /// `n` labeled rows around the given centers.
    pub fn draw(&self, truth: &CenterSet, n: usize, seed: u64) -> Result<CodeMatrix> {
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config("flip_prob must lie in [0, 1]".into()));
        }
        let mut rng = seeds::rng(seed);
        let mut rows = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let k = rng.random_range(0..truth.k());
            let mut code = truth.center(k).clone();
            for j in 0..code.len() {
                if rng.random::<f64>() < self.flip_prob {
                    let b = code.bit(j);
                    code.set_bit(j, !b);
                }
            }
            rows.push(code);
            labels.push(k);
        }
        CodeMatrix::new(rows)?.with_labels(labels)
    }
}
