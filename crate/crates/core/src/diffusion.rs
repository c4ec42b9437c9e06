//! DDPM reverse process with classifier-free guidance.
//!
//! Timesteps are 1-based: `t` runs from `T` down to 1. The Gaussian noise
//! injected at step `t` of a trajectory is drawn from stream `t` of the
//! trajectory's noise seed, and the initial state from stream 0, so a saved
//! checkpoint can be resumed with bit-identical results.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleConfig {
    /// Linear endpoints used for the full-length 1500-step schedule.
    pub const REFERENCE_STEPS: usize = 1500;
    pub const REFERENCE_BETA_START: f64 = 1e-4;
    pub const REFERENCE_BETA_END: f64 = 0.02;

    /// The 1500-step schedule with endpoints 1e-4 and 0.02.
    pub fn reference() -> Self {
        Self {
            steps: Self::REFERENCE_STEPS,
            beta_start: Self::REFERENCE_BETA_START,
            beta_end: Self::REFERENCE_BETA_END,
        }
    }

    /// Shortened schedule whose endpoints are stretched by `1500 / steps`
    /// so the forward process still ends near pure noise.
    pub fn compressed(steps: usize) -> Self {
        let scale = Self::REFERENCE_STEPS as f64 / steps as f64;
        Self {
            steps,
            beta_start: Self::REFERENCE_BETA_START * scale,
            beta_end: Self::REFERENCE_BETA_END * scale,
        }
    }

    pub fn build(&self) -> Result<DiffusionSchedule> {
        build_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self::compressed(100)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn idx(&self, t: usize) -> usize {
        assert!(
            (1..=self.steps()).contains(&t),
            "timestep {t} outside [1, {}]",
            self.steps()
        );
        t - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[self.idx(t)]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[self.idx(t)]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[self.idx(t)]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if (1..=self.steps()).contains(&t) {
            Ok(())
        } else {
            Err(Error::Input(format!(
                "timestep {t} outside [1, {}]",
                self.steps()
            )))
        }
    }
}

/// Linear beta schedule with `beta_1 = beta_start` and `beta_T = beta_end`.
pub fn build_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    if steps == 0 {
        return Err(Error::Config("diffusion needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
        )));
    }
    let betas: Vec<f64> = if steps == 1 {
        vec![beta_start]
    } else {
        let span = (steps - 1) as f64;
        (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / span)
            .collect()
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let alpha_bars = alphas
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(DiffusionSchedule {
        betas,
        alphas,
        alpha_bars,
    })
}

/// A conditional noise-prediction model `eps(x_t, t, y)`; `label = None`
/// is the null (unconditional) label.
pub trait NoisePredictor: Sync {
    fn dim(&self) -> usize;

    fn predict(
        &self,
        x_t: &[f64],
        t: usize,
        label: Option<usize>,
        schedule: &DiffusionSchedule,
    ) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    /// Guidance strength, at least 0.
    pub omega: f64,
    /// Refinement checkpoint step `N`; the state `x_{N-1}` is saved.
    pub checkpoint: usize,
}

impl GuidanceConfig {
    pub fn validate(&self, schedule: &DiffusionSchedule) -> Result<()> {
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(Error::Config(format!("omega must be >= 0, got {}", self.omega)));
        }
        if !(1..=schedule.steps()).contains(&self.checkpoint) {
            return Err(Error::Config(format!(
                "checkpoint step N = {} outside [1, {}]",
                self.checkpoint,
                schedule.steps()
            )));
        }
        Ok(())
    }
}

/// `(1 + omega) * eps(x, t, y) - omega * eps(x, t, null)`, evaluated as
/// `c + omega * (c - u)` so equal predictions pass through exactly.
pub fn guided_epsilon(
    predictor: &dyn NoisePredictor,
    x_t: &[f64],
    t: usize,
    label: usize,
    omega: f64,
    schedule: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    let cond = predictor.predict(x_t, t, Some(label), schedule)?;
    if omega == 0.0 {
        return Ok(cond);
    }
    let uncond = predictor.predict(x_t, t, None, schedule)?;
    Ok(combine_guidance(&cond, &uncond, omega))
}

pub fn combine_guidance(cond: &[f64], uncond: &[f64], omega: f64) -> Vec<f64> {
    cond.iter()
        .zip(uncond)
        .map(|(c, u)| c + omega * (c - u))
        .collect()
}

/// One reverse step:
/// `x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t) + sqrt(beta_t) * z`.
pub fn denoise_step(
    x_t: &[f64],
    t: usize,
    eps: &[f64],
    schedule: &DiffusionSchedule,
    z: &[f64],
) -> Result<Vec<f64>> {
    schedule.check_step(t)?;
    if eps.len() != x_t.len() {
        return Err(Error::dim(x_t.len(), eps.len()));
    }
    if z.len() != x_t.len() {
        return Err(Error::dim(x_t.len(), z.len()));
    }
    let beta = schedule.beta(t);
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    let eps_coef = beta / (1.0 - schedule.alpha_bar(t)).sqrt();
    let noise_coef = beta.sqrt();
    Ok(x_t
        .iter()
        .zip(eps)
        .zip(z)
        .map(|((x, e), z)| inv_sqrt_alpha * (x - eps_coef * e) + noise_coef * z)
        .collect())
}

/// Noise `z` for step `t` of the trajectory keyed by `noise_seed`; zero at `t = 1`.
pub fn step_noise(noise_seed: u64, t: usize, dim: usize) -> Vec<f64> {
    if t <= 1 {
        vec![0.0; dim]
    } else {
        seeds::normal_vec(&mut seeds::rng_at(noise_seed, t as u64), dim)
    }
}

pub fn initial_noise(noise_seed: u64, dim: usize) -> Vec<f64> {
    seeds::normal_vec(&mut seeds::rng_at(noise_seed, 0), dim)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTrace {
    pub x0: Vec<f64>,
    /// `x_{N-1}`, saved right after the reverse step at `t = N`.
    pub checkpoint: Option<Vec<f64>>,
    pub checkpoint_step: usize,
    pub label: usize,
    pub seed: u64,
}

/// Per-step transformation applied to `x_{t-1}` right after the reverse
/// step at `t`.
pub trait StepHook {
    fn after_step(&mut self, t: usize, x_prev: &mut [f64]) -> Result<()>;
}

/// Leaves every state untouched.
pub struct NoHook;

impl StepHook for NoHook {
    fn after_step(&mut self, _t: usize, _x_prev: &mut [f64]) -> Result<()> {
        Ok(())
    }
}

impl<F: FnMut(usize, &mut [f64]) -> Result<()>> StepHook for F {
    fn after_step(&mut self, t: usize, x_prev: &mut [f64]) -> Result<()> {
        self(t, x_prev)
    }
}

/// Runs reverse steps `t = from, from - 1, ..., to` starting at state `x`
/// (which is `x_from`), calling `on_step` with `(t, x_{t-1})` after each.
#[allow(clippy::too_many_arguments)]
fn reverse_steps(
    mut x: Vec<f64>,
    from: usize,
    to: usize,
    predictor: &dyn NoisePredictor,
    label: usize,
    omega: f64,
    schedule: &DiffusionSchedule,
    noise_seed: u64,
    hook: &mut dyn StepHook,
    mut on_step: impl FnMut(usize, &[f64]),
) -> Result<Vec<f64>> {
    let dim = x.len();
    for t in (to..=from).rev() {
        let eps = guided_epsilon(predictor, &x, t, label, omega, schedule)?;
        let z = step_noise(noise_seed, t, dim);
        x = denoise_step(&x, t, &eps, schedule, &z)?;
        hook.after_step(t, &mut x)?;
        on_step(t, &x);
    }
    Ok(x)
}

/// Full guided trajectory from `x_T ~ N(0, I)` down to `x_0`, saving the
/// checkpoint `x_{N-1}`.
pub fn sample(
    predictor: &dyn NoisePredictor,
    label: usize,
    schedule: &DiffusionSchedule,
    guidance: &GuidanceConfig,
    seed: u64,
) -> Result<SampleTrace> {
    guidance.validate(schedule)?;
    let n = guidance.checkpoint;
    let mut checkpoint = None;
    let x_t = initial_noise(seed, predictor.dim());
    let x0 = reverse_steps(
        x_t,
        schedule.steps(),
        1,
        predictor,
        label,
        guidance.omega,
        schedule,
        seed,
        &mut NoHook,
        |t, x| {
            if t == n {
                checkpoint = Some(x.to_vec());
            }
        },
    )?;
    Ok(SampleTrace {
        x0,
        checkpoint,
        checkpoint_step: n,
        label,
        seed,
    })
}

/// Continues a trace from its checkpoint `x_{N-1}` down to `x_0`.
///
/// Passing `noise_seed = trace.seed` replays the original noise stream; with
/// [`NoHook`] that reproduces `trace.x0` exactly.
pub fn resume_from(
    trace: &SampleTrace,
    predictor: &dyn NoisePredictor,
    schedule: &DiffusionSchedule,
    omega: f64,
    noise_seed: u64,
    hook: &mut dyn StepHook,
) -> Result<Vec<f64>> {
    let x = trace
        .checkpoint
        .clone()
        .ok_or_else(|| Error::State("trace has no saved checkpoint".into()))?;
    if trace.checkpoint_step <= 1 {
        // x_{N-1} is already x_0.
        return Ok(x);
    }
    reverse_steps(
        x,
        trace.checkpoint_step - 1,
        1,
        predictor,
        trace.label,
        omega,
        schedule,
        noise_seed,
        hook,
        |_, _| {},
    )
}
