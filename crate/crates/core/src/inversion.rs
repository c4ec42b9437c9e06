//! Surrogate-guided diffusion inversion of hash centers.
//!
//! For each target center `(h_i, y)`: sample a pool of guided trajectories
//! conditioned on `y`, score the finished samples with the attack metric,
//! keep the top `k`, then re-run each kept trajectory from its saved
//! checkpoint while nudging every intermediate state with Adam on the
//! surrogate loss. A rerun replaces the incumbent only if it scores
//! strictly higher.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::centers::{classify_by_centers, CenterSet};
use crate::diffusion::{self, DiffusionSchedule, GuidanceConfig, NoisePredictor, SampleTrace};
use crate::error::{Error, Result};
use crate::eval::compute_map;
use crate::hamming::{BitCode, CodeMatrix};
use crate::seeds;
use crate::surrogate::{surrogate_loss_grad, AdamConfig, AdamState, SurrogateCluster};
use crate::world::{augment, AugmentationSpec, HashOracle, MixtureSpec};

/// `exp(-(dis / l) * w_hamming)`.
pub fn hamming_weight(dis: u32, code_len: usize, w_hamming: f64) -> Result<f64> {
    if dis as usize > code_len {
        return Err(Error::Input(format!("distance {dis} exceeds code length {code_len}")));
    }
    Ok((-(f64::from(dis) / code_len as f64) * w_hamming).exp())
}

/// One augmented (or the unaugmented) view's contribution: Hamming weight
/// `d` and whether the hash classifier returned the target label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct View {
    pub weight: f64,
    pub hit: bool,
}

/// Attack metric from its parts, with `base` the unaugmented view and
/// `augmented` the `M` augmented views.
pub fn s_attack(w_base: f64, base: View, augmented: &[View]) -> f64 {
    let m = augmented.len() as f64;
    let anchor = if base.hit { w_base * base.weight * m } else { 0.0 };
    let votes: f64 = augmented.iter().filter(|v| v.hit).map(|v| v.weight).sum();
    (anchor + votes) / (anchor + m)
}

/// How augmented views get their predicted labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum AugmentLabeler {
    /// Hash each augmented view through the oracle (one query per view).
    #[default]
    #[serde(rename = "oracle")]
    Oracle,
    /// Label views with the surrogate cluster and reuse the unaugmented
    /// code's Hamming weight; one oracle query per score.
    #[serde(rename = "surrogate")]
    Surrogate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum AdamReset {
    /// Fresh optimizer state at every refinement iteration.
    #[default]
    #[serde(rename = "per-iteration")]
    PerIteration,
    /// Fresh optimizer state at every denoising step.
    #[serde(rename = "per-step")]
    PerStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Initial candidate pool size `n`.
    pub pool_size: usize,
    /// Candidates kept after selection, `k`.
    pub top_k: usize,
    /// Refinement iterations.
    pub iterations: usize,
    /// Checkpoint step `N`.
    pub checkpoint: usize,
    /// Augmentation count `M`.
    pub augmentations: usize,
    pub aug_noise_sigma: f64,
    pub aug_mask_prob: f64,
    pub w_base: f64,
    pub w_hamming: f64,
    pub lr: f64,
    pub omega: f64,
    /// Adam updates per denoising step.
    pub inner_steps: usize,
    pub adam_reset: AdamReset,
    /// Reuse the original noise stream during refinement instead of fresh draws.
    pub replay_noise: bool,
    pub labeler: AugmentLabeler,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            pool_size: 20,
            top_k: 5,
            iterations: 6,
            checkpoint: 20,
            augmentations: 50,
            aug_noise_sigma: 0.1,
            aug_mask_prob: 0.0,
            w_base: 0.2,
            w_hamming: 5.0,
            lr: 0.0015,
            omega: 4.0,
            inner_steps: 1,
            adam_reset: AdamReset::PerIteration,
            replay_noise: false,
            labeler: AugmentLabeler::Oracle,
            seed: 0,
        }
    }
}

impl AttackConfig {
    /// Full-scale values: M = 300, n = 40, k = 5, N = 100, w_base = 0.2,
    /// w_hamming = 5, iter = 6, lr = 0.0015, omega = 4.
    pub fn full_scale() -> Self {
        Self {
            pool_size: 40,
            top_k: 5,
            iterations: 6,
            checkpoint: 100,
            augmentations: 300,
            ..Self::default()
        }
    }

    pub fn validate(&self, schedule: &DiffusionSchedule) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.top_k == 0 || self.top_k > self.pool_size {
            return fail(format!("need 1 <= k <= n, got k = {} n = {}", self.top_k, self.pool_size));
        }
        if !(1..=schedule.steps()).contains(&self.checkpoint) {
            return fail(format!("checkpoint N = {} outside [1, {}]", self.checkpoint, schedule.steps()));
        }
        if self.augmentations == 0 {
            return fail("augmentation count M must be >= 1".into());
        }
        if !(self.w_base >= 0.0) || !(self.w_hamming >= 0.0) {
            return fail("w_base and w_hamming must be >= 0".into());
        }
        if !(self.lr >= 0.0) || !(self.omega >= 0.0) {
            return fail("lr and omega must be >= 0".into());
        }
        self.augmentation_spec().validate()
    }

    pub fn augmentation_spec(&self) -> AugmentationSpec {
        AugmentationSpec {
            count: self.augmentations,
            noise_sigma: self.aug_noise_sigma,
            mask_prob: self.aug_mask_prob,
            seed: seeds::derive(self.seed, seeds::stream::AUGMENT, 0),
        }
    }

    pub fn guidance(&self) -> GuidanceConfig {
        GuidanceConfig {
            omega: self.omega,
            checkpoint: self.checkpoint,
        }
    }

    /// Oracle queries spent by one scoring call.
    pub fn queries_per_score(&self) -> u64 {
        match self.labeler {
            AugmentLabeler::Oracle => self.augmentations as u64 + 1,
            AugmentLabeler::Surrogate => 1,
        }
    }

    /// Oracle queries spent inverting one center: pool scoring plus one
    /// score per refinement iteration per kept candidate.
    pub fn query_budget_per_center(&self) -> u64 {
        (self.pool_size as u64 + (self.iterations * self.top_k) as u64) * self.queries_per_score()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub code: BitCode,
    pub label: usize,
}

/// Everything an attack run reads but never mutates (apart from the
/// oracle's query counter).
pub struct AttackContext<'a> {
    pub oracle: &'a HashOracle,
    pub centers: &'a CenterSet,
    pub cluster: &'a SurrogateCluster,
    pub predictor: &'a dyn NoisePredictor,
    pub schedule: &'a DiffusionSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub score: f64,
    pub code: BitCode,
    pub queries: u64,
}

/// Scores a finished sample against `target`.
pub fn attack_score(
    x0: &[f64],
    target: &Target,
    ctx: &AttackContext<'_>,
    cfg: &AttackConfig,
) -> Result<Scored> {
    let aug = cfg.augmentation_spec();
    let l = target.code.len();
    let code = ctx.oracle.hash(x0)?;
    let base = View {
        weight: hamming_weight(code.hamming(&target.code)?, l, cfg.w_hamming)?,
        hit: classify_by_centers(&code, ctx.centers)? == target.label,
    };
    let mut queries = 1;
    let views = (1..=aug.count)
        .map(|t| {
            let xa = augment(x0, &aug, t);
            match cfg.labeler {
                AugmentLabeler::Oracle => {
                    let c = ctx.oracle.hash(&xa)?;
                    queries += 1;
                    Ok(View {
                        weight: hamming_weight(c.hamming(&target.code)?, l, cfg.w_hamming)?,
                        hit: classify_by_centers(&c, ctx.centers)? == target.label,
                    })
                }
                AugmentLabeler::Surrogate => Ok(View {
                    weight: base.weight,
                    hit: ctx.cluster.predict(&xa)? == target.label,
                }),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scored {
        score: s_attack(cfg.w_base, base, &views),
        code,
        queries,
    })
}

/// Indices of the `k` highest scores, best first; ties go to the lower index.
pub fn select_topk(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > scores.len() {
        return Err(Error::Input(format!("cannot select {k} of {} candidates", scores.len())));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub score: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Pool index of the trajectory this candidate came from.
    pub pool_index: usize,
    pub trace: SampleTrace,
    pub initial_score: f64,
    pub initial_code: BitCode,
    /// Incumbent sample and its score and code.
    pub x0: Vec<f64>,
    pub score: f64,
    pub code: BitCode,
    pub history: Vec<IterationRecord>,
}

impl Candidate {
    pub fn new(pool_index: usize, trace: SampleTrace, scored: Scored) -> Self {
        Self {
            pool_index,
            x0: trace.x0.clone(),
            trace,
            initial_score: scored.score,
            initial_code: scored.code.clone(),
            score: scored.score,
            code: scored.code,
            history: Vec::new(),
        }
    }
}

/// Adam steps on the surrogate loss applied after each reverse step.
struct SurrogateHook<'a> {
    cluster: &'a SurrogateCluster,
    label: usize,
    adam: AdamState,
    config: AdamConfig,
    reset: AdamReset,
    inner_steps: usize,
}

impl diffusion::StepHook for SurrogateHook<'_> {
    fn after_step(&mut self, _t: usize, x_prev: &mut [f64]) -> Result<()> {
        if self.reset == AdamReset::PerStep {
            self.adam = AdamState::new(self.config, x_prev.len());
        }
        for _ in 0..self.inner_steps {
            let grad = surrogate_loss_grad(self.cluster, x_prev, self.label)?;
            self.adam.step(x_prev, &grad)?;
        }
        Ok(())
    }
}

/// Re-runs the candidate's trajectory from its checkpoint `iterations`
/// times with surrogate guidance, keeping the best-scoring sample.
pub fn refine_candidate(
    candidate: &Candidate,
    target: &Target,
    ctx: &AttackContext<'_>,
    cfg: &AttackConfig,
) -> Result<(Candidate, u64)> {
    if candidate.trace.checkpoint.is_none() {
        return Err(Error::State("candidate has no saved checkpoint".into()));
    }
    let mut best = candidate.clone();
    let mut queries = 0;
    let adam_cfg = AdamConfig::with_lr(cfg.lr);
    for j in 1..=cfg.iterations {
        let noise_seed = if cfg.replay_noise {
            candidate.trace.seed
        } else {
            seeds::derive(candidate.trace.seed, seeds::stream::REFINE, j as u64)
        };
        let mut hook = SurrogateHook {
            cluster: ctx.cluster,
            label: target.label,
            adam: AdamState::new(adam_cfg, ctx.predictor.dim()),
            config: adam_cfg,
            reset: cfg.adam_reset,
            inner_steps: cfg.inner_steps,
        };
        let x0 = diffusion::resume_from(
            &candidate.trace,
            ctx.predictor,
            ctx.schedule,
            cfg.omega,
            noise_seed,
            &mut hook,
        )?;
        let scored = attack_score(&x0, target, ctx, cfg)?;
        queries += scored.queries;
        let accepted = scored.score > best.score;
        if accepted {
            best.x0 = x0;
            best.score = scored.score;
            best.code = scored.code;
        }
        best.history.push(IterationRecord {
            score: scored.score,
            accepted,
        });
    }
    Ok((best, queries))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterResult {
    pub center_index: usize,
    pub target: Target,
    pub candidates: Vec<Candidate>,
    pub queries: u64,
}

/// Seed of pool trajectory `i` for center `center_index`.
pub fn trajectory_seed(master: u64, center_index: usize, i: usize) -> u64 {
    seeds::derive(
        seeds::derive(master, seeds::stream::SAMPLING, center_index as u64),
        "trajectory",
        i as u64,
    )
}

/// Samples, scores, selects, and refines candidates for one center.
pub fn invert_center(
    center_index: usize,
    target: &Target,
    ctx: &AttackContext<'_>,
    cfg: &AttackConfig,
) -> Result<CenterResult> {
    cfg.validate(ctx.schedule)?;
    let guidance = cfg.guidance();
    let pool: Vec<(SampleTrace, Scored)> = (0..cfg.pool_size)
        .into_par_iter()
        .map(|i| {
            let seed = trajectory_seed(cfg.seed, center_index, i);
            let trace = diffusion::sample(ctx.predictor, target.label, ctx.schedule, &guidance, seed)?;
            let scored = attack_score(&trace.x0, target, ctx, cfg)?;
            Ok((trace, scored))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut queries: u64 = pool.iter().map(|(_, s)| s.queries).sum();
    let scores: Vec<f64> = pool.iter().map(|(_, s)| s.score).collect();
    let keep = select_topk(&scores, cfg.top_k)?;
    let refined: Vec<(Candidate, u64)> = keep
        .par_iter()
        .map(|&i| {
            let (trace, scored) = pool[i].clone();
            refine_candidate(&Candidate::new(i, trace, scored), target, ctx, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    queries += refined.iter().map(|(_, q)| q).sum::<u64>();
    Ok(CenterResult {
        center_index,
        target: target.clone(),
        candidates: refined.into_iter().map(|(c, _)| c).collect(),
        queries,
    })
}

/// Reconstruction quality for one center, before and after refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterMetrics {
    pub center_index: usize,
    pub label: usize,
    /// Ground-truth class aligned to this center.
    pub true_class: usize,
    pub target_match_before: f64,
    pub target_match_after: f64,
    pub truth_match_after: f64,
    pub mean_hamming_after: f64,
    pub mean_score_before: f64,
    pub mean_score_after: f64,
    pub mean_dist_to_mean: f64,
    pub mean_knn_dist: f64,
    pub queries: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackMetrics {
    pub per_center: Vec<CenterMetrics>,
    pub target_match_before: f64,
    pub target_match_after: f64,
    pub truth_match_after: f64,
    pub mean_hamming_after: f64,
    pub mean_score_before: f64,
    pub mean_score_after: f64,
    pub mean_dist_to_mean: f64,
    pub mean_knn_dist: f64,
    /// mAP of reconstructed codes (labeled with their aligned class)
    /// against the private database.
    pub map: f64,
    pub total_queries: u64,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Ground truth available to the evaluator but never to the attack.
pub struct EvalTruth<'a> {
    pub mixture: &'a MixtureSpec,
    pub truth_centers: &'a CenterSet,
    /// `alignment[center_index] = true class`.
    pub alignment: &'a [usize],
    pub private_vectors: &'a [Vec<f64>],
    pub private_codes: &'a CodeMatrix,
}

/// Aggregates stored candidates into metrics. Uses no oracle queries.
pub fn evaluate_attack(results: &[CenterResult], truth: &EvalTruth<'_>) -> Result<AttackMetrics> {
    let private_labels = truth
        .private_codes
        .labels()
        .ok_or_else(|| Error::Input("private codes carry no labels".into()))?;
    let mut per_center = Vec::with_capacity(results.len());
    let mut query_rows = Vec::new();
    let mut query_labels = Vec::new();
    for r in results {
        let class = *truth
            .alignment
            .get(r.center_index)
            .ok_or_else(|| Error::Input(format!("no alignment for center {}", r.center_index)))?;
        if class >= truth.mixture.k() {
            return Err(Error::Input(format!("aligned class {class} outside mixture")));
        }
        let truth_code = truth.truth_centers.center(class);
        let mu = &truth.mixture.means[class];
        let cands = &r.candidates;
        let rate = |f: &dyn Fn(&Candidate) -> bool| mean(cands.iter().map(|c| f64::from(u8::from(f(c)))));
        let knn = |x: &[f64]| {
            truth
                .private_vectors
                .iter()
                .zip(private_labels)
                .filter(|(_, &l)| l == class)
                .map(|(v, _)| euclid(v, x))
                .fold(f64::INFINITY, f64::min)
        };
        per_center.push(CenterMetrics {
            center_index: r.center_index,
            label: r.target.label,
            true_class: class,
            target_match_before: rate(&|c| c.initial_code == r.target.code),
            target_match_after: rate(&|c| c.code == r.target.code),
            truth_match_after: rate(&|c| &c.code == truth_code),
            mean_hamming_after: mean(cands.iter().map(|c| f64::from(c.code.hamming_unchecked(&r.target.code)))),
            mean_score_before: mean(cands.iter().map(|c| c.initial_score)),
            mean_score_after: mean(cands.iter().map(|c| c.score)),
            mean_dist_to_mean: mean(cands.iter().map(|c| euclid(&c.x0, mu))),
            mean_knn_dist: mean(cands.iter().map(|c| knn(&c.x0))),
            queries: r.queries,
        });
        for c in cands {
            query_rows.push(c.code.clone());
            query_labels.push(class);
        }
    }
    let map = if query_rows.is_empty() {
        0.0
    } else {
        compute_map(&CodeMatrix::new(query_rows)?.with_labels(query_labels)?, truth.private_codes)?
    };
    let avg = |f: fn(&CenterMetrics) -> f64| mean(per_center.iter().map(f));
    Ok(AttackMetrics {
        target_match_before: avg(|m| m.target_match_before),
        target_match_after: avg(|m| m.target_match_after),
        truth_match_after: avg(|m| m.truth_match_after),
        mean_hamming_after: avg(|m| m.mean_hamming_after),
        mean_score_before: avg(|m| m.mean_score_before),
        mean_score_after: avg(|m| m.mean_score_after),
        mean_dist_to_mean: avg(|m| m.mean_dist_to_mean),
        mean_knn_dist: avg(|m| m.mean_knn_dist),
        map,
        total_queries: per_center.iter().map(|m| m.queries).sum(),
        per_center,
    })
}
