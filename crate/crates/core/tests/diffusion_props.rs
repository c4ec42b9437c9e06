use hashinv_core::diffusion::*;
use hashinv_core::surrogate::{surrogate_loss, surrogate_loss_grad, train_surrogate, AdamConfig, AdamState, SurrogateCluster, TrainConfig};
use hashinv_core::world::*;
use hashinv_core::Error;
use proptest::prelude::*;

/// Schedule with arbitrary per-step values, for hand-computed cases.
fn raw_schedule(betas: &[f64], alpha_bars: &[f64]) -> DiffusionSchedule {
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    serde_json::from_value(serde_json::json!({ "betas": betas, "alphas": alphas, "alpha_bars": alpha_bars })).unwrap()
}

#[test]
fn desk_schedule_matches_independent_product() {
    let s = ScheduleConfig::default().build().unwrap();
    assert_eq!(s.steps(), 100);
    // Multiply in reverse order to get an independent rounding path.
    let reversed: f64 = (1..=100).rev().map(|t| 1.0 - s.beta(t)).product();
    assert!((s.alpha_bar(100) - reversed).abs() < 1e-15);
    for t in 2..=100 {
        assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        assert!(s.beta(t) >= s.beta(t - 1));
        assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
    }
    assert!(matches!(build_schedule(0, 1e-4, 0.02), Err(Error::Config(_))));
    assert!(matches!(build_schedule(10, 0.03, 0.02), Err(Error::Config(_))));
}

#[test]
fn guidance_arithmetic() {
    assert_eq!(combine_guidance(&[1.0, 0.0], &[0.0, 1.0], 4.0), vec![5.0, -4.0]);
    assert_eq!(combine_guidance(&[0.3, -2.0], &[0.3, -2.0], 7.5), vec![0.3, -2.0]);
}

proptest! {
    #[test]
    fn guidance_is_affine_in_omega(c in prop::collection::vec(-5.0f64..5.0, 3), u in prop::collection::vec(-5.0f64..5.0, 3), w in 0.0f64..10.0) {
        let got = combine_guidance(&c, &u, w);
        for j in 0..3 {
            prop_assert!((got[j] - (c[j] + w * (c[j] - u[j]))).abs() < 1e-12);
        }
    }
}

#[test]
fn hand_computed_reverse_step() {
    let s = raw_schedule(&[0.04], &[0.5]);
    let x = denoise_step(&[1.0], 1, &[1.0], &s, &[0.0]).unwrap();
    // (1 - 0.04 / sqrt(0.5)) / sqrt(0.96), evaluated separately in high precision.
    assert!((x[0] - 0.962_885_699_240_695).abs() < 1e-9);

    let plain = denoise_step(&[2.0], 1, &[0.0], &s, &[0.0]).unwrap();
    assert!((plain[0] - 2.0 / 0.96f64.sqrt()).abs() < 1e-15);
    let noisy = denoise_step(&[2.0], 1, &[0.0], &s, &[1.5]).unwrap();
    assert!((noisy[0] - plain[0] - 0.2 * 1.5).abs() < 1e-12);
    assert!(matches!(denoise_step(&[1.0], 0, &[1.0], &s, &[0.0]), Err(Error::Input(_))));
}

fn one_component(mean: Vec<f64>, sigma: f64) -> AnalyticPredictor {
    AnalyticPredictor::new(MixtureSpec::uniform(vec![mean], sigma).unwrap()).unwrap()
}

#[test]
fn single_component_samples_center_on_mean() {
    let mu = vec![1.5, -0.5, 2.0];
    let p = one_component(mu.clone(), 0.4);
    let s = ScheduleConfig::default().build().unwrap();
    let g = GuidanceConfig { omega: 0.0, checkpoint: 20 };
    let xs: Vec<Vec<f64>> = (0..500).map(|seed| sample(&p, 0, &s, &g, seed).unwrap().x0).collect();
    for j in 0..3 {
        let col: Vec<f64> = xs.iter().map(|x| x[j]).collect();
        let m = col.iter().sum::<f64>() / 500.0;
        let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 499.0).sqrt();
        assert!((m - mu[j]).abs() < 4.0 * sd / 500f64.sqrt(), "coord {j}: mean {m}");
    }
}

#[test]
fn checkpoint_boundaries_and_replay() {
    let p = one_component(vec![0.5, 0.5], 0.3);
    let s = build_schedule(10, 0.01, 0.3).unwrap();
    let first = sample(&p, 0, &s, &GuidanceConfig { omega: 0.0, checkpoint: 10 }, 3).unwrap();
    let x_t = initial_noise(3, 2);
    let eps = guided_epsilon(&p, &x_t, 10, 0, 0.0, &s).unwrap();
    let after_first = denoise_step(&x_t, 10, &eps, &s, &step_noise(3, 10, 2)).unwrap();
    assert_eq!(first.checkpoint.as_deref(), Some(after_first.as_slice()));

    let again = sample(&p, 0, &s, &GuidanceConfig { omega: 0.0, checkpoint: 10 }, 3).unwrap();
    assert_eq!(first, again);
    let resumed = resume_from(&first, &p, &s, 0.0, first.seed, &mut NoHook).unwrap();
    assert_eq!(resumed, first.x0);

    let last = sample(&p, 0, &s, &GuidanceConfig { omega: 0.0, checkpoint: 1 }, 3).unwrap();
    assert_eq!(last.checkpoint.as_deref(), Some(last.x0.as_slice()));

    let mut missing = first.clone();
    missing.checkpoint = None;
    assert!(matches!(resume_from(&missing, &p, &s, 0.0, 3, &mut NoHook), Err(Error::State(_))));
}

#[test]
fn zeroing_hook_leaves_final_formula() {
    let p = one_component(vec![1.0, -1.0], 0.5);
    let s = build_schedule(20, 0.01, 0.2).unwrap();
    let trace = sample(&p, 0, &s, &GuidanceConfig { omega: 1.0, checkpoint: 15 }, 8).unwrap();
    let mut zero = |t: usize, x: &mut [f64]| -> hashinv_core::Result<()> {
        if t > 1 {
            x.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(())
    };
    let x0 = resume_from(&trace, &p, &s, 1.0, 99, &mut zero).unwrap();
    let eps = guided_epsilon(&p, &[0.0, 0.0], 1, 0, 1.0, &s).unwrap();
    assert_eq!(x0, denoise_step(&[0.0, 0.0], 1, &eps, &s, &[0.0, 0.0]).unwrap());
}

#[test]
fn adam_hook_lowers_surrogate_loss() {
    let (spec, _) = WorldConfig::default().generate(0).unwrap();
    let (xs, ys) = sample_mixture(&spec, 1000, 1, None).unwrap();
    let model = train_surrogate(&xs, &ys, spec.k(), &TrainConfig::default(), "aux").unwrap();
    let cluster = SurrogateCluster::new(vec![model]).unwrap();
    let p = AnalyticPredictor::new(spec.clone()).unwrap();
    let s = ScheduleConfig::default().build().unwrap();
    let mut wins = 0;
    for seed in 0..50u64 {
        let y = (seed % spec.k() as u64) as usize;
        let trace = sample(&p, y, &s, &GuidanceConfig { omega: 4.0, checkpoint: 20 }, seed).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), spec.dim);
        let mut hook = |_t: usize, x: &mut [f64]| -> hashinv_core::Result<()> {
            let g = surrogate_loss_grad(&cluster, x, y)?;
            adam.step(x, &g)
        };
        let hooked = resume_from(&trace, &p, &s, 4.0, trace.seed, &mut hook).unwrap();
        if surrogate_loss(&cluster, &hooked, y).unwrap() <= surrogate_loss(&cluster, &trace.x0, y).unwrap() {
            wins += 1;
        }
    }
    assert!(wins >= 40, "{wins}/50");
}

#[test]
fn conditioning_concentrates_on_class_center() {
    let (spec, oracle) = WorldConfig::default().generate(0).unwrap();
    let truth = ground_truth_centers(&oracle, &spec, 500, 7).unwrap();
    let p = AnalyticPredictor::new(spec.clone()).unwrap();
    let s = ScheduleConfig::default().build().unwrap();
    let g = GuidanceConfig { omega: 0.0, checkpoint: 20 };
    let (mut cond_hits, mut uncond_hits) = (0, 0);
    for seed in 0..500u64 {
        let y = (seed % spec.k() as u64) as usize;
        let c = sample(&p, y, &s, &g, seed).unwrap();
        if oracle.hash(&c.x0).unwrap() == *truth.center(y) {
            cond_hits += 1;
        }
        // Same trajectory noise, null label at every step.
        let mut x = initial_noise(seed, spec.dim);
        for t in (1..=s.steps()).rev() {
            let eps = p.predict(&x, t, None, &s).unwrap();
            x = denoise_step(&x, t, &eps, &s, &step_noise(seed, t, spec.dim)).unwrap();
        }
        if oracle.hash(&x).unwrap() == *truth.center(y) {
            uncond_hits += 1;
        }
    }
    assert!(cond_hits >= uncond_hits, "conditional {cond_hits} vs unconditional {uncond_hits}");
}
