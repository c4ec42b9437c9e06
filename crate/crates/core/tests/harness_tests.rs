use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use hashinv_core::harness::pipeline::*;
use hashinv_core::harness::report::{REPORT_ATTACK, REPORT_ESTIMATE, REPORT_HISTOGRAMS};
use hashinv_core::harness::sweep::point_dir;
use hashinv_core::harness::*;
use hashinv_core::Error;
use serde_json::json;

/// Default pipeline with a lighter attack so end-to-end tests stay quick.
fn quick() -> ExperimentConfig {
    ExperimentConfig::default()
        .with_override("attack.pool_size", json!(8))
        .unwrap()
        .with_override("attack.augmentations", json!(10))
        .unwrap()
        .with_override("attack.iterations", json!(2))
        .unwrap()
        .with_override("surrogates.epochs", json!(60))
        .unwrap()
}

fn run_all(cfg: &ExperimentConfig, dir: &Path) {
    cmd_gen(cfg, dir).unwrap();
    cmd_estimate(cfg, dir).unwrap();
    cmd_attack(cfg, dir).unwrap();
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

fn last_column(csv: &str) -> Vec<String> {
    csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().to_string()).collect()
}

#[test]
fn gen_is_deterministic_and_pure() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = ExperimentConfig::default();
    let s = cmd_gen(&cfg, a.path()).unwrap();
    cmd_gen(&cfg, b.path()).unwrap();
    assert_eq!(files(a.path()), files(b.path()));
    assert!(s.private_purity >= 0.95, "purity {}", s.private_purity);
    for f in [WORLD_FILE, AUX_CODES, PRIVATE_CODES, TRUTH_CODES, MANIFEST] {
        assert!(a.path().join(f).exists(), "{f}");
    }
}

#[test]
fn empty_aux_split_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    match ExperimentConfig::default().with_override("data.n_aux", json!(0)) {
        Err(Error::Config(msg)) => assert!(msg.contains("n_aux"), "{msg}"),
        other => panic!("expected config error, got {other:?}"),
    }
    let mut cfg = ExperimentConfig::default();
    cfg.data.n_aux = 0;
    match cmd_gen(&cfg, dir.path()) {
        Err(Error::Config(msg)) => assert!(msg.contains("n_aux"), "{msg}"),
        other => panic!("expected config error, got {other:?}"),
    }
    assert!(!dir.path().join(AUX_CODES).exists());
}

#[test]
fn unknown_keys_and_missing_inputs_are_errors() {
    assert!(matches!(ExperimentConfig::default().with_override("attack.nope", json!(1)), Err(Error::Config(_))));
    assert!(matches!(ExperimentConfig::load(None, &["world.k".into()]), Err(Error::Config(_))));
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(cmd_estimate(&ExperimentConfig::default(), dir.path()), Err(Error::Io { .. })));
    let err = cmd_sweep(&ExperimentConfig::default(), "estimation.slice.bogus", &[json!(1)], false, dir.path());
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn every_artifact_carries_the_config_digest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick();
    run_all(&cfg, dir.path());
    let digest = cfg.digest();
    assert_eq!(digest.len(), 64);
    for csv in [ESTIMATE_SUMMARY, HISTOGRAMS, ATTACK_SUMMARY, ATTACK_METRICS] {
        let text = fs::read_to_string(dir.path().join(csv)).unwrap();
        assert!(last_column(&text).iter().all(|d| *d == digest), "{csv}");
    }
    let attack: AttackFile = serde_json::from_slice(&fs::read(dir.path().join(ATTACK_RESULT)).unwrap()).unwrap();
    assert_eq!(attack.config_digest, digest);
    assert_eq!(attack.queries, attack.query_budget);
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.path().join(MANIFEST)).unwrap()).unwrap();
    for (name, entry) in &manifest.files {
        assert_eq!(entry.config_digest, digest, "{name}");
    }
    assert!(manifest.files.contains_key(AUX_CODES) && manifest.files.contains_key(ATTACK_RESULT));
    let header = fs::read_to_string(dir.path().join(ATTACK_SUMMARY)).unwrap();
    assert!(header.starts_with(ATTACK_SUMMARY_HEADER));
    assert!(ATTACK_SUMMARY_HEADER.contains("target_match_before") && ATTACK_SUMMARY_HEADER.contains("target_match_after"));
}

#[test]
fn noiseless_planted_codes_are_recovered_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::default()
        .with_override("data.source", json!("planted"))
        .unwrap()
        .with_override("data.planted.flip_prob", json!(0.0))
        .unwrap();
    cmd_gen(&cfg, dir.path()).unwrap();
    let est = cmd_estimate(&cfg, dir.path()).unwrap();
    assert_eq!(est.reports["ours"].mean_distance, 0.0);
    assert!(est.reports["random"].mean_distance > 10.0);
    assert!(matches!(cmd_attack(&cfg, dir.path()), Err(Error::Config(_))));
}

#[test]
fn single_value_sweep_reduces_to_a_run() {
    let (sweep, direct) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = quick();
    let omega = json!(cfg.attack.omega);
    let csv = cmd_sweep(&cfg, "attack.omega", std::slice::from_ref(&omega), true, sweep.path()).unwrap();
    run_all(&cfg, direct.path());
    let point = point_dir(sweep.path(), "attack.omega", &omega);
    for f in [ESTIMATE_SUMMARY, ATTACK_SUMMARY, ATTACK_METRICS, ATTACK_RESULT] {
        assert_eq!(fs::read(point.join(f)).unwrap(), fs::read(direct.path().join(f)).unwrap(), "{f}");
    }
    assert_eq!(csv.lines().count(), 2);
    let attack: AttackFile = serde_json::from_slice(&fs::read(direct.path().join(ATTACK_RESULT)).unwrap()).unwrap();
    assert!(csv.contains(&attack.metrics.target_match_after.to_string()));
}

#[test]
fn report_of_one_run_is_its_summary() {
    let (run, out) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_all(&quick(), run.path());
    cmd_report(&[run.path()], out.path()).unwrap();
    assert_eq!(fs::read(out.path().join(REPORT_ESTIMATE)).unwrap(), fs::read(run.path().join(ESTIMATE_SUMMARY)).unwrap());
    assert_eq!(fs::read(out.path().join(REPORT_ATTACK)).unwrap(), fs::read(run.path().join(ATTACK_METRICS)).unwrap());
}

#[test]
fn report_is_order_independent_and_conserves_counts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for (dir, seed) in [(&a, 0), (&b, 1)] {
        let cfg = ExperimentConfig::default().with_override("master_seed", json!(seed)).unwrap();
        cmd_gen(&cfg, dir.path()).unwrap();
        cmd_estimate(&cfg, dir.path()).unwrap();
    }
    let (ab, ba) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_report(&[a.path(), b.path()], ab.path()).unwrap();
    cmd_report(&[b.path(), a.path()], ba.path()).unwrap();
    assert_eq!(files(ab.path()), files(ba.path()));

    let k = ExperimentConfig::default().true_classes();
    let mut per_run: BTreeMap<String, usize> = BTreeMap::new();
    for line in fs::read_to_string(a.path().join(HISTOGRAMS)).unwrap().lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        *per_run.entry(f[0].to_string()).or_default() += f[2].parse::<usize>().unwrap();
    }
    assert_eq!(per_run.len(), METHODS.len());
    assert!(per_run.values().all(|&n| n == k));
    let mut merged: BTreeMap<String, usize> = BTreeMap::new();
    for line in fs::read_to_string(ab.path().join(REPORT_HISTOGRAMS)).unwrap().lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        *merged.entry(f[0].to_string()).or_default() += f[2].parse::<usize>().unwrap();
    }
    assert!(merged.values().all(|&n| n == 2 * k));
}
