use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{DataSource, ExperimentConfig};
use crate::centers::{assign_pseudo_labels, kmeans_binary, random_centers, refine_centers, CenterSet};
use crate::error::{Error, Result};
use crate::eval::{align_centers, AlignmentReport};
use crate::fsutil;
use crate::hamming::{read_codes, write_codes, CodeMatrix};
use crate::inversion::{evaluate_attack, invert_center, AttackMetrics, CenterResult, EvalTruth, Target};
use crate::seeds;
use crate::surrogate::{bootstrap_indices, train_surrogate, SurrogateCluster, TrainConfig};
use crate::world::{fit_mixture, ground_truth_centers, sample_mixture, AnalyticPredictor, HashOracle, MixtureSpec};

pub const WORLD_FILE: &str = "world.json";
pub const AUX_CODES: &str = "aux.codes";
pub const AUX_VECTORS: &str = "aux_vectors.json";
pub const PRIVATE_CODES: &str = "private.codes";
pub const PRIVATE_VECTORS: &str = "private_vectors.json";
pub const TRUTH_CODES: &str = "truth.codes";
pub const ESTIMATE_SUMMARY: &str = "estimate_summary.csv";
pub const HISTOGRAMS: &str = "histograms.csv";
pub const ATTACK_RESULT: &str = "attack_result.json";
pub const ATTACK_SUMMARY: &str = "attack_summary.csv";
pub const ATTACK_METRICS: &str = "attack_metrics.csv";
pub const SURROGATES: &str = "surrogates.json";
pub const MANIFEST: &str = "manifest.json";

/// Estimators in report order.
pub const METHODS: [&str; 3] = ["kmeans", "ours", "random"];

pub const ESTIMATE_HEADER: &str = "method,k,code_len,mean_distance,exact_matches,config_digest";
pub const HISTOGRAM_HEADER: &str = "method,distance,count,config_digest";
pub const ATTACK_SUMMARY_HEADER: &str = "center,label,true_class,target_match_before,target_match_after,\
mean_score_before,mean_score_after,truth_match_after,mean_hamming_after,mean_dist_to_mean,mean_knn_dist,queries,config_digest";
pub const ATTACK_METRICS_HEADER: &str = "centers,target_match_before,target_match_after,mean_score_before,\
mean_score_after,truth_match_after,mean_hamming_after,mean_dist_to_mean,mean_knn_dist,map,queries,query_budget,config_digest";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldFile {
    pub config_digest: String,
    pub source: DataSource,
    pub mixture: Option<MixtureSpec>,
    pub oracle: Option<HashOracle>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VectorsFile {
    pub config_digest: String,
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentFile {
    pub config_digest: String,
    pub method: String,
    pub report: AlignmentReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogatesFile {
    pub config_digest: String,
    pub cluster: SurrogateCluster,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackFile {
    pub config_digest: String,
    pub query_budget: u64,
    pub queries: u64,
    pub results: Vec<CenterResult>,
    pub metrics: AttackMetrics,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sha256: String,
    pub config_digest: String,
    pub command: String,
}

/// Per-directory record of every artifact, its hash and the config that wrote it.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub files: BTreeMap<String, ManifestEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Collects written artifacts and records them in the manifest at the end.
struct Writer<'a> {
    dir: &'a Path,
    digest: String,
    command: &'static str,
    written: Vec<(String, String)>,
}

impl<'a> Writer<'a> {
    fn new(dir: &'a Path, cfg: &ExperimentConfig, command: &'static str) -> Self {
        Self {
            dir,
            digest: cfg.digest(),
            command,
            written: Vec::new(),
        }
    }

    fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fsutil::write_atomic(&self.dir.join(name), bytes)?;
        self.written.push((name.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.bytes(name, text.as_bytes())
    }

    fn codes(&mut self, name: &str, m: &CodeMatrix) -> Result<()> {
        let path = self.dir.join(name);
        write_codes(m, &path)?;
        self.written.push((name.to_string(), sha256_hex(m.to_codes_text().as_bytes())));
        if let Some(labels) = m.to_labels_text() {
            let lp = crate::hamming::labels_path(&path);
            let lname = lp.file_name().expect("labels file name").to_string_lossy().into_owned();
            self.written.push((lname, sha256_hex(labels.as_bytes())));
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let path = self.dir.join(MANIFEST);
        let mut manifest: Manifest = if path.exists() { fsutil::read_json(&path)? } else { Manifest::default() };
        for (name, sha) in self.written {
            manifest.files.insert(
                name,
                ManifestEntry {
                    sha256: sha,
                    config_digest: self.digest.clone(),
                    command: self.command.to_string(),
                },
            );
        }
        fsutil::write_json(&path, &manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub n_aux: usize,
    pub n_priv: usize,
    /// Fraction of private codes whose nearest ground-truth center is their class.
    pub private_purity: f64,
}

/// Materializes the world, hashed auxiliary/private splits, and ground-truth centers.
pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<GenSummary> {
    cfg.validate()?;
    let mut w = Writer::new(out, cfg, "gen");
    let d = &cfg.data;
    let (aux, private, truth, world) = match d.source {
        DataSource::Mixture => {
            let (spec, oracle) = cfg.world.generate(cfg.seed(seeds::stream::WORLD))?;
            let (aux_x, _) = sample_mixture(&spec, d.n_aux, cfg.seed("aux"), None)?;
            let (priv_x, priv_y) = sample_mixture(&spec, d.n_priv, cfg.seed("private"), None)?;
            let truth = ground_truth_centers(&oracle, &spec, d.truth_samples, cfg.seed("truth"))?;
            let aux = oracle.hash_all(&aux_x)?;
            let private = oracle.hash_all(&priv_x)?.with_labels(priv_y)?;
            w.json(AUX_VECTORS, &VectorsFile { config_digest: w.digest.clone(), vectors: aux_x })?;
            w.json(PRIVATE_VECTORS, &VectorsFile { config_digest: w.digest.clone(), vectors: priv_x })?;
            oracle.reset_queries();
            (aux, private, truth, WorldFile {
                config_digest: w.digest.clone(),
                source: d.source,
                mixture: Some(spec),
                oracle: Some(oracle),
            })
        }
        DataSource::Planted => {
            let planted = d.planted_codes();
            let (aux, truth) = planted.generate(cfg.seed(seeds::stream::WORLD))?;
            let private = planted.draw(&truth, d.n_priv, cfg.seed("private"))?;
            let aux = CodeMatrix::new(aux.into_rows())?;
            (aux, private, truth, WorldFile {
                config_digest: w.digest.clone(),
                source: d.source,
                mixture: None,
                oracle: None,
            })
        }
    };
    let mut hits = 0usize;
    for (row, &label) in private.rows().iter().zip(private.labels().expect("private codes are labeled")) {
        hits += usize::from(crate::centers::classify_by_centers(row, &truth)? == label);
    }
    w.json(WORLD_FILE, &world)?;
    w.codes(AUX_CODES, &aux)?;
    w.codes(PRIVATE_CODES, &private)?;
    w.codes(TRUTH_CODES, &truth.to_matrix())?;
    w.json("config.json", cfg)?;
    w.finish()?;
    Ok(GenSummary {
        n_aux: aux.n_rows(),
        n_priv: private.n_rows(),
        private_purity: hits as f64 / private.n_rows() as f64,
    })
}

fn centers_file(method: &str) -> String {
    format!("centers_{method}.codes")
}

fn alignment_file(method: &str) -> String {
    format!("alignment_{method}.json")
}

/// Estimated centers for each method, keyed by method name.
pub struct Estimates {
    pub centers: BTreeMap<String, CenterSet>,
    pub reports: BTreeMap<String, AlignmentReport>,
}

/// Random, K-means, and slice-fused estimates on `aux`, each aligned to `truth`.
pub fn estimate_all(cfg: &ExperimentConfig, aux: &CodeMatrix, truth: &CenterSet) -> Result<Estimates> {
    let kcfg = cfg.kmeans_config();
    let kmeans = kmeans_binary(aux, &kcfg)?;
    let ours = refine_centers(aux, &kmeans, &cfg.estimation.slice)?;
    let random = random_centers(kcfg.k, aux.code_len(), cfg.seed(seeds::stream::RANDOM_CENTERS))?;
    let mut centers = BTreeMap::new();
    centers.insert("kmeans".to_string(), kmeans);
    centers.insert("ours".to_string(), ours);
    centers.insert("random".to_string(), random);
    let reports = centers
        .iter()
        .map(|(m, c)| Ok((m.clone(), align_centers(c, truth)?)))
        .collect::<Result<_>>()?;
    Ok(Estimates { centers, reports })
}

pub fn estimate_summary_csv(estimates: &Estimates, digest: &str) -> String {
    let mut s = format!("{ESTIMATE_HEADER}\n");
    for m in METHODS {
        let r = &estimates.reports[m];
        let c = &estimates.centers[m];
        let _ = writeln!(s, "{m},{},{},{},{},{digest}", c.k(), c.code_len(), r.mean_distance, r.exact_matches);
    }
    s
}

pub fn histograms_csv(estimates: &Estimates, digest: &str) -> String {
    let mut s = format!("{HISTOGRAM_HEADER}\n");
    for m in METHODS {
        for (d, n) in &estimates.reports[m].histogram {
            let _ = writeln!(s, "{m},{d},{n},{digest}");
        }
    }
    s
}

/// Runs all three estimators on the generated aux codes and aligns them.
pub fn cmd_estimate(cfg: &ExperimentConfig, out: &Path) -> Result<Estimates> {
    cfg.validate()?;
    let aux = read_codes(&out.join(AUX_CODES))?;
    let truth = CenterSet::from_matrix(read_codes(&out.join(TRUTH_CODES))?)?;
    let est = estimate_all(cfg, &aux, &truth)?;
    let mut w = Writer::new(out, cfg, "estimate");
    for m in METHODS {
        w.codes(&centers_file(m), &est.centers[m].to_matrix())?;
        w.json(&alignment_file(m), &AlignmentFile {
            config_digest: w.digest.clone(),
            method: m.to_string(),
            report: est.reports[m].clone(),
        })?;
    }
    let digest = w.digest.clone();
    w.bytes(ESTIMATE_SUMMARY, estimate_summary_csv(&est, &digest).as_bytes())?;
    w.bytes(HISTOGRAMS, histograms_csv(&est, &digest).as_bytes())?;
    w.finish()?;
    Ok(est)
}

/// Trains `m` softmax surrogates on pseudo-labeled auxiliary vectors.
pub fn train_cluster(cfg: &ExperimentConfig, vectors: &[Vec<f64>], labels: &[usize], k: usize) -> Result<SurrogateCluster> {
    let s = &cfg.surrogates;
    let models = (0..s.m)
        .map(|i| {
            let seed = seeds::derive(cfg.master_seed, seeds::stream::SURROGATE, i as u64);
            let idx: Vec<usize> = if s.bootstrap {
                bootstrap_indices(vectors.len(), seeds::derive(seed, "bootstrap", 0))
            } else {
                (0..vectors.len()).collect()
            };
            let xs: Vec<Vec<f64>> = idx.iter().map(|&j| vectors[j].clone()).collect();
            let ys: Vec<usize> = idx.iter().map(|&j| labels[j]).collect();
            let tc = TrainConfig { epochs: s.epochs, lr: s.lr, seed };
            train_surrogate(&xs, &ys, k, &tc, &format!("aux-pseudo-labels/member-{i}"))
        })
        .collect::<Result<Vec<_>>>()?;
    SurrogateCluster::new(models)
}

pub fn attack_summary_csv(metrics: &AttackMetrics, digest: &str) -> String {
    let mut s = format!("{ATTACK_SUMMARY_HEADER}\n");
    for m in &metrics.per_center {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{digest}",
            m.center_index,
            m.label,
            m.true_class,
            m.target_match_before,
            m.target_match_after,
            m.mean_score_before,
            m.mean_score_after,
            m.truth_match_after,
            m.mean_hamming_after,
            m.mean_dist_to_mean,
            m.mean_knn_dist,
            m.queries
        );
    }
    s
}

pub fn attack_metrics_csv(metrics: &AttackMetrics, budget: u64, digest: &str) -> String {
    let m = metrics;
    format!(
        "{ATTACK_METRICS_HEADER}\n{},{},{},{},{},{},{},{},{},{},{},{budget},{digest}\n",
        m.per_center.len(),
        m.target_match_before,
        m.target_match_after,
        m.mean_score_before,
        m.mean_score_after,
        m.truth_match_after,
        m.mean_hamming_after,
        m.mean_dist_to_mean,
        m.mean_knn_dist,
        m.map,
        m.total_queries
    )
}

/// Phase 2: surrogate-guided inversion of every slice-fused center.
pub fn cmd_attack(cfg: &ExperimentConfig, out: &Path) -> Result<AttackFile> {
    cfg.validate()?;
    let world: WorldFile = fsutil::read_json(&out.join(WORLD_FILE))?;
    let (Some(mixture), Some(oracle)) = (world.mixture, world.oracle) else {
        return Err(Error::Config("attack needs a mixture world (data.source = \"mixture\")".into()));
    };
    let aux = read_codes(&out.join(AUX_CODES))?;
    let aux_x: VectorsFile = fsutil::read_json(&out.join(AUX_VECTORS))?;
    let centers = CenterSet::from_matrix(read_codes(&out.join(centers_file("ours")))?)?;
    let alignment: AlignmentFile = fsutil::read_json(&out.join(alignment_file("ours")))?;
    let private = read_codes(&out.join(PRIVATE_CODES))?;
    let priv_x: VectorsFile = fsutil::read_json(&out.join(PRIVATE_VECTORS))?;
    let truth = CenterSet::from_matrix(read_codes(&out.join(TRUTH_CODES))?)?;
    if aux_x.vectors.len() != aux.n_rows() {
        return Err(Error::dim(aux.n_rows(), aux_x.vectors.len()));
    }

    let k = centers.k();
    let pseudo = assign_pseudo_labels(&aux, &centers)?;
    let pseudo = pseudo.labels().expect("pseudo labels assigned");
    let cluster = train_cluster(cfg, &aux_x.vectors, pseudo, k)?;
    // The conditional generator sees only what the attacker has: aux
    // vectors grouped by pseudo-label.
    let fitted = fit_mixture(&aux_x.vectors, pseudo, k)?;
    let predictor = AnalyticPredictor::new(fitted)?;
    let schedule = cfg.schedule()?;
    let attack = cfg.resolved_attack();

    oracle.reset_queries();
    let ctx = crate::inversion::AttackContext {
        oracle: &oracle,
        centers: &centers,
        cluster: &cluster,
        predictor: &predictor,
        schedule: &schedule,
    };
    let results = (0..k)
        .map(|i| {
            let target = Target {
                code: centers.center(i).clone(),
                label: centers.label_of_center(i),
            };
            invert_center(i, &target, &ctx, &attack)
        })
        .collect::<Result<Vec<_>>>()?;
    let counted = oracle.query_count();
    let reported: u64 = results.iter().map(|r| r.queries).sum();
    let budget = attack.query_budget_per_center() * k as u64;
    if counted != reported || counted != budget {
        return Err(Error::Invariant(format!(
            "query accounting mismatch: counter {counted}, reported {reported}, budget {budget}"
        )));
    }

    let metrics = evaluate_attack(&results, &EvalTruth {
        mixture: &mixture,
        truth_centers: &truth,
        alignment: &alignment.report.permutation,
        private_vectors: &priv_x.vectors,
        private_codes: &private,
    })?;
    let mut w = Writer::new(out, cfg, "attack");
    let digest = w.digest.clone();
    w.json(SURROGATES, &SurrogatesFile { config_digest: digest.clone(), cluster })?;
    let file = AttackFile {
        config_digest: digest.clone(),
        query_budget: budget,
        queries: counted,
        results,
        metrics,
    };
    w.json(ATTACK_RESULT, &file)?;
    w.bytes(ATTACK_SUMMARY, attack_summary_csv(&file.metrics, &digest).as_bytes())?;
    w.bytes(ATTACK_METRICS, attack_metrics_csv(&file.metrics, budget, &digest).as_bytes())?;
    w.finish()?;
    Ok(file)
}
