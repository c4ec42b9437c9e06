use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::config::{DataSource, ExperimentConfig};
use super::pipeline::{cmd_attack, cmd_estimate, cmd_gen};
use crate::error::{Error, Result};
use crate::fsutil;

pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_HEADER: &str = "parameter,value,random_mean_distance,kmeans_mean_distance,ours_mean_distance,\
ours_exact_matches,target_match_before,target_match_after,mean_score_before,mean_score_after,map,queries,config_digest";

/// Parses comma-separated sweep values; each is JSON or a bare string.
pub fn parse_values(raw: &str) -> Vec<Value> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| serde_json::from_str(s).unwrap_or_else(|_| Value::String(s.to_string())))
        .collect()
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Directory of one sweep point, e.g. `estimation.slice.r=0.25`.
pub fn point_dir(out: &Path, parameter: &str, value: &Value) -> PathBuf {
    let label: String = value_label(value)
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || ".-_".contains(c) { c } else { '_' })
        .collect();
    out.join(format!("{parameter}={label}"))
}

/// Whether the attack phase runs by default when sweeping `parameter`.
pub fn attacks_by_default(parameter: &str) -> bool {
    !parameter.starts_with("estimation.")
}

/// One-at-a-time sweep: every value reruns the pipeline in its own
/// subdirectory with only `parameter` changed.
pub fn cmd_sweep(cfg: &ExperimentConfig, parameter: &str, values: &[Value], run_attack: bool, out: &Path) -> Result<String> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    // Reject unknown parameters before doing any work.
    let configs = values
        .iter()
        .map(|v| cfg.with_override(parameter, v.clone()))
        .collect::<Result<Vec<_>>>()?;
    let mut csv = format!("{SWEEP_HEADER}\n");
    for (value, c) in values.iter().zip(&configs) {
        let dir = point_dir(out, parameter, value);
        cmd_gen(c, &dir)?;
        let est = cmd_estimate(c, &dir)?;
        let mean = |m: &str| est.reports[m].mean_distance;
        let _ = write!(
            csv,
            "{parameter},{},{},{},{},{}",
            value_label(value).replace(',', ";"),
            mean("random"),
            mean("kmeans"),
            mean("ours"),
            est.reports["ours"].exact_matches
        );
        if run_attack && c.data.source == DataSource::Mixture {
            let m = cmd_attack(c, &dir)?.metrics;
            let _ = write!(
                csv,
                ",{},{},{},{},{},{}",
                m.target_match_before, m.target_match_after, m.mean_score_before, m.mean_score_after, m.map, m.total_queries
            );
        } else {
            csv.push_str(",,,,,,");
        }
        let _ = writeln!(csv, ",{}", c.digest());
    }
    fsutil::write_atomic(&out.join(SWEEP_FILE), csv.as_bytes())?;
    Ok(csv)
}
