use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use super::pipeline::{ATTACK_METRICS, ATTACK_METRICS_HEADER, ESTIMATE_HEADER, ESTIMATE_SUMMARY, HISTOGRAMS, HISTOGRAM_HEADER};
use crate::error::{Error, Result};
use crate::fsutil;

pub const REPORT_ESTIMATE: &str = "report_estimate.csv";
pub const REPORT_HISTOGRAMS: &str = "report_histograms.csv";
pub const REPORT_ATTACK: &str = "report_attack.csv";
pub const REPORT_MEANS: &str = "report_means.csv";
pub const REPORT_MD: &str = "report.md";

/// Data rows of a CSV whose header must equal `header`.
fn rows(path: &Path, header: &str) -> Result<Vec<String>> {
    let text = fsutil::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("expected header `{header}`"),
        });
    }
    Ok(lines.filter(|l| !l.is_empty()).map(str::to_string).collect())
}

fn field<'a>(row: &'a str, i: usize, path: &Path) -> Result<&'a str> {
    row.split(',').nth(i).ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("row `{row}` has no column {i}"),
    })
}

fn number(row: &str, i: usize, path: &Path) -> Result<f64> {
    let f = field(row, i, path)?;
    f.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("column {i} of `{row}` is not a number"),
    })
}

fn sorted_csv(header: &str, mut rows: Vec<String>) -> String {
    rows.sort();
    let mut s = format!("{header}\n");
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

/// Aggregates finished run directories. Row order is canonical, so the
/// output does not depend on the order of `runs`.
pub fn cmd_report(runs: &[&Path], out: &Path) -> Result<String> {
    if runs.is_empty() {
        return Err(Error::Input("report needs at least one run directory".into()));
    }
    let mut estimate = Vec::new();
    let mut attack = Vec::new();
    let mut hist: BTreeMap<(String, u32), usize> = BTreeMap::new();
    let mut digests = BTreeSet::new();
    // method -> (runs, sum mean_distance, sum exact_matches)
    let mut means: BTreeMap<String, (usize, f64, f64)> = BTreeMap::new();
    for dir in runs {
        let p = dir.join(ESTIMATE_SUMMARY);
        for r in rows(&p, ESTIMATE_HEADER)? {
            let e = means.entry(field(&r, 0, &p)?.to_string()).or_default();
            e.0 += 1;
            e.1 += number(&r, 3, &p)?;
            e.2 += number(&r, 4, &p)?;
            digests.insert(field(&r, 5, &p)?.to_string());
            estimate.push(r);
        }
        let p = dir.join(HISTOGRAMS);
        for r in rows(&p, HISTOGRAM_HEADER)? {
            let key = (field(&r, 0, &p)?.to_string(), number(&r, 1, &p)? as u32);
            *hist.entry(key).or_default() += number(&r, 2, &p)? as usize;
        }
        let p = dir.join(ATTACK_METRICS);
        if p.exists() {
            attack.extend(rows(&p, ATTACK_METRICS_HEADER)?);
        }
    }
    let tag = digests.into_iter().collect::<Vec<_>>().join(";");

    let mut h = String::from("method,distance,count,config_digests\n");
    for ((m, d), n) in &hist {
        let _ = writeln!(h, "{m},{d},{n},{tag}");
    }
    let mut mcsv = String::from("method,runs,mean_distance,mean_exact_matches,config_digests\n");
    let mut md = String::from("# Center estimation\n\n| method | runs | mean aligned distance | mean exact matches |\n|---|---|---|---|\n");
    for (m, (n, dist, exact)) in &means {
        let (dist, exact) = (dist / *n as f64, exact / *n as f64);
        let _ = writeln!(mcsv, "{m},{n},{dist},{exact},{tag}");
        let _ = writeln!(md, "| {m} | {n} | {dist:.4} | {exact:.2} |");
    }
    if !attack.is_empty() {
        md.push_str("\n# Attack\n\nSee `report_attack.csv` for one row per run.\n");
    }
    let _ = writeln!(md, "\nConfig digests: {}", tag.replace(';', ", "));

    fsutil::write_atomic(&out.join(REPORT_ESTIMATE), sorted_csv(ESTIMATE_HEADER, estimate).as_bytes())?;
    fsutil::write_atomic(&out.join(REPORT_HISTOGRAMS), h.as_bytes())?;
    fsutil::write_atomic(&out.join(REPORT_MEANS), mcsv.as_bytes())?;
    if !attack.is_empty() {
        fsutil::write_atomic(&out.join(REPORT_ATTACK), sorted_csv(ATTACK_METRICS_HEADER, attack).as_bytes())?;
    }
    fsutil::write_atomic(&out.join(REPORT_MD), md.as_bytes())?;
    Ok(md)
}
