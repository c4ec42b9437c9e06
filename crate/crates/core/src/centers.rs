//! Hash-center estimation from a matrix of black-box codes.
//!
//! Centers are first found by a Hamming-space K-means (majority-vote
//! centroids), then each center is refined by plurality voting over
//! sliding, possibly overlapping, bit slices of its Hamming neighborhood.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::ops::Range;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamming::{BitCode, CodeMatrix};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceConfig {
    /// Base slice size in bits.
    pub s_base: usize,
    /// Neighborhood radius as a fraction of the code length.
    pub r: f64,
    /// Overlap ratio between consecutive slices.
    pub o: f64,
}

impl SliceConfig {
    pub fn new(s_base: usize, r: f64, o: f64) -> Result<Self> {
        let cfg = Self { s_base, r, o };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.s_base == 0 {
            return Err(Error::Config("s_base must be at least 1".into()));
        }
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(Error::Config(format!("r must lie in (0, 1], got {}", self.r)));
        }
        if !(self.o >= 0.0 && self.o < 1.0) {
            return Err(Error::Config(format!("o must lie in [0, 1), got {}", self.o)));
        }
        Ok(())
    }

    pub fn step(&self) -> usize {
        ((self.s_base as f64 * (1.0 - self.o)).floor() as usize).max(1)
    }

    pub fn radius(&self, code_len: usize) -> u32 {
        ((code_len as f64 * self.r).floor() as u32).max(1)
    }
}

impl Default for SliceConfig {
    fn default() -> Self {
        Self {
            s_base: 8,
            r: 0.15,
            o: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum KMeansInit {
    #[default]
    #[serde(rename = "kmeans++")]
    KMeansPlusPlus,
    #[serde(rename = "random-rows")]
    RandomRows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
    #[serde(default)]
    pub init: KMeansInit,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iters: 100,
            seed,
            init: KMeansInit::default(),
        }
    }

    pub fn validate(&self, n_rows: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if self.k > n_rows {
            return Err(Error::Config(format!(
                "K = {} exceeds the number of codes n = {n_rows}",
                self.k
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// K hash centers; center `i` carries pseudo-label `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CenterSet {
    centers: Vec<BitCode>,
}

impl CenterSet {
    pub fn new(centers: Vec<BitCode>) -> Result<Self> {
        let first = centers
            .first()
            .ok_or_else(|| Error::Input("a center set needs at least one center".into()))?;
        let l = first.len();
        if let Some(bad) = centers.iter().find(|c| c.len() != l) {
            return Err(Error::dim(l, bad.len()));
        }
        Ok(Self { centers })
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn code_len(&self) -> usize {
        self.centers[0].len()
    }

    pub fn centers(&self) -> &[BitCode] {
        &self.centers
    }

    pub fn center(&self, i: usize) -> &BitCode {
        &self.centers[i]
    }

    pub fn label_of_center(&self, i: usize) -> usize {
        i
    }

    /// Two or more centers coincide.
    pub fn is_degenerate(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        !self.centers.iter().all(|c| seen.insert(c))
    }

    pub fn to_matrix(&self) -> CodeMatrix {
        CodeMatrix::new(self.centers.clone())
            .and_then(|m| m.with_labels((0..self.k()).collect()))
            .expect("center set is nonempty and uniform")
    }

    pub fn from_matrix(m: CodeMatrix) -> Result<Self> {
        Self::new(m.into_rows())
    }
}

/// Per-bit sign of the mean of `rows`; a zero mean resolves to +1.
pub fn majority_code(rows: &[&BitCode]) -> Result<BitCode> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Input("majority of an empty set".into()))?;
    let l = first.len();
    let mut ones = vec![0usize; l];
    for r in rows {
        if r.len() != l {
            return Err(Error::dim(l, r.len()));
        }
        for (j, c) in ones.iter_mut().enumerate() {
            *c += usize::from(r.bit(j));
        }
    }
    let n = rows.len();
    let bits: Vec<bool> = ones.iter().map(|&c| 2 * c >= n).collect();
    BitCode::from_bits(&bits)
}

fn nearest(code: &BitCode, centers: &[BitCode]) -> (usize, u32) {
    let mut best = (0, u32::MAX);
    for (i, c) in centers.iter().enumerate() {
        let d = code.hamming_unchecked(c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Sum over rows of the Hamming distance to the nearest center.
pub fn assignment_cost(h: &CodeMatrix, centers: &CenterSet) -> Result<u64> {
    if h.code_len() != centers.code_len() {
        return Err(Error::dim(centers.code_len(), h.code_len()));
    }
    Ok(h
        .rows()
        .iter()
        .map(|r| u64::from(nearest(r, centers.centers()).1))
        .sum())
}

fn seed_centers<R: Rng>(h: &CodeMatrix, cfg: &KMeansConfig, rng: &mut R) -> Vec<BitCode> {
    let n = h.n_rows();
    match cfg.init {
        KMeansInit::RandomRows => sample_indices(rng, n, cfg.k)
            .into_iter()
            .map(|i| h.row(i).clone())
            .collect(),
        KMeansInit::KMeansPlusPlus => {
            // Greedy variant: draw a few D^2 candidates per step and keep the one that lowers
            // the seeding potential most. Plain D^2 sampling often seeds one cluster twice.
            let trials = 2 + (cfg.k as f64).ln() as usize;
            let mut centers = vec![h.row(rng.random_range(0..n)).clone()];
            let mut min_d: Vec<u64> = h
                .rows()
                .iter()
                .map(|r| u64::from(r.hamming_unchecked(&centers[0])))
                .collect();
            while centers.len() < cfg.k {
                let total: u64 = min_d.iter().map(|d| d * d).sum();
                let mut best: Option<(u64, Vec<u64>, usize)> = None;
                for _ in 0..trials {
                    let pick = if total == 0 { rng.random_range(0..n) } else { sample_by_weight(&min_d, total, rng) };
                    let c = h.row(pick);
                    let next: Vec<u64> = min_d
                        .iter()
                        .zip(h.rows())
                        .map(|(d, r)| (*d).min(u64::from(r.hamming_unchecked(c))))
                        .collect();
                    let potential = next.iter().map(|d| d * d).sum();
                    if best.as_ref().is_none_or(|(p, _, _)| potential < *p) {
                        best = Some((potential, next, pick));
                    }
                }
                let (_, next, pick) = best.expect("at least two trials");
                min_d = next;
                centers.push(h.row(pick).clone());
            }
            centers
        }
    }
}

/// Index drawn with probability proportional to `d * d`; `total` is the sum of those weights.
fn sample_by_weight<R: Rng>(min_d: &[u64], total: u64, rng: &mut R) -> usize {
    let mut target = rng.random_range(0..total);
    for (i, d) in min_d.iter().enumerate() {
        let w = d * d;
        if target < w {
            return i;
        }
        target -= w;
    }
    min_d.len() - 1
}

/// Lloyd iterations in Hamming space with majority-vote centroids.
pub fn kmeans_binary(h: &CodeMatrix, cfg: &KMeansConfig) -> Result<CenterSet> {
    cfg.validate(h.n_rows())?;
    let mut rng = seeds::rng(cfg.seed);
    lloyd(h, cfg, &mut rng)
}

fn lloyd<R: Rng>(h: &CodeMatrix, cfg: &KMeansConfig, rng: &mut R) -> Result<CenterSet> {
    let l = h.code_len();
    let mut centers = seed_centers(h, cfg, rng);
    let mut assign: Vec<usize> = Vec::new();

    for _ in 0..cfg.max_iters {
        let next: Vec<(usize, u32)> = h.rows().iter().map(|r| nearest(r, &centers)).collect();
        let next_assign: Vec<usize> = next.iter().map(|p| p.0).collect();
        if next_assign == assign {
            break;
        }
        assign = next_assign;

        let mut ones = vec![vec![0usize; l]; cfg.k];
        let mut sizes = vec![0usize; cfg.k];
        for (r, &c) in h.rows().iter().zip(&assign) {
            sizes[c] += 1;
            for (j, cnt) in ones[c].iter_mut().enumerate() {
                *cnt += usize::from(r.bit(j));
            }
        }
        // Empty clusters take the points farthest from their current center.
        let mut taken = vec![false; h.n_rows()];
        for c in 0..cfg.k {
            if sizes[c] > 0 {
                let bits: Vec<bool> = ones[c].iter().map(|&o| 2 * o >= sizes[c]).collect();
                centers[c] = BitCode::from_bits(&bits)?;
            }
        }
        for c in 0..cfg.k {
            if sizes[c] == 0 {
                let far = (0..h.n_rows())
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| next[a].1.cmp(&next[b].1).then(b.cmp(&a)));
                if let Some(i) = far {
                    taken[i] = true;
                    centers[c] = h.row(i).clone();
                }
            }
        }
    }
    CenterSet::new(centers)
}

/// Window ranges `[start, min(start + s_base, l))` for `start = 0, step, ...`.
pub fn build_slices(code_len: usize, cfg: &SliceConfig) -> Vec<Range<usize>> {
    let step = cfg.step();
    (0..code_len)
        .step_by(step)
        .map(|start| start..(start + cfg.s_base).min(code_len))
        .collect()
}

fn slice_pattern(code: &BitCode, range: &Range<usize>) -> Vec<bool> {
    range.clone().map(|j| code.bit(j)).collect()
}

/// Orders patterns lexicographically with +1 before -1.
fn pattern_order(a: &[bool], b: &[bool]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        if x != y {
            return if *x { Ordering::Less } else { Ordering::Greater };
        }
    }
    Ordering::Equal
}

fn refine_one(
    h: &CodeMatrix,
    center: &BitCode,
    slices: &[Range<usize>],
    radius: u32,
) -> BitCode {
    let neighbors: Vec<&BitCode> = h
        .rows()
        .iter()
        .filter(|r| r.hamming_unchecked(center) <= radius)
        .collect();
    if neighbors.is_empty() {
        return center.clone();
    }
    let mut refined = center.clone();
    for range in slices {
        let mut counts: HashMap<Vec<bool>, usize> = HashMap::new();
        for nb in &neighbors {
            *counts.entry(slice_pattern(nb, range)).or_insert(0) += 1;
        }
        let (best, _) = counts
            .iter()
            .min_by(|(pa, ca), (pb, cb)| cb.cmp(ca).then_with(|| pattern_order(pa, pb)))
            .expect("neighborhood is nonempty");
        for (j, &b) in range.clone().zip(best) {
            refined.set_bit(j, b);
        }
    }
    refined
}

/// Slice-fused refinement of each center against its Hamming neighborhood.
pub fn refine_centers(h: &CodeMatrix, centers: &CenterSet, cfg: &SliceConfig) -> Result<CenterSet> {
    cfg.validate()?;
    let l = h.code_len();
    if centers.code_len() != l {
        return Err(Error::dim(l, centers.code_len()));
    }
    let slices = build_slices(l, cfg);
    let radius = cfg.radius(l);
    let refined: Vec<BitCode> = centers
        .centers()
        .par_iter()
        .map(|c| refine_one(h, c, &slices, radius))
        .collect();
    CenterSet::new(refined)
}

/// K-means followed by slice-fused refinement.
pub fn estimate_centers(h: &CodeMatrix, kcfg: &KMeansConfig, scfg: &SliceConfig) -> Result<CenterSet> {
    let initial = kmeans_binary(h, kcfg)?;
    refine_centers(h, &initial, scfg)
}

/// K uniformly random codes, the uninformed baseline.
pub fn random_centers(k: usize, code_len: usize, seed: u64) -> Result<CenterSet> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let mut rng = seeds::rng(seed);
    let centers = (0..k)
        .map(|_| {
            let bits: Vec<bool> = (0..code_len).map(|_| rng.random()).collect();
            BitCode::from_bits(&bits)
        })
        .collect::<Result<Vec<_>>>()?;
    CenterSet::new(centers)
}

/// Nearest center by Hamming distance, lowest index on ties.
pub fn classify_by_centers(code: &BitCode, centers: &CenterSet) -> Result<usize> {
    if code.len() != centers.code_len() {
        return Err(Error::dim(centers.code_len(), code.len()));
    }
    Ok(centers.label_of_center(nearest(code, centers.centers()).0))
}

pub fn assign_pseudo_labels(h: &CodeMatrix, centers: &CenterSet) -> Result<CodeMatrix> {
    let labels = h
        .rows()
        .iter()
        .map(|r| classify_by_centers(r, centers))
        .collect::<Result<Vec<_>>>()?;
    h.clone().with_labels(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(s: &str) -> BitCode {
        s.parse().unwrap()
    }

    fn matrix(rows: &[&str]) -> CodeMatrix {
        CodeMatrix::new(rows.iter().map(|r| code(r)).collect()).unwrap()
    }

    fn ranges(v: &[(usize, usize)]) -> Vec<Range<usize>> {
        v.iter().map(|&(a, b)| a..b).collect()
    }

    #[test]
    fn slices_hand_traces() {
        let half = SliceConfig::new(2, 0.5, 0.5).unwrap();
        assert_eq!(build_slices(4, &half), ranges(&[(0, 2), (1, 3), (2, 4), (3, 4)]));
        let tiled = SliceConfig::new(2, 0.5, 0.0).unwrap();
        assert_eq!(build_slices(4, &tiled), ranges(&[(0, 2), (2, 4)]));
        let wide = SliceConfig::new(8, 0.5, 0.9).unwrap();
        assert_eq!(build_slices(3, &wide), ranges(&[(0, 3), (1, 3), (2, 3)]));
    }

    #[test]
    fn slice_config_validation() {
        assert!(SliceConfig::new(0, 0.5, 0.5).is_err());
        assert!(SliceConfig::new(2, 0.0, 0.5).is_err());
        assert!(SliceConfig::new(2, 1.5, 0.5).is_err());
        assert!(SliceConfig::new(2, 0.5, 1.0).is_err());
        assert!(SliceConfig::new(2, 1.0, 0.0).is_ok());
    }

    #[test]
    fn kmeans_single_cluster_is_majority() {
        let h = matrix(&["++", "+-", "+-"]);
        let c = kmeans_binary(&h, &KMeansConfig::new(1, 0)).unwrap();
        assert_eq!(c.center(0), &code("+-"));
    }

    #[test]
    fn kmeans_two_duplicated_codes() {
        let h = matrix(&["++++----", "++++----", "----++++", "----++++", "++++----"]);
        for seed in 0..10 {
            let c = kmeans_binary(&h, &KMeansConfig::new(2, seed)).unwrap();
            let mut got: Vec<String> = c.centers().iter().map(|c| c.to_string()).collect();
            got.sort();
            assert_eq!(got, vec!["++++----", "----++++"]);
        }
    }

    #[test]
    fn kmeans_rejects_k_above_n() {
        let h = matrix(&["++", "--"]);
        assert!(matches!(
            kmeans_binary(&h, &KMeansConfig::new(3, 0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn kmeans_fills_k_with_duplicate_rows() {
        let h = matrix(&["++", "++", "++"]);
        let mut cfg = KMeansConfig::new(3, 1);
        cfg.init = KMeansInit::RandomRows;
        let c = kmeans_binary(&h, &cfg).unwrap();
        assert_eq!(c.k(), 3);
        assert!(c.is_degenerate());
    }

    #[test]
    fn refine_unanimous_neighborhood() {
        let h = matrix(&["+-+-", "+-+-", "+-+-"]);
        let centers = CenterSet::new(vec![code("+-++")]).unwrap();
        let cfg = SliceConfig::new(2, 0.25, 0.5).unwrap();
        let out = refine_centers(&h, &centers, &cfg).unwrap();
        assert_eq!(out.center(0), &code("+-+-"));
    }

    #[test]
    fn refine_majority_slice_pattern() {
        let h = matrix(&["+-", "+-", "+-", "--"]);
        let centers = CenterSet::new(vec![code("++")]).unwrap();
        let cfg = SliceConfig::new(2, 1.0, 0.0).unwrap();
        let out = refine_centers(&h, &centers, &cfg).unwrap();
        assert_eq!(out.center(0), &code("+-"));
    }

    #[test]
    fn refine_tie_prefers_plus_first() {
        let h = matrix(&["-+", "+-"]);
        let centers = CenterSet::new(vec![code("--")]).unwrap();
        let cfg = SliceConfig::new(2, 1.0, 0.0).unwrap();
        let out = refine_centers(&h, &centers, &cfg).unwrap();
        assert_eq!(out.center(0), &code("+-"));
    }

    #[test]
    fn refine_empty_neighborhood_keeps_center() {
        let h = matrix(&["--------", "-------+"]);
        let centers = CenterSet::new(vec![code("++++++++")]).unwrap();
        let cfg = SliceConfig::new(2, 0.1, 0.0).unwrap();
        let out = refine_centers(&h, &centers, &cfg).unwrap();
        assert_eq!(out.center(0), &code("++++++++"));
    }

    #[test]
    fn later_slices_overwrite_earlier() {
        let h = matrix(&["+++", "+--", "---", "+--", "++-"]);
        let centers = CenterSet::new(vec![code("+--")]).unwrap();
        let cfg = SliceConfig::new(2, 1.0, 0.5).unwrap();
        let out = refine_centers(&h, &centers, &cfg).unwrap();
        // [0,2) ties "++" vs "+-" and takes "++"; [1,3) then writes "--"
        // over bit 1; [2,3) keeps "-".
        assert_eq!(out.center(0), &code("+--"));
        let only_first = refine_centers(&h, &centers, &SliceConfig::new(2, 1.0, 0.0).unwrap()).unwrap();
        // Disjoint tiling: [0,2) -> "++", [2,3) -> "-".
        assert_eq!(only_first.center(0), &code("++-"));
    }

    #[test]
    fn estimate_single_slice_is_plurality_of_neighborhood() {
        let h = matrix(&["++--", "++--", "+---", "++--"]);
        let kcfg = KMeansConfig::new(1, 3);
        let scfg = SliceConfig::new(4, 1.0, 0.0).unwrap();
        let out = estimate_centers(&h, &kcfg, &scfg).unwrap();
        assert_eq!(out.center(0), &code("++--"));
    }

    #[test]
    fn classify_exact_and_tie() {
        let centers = CenterSet::new(vec![code("++++"), code("--++"), code("----")]).unwrap();
        assert_eq!(classify_by_centers(&code("----"), &centers).unwrap(), 2);
        // distance 1 to center 0 and 1 to center 1 -> lowest index
        assert_eq!(classify_by_centers(&code("-+++"), &centers).unwrap(), 0);
        assert!(classify_by_centers(&code("++"), &centers).is_err());
    }

    #[test]
    fn pseudo_labels_of_centers_are_indices() {
        let centers = CenterSet::new(vec![code("++++"), code("--++"), code("----")]).unwrap();
        let labeled = assign_pseudo_labels(&centers.to_matrix(), &centers).unwrap();
        assert_eq!(labeled.labels().unwrap(), &[0, 1, 2]);
        let same = matrix(&["----", "----"]);
        let labeled = assign_pseudo_labels(&same, &centers).unwrap();
        assert_eq!(labeled.labels().unwrap(), &[2, 2]);
    }

    #[test]
    fn majority_tie_resolves_to_plus() {
        let a = code("+-");
        let b = code("-+");
        assert_eq!(majority_code(&[&a, &b]).unwrap(), code("++"));
    }
}
