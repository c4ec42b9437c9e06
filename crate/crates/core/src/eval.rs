//! Ground-truth evaluation: Hungarian alignment of center sets, Hamming
//! distance statistics, and retrieval mAP.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::centers::CenterSet;
use crate::error::{Error, Result};
use crate::hamming::CodeMatrix;

/// Optimal assignment: `permutation[row] = column`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub permutation: Vec<usize>,
    pub total_cost: f64,
}

/// Minimum-cost perfect matching of a square cost matrix.
///
/// Among all optimal matchings, returns the one whose permutation is
/// lexicographically smallest.
pub fn hungarian_match(cost: &[Vec<f64>]) -> Result<Assignment> {
    let n = cost.len();
    if n == 0 {
        return Err(Error::Input("cost matrix is empty".into()));
    }
    for (i, row) in cost.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Input(format!(
                "cost matrix is not square: row {i} has {} entries, expected {n}",
                row.len()
            )));
        }
        if let Some(j) = row.iter().position(|c| !c.is_finite()) {
            return Err(Error::Input(format!("non-finite cost at ({i}, {j})")));
        }
    }

    let (mut col_of_row, u, v) = shortest_augmenting_paths(cost);
    let max_abs = cost.iter().flatten().fold(0.0f64, |m, c| m.max(c.abs()));
    let tol = 1e-9 * (1.0 + max_abs);
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| (cost[i][j] - u[i] - v[j]).abs() <= tol).collect())
        .collect();
    lexicographic_min(&tight, &mut col_of_row);

    let total_cost = (0..n).map(|i| cost[i][col_of_row[i]]).sum();
    Ok(Assignment {
        permutation: col_of_row,
        total_cost,
    })
}

/// O(n^3) Hungarian method with row/column potentials. Returns the matching
/// and feasible optimal duals `u`, `v` with `cost[i][j] - u[i] - v[j] >= 0`.
fn shortest_augmenting_paths(cost: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.len();
    // 1-based arrays; index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0; n];
    for j in 1..=n {
        col_of_row[row_of_col[j] - 1] = j - 1;
    }
    (col_of_row, u[1..].to_vec(), v[1..].to_vec())
}

/// Every optimal matching lies in the tight-edge subgraph of an optimal
/// dual, so the lexicographically smallest one is found by rotating
/// alternating cycles there, row by row.
fn lexicographic_min(tight: &[Vec<bool>], col_of_row: &mut [usize]) {
    let n = col_of_row.len();
    let mut row_of_col = vec![0; n];
    for (r, &c) in col_of_row.iter().enumerate() {
        row_of_col[c] = r;
    }
    for i in 0..n {
        let target = col_of_row[i];
        for j in 0..target {
            if !tight[i][j] || row_of_col[j] < i {
                continue;
            }
            let start = row_of_col[j];
            let mut visited = vec![false; n];
            visited[start] = true;
            let mut path = Vec::new();
            if find_alternating(tight, col_of_row, &row_of_col, i, start, j, target, &mut visited, &mut path) {
                // path holds (row, new column) pairs for the rotated rows.
                for &(r, c) in &path {
                    col_of_row[r] = c;
                    row_of_col[c] = r;
                }
                col_of_row[i] = j;
                row_of_col[j] = i;
                break;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn find_alternating(
    tight: &[Vec<bool>],
    col_of_row: &[usize],
    row_of_col: &[usize],
    fixed_upto: usize,
    row: usize,
    leaving: usize,
    target: usize,
    visited: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    debug_assert_eq!(col_of_row[row], leaving);
    for c in 0..tight.len() {
        if !tight[row][c] || c == leaving {
            continue;
        }
        if c == target {
            path.push((row, c));
            return true;
        }
        let owner = row_of_col[c];
        if owner > fixed_upto && !visited[owner] {
            visited[owner] = true;
            if find_alternating(tight, col_of_row, row_of_col, fixed_upto, owner, c, target, visited, path) {
                path.push((row, c));
                return true;
            }
        }
    }
    false
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// `permutation[predicted] = truth`.
    pub permutation: Vec<usize>,
    pub per_center_distance: Vec<u32>,
    pub mean_distance: f64,
    pub exact_matches: usize,
    /// One bin per distance `0..=l`.
    pub histogram: BTreeMap<u32, usize>,
}

impl AlignmentReport {
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("distance,count\n");
        for (d, c) in &self.histogram {
            out.push_str(&format!("{d},{c}\n"));
        }
        out
    }
}

pub fn pairwise_distances(a: &CenterSet, b: &CenterSet) -> Result<Vec<Vec<u32>>> {
    if a.code_len() != b.code_len() {
        return Err(Error::dim(b.code_len(), a.code_len()));
    }
    Ok(a
        .centers()
        .iter()
        .map(|p| b.centers().iter().map(|t| p.hamming_unchecked(t)).collect())
        .collect())
}

/// Hungarian-aligns predicted centers to ground truth and summarizes the
/// matched Hamming distances.
pub fn align_centers(predicted: &CenterSet, truth: &CenterSet) -> Result<AlignmentReport> {
    if predicted.k() != truth.k() {
        return Err(Error::dim(truth.k(), predicted.k()));
    }
    let dist = pairwise_distances(predicted, truth)?;
    let cost: Vec<Vec<f64>> = dist
        .iter()
        .map(|row| row.iter().map(|&d| f64::from(d)).collect())
        .collect();
    let assignment = hungarian_match(&cost)?;
    let per_center_distance: Vec<u32> = assignment
        .permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| dist[i][j])
        .collect();
    Ok(report_from_distances(
        assignment.permutation,
        per_center_distance,
        predicted.code_len(),
    ))
}

/// Pairs center `i` with truth `i` without alignment.
pub fn identity_pairing(predicted: &CenterSet, truth: &CenterSet) -> Result<AlignmentReport> {
    if predicted.k() != truth.k() {
        return Err(Error::dim(truth.k(), predicted.k()));
    }
    let per = predicted
        .centers()
        .iter()
        .zip(truth.centers())
        .map(|(p, t)| p.hamming(t))
        .collect::<Result<Vec<_>>>()?;
    Ok(report_from_distances(
        (0..predicted.k()).collect(),
        per,
        predicted.code_len(),
    ))
}

fn report_from_distances(permutation: Vec<usize>, per: Vec<u32>, code_len: usize) -> AlignmentReport {
    let mut histogram: BTreeMap<u32, usize> = (0..=code_len as u32).map(|d| (d, 0)).collect();
    for &d in &per {
        *histogram.entry(d).or_insert(0) += 1;
    }
    let mean_distance = per.iter().map(|&d| f64::from(d)).sum::<f64>() / per.len() as f64;
    AlignmentReport {
        permutation,
        exact_matches: histogram[&0],
        mean_distance,
        per_center_distance: per,
        histogram,
    }
}

/// Average precision of one ranked relevance list over all positions.
fn average_precision(relevant: impl Iterator<Item = bool>) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, rel) in relevant.enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

/// mAP@all of Hamming ranking; equal distances keep database order.
pub fn compute_map(queries: &CodeMatrix, database: &CodeMatrix) -> Result<f64> {
    let q_labels = queries
        .labels()
        .ok_or_else(|| Error::Input("queries carry no labels".into()))?;
    let db_labels = database
        .labels()
        .ok_or_else(|| Error::Input("database carries no labels".into()))?;
    if queries.code_len() != database.code_len() {
        return Err(Error::dim(database.code_len(), queries.code_len()));
    }
    let aps: Vec<f64> = queries
        .rows()
        .par_iter()
        .zip(q_labels.par_iter())
        .map(|(q, &label)| {
            let dist = database.distances_to(q).expect("lengths checked");
            let mut order: Vec<usize> = (0..dist.len()).collect();
            order.sort_by_key(|&j| dist[j]);
            average_precision(order.iter().map(|&j| db_labels[j] == label))
        })
        .collect();
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}
