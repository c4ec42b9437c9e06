use hashinv_core::centers::{random_centers, CenterSet};
use hashinv_core::eval::*;
use hashinv_core::hamming::{BitCode, CodeMatrix};
use hashinv_core::world::PlantedCodes;
use hashinv_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_force(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let mut best = (f64::INFINITY, Vec::new());
    let mut perms = permutations(cost.len());
    perms.sort();
    for p in perms {
        let total: f64 = p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        if total < best.0 {
            best = (total, p);
        }
    }
    best
}

fn int_matrix(rng: &mut ChaCha8Rng, n: usize, hi: u32) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..n).map(|_| f64::from(rng.random_range(0..hi))).collect()).collect()
}

#[test]
fn hungarian_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for trial in 0..100 {
        // Small value ranges force many ties, exercising the lexicographic rule.
        let hi = if trial % 2 == 0 { 4 } else { 100 };
        let cost = int_matrix(&mut rng, 6, hi);
        let got = hungarian_match(&cost).unwrap();
        let (total, perm) = brute_force(&cost);
        assert_eq!(got.total_cost, total);
        assert_eq!(got.permutation, perm, "lexicographically smallest optimum");
    }
}

#[test]
fn hungarian_worked_examples() {
    let a = hungarian_match(&[vec![0.0, 5.0], vec![5.0, 0.0]]).unwrap();
    assert_eq!((a.permutation, a.total_cost), (vec![0, 1], 0.0));
    let b = hungarian_match(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
    assert_eq!((b.permutation, b.total_cost), (vec![0, 1], 2.0));
    assert!(matches!(hungarian_match(&[vec![1.0, 2.0]]), Err(Error::Input(_))));
    assert!(matches!(hungarian_match(&[vec![f64::NAN]]), Err(Error::Input(_))));
}

proptest! {
    #[test]
    fn hungarian_total_is_permutation_invariant(seed in any::<u64>(), n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cost = int_matrix(&mut rng, n, 50);
        let mut rows: Vec<usize> = (0..n).collect();
        let mut cols: Vec<usize> = (0..n).collect();
        rows.sort_by_key(|_| rng.random::<u32>());
        cols.sort_by_key(|_| rng.random::<u32>());
        let shuffled: Vec<Vec<f64>> = rows.iter().map(|&i| cols.iter().map(|&j| cost[i][j]).collect()).collect();
        prop_assert_eq!(hungarian_match(&cost).unwrap().total_cost, hungarian_match(&shuffled).unwrap().total_cost);
    }

    #[test]
    fn alignment_invariants(seed in any::<u64>()) {
        let truth = random_centers(6, 24, seed).unwrap();
        let pred = random_centers(6, 24, seed ^ 0x55).unwrap();
        let r = align_centers(&pred, &truth).unwrap();
        let mut p = r.permutation.clone();
        p.sort();
        prop_assert_eq!(p, (0..6).collect::<Vec<_>>());
        let mean = r.per_center_distance.iter().map(|&d| f64::from(d)).sum::<f64>() / 6.0;
        prop_assert!((r.mean_distance - mean).abs() < 1e-12);
        prop_assert_eq!(r.exact_matches, r.histogram.get(&0).copied().unwrap_or(0));
        prop_assert_eq!(r.histogram.values().sum::<usize>(), 6);
        prop_assert!(r.mean_distance <= identity_pairing(&pred, &truth).unwrap().mean_distance);
    }

    #[test]
    fn map_is_bounded_and_bit_permutation_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = 16;
        let mk = |rng: &mut ChaCha8Rng, n: usize| {
            let rows: Vec<Vec<bool>> = (0..n).map(|_| (0..l).map(|_| rng.random()).collect()).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            (rows, labels)
        };
        let (q, ql) = mk(&mut rng, 5);
        let (d, dl) = mk(&mut rng, 20);
        let mut perm: Vec<usize> = (0..l).collect();
        perm.sort_by_key(|_| rng.random::<u32>());
        let build = |rows: &[Vec<bool>], labels: &[usize], permute: bool| {
            let codes = rows
                .iter()
                .map(|r| {
                    let bits: Vec<bool> = if permute { perm.iter().map(|&j| r[j]).collect() } else { r.clone() };
                    BitCode::from_bits(&bits).unwrap()
                })
                .collect();
            CodeMatrix::new(codes).unwrap().with_labels(labels.to_vec()).unwrap()
        };
        let a = compute_map(&build(&q, &ql, false), &build(&d, &dl, false)).unwrap();
        let b = compute_map(&build(&q, &ql, true), &build(&d, &dl, true)).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a - b).abs() < 1e-12);
    }
}

/// AP from its definition: mean of precision@rank over ranks holding a positive.
fn reference_map(q: &CodeMatrix, db: &CodeMatrix) -> f64 {
    let mut total = 0.0;
    for (i, code) in q.rows().iter().enumerate() {
        let label = q.labels().unwrap()[i];
        let mut ranked: Vec<(u32, usize)> =
            db.rows().iter().enumerate().map(|(j, r)| (r.hamming(code).unwrap(), j)).collect();
        ranked.sort();
        let mut hits = 0.0;
        let mut precisions = Vec::new();
        for (rank, &(_, j)) in ranked.iter().enumerate() {
            if db.labels().unwrap()[j] == label {
                hits += 1.0;
                precisions.push(hits / (rank + 1) as f64);
            }
        }
        total += if precisions.is_empty() { 0.0 } else { precisions.iter().sum::<f64>() / precisions.len() as f64 };
    }
    total / q.n_rows() as f64
}

#[test]
fn map_matches_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let mk = |rng: &mut ChaCha8Rng, n: usize| {
            let rows = (0..n)
                .map(|_| BitCode::from_bits(&(0..10).map(|_| rng.random()).collect::<Vec<bool>>()).unwrap())
                .collect();
            let labels = (0..n).map(|_| rng.random_range(0..4)).collect();
            CodeMatrix::new(rows).unwrap().with_labels(labels).unwrap()
        };
        let q = mk(&mut rng, 5);
        let db = mk(&mut rng, 20);
        assert!((compute_map(&q, &db).unwrap() - reference_map(&q, &db)).abs() < 1e-12);
    }
}

#[test]
fn map_worked_examples() {
    let codes = |rows: &[&str], labels: &[usize]| {
        CodeMatrix::new(rows.iter().map(|r| r.parse().unwrap()).collect())
            .unwrap()
            .with_labels(labels.to_vec())
            .unwrap()
    };
    let q = codes(&["++++", "----", "+-+-"], &[0, 1, 2]);
    assert_eq!(compute_map(&q, &q).unwrap(), 1.0);
    let one = codes(&["++++"], &[1]);
    let db = codes(&["+++-", "++--"], &[0, 1]);
    assert_eq!(compute_map(&one, &db).unwrap(), 0.5);
    let none = codes(&["++++"], &[7]);
    assert_eq!(compute_map(&none, &db).unwrap(), 0.0);
    let unlabeled = CodeMatrix::new(vec!["++++".parse().unwrap()]).unwrap();
    assert!(matches!(compute_map(&unlabeled, &db), Err(Error::Input(_))));
}

#[test]
fn alignment_worked_examples() {
    let truth = random_centers(8, 64, 3).unwrap();
    let mut rows: Vec<BitCode> = truth.centers().to_vec();
    rows.reverse();
    let shuffled = CenterSet::new(rows.clone()).unwrap();
    let r = align_centers(&shuffled, &truth).unwrap();
    assert_eq!((r.mean_distance, r.exact_matches), (0.0, 8));

    let flipped: Vec<BitCode> = truth
        .centers()
        .iter()
        .map(|c| {
            let mut c = c.clone();
            let b = c.bit(10);
            c.set_bit(10, !b);
            c
        })
        .collect();
    let r = align_centers(&CenterSet::new(flipped).unwrap(), &truth).unwrap();
    assert_eq!((r.mean_distance, r.exact_matches), (1.0, 0));
    assert_eq!(r.histogram.len(), 65);

    let short = random_centers(8, 32, 1).unwrap();
    assert!(matches!(align_centers(&short, &truth), Err(Error::Dimension { .. })));
}

#[test]
fn random_centers_against_planted_hundred() {
    // Expected value is l/2 minus the assignment gain; checked over 20 seeds.
    let mut total = 0.0;
    for seed in 0..20 {
        let (_, truth) = PlantedCodes { k: 100, code_len: 64, n: 1, flip_prob: 0.0 }.generate(seed).unwrap();
        let pred = random_centers(100, 64, 1000 + seed).unwrap();
        let m = align_centers(&pred, &truth).unwrap().mean_distance;
        assert!((20.0..=28.0).contains(&m), "seed {seed}: {m}");
        total += m;
    }
    println!("random vs planted K=100, l=64: mean {:.3}", total / 20.0);
}
