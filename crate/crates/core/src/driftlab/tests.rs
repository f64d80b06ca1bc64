use super::*;
use crate::vecstore::{generate_drift_stream, DriftStreamConfig, MONTH_SECONDS};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(n: usize, dim: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn stream(trend: f32, months: usize, ppm: usize, seed: u64) -> TimestampedDataset {
    generate_drift_stream(&DriftStreamConfig {
        n_clusters: 12,
        dim: 8,
        points_per_month: ppm,
        n_months: months,
        trend_magnitude: trend,
        center_spread: 4.0,
        seed,
        ..Default::default()
    })
    .unwrap()
}

/// Months given as explicit vector blocks, ids consecutive.
fn monthly(blocks: &[Vec<f32>], dim: usize) -> TimestampedDataset {
    let mut v = Vec::new();
    let mut ts = Vec::new();
    for (m, b) in blocks.iter().enumerate() {
        for i in 0..b.len() / dim {
            ts.push(m as i64 * MONTH_SECONDS + i as i64);
        }
        v.extend_from_slice(b);
    }
    let n = ts.len() as u64;
    TimestampedDataset::new(dim, v, ts, (0..n).collect()).unwrap()
}

#[test]
fn single_point_database_returns_itself() {
    let q = [1.0f32, -2.0, 3.5];
    let out = brute_force_knn(&q, &q, &[42], 3, 5).unwrap();
    assert_eq!(out, vec![vec![Neighbor::new(42, 0.0)]]);
}

#[test]
fn full_k_is_a_complete_sort() {
    let db = gaussian(300, 4, 1);
    let ids: Vec<u64> = (0..300).collect();
    let q = gaussian(1, 4, 2);
    let got = brute_force_knn(&q, &db, &ids, 4, 300).unwrap().remove(0);
    let mut want: Vec<Neighbor> = db
        .chunks_exact(4)
        .zip(&ids)
        .map(|(x, &id)| Neighbor::new(id, l2_sq(&q, x)))
        .collect();
    want.sort();
    assert_eq!(got, want);
}

#[test]
fn agrees_with_a_plain_quadratic_loop() {
    let dim = 16;
    let db = gaussian(1000, dim, 3);
    let queries = gaussian(1000, dim, 4);
    let ids: Vec<u64> = (0..1000).map(|i| 7 * i + 3).collect();
    let got = brute_force_knn(&queries, &db, &ids, dim, 10).unwrap();
    for (qi, q) in queries.chunks_exact(dim).enumerate() {
        let mut all: Vec<(f64, u64)> = db
            .chunks_exact(dim)
            .zip(&ids)
            .map(|(x, &id)| (q.iter().zip(x).map(|(a, b)| ((a - b) as f64).powi(2)).sum(), id))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let want: Vec<u64> = all[..10].iter().map(|x| x.1).collect();
        let have: Vec<u64> = got[qi].iter().map(|x| x.id).collect();
        assert_eq!(have, want, "query {qi}");
    }
}

fn plain_scan(queries: &[f32], db: &[f32], ids: &[u64], dim: usize, k: usize) -> Vec<Vec<Neighbor>> {
    queries
        .chunks_exact(dim)
        .map(|q| {
            let mut top = TopK::new(k);
            for (x, &id) in db.chunks_exact(dim).zip(ids) {
                top.push(id, l2_sq(q, x));
            }
            top.into_sorted_vec()
        })
        .collect()
}

#[test]
fn screening_is_exact_under_cancellation_and_ties() {
    let dim = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    // far from the origin, on a coarse grid: many exact ties and
    // norms that dwarf the distances
    let mut db: Vec<f32> = (0..6000 * dim)
        .map(|_| 1.0e4 + (rand::Rng::random_range(&mut rng, 0..6)) as f32 * 0.25)
        .collect();
    let dup = db[..50 * dim].to_vec();
    db.extend_from_slice(&dup);
    let ids: Vec<u64> = (0..db.len() as u64 / dim as u64).rev().collect();
    let queries: Vec<f32> = (0..150 * dim)
        .map(|i| 1.0e4 + ((i * 7) % 11) as f32 * 0.125)
        .collect();
    for k in [1, 10, 257] {
        assert_eq!(brute_force_knn(&queries, &db, &ids, dim, k).unwrap(), plain_scan(&queries, &db, &ids, dim, k), "k={k}");
    }
}

#[test]
fn screening_is_exact_on_gaussian_data() {
    let dim = 32;
    let db = gaussian(9000, dim, 22);
    let ids: Vec<u64> = (0..9000).collect();
    let queries = gaussian(130, dim, 23);
    assert_eq!(brute_force_knn(&queries, &db, &ids, dim, 10).unwrap(), plain_scan(&queries, &db, &ids, dim, 10));
    assert_eq!(brute_force_knn(&queries, &db, &ids, dim, 0).unwrap(), vec![Vec::new(); 130]);
}

#[test]
fn duplicates_sit_next_to_their_original() {
    let dim = 4;
    let mut db = gaussian(200, dim, 5);
    let mut ids: Vec<u64> = (0..200).collect();
    db.extend_from_slice(&db[37 * dim..38 * dim].to_vec());
    ids.push(1000);
    let q = gaussian(1, dim, 6);
    let ranked = brute_force_knn(&q, &db, &ids, dim, 201).unwrap().remove(0);
    let pos = ranked.iter().position(|n| n.id == 37).unwrap();
    assert_eq!(ranked[pos + 1].id, 1000);
}

#[test]
fn recall_examples() {
    let exact: Vec<Vec<u64>> = vec![(1..=10).collect()];
    assert_eq!(recall_at_k(&exact, &exact, 10), 1.0);
    assert_eq!(recall_at_k(&[(11..=20).collect()], &exact, 10), 0.0);
    let half: Vec<u64> = (1..=5).chain(11..=15).collect();
    assert_eq!(recall_at_k(&[half], &exact, 10), 0.5);
}

#[test]
fn entropy_endpoints() {
    assert_eq!(entropy_of_counts(&[0, 0, 17, 0]), 0.0);
    assert_eq!(entropy_of_counts(&vec![3; 16384]), 14.0);
    assert_eq!(entropy_of_counts(&[]), 0.0);
}

#[test]
fn spearman_basics() {
    assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
    assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), 0.0);
}

#[test]
fn identical_periods_are_mutually_symmetric() {
    let dim = 6;
    let block = gaussian(150, dim, 8);
    let ds = monthly(&[block.clone(), block], dim);
    let s = similarity_matrix(&ds, Granularity::Month, 1000, 10, 1).unwrap();
    assert_eq!(s.values[0][1], s.values[1][0]);
    assert!(s.values.iter().flatten().all(|v| v.is_finite() && *v <= 0.0));
}

#[test]
fn similarity_falls_with_translation() {
    let dim = 4;
    let base = gaussian(200, dim, 9);
    let shifted = |t: f32| -> Vec<f32> { base.iter().enumerate().map(|(i, v)| v + if i % dim == 0 { t } else { 0.0 }).collect() };
    let ds = monthly(&[base.clone(), shifted(2.0), shifted(8.0), shifted(40.0)], dim);
    let s = similarity_matrix(&ds, Granularity::Month, 1000, 5, 2).unwrap();
    let row = &s.values[0];
    assert!(row[1] > row[2] && row[2] > row[3]);
    assert!((row[3] + 40.0).abs() < 2.0, "{}", row[3]);
}

#[test]
fn too_small_periods_are_rejected() {
    let ds = monthly(&[gaussian(5, 2, 1), gaussian(50, 2, 2)], 2);
    assert!(similarity_matrix(&ds, Granularity::Month, 100, 5, 0).is_err());
}

#[test]
fn stationary_stream_similarity_spread_matches_permutation_null() {
    let ds = stream(0.0, 5, 300, 11);
    let spread = |s: &SimilarityMatrix| {
        let off: Vec<f64> = (0..s.periods.len())
            .flat_map(|i| (0..s.periods.len()).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| s.values[i][j])
            .collect();
        off.iter().cloned().fold(f64::MIN, f64::max) - off.iter().cloned().fold(f64::MAX, f64::min)
    };
    let observed = spread(&similarity_matrix(&ds, Granularity::Month, 300, 10, 3).unwrap());
    let data = ds.to_f32().into_owned();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut null = Vec::new();
    for _ in 0..20 {
        let mut rows: Vec<usize> = (0..ds.len()).collect();
        rows.shuffle(&mut rng);
        let v: Vec<f32> = rows.iter().flat_map(|&r| data[r * 8..(r + 1) * 8].iter().copied()).collect();
        let perm = TimestampedDataset::new(8, v, ds.timestamps().to_vec(), ds.ids().to_vec()).unwrap();
        null.push(spread(&similarity_matrix(&perm, Granularity::Month, 300, 10, 3).unwrap()));
    }
    let mean = null.iter().sum::<f64>() / null.len() as f64;
    let sd = (null.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (null.len() - 1) as f64).sqrt();
    assert!(observed < mean + 3.0 * sd, "{observed} vs null {mean} ± {sd}");
}

#[test]
fn balance_entropy_endpoints() {
    let dim = 2;
    let k = 16;
    let centers: Vec<f32> = (0..k).flat_map(|i| [(i % 4) as f32 * 10.0, (i / 4) as f32 * 10.0]).collect();
    let uniform: Vec<f32> = (0..20).flat_map(|_| centers.clone()).collect();
    let h = balance_entropy(&uniform, &uniform, dim, k, 10_000, 1).unwrap();
    assert!((h - (k as f64).log2()).abs() < 1e-9, "{h}");
    let one_cell: Vec<f32> = (0..100).flat_map(|_| [10.0f32, 20.0]).collect();
    assert_eq!(balance_entropy(&uniform, &one_cell, dim, k, 10_000, 1).unwrap(), 0.0);
}

#[test]
fn drifted_pairs_are_less_balanced() {
    let ds = stream(1.0, 6, 800, 12);
    let m = entropy_matrix(&ds, Granularity::Month, 16, 800, 5).unwrap();
    assert!(m.values.iter().flatten().all(|&h| (0.0..=4.0 + 1e-9).contains(&h)));
    assert!(m.values[0][5] < m.values[0][0], "{:?}", m.values[0]);
}

#[test]
fn provenance_with_one_month_lookback() {
    let ds = stream(0.5, 4, 200, 2);
    let h = nn_provenance(&ds, Granularity::Month, 3, 1, 10, 50, 1).unwrap();
    assert_eq!(h.counts, vec![500]);
    assert_eq!(h.source_periods, vec![2]);
    assert!(nn_provenance(&ds, Granularity::Month, 3, 4, 10, 50, 1).is_err());
}

#[test]
fn stationary_provenance_is_uniform() {
    let ds = stream(0.0, 5, 1000, 3);
    let h = nn_provenance(&ds, Granularity::Month, 4, 4, 10, 300, 7).unwrap();
    let total: usize = h.counts.iter().sum();
    assert_eq!(total, 3000);
    let e = total as f64 / 4.0;
    let sd = (total as f64 * 0.25 * 0.75).sqrt();
    for &c in &h.counts {
        assert!(((c as f64) - e).abs() < 3.0 * sd, "{:?}", h.counts);
    }
}

#[test]
fn trending_provenance_favors_recent_months() {
    let ds = stream(0.6, 7, 600, 4);
    let h = nn_provenance(&ds, Granularity::Month, 6, 6, 10, 300, 8).unwrap();
    let recency: Vec<f64> = (0..6).map(|i| i as f64).collect();
    let counts: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();
    assert!(spearman(&recency, &counts) > 0.0, "{:?}", h.counts);
}
