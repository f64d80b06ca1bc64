//! Exact search and the drift diagnostics: similarity between periods,
//! cluster balance entropy and nearest-neighbor provenance.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{l2_sq, Neighbor, TopK};
use crate::quantizers::{assign, derive_seed, kmeans_train, DEFAULT_KMEANS_ITERS};
use crate::vecstore::{period_partition, Granularity, TimestampedDataset};
use crate::{Error, Result};

const QUERY_BLOCK: usize = 64;
const DB_BLOCK: usize = 4096;

/// `f64` with a total order, for the threshold heap.
#[derive(Clone, Copy, PartialEq)]
struct Ord64(f64);

impl Eq for Ord64 {}

impl PartialOrd for Ord64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ord64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Exact top-`k` by squared L2, ties to the lower id. Returns fewer than `k`
/// neighbors per query when the database is smaller.
///
/// Candidates are screened with `‖q‖² + ‖x‖² − 2q·x` from a blocked matrix
/// product, keeping every row whose screened distance is within a
/// floating-point error bound of the running k-th best. Survivors are
/// re-scored with [`l2_sq`], so the output is identical to a plain scan.
pub fn brute_force_knn(queries: &[f32], db: &[f32], db_ids: &[u64], dim: usize, k: usize) -> Result<Vec<Vec<Neighbor>>> {
    if dim == 0 || queries.len() % dim != 0 || db.len() != db_ids.len() * dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: if queries.len() % dim.max(1) != 0 { queries.len() } else { db.len() },
        });
    }
    let nq = queries.len() / dim;
    if k == 0 || db_ids.is_empty() {
        return Ok(vec![Vec::new(); nq]);
    }
    let sq_norm = |x: &[f32]| x.iter().map(|&v| v as f64 * v as f64).sum::<f64>();
    let db_norms: Vec<f64> = db.par_chunks(dim).map(sq_norm).collect();
    let db_len: Vec<f64> = db_norms.iter().map(|n| n.sqrt()).collect();
    // 4·γ(d+3) with γ(n) = n·u / (1 − n·u): covers the rounding of both
    // the screened value and l2_sq.
    let u = f32::EPSILON as f64 / 2.0;
    let nu = (dim + 3) as f64 * u;
    let coef = 4.0 * nu / (1.0 - nu);

    let out: Vec<Vec<Vec<Neighbor>>> = queries
        .par_chunks(QUERY_BLOCK * dim)
        .map(|qblock| {
            let qb = qblock.len() / dim;
            let q_norms: Vec<f64> = qblock.chunks_exact(dim).map(sq_norm).collect();
            let q_len: Vec<f64> = q_norms.iter().map(|n| n.sqrt()).collect();
            let mut bounds: Vec<std::collections::BinaryHeap<Ord64>> =
                (0..qb).map(|_| std::collections::BinaryHeap::with_capacity(k + 1)).collect();
            let mut cands: Vec<Vec<(usize, f64)>> = vec![Vec::new(); qb];
            let mut dots = vec![0.0f32; qb * DB_BLOCK];

            for start in (0..db_ids.len()).step_by(DB_BLOCK) {
                let nb = DB_BLOCK.min(db_ids.len() - start);
                let block = &db[start * dim..(start + nb) * dim];
                // SAFETY: `qblock` is qb×dim, `block` is nb×dim read as its
                // transpose, and `dots` holds at least qb×nb entries; all
                // strides stay within those buffers.
                unsafe {
                    matrixmultiply::sgemm(
                        qb,
                        dim,
                        nb,
                        1.0,
                        qblock.as_ptr(),
                        dim as isize,
                        1,
                        block.as_ptr(),
                        1,
                        dim as isize,
                        0.0,
                        dots.as_mut_ptr(),
                        nb as isize,
                        1,
                    );
                }
                for i in 0..qb {
                    let heap = &mut bounds[i];
                    let list = &mut cands[i];
                    let mut limit = if heap.len() < k { f64::INFINITY } else { heap.peek().unwrap().0 };
                    for (j, &d) in dots[i * nb..(i + 1) * nb].iter().enumerate() {
                        let row = start + j;
                        let approx = q_norms[i] + db_norms[row] - 2.0 * d as f64;
                        let s = q_len[i] + db_len[row];
                        let err = coef * s * s;
                        let lower = approx - err;
                        if lower > limit {
                            continue;
                        }
                        list.push((row, lower));
                        let upper = approx + err;
                        if heap.len() < k {
                            heap.push(Ord64(upper));
                        } else if upper < limit {
                            heap.pop();
                            heap.push(Ord64(upper));
                        }
                        if heap.len() == k {
                            limit = heap.peek().unwrap().0;
                        }
                    }
                    list.retain(|&(_, lower)| lower <= limit);
                }
            }

            qblock
                .chunks_exact(dim)
                .zip(&cands)
                .map(|(q, list)| {
                    let mut top = TopK::new(k);
                    for &(row, _) in list {
                        top.push(db_ids[row], l2_sq(q, &db[row * dim..(row + 1) * dim]));
                    }
                    top.into_sorted_vec()
                })
                .collect()
        })
        .collect();
    Ok(out.into_iter().flatten().collect())
}

/// Mean over queries of `|approx ∩ exact| / k`, each list cut to `k`.
pub fn recall_at_k(approx: &[Vec<u64>], exact: &[Vec<u64>], k: usize) -> f64 {
    if approx.is_empty() || k == 0 {
        return 0.0;
    }
    let total: usize = approx
        .iter()
        .zip(exact)
        .map(|(a, e)| {
            let e = &e[..e.len().min(k)];
            a.iter().take(k).filter(|id| e.contains(id)).count()
        })
        .sum();
    total as f64 / (approx.len() * k) as f64
}

/// Shannon entropy in bits of the distribution given by `counts`.
pub fn entropy_of_counts(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / t;
            -p * p.log2()
        })
        .sum()
}

/// Spearman rank correlation, ties get average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &p in &idx[i..=j] {
                r[p] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

/// Seeded uniform sample without replacement of at most `n` rows of a
/// period, returned as `(ids, vectors)` in row order.
fn sample_rows(ds: &TimestampedDataset, rows: std::ops::Range<usize>, n: usize, seed: u64) -> (Vec<u64>, Vec<f32>) {
    let len = rows.len();
    let mut picked: Vec<usize> = if n >= len {
        (0..len).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample(&mut rng, len, n).into_vec()
    };
    picked.sort_unstable();
    let mut ids = Vec::with_capacity(picked.len());
    let mut vecs = Vec::with_capacity(picked.len() * ds.dim());
    for p in picked {
        let r = rows.start + p;
        ids.push(ds.ids()[r]);
        vecs.extend_from_slice(&ds.vector(r));
    }
    (ids, vecs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub granularity: Granularity,
    pub periods: Vec<i64>,
    /// `values[i][j] = S(Φᵢ, Φⱼ)`.
    pub values: Vec<Vec<f64>>,
}

/// `S(Φᵢ,Φⱼ) = −mean_{x∈Φᵢ} mean_{ℓ≤L} ‖x − NN_ℓ(x, Φⱼ)‖`, on seeded
/// samples of at most `sample_n` points per period. On the diagonal a
/// point is not its own neighbor.
pub fn similarity_matrix(
    ds: &TimestampedDataset,
    granularity: Granularity,
    sample_n: usize,
    l_nn: usize,
    seed: u64,
) -> Result<SimilarityMatrix> {
    if l_nn == 0 || sample_n == 0 {
        return Err(Error::InvalidConfig("sample_n and L_nn must be positive".into()));
    }
    let parts = period_partition(ds, granularity);
    let dim = ds.dim();
    let mut samples = Vec::with_capacity(parts.len());
    for (p, rows) in &parts {
        if rows.len() < l_nn + 1 {
            return Err(Error::InvalidDataset(format!(
                "period {p} has {} points, need at least {}",
                rows.len(),
                l_nn + 1
            )));
        }
        samples.push(sample_rows(ds, rows.clone(), sample_n, derive_seed(seed, *p as u64)));
    }
    let n = parts.len();
    let mut values = vec![vec![0.0; n]; n];
    for (i, (qids, qv)) in samples.iter().enumerate() {
        for (j, (dids, dv)) in samples.iter().enumerate() {
            let k = if i == j { l_nn + 1 } else { l_nn };
            let knn = brute_force_knn(qv, dv, dids, dim, k)?;
            let mut total = 0.0f64;
            for (qid, nn) in qids.iter().zip(&knn) {
                let dists = nn.iter().filter(|x| i != j || x.id != *qid).take(l_nn);
                total += dists.map(|x| (x.distance.max(0.0) as f64).sqrt()).sum::<f64>() / l_nn as f64;
            }
            values[i][j] = -total / qids.len() as f64;
        }
    }
    Ok(SimilarityMatrix {
        granularity,
        periods: parts.iter().map(|(p, _)| *p).collect(),
        values,
    })
}

/// Trains k-means(`k`) on a sample of `train`, assigns a sample of
/// `target` and returns the entropy (bits) of the resulting cell occupancy.
pub fn balance_entropy(train: &[f32], target: &[f32], dim: usize, k: usize, sample_n: usize, seed: u64) -> Result<f64> {
    let pick = |data: &[f32], s: u64| -> Vec<f32> {
        let n = data.len() / dim;
        if n <= sample_n {
            return data.to_vec();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut rows = sample(&mut rng, n, sample_n).into_vec();
        rows.sort_unstable();
        rows.iter().flat_map(|&r| data[r * dim..(r + 1) * dim].iter().copied()).collect()
    };
    let train = pick(train, derive_seed(seed, 1));
    let target = pick(target, derive_seed(seed, 2));
    let model = kmeans_train(&train, dim, k, DEFAULT_KMEANS_ITERS, derive_seed(seed, 3))?;
    let labels = assign(&target, dim, model.centroids())?;
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l as usize] += 1);
    Ok(entropy_of_counts(&counts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyMatrix {
    pub granularity: Granularity,
    pub periods: Vec<i64>,
    pub k: usize,
    /// `values[i][j]`: clustering trained on period `i`, applied to `j`.
    pub values: Vec<Vec<f64>>,
}

pub fn entropy_matrix(
    ds: &TimestampedDataset,
    granularity: Granularity,
    k: usize,
    sample_n: usize,
    seed: u64,
) -> Result<EntropyMatrix> {
    let parts = period_partition(ds, granularity);
    let dim = ds.dim();
    let data = ds.to_f32();
    let rows = |r: &std::ops::Range<usize>| &data[r.start * dim..r.end * dim];
    let mut values = vec![vec![0.0; parts.len()]; parts.len()];
    for (i, (pi, ri)) in parts.iter().enumerate() {
        for (j, (_, rj)) in parts.iter().enumerate() {
            values[i][j] = balance_entropy(rows(ri), rows(rj), dim, k, sample_n, derive_seed(seed, *pi as u64))?;
        }
    }
    Ok(EntropyMatrix {
        granularity,
        periods: parts.iter().map(|(p, _)| *p).collect(),
        k,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceHistogram {
    pub query_period: i64,
    pub lookback: usize,
    /// Source periods, oldest first.
    pub source_periods: Vec<i64>,
    pub counts: Vec<usize>,
}

/// Where the exact top-`k` neighbors of period-`i` queries come from among
/// the `lookback` preceding periods.
pub fn nn_provenance(
    ds: &TimestampedDataset,
    granularity: Granularity,
    query_period: i64,
    lookback: usize,
    k: usize,
    sample_n: usize,
    seed: u64,
) -> Result<ProvenanceHistogram> {
    if lookback == 0 {
        return Err(Error::InvalidConfig("lookback must be at least 1".into()));
    }
    let parts = period_partition(ds, granularity);
    let find = |p: i64| parts.iter().find(|(q, _)| *q == p).map(|(_, r)| r.clone());
    let qrows = find(query_period)
        .ok_or_else(|| Error::InvalidDataset(format!("query period {query_period} has no data")))?;
    let source_periods: Vec<i64> = (1..=lookback as i64).rev().map(|d| query_period - d).collect();
    let dim = ds.dim();
    let mut db = Vec::new();
    let mut db_ids = Vec::new();
    let mut origin = std::collections::HashMap::new();
    for (slot, &p) in source_periods.iter().enumerate() {
        let rows = find(p).ok_or_else(|| Error::InvalidDataset(format!("lookback period {p} has no data")))?;
        for r in rows {
            db_ids.push(ds.ids()[r]);
            db.extend_from_slice(&ds.vector(r));
            origin.insert(ds.ids()[r], slot);
        }
    }
    let (_, queries) = sample_rows(ds, qrows, sample_n, seed);
    let knn = brute_force_knn(&queries, &db, &db_ids, dim, k)?;
    let mut counts = vec![0usize; lookback];
    for n in knn.iter().flatten() {
        counts[origin[&n.id]] += 1;
    }
    Ok(ProvenanceHistogram {
        query_period,
        lookback,
        source_periods,
        counts,
    })
}

#[cfg(test)]
mod tests;
