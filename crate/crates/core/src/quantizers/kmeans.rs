//! Lloyd k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::l2_sq;
use crate::{Error, Result};

pub const DEFAULT_KMEANS_ITERS: usize = 25;
/// Relative objective improvement below which Lloyd iterations stop.
pub const KMEANS_TOLERANCE: f64 = 1e-4;

const PAR_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    dim: usize,
    centroids: Vec<f32>,
    /// Mean squared assignment distance of every Lloyd iteration.
    objective_trace: Vec<f64>,
}

impl KMeansModel {
    pub fn from_centroids(dim: usize, centroids: Vec<f32>) -> Self {
        assert!(dim > 0 && centroids.len() % dim == 0 && !centroids.is_empty());
        Self {
            dim,
            centroids,
            objective_trace: Vec::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    pub fn set_centroid(&mut self, i: usize, value: &[f32]) {
        self.centroids[i * self.dim..(i + 1) * self.dim].copy_from_slice(value);
    }

    pub fn objective_trace(&self) -> &[f64] {
        &self.objective_trace
    }

    pub fn nearest(&self, x: &[f32]) -> (usize, f32) {
        nearest_centroid(x, &self.centroids, self.dim)
    }
}

/// Index and squared distance of the closest centroid; ties go to the lowest
/// index.
#[inline]
pub fn nearest_centroid(x: &[f32], centroids: &[f32], dim: usize) -> (usize, f32) {
    let mut best = (0usize, f32::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = l2_sq(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Nearest-centroid label of every row of `data`.
pub fn assign(data: &[f32], dim: usize, centroids: &[f32]) -> Result<Vec<u32>> {
    Ok(assign_with_distances(data, dim, centroids)?.0)
}

pub fn assign_with_distances(data: &[f32], dim: usize, centroids: &[f32]) -> Result<(Vec<u32>, Vec<f32>)> {
    if dim == 0 || data.len() % dim != 0 || centroids.len() % dim != 0 {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: if centroids.len() % dim.max(1) != 0 { centroids.len() } else { data.len() },
        });
    }
    if centroids.is_empty() {
        return Err(Error::InvalidConfig("no centroids to assign to".into()));
    }
    let n = data.len() / dim;
    let mut labels = vec![0u32; n];
    let mut dists = vec![0f32; n];
    data.par_chunks(PAR_CHUNK * dim)
        .zip(labels.par_chunks_mut(PAR_CHUNK))
        .zip(dists.par_chunks_mut(PAR_CHUNK))
        .for_each(|((rows, lab), dis)| {
            for ((x, l), d) in rows.chunks_exact(dim).zip(lab).zip(dis) {
                let (j, dist) = nearest_centroid(x, centroids, dim);
                *l = j as u32;
                *d = dist;
            }
        });
    Ok((labels, dists))
}

/// Trains `k` centroids on the rows of `data`.
pub fn kmeans_train(data: &[f32], dim: usize, k: usize, max_iters: usize, seed: u64) -> Result<KMeansModel> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: data.len(),
        });
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be positive".into()));
    }
    let n = data.len() / dim;
    if n < k {
        return Err(Error::InsufficientTrainingPoints { needed: k, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = kmeans_plus_plus(data, dim, k, &mut rng);
    Ok(lloyd(data, dim, init, max_iters))
}

/// Lloyd iterations warm-started from `centroids`.
pub fn kmeans_refine(data: &[f32], dim: usize, centroids: Vec<f32>, max_iters: usize) -> Result<KMeansModel> {
    let k = centroids.len() / dim;
    let n = data.len() / dim;
    if n < k {
        return Err(Error::InsufficientTrainingPoints { needed: k, got: n });
    }
    Ok(lloyd(data, dim, centroids, max_iters))
}

fn kmeans_plus_plus(data: &[f32], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(row(first));

    let mut min_d2: Vec<f32> = (0..n).map(|i| l2_sq(row(i), row(first))).collect();
    for _ in 1..k {
        let total: f64 = min_d2.iter().map(|&d| d as f64).sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0f64;
            let mut pick = None;
            let mut last_positive = 0;
            for (i, &d) in min_d2.iter().enumerate() {
                if d > 0.0 {
                    last_positive = i;
                    acc += d as f64;
                    if acc > target {
                        pick = Some(i);
                        break;
                    }
                }
            }
            pick.unwrap_or(last_positive)
        } else {
            // every point coincides with a chosen centroid
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        let c = row(pick).to_vec();
        min_d2
            .par_chunks_mut(PAR_CHUNK)
            .enumerate()
            .for_each(|(ci, chunk)| {
                for (off, d) in chunk.iter_mut().enumerate() {
                    let i = ci * PAR_CHUNK + off;
                    let nd = l2_sq(&data[i * dim..(i + 1) * dim], &c);
                    if nd < *d {
                        *d = nd;
                    }
                }
            });
        centroids.extend_from_slice(&c);
    }
    centroids
}

fn lloyd(data: &[f32], dim: usize, mut centroids: Vec<f32>, max_iters: usize) -> KMeansModel {
    let k = centroids.len() / dim;
    let mut trace = Vec::with_capacity(max_iters);
    for _ in 0..max_iters {
        let (mut labels, mut dists) =
            assign_with_distances(data, dim, &centroids).expect("dimensions checked by caller");
        let objective = dists.iter().map(|&d| d as f64).sum::<f64>() / dists.len() as f64;
        let prev = trace.last().copied();
        trace.push(objective);
        repair_empty_clusters(&mut labels, &mut dists, k);
        centroids = cluster_means(data, dim, &labels, k, &centroids);
        match prev {
            _ if objective == 0.0 => break,
            Some(p) if p - objective <= KMEANS_TOLERANCE * p => break,
            _ => {}
        }
    }
    KMeansModel {
        dim,
        centroids,
        objective_trace: trace,
    }
}

/// Gives every empty cluster the farthest member of the currently largest
/// cluster.
fn repair_empty_clusters(labels: &mut [u32], dists: &mut [f32], k: usize) {
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l as usize] += 1;
    }
    for empty in 0..k {
        if sizes[empty] != 0 {
            continue;
        }
        let largest = (0..k).max_by_key(|&j| (sizes[j], std::cmp::Reverse(j))).unwrap();
        if sizes[largest] < 2 {
            return;
        }
        let mut far = None::<(usize, f32)>;
        for (i, (&l, &d)) in labels.iter().zip(dists.iter()).enumerate() {
            if l as usize == largest && far.is_none_or(|(_, fd)| d > fd) {
                far = Some((i, d));
            }
        }
        let (i, _) = far.expect("largest cluster has members");
        labels[i] = empty as u32;
        dists[i] = 0.0;
        sizes[largest] -= 1;
        sizes[empty] = 1;
    }
}

/// Per-cluster means accumulated in f64; clusters without members keep
/// their previous centroid.
pub(crate) fn cluster_means(data: &[f32], dim: usize, labels: &[u32], k: usize, previous: &[f32]) -> Vec<f32> {
    let mut sums = vec![0f64; k * dim];
    let mut counts = vec![0usize; k];
    for (x, &l) in data.chunks_exact(dim).zip(labels) {
        let l = l as usize;
        counts[l] += 1;
        for (s, &v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(x) {
            *s += v as f64;
        }
    }
    let mut out = previous.to_vec();
    for j in 0..k {
        if counts[j] > 0 {
            let inv = 1.0 / counts[j] as f64;
            for (o, s) in out[j * dim..(j + 1) * dim].iter_mut().zip(&sums[j * dim..(j + 1) * dim]) {
                *o = (s * inv) as f32;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn brute_labels(data: &[f32], dim: usize, centroids: &[f32]) -> Vec<u32> {
        data.chunks_exact(dim)
            .map(|x| {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (j, c) in centroids.chunks_exact(dim).enumerate() {
                    let d: f64 = x.iter().zip(c).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
                    if d < best_d {
                        best_d = d;
                        best = j;
                    }
                }
                best as u32
            })
            .collect()
    }

    #[test]
    fn distinct_points_are_fit_exactly() {
        let pts: Vec<f32> = vec![0.0, 0.0, 5.0, 1.0, -3.0, 2.0, 10.0, 10.0];
        let m = kmeans_train(&pts, 2, 4, 25, 7).unwrap();
        assert_eq!(*m.objective_trace().last().unwrap(), 0.0);
        let mut got: Vec<Vec<f32>> = m.centroids().chunks(2).map(|c| c.to_vec()).collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut want: Vec<Vec<f32>> = pts.chunks(2).map(|c| c.to_vec()).collect();
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(got, want);
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts: Vec<f32> = vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0];
        let m = kmeans_train(&pts, 2, 1, 25, 0).unwrap();
        assert_eq!(m.centroids(), &[3.0, 5.0]);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let err = kmeans_train(&[0.0, 1.0], 1, 3, 10, 0).unwrap_err();
        assert!(err.to_string().contains("insufficient training points"));
    }

    #[test]
    fn recovers_well_separated_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 4;
        let sigma = 1.0f32;
        let means: Vec<Vec<f32>> = (0..4)
            .map(|c| (0..dim).map(|j| if j == c { 10.0 * sigma } else { 0.0 }).collect())
            .collect();
        let mut data = Vec::new();
        for i in 0..1000 {
            let m = &means[i % 4];
            for v in m {
                let z: f32 = StandardNormal.sample(&mut rng);
                data.push(v + sigma * z);
            }
        }
        let model = kmeans_train(&data, dim, 4, 25, 7).unwrap();
        // brute-force bijective matching over 4! permutations
        let perms = permutations(4);
        let best = perms
            .iter()
            .map(|p| {
                (0..4)
                    .map(|t| l2_sq(&means[t], model.centroid(p[t])).sqrt())
                    .fold(0.0f32, f32::max)
            })
            .fold(f32::INFINITY, f32::min);
        assert!(best < 0.5 * sigma, "worst matched centroid error {best}");
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 1 {
            return vec![vec![0]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..n {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn objective_trace_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f32> = (0..2000 * 8).map(|_| StandardNormal.sample(&mut rng)).collect();
        let m = kmeans_train(&data, 8, 32, 50, 2).unwrap();
        assert!(m.objective_trace().len() > 1);
        for w in m.objective_trace().windows(2) {
            assert!(w[1] <= w[0], "{:?}", m.objective_trace());
        }
    }

    #[test]
    fn assign_ties_go_to_lowest_index() {
        let centroids = vec![0.0, 2.0, -2.0, 0.0];
        // 1.0 and -1.0 sit halfway between centroid 0 and centroids 1 / 2
        let labels = assign(&[0.0, 1.0, -1.0, 2.0], 1, &centroids).unwrap();
        assert_eq!(labels, vec![0, 0, 0, 1]);
        let labels = assign(&[1.0], 1, &[2.0, 0.0]).unwrap();
        assert_eq!(labels, vec![0]);
        let labels = assign(&[5.0, 5.0], 2, &[1.0, 1.0, 5.0, 5.0, 9.0, 9.0]).unwrap();
        assert_eq!(labels, vec![1]);
    }

    #[test]
    fn assign_matches_exhaustive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data: Vec<f32> = (0..100 * 8).map(|_| StandardNormal.sample(&mut rng)).collect();
        let cents: Vec<f32> = (0..10 * 8).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert_eq!(assign(&data, 8, &cents).unwrap(), brute_labels(&data, 8, &cents));
    }

    #[test]
    fn empty_clusters_are_repaired() {
        // every point identical except one: k-means++ still yields k clusters
        let mut data = vec![1.0f32; 20];
        data[19] = 4.0;
        let m = kmeans_train(&data, 1, 3, 10, 0).unwrap();
        assert_eq!(m.k(), 3);
        assert!(m.centroids().iter().all(|c| c.is_finite()));
    }
}
