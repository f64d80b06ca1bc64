//! Coarse quantizers that partition the space into IVF cells.
//!
//! - `Flat`: plain k-means, `K` centroids.
//! - `Imi`: inverted multi-index, a two-subspace product quantizer with
//!   `2^bits` centroids per half; cell `a·K₂ + b`.
//! - `Rcq`: two-level residual quantizer; the second level quantizes the
//!   residual of the first and cell `a·K₂ + b` has centroid `c¹ₐ + c²_b`.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::{assign, kmeans_train, nearest_centroid, KMeansModel};
use crate::distance::l2_sq;
use crate::{Error, Result};

/// Which coarse quantizer to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoarseSpec {
    Flat { k: usize },
    Imi { bits: u32 },
    Rcq { bits1: u32, bits2: u32 },
}

impl CoarseSpec {
    pub fn n_cells(&self) -> usize {
        match *self {
            CoarseSpec::Flat { k } => k,
            CoarseSpec::Imi { bits } => 1usize << (2 * bits),
            CoarseSpec::Rcq { bits1, bits2 } => 1usize << (bits1 + bits2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoarseQuantizer {
    Flat(KMeansModel),
    Imi {
        /// Dimensions `[0, split)` go to the first half.
        split: usize,
        halves: [KMeansModel; 2],
    },
    Rcq {
        level1: KMeansModel,
        level2: KMeansModel,
        /// Materialized `c¹ₐ + c²_b`, row `a·K₂ + b`.
        composed: Vec<f32>,
    },
}

impl CoarseQuantizer {
    pub fn train(spec: &CoarseSpec, data: &[f32], dim: usize, iters: usize, seed: u64) -> Result<Self> {
        match *spec {
            CoarseSpec::Flat { k } => Ok(Self::Flat(kmeans_train(data, dim, k, iters, seed)?)),
            CoarseSpec::Imi { bits } => {
                if dim < 2 {
                    return Err(Error::InvalidConfig("IMI needs at least two dimensions".into()));
                }
                let split = dim / 2;
                let k = 1usize << bits;
                let first: Vec<f32> = data.chunks_exact(dim).flat_map(|x| x[..split].iter().copied()).collect();
                let second: Vec<f32> = data.chunks_exact(dim).flat_map(|x| x[split..].iter().copied()).collect();
                let a = kmeans_train(&first, split, k, iters, seed)?;
                let b = kmeans_train(&second, dim - split, k, iters, seed.wrapping_add(1))?;
                Ok(Self::Imi { split, halves: [a, b] })
            }
            CoarseSpec::Rcq { bits1, bits2 } => {
                let level1 = kmeans_train(data, dim, 1usize << bits1, iters, seed)?;
                let labels = assign(data, dim, level1.centroids())?;
                let residuals: Vec<f32> = data
                    .chunks_exact(dim)
                    .zip(&labels)
                    .flat_map(|(x, &l)| {
                        let c = level1.centroid(l as usize);
                        x.iter().zip(c).map(|(a, b)| a - b).collect::<Vec<_>>()
                    })
                    .collect();
                let level2 = kmeans_train(&residuals, dim, 1usize << bits2, iters, seed.wrapping_add(1))?;
                Ok(Self::rcq(level1, level2))
            }
        }
    }

    pub fn rcq(level1: KMeansModel, level2: KMeansModel) -> Self {
        let mut composed = Vec::with_capacity(level1.k() * level2.k() * level1.dim());
        for a in 0..level1.k() {
            for b in 0..level2.k() {
                composed.extend(level1.centroid(a).iter().zip(level2.centroid(b)).map(|(x, y)| x + y));
            }
        }
        Self::Rcq {
            level1,
            level2,
            composed,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Flat(m) => m.dim(),
            Self::Imi { halves, .. } => halves[0].dim() + halves[1].dim(),
            Self::Rcq { level1, .. } => level1.dim(),
        }
    }

    pub fn n_cells(&self) -> usize {
        match self {
            Self::Flat(m) => m.k(),
            Self::Imi { halves, .. } => halves[0].k() * halves[1].k(),
            Self::Rcq { level1, level2, .. } => level1.k() * level2.k(),
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            Self::Flat(_) => "flat",
            Self::Imi { .. } => "IMI",
            Self::Rcq { .. } => "RCQ",
        }
    }

    /// Residual encoding needs one materialized centroid per cell.
    pub fn supports_residual(&self) -> bool {
        !matches!(self, Self::Imi { .. })
    }

    /// Centroid of a cell (the concatenation of sub-centroids for IMI).
    pub fn centroid(&self, cell: usize) -> Vec<f32> {
        match self {
            Self::Flat(m) => m.centroid(cell).to_vec(),
            Self::Imi { halves, .. } => {
                let k2 = halves[1].k();
                let mut c = halves[0].centroid(cell / k2).to_vec();
                c.extend_from_slice(halves[1].centroid(cell % k2));
                c
            }
            Self::Rcq { composed, level1, .. } => {
                let d = level1.dim();
                composed[cell * d..(cell + 1) * d].to_vec()
            }
        }
    }

    /// Overwrites a flat centroid. Other variants have no independent
    /// per-cell centroid and reject the update.
    pub fn set_centroid(&mut self, cell: usize, value: &[f32]) -> Result<()> {
        match self {
            Self::Flat(m) => {
                m.set_centroid(cell, value);
                Ok(())
            }
            other => Err(Error::InvalidConfig(format!(
                "cannot move individual centroids of a {} coarse quantizer",
                other.variant_name()
            ))),
        }
    }

    /// Closest cell and its distance.
    pub fn assign_one(&self, x: &[f32]) -> (usize, f32) {
        match self {
            Self::Flat(m) => m.nearest(x),
            Self::Imi { split, halves } => {
                let (a, da) = halves[0].nearest(&x[..*split]);
                let (b, db) = halves[1].nearest(&x[*split..]);
                (a * halves[1].k() + b, da + db)
            }
            Self::Rcq { composed, level1, .. } => nearest_centroid(x, composed, level1.dim()),
        }
    }

    pub fn assign_batch(&self, data: &[f32]) -> Vec<u32> {
        let dim = self.dim();
        data.par_chunks(dim).map(|x| self.assign_one(x).0 as u32).collect()
    }

    /// The `n` closest cells in non-decreasing distance, ties by cell id.
    pub fn nearest(&self, q: &[f32], n: usize) -> Result<Vec<(usize, f32)>> {
        if n > self.n_cells() {
            return Err(Error::InvalidConfig(format!(
                "asked for {n} cells but the quantizer has {}",
                self.n_cells()
            )));
        }
        if q.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: q.len(),
            });
        }
        Ok(self.ranking(q).take(n).collect())
    }

    /// Lazily enumerates all cells by increasing distance to `q`.
    pub fn ranking(&self, q: &[f32]) -> CellRanking {
        match self {
            Self::Flat(m) => CellRanking::sorted(all_distances(q, m.centroids(), m.dim())),
            Self::Rcq { composed, level1, .. } => CellRanking::sorted(all_distances(q, composed, level1.dim())),
            Self::Imi { split, halves } => {
                let d1 = sorted_table(&q[..*split], &halves[0]);
                let d2 = sorted_table(&q[*split..], &halves[1]);
                CellRanking {
                    inner: Ranking::MultiSequence(MultiSequence::new(d1, d2)),
                }
            }
        }
    }
}

fn all_distances(q: &[f32], centroids: &[f32], dim: usize) -> Vec<(usize, f32)> {
    centroids
        .chunks_exact(dim)
        .enumerate()
        .map(|(i, c)| (i, l2_sq(q, c)))
        .collect()
}

fn sorted_table(q: &[f32], model: &KMeansModel) -> Vec<(u32, f32)> {
    let mut t: Vec<(u32, f32)> = (0..model.k())
        .map(|j| (j as u32, l2_sq(q, model.centroid(j))))
        .collect();
    t.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    t
}

fn by_distance_then_id(a: &(usize, f32), b: &(usize, f32)) -> Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

/// Iterator over `(cell, distance)` in non-decreasing distance order.
pub struct CellRanking {
    inner: Ranking,
}

enum Ranking {
    Sorted(std::vec::IntoIter<(usize, f32)>),
    MultiSequence(MultiSequence),
}

impl CellRanking {
    fn sorted(mut cells: Vec<(usize, f32)>) -> Self {
        cells.sort_unstable_by(by_distance_then_id);
        Self {
            inner: Ranking::Sorted(cells.into_iter()),
        }
    }
}

impl Iterator for CellRanking {
    type Item = (usize, f32);

    fn next(&mut self) -> Option<Self::Item> {
        match &mut self.inner {
            Ranking::Sorted(it) => it.next(),
            Ranking::MultiSequence(ms) => ms.next(),
        }
    }
}

#[derive(PartialEq)]
struct Frontier {
    dist: f32,
    cell: usize,
    i: u32,
    j: u32,
}

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.cell.cmp(&other.cell))
    }
}

/// Multi-sequence traversal of the two sorted half-distance tables.
///
/// Cells are popped from a min-heap over the frontier of the (i, j) lattice;
/// a cell is pushed once one of its lattice predecessors has been popped.
/// Cells with equal distance are drained as one batch and emitted by id.
struct MultiSequence {
    d1: Vec<(u32, f32)>,
    d2: Vec<(u32, f32)>,
    heap: BinaryHeap<Reverse<Frontier>>,
    pushed: Vec<bool>,
    ready: VecDeque<(usize, f32)>,
}

impl MultiSequence {
    fn new(d1: Vec<(u32, f32)>, d2: Vec<(u32, f32)>) -> Self {
        let mut ms = Self {
            pushed: vec![false; d1.len() * d2.len()],
            d1,
            d2,
            heap: BinaryHeap::new(),
            ready: VecDeque::new(),
        };
        ms.push(0, 0);
        ms
    }

    fn push(&mut self, i: usize, j: usize) {
        if i >= self.d1.len() || j >= self.d2.len() {
            return;
        }
        let slot = i * self.d2.len() + j;
        if self.pushed[slot] {
            return;
        }
        self.pushed[slot] = true;
        let (a, da) = self.d1[i];
        let (b, db) = self.d2[j];
        self.heap.push(Reverse(Frontier {
            dist: da + db,
            cell: a as usize * self.d2.len() + b as usize,
            i: i as u32,
            j: j as u32,
        }));
    }

    fn pop_expand(&mut self) -> Option<Frontier> {
        let Reverse(f) = self.heap.pop()?;
        self.push(f.i as usize + 1, f.j as usize);
        self.push(f.i as usize, f.j as usize + 1);
        Some(f)
    }
}

impl Iterator for MultiSequence {
    type Item = (usize, f32);

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(x) = self.ready.pop_front() {
            return Some(x);
        }
        let first = self.pop_expand()?;
        let mut batch = vec![(first.cell, first.dist)];
        while self.heap.peek().is_some_and(|Reverse(f)| f.dist == first.dist) {
            let f = self.pop_expand().unwrap();
            batch.push((f.cell, f.dist));
        }
        batch.sort_unstable_by_key(|&(cell, _)| cell);
        self.ready.extend(batch);
        self.ready.pop_front()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, dim: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n * dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn brute_order(q: &[f32], cq: &CoarseQuantizer) -> Vec<(usize, f32)> {
        let mut v: Vec<(usize, f32)> = (0..cq.n_cells()).map(|c| (c, l2_sq(q, &cq.centroid(c)))).collect();
        v.sort_by(by_distance_then_id);
        v
    }

    #[test]
    fn flat_full_ranking_matches_sort() {
        let data = gaussian(500, 4, 1);
        let cq = CoarseQuantizer::train(&CoarseSpec::Flat { k: 16 }, &data, 4, 10, 0).unwrap();
        for q in gaussian(20, 4, 2).chunks_exact(4) {
            assert_eq!(cq.nearest(q, 16).unwrap(), brute_order(q, &cq));
        }
    }

    #[test]
    fn imi_query_on_a_cell_returns_that_cell_first() {
        let data = gaussian(600, 6, 3);
        let cq = CoarseQuantizer::train(&CoarseSpec::Imi { bits: 3 }, &data, 6, 10, 0).unwrap();
        for cell in [0usize, 9, 63] {
            let q = cq.centroid(cell);
            let first = cq.nearest(&q, 1).unwrap()[0];
            assert_eq!(first.0, cell);
            assert_eq!(first.1, 0.0);
        }
    }

    #[test]
    fn imi_enumerates_every_cell_once_in_order() {
        let data = gaussian(800, 6, 4);
        let cq = CoarseQuantizer::train(&CoarseSpec::Imi { bits: 3 }, &data, 6, 10, 0).unwrap();
        for q in gaussian(20, 6, 5).chunks_exact(6) {
            let got = cq.nearest(q, 64).unwrap();
            let mut seen: Vec<usize> = got.iter().map(|c| c.0).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..64).collect::<Vec<_>>());
            assert!(got.windows(2).all(|w| by_distance_then_id(&w[0], &w[1]) == Ordering::Less));
            // half-table sums agree with the concatenated centroid distance
            for &(cell, d) in &got {
                let exact = l2_sq(q, &cq.centroid(cell));
                assert!((d - exact).abs() <= 1e-4 * exact.max(1.0));
            }
        }
    }

    #[test]
    fn imi_ties_are_emitted_by_cell_id() {
        // one-dimensional halves with symmetric centroids produce many ties
        let halves = [
            KMeansModel::from_centroids(1, vec![1.0, -1.0, 0.0]),
            KMeansModel::from_centroids(1, vec![2.0, -2.0]),
        ];
        let cq = CoarseQuantizer::Imi { split: 1, halves };
        let got = cq.nearest(&[0.0, 0.0], 6).unwrap();
        let ids: Vec<usize> = got.iter().map(|c| c.0).collect();
        assert_eq!(ids, vec![4, 5, 0, 1, 2, 3]);
    }

    #[test]
    fn rcq_order_matches_materialized_brute_force() {
        let data = gaussian(1000, 8, 6);
        let cq = CoarseQuantizer::train(&CoarseSpec::Rcq { bits1: 4, bits2: 2 }, &data, 8, 10, 0).unwrap();
        assert_eq!(cq.n_cells(), 64);
        for q in gaussian(100, 8, 7).chunks_exact(8) {
            assert_eq!(cq.nearest(q, 64).unwrap(), brute_order(q, &cq));
        }
    }

    #[test]
    fn too_many_cells_is_an_error() {
        let data = gaussian(100, 2, 8);
        let cq = CoarseQuantizer::train(&CoarseSpec::Flat { k: 4 }, &data, 2, 5, 0).unwrap();
        assert!(cq.nearest(&[0.0, 0.0], 5).is_err());
    }

    #[test]
    fn assign_one_agrees_with_first_ranked_cell() {
        let data = gaussian(800, 6, 9);
        for spec in [
            CoarseSpec::Flat { k: 16 },
            CoarseSpec::Imi { bits: 2 },
            CoarseSpec::Rcq { bits1: 2, bits2: 2 },
        ] {
            let cq = CoarseQuantizer::train(&spec, &data, 6, 10, 1).unwrap();
            for q in gaussian(50, 6, 10).chunks_exact(6) {
                assert_eq!(cq.assign_one(q).0, cq.nearest(q, 1).unwrap()[0].0);
            }
        }
    }
}
