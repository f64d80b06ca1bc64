//! Squared L2 kernels and the bounded top-k collector shared by every search
//! path.
//!
//! All exact distances in the crate go through [`l2_sq`], so two code paths
//! that compare the same pair of vectors always agree bit-for-bit.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LANES: usize = 8;

/// Squared Euclidean distance.
///
/// Accumulates into eight independent lanes (then a fixed-order reduction)
/// so the compiler can vectorize without changing results between targets.
#[inline]
pub fn l2_sq(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for l in 0..LANES {
            let d = xa[l] - xb[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        let d = x - y;
        tail += d * d;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// A search hit. Orders by distance, then by id, which is the tie rule used
/// everywhere in the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u64,
    pub distance: f32,
}

impl Neighbor {
    pub fn new(id: u64, distance: f32) -> Self {
        Self { id, distance }
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.id.cmp(&other.id))
    }
}

/// Keeps the `k` smallest neighbors seen so far.
#[derive(Debug, Clone)]
pub struct TopK {
    k: usize,
    heap: BinaryHeap<Neighbor>,
}

impl TopK {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub fn push(&mut self, id: u64, distance: f32) {
        if self.k == 0 {
            return;
        }
        if self.heap.len() < self.k {
            self.heap.push(Neighbor::new(id, distance));
            return;
        }
        let worst = self.heap.peek().expect("heap is full");
        // cheap reject before building the full comparison
        if distance > worst.distance {
            return;
        }
        let cand = Neighbor::new(id, distance);
        if cand < *worst {
            self.heap.pop();
            self.heap.push(cand);
        }
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Results in ascending (distance, id) order.
    pub fn into_sorted_vec(self) -> Vec<Neighbor> {
        self.heap.into_sorted_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f32], b: &[f32]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| ((*x as f64) - (*y as f64)).powi(2))
            .sum()
    }

    #[test]
    fn l2_matches_naive_for_odd_lengths() {
        for len in [1usize, 3, 8, 13, 32, 33] {
            let a: Vec<f32> = (0..len).map(|i| i as f32 * 0.5 - 2.0).collect();
            let b: Vec<f32> = (0..len).map(|i| (i * i) as f32 * 0.1).collect();
            let got = l2_sq(&a, &b) as f64;
            let want = naive(&a, &b);
            assert!((got - want).abs() <= 1e-5 * want.max(1.0), "{len}: {got} vs {want}");
        }
    }

    #[test]
    fn topk_breaks_ties_by_id() {
        let mut top = TopK::new(2);
        top.push(9, 1.0);
        top.push(3, 1.0);
        top.push(5, 1.0);
        top.push(1, 2.0);
        let got: Vec<u64> = top.into_sorted_vec().iter().map(|n| n.id).collect();
        assert_eq!(got, vec![3, 5]);
    }

    #[test]
    fn topk_zero_keeps_nothing() {
        let mut top = TopK::new(0);
        top.push(1, 0.0);
        assert!(top.is_empty());
    }
}
