//! Optimized product quantization: a learned rotation followed by PQ.
//!
//! Training alternates between fitting the PQ on rotated data and solving
//! the orthogonal Procrustes problem that maps the data onto its PQ
//! reconstruction. The best (rotation, PQ) pair seen is kept, and round 0 is
//! plain PQ with the identity, so OPQ never ends up worse than PQ on the
//! training set.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::pq::ProductQuantizer;
use crate::linalg::Matrix;
use crate::{Error, Result};

pub const DEFAULT_OPQ_ITERS: usize = 10;
/// Lloyd iterations spent refining the PQ after every rotation update.
const PQ_REFINE_ITERS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpqModel {
    rotation: Matrix,
    pq: ProductQuantizer,
}

impl OpqModel {
    pub fn train(
        data: &[f32],
        dim: usize,
        m: usize,
        ksub: usize,
        outer_iters: usize,
        kmeans_iters: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut pq = ProductQuantizer::train(data, dim, m, ksub, kmeans_iters, seed)?;
        let mut rotation = Matrix::identity(dim);
        let mut best = (pq.mse(data), rotation.clone(), pq.clone());

        let x = rows_to_nalgebra(data, dim);
        for _ in 0..outer_iters {
            let rotated = rotation.apply_rows(data);
            let mut recon = vec![0.0f32; rotated.len()];
            for (r, out) in rotated.chunks_exact(dim).zip(recon.chunks_exact_mut(dim)) {
                pq.decode_into(&pq.encode(r), out);
            }
            rotation = procrustes(&x, &rows_to_nalgebra(&recon, dim))?;
            let rotated = rotation.apply_rows(data);
            pq.refine(&rotated, PQ_REFINE_ITERS)?;
            let mse = pq.mse(&rotated);
            if mse < best.0 {
                best = (mse, rotation.clone(), pq.clone());
            }
        }
        Ok(Self {
            rotation: best.1,
            pq: best.2,
        })
    }

    pub fn rotation(&self) -> &Matrix {
        &self.rotation
    }

    pub fn pq(&self) -> &ProductQuantizer {
        &self.pq
    }

    pub fn dim(&self) -> usize {
        self.pq.dim()
    }

    pub fn rotate(&self, x: &[f32]) -> Vec<f32> {
        self.rotation.apply(x)
    }

    pub fn encode(&self, x: &[f32]) -> Vec<u8> {
        self.pq.encode(&self.rotate(x))
    }

    pub fn decode(&self, code: &[u8]) -> Vec<f32> {
        self.rotation.apply_transpose(&self.pq.decode(code))
    }

    pub fn mse(&self, data: &[f32]) -> f64 {
        self.pq.mse(&self.rotation.apply_rows(data))
    }
}

fn rows_to_nalgebra(data: &[f32], dim: usize) -> DMatrix<f64> {
    let n = data.len() / dim;
    DMatrix::from_fn(n, dim, |r, c| data[r * dim + c] as f64)
}

/// Orthogonal `R` minimising `Σ ‖R·xᵢ − yᵢ‖²` for rows `xᵢ`, `yᵢ`.
fn procrustes(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Matrix> {
    let m = y.transpose() * x;
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::InvalidConfig("SVD failed during OPQ training".into())),
    };
    Ok(Matrix::from_nalgebra(&(u * v_t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Correlated, anisotropic Gaussian: a fixed mixing matrix applied to
    /// scaled standard normals.
    fn anisotropic(n: usize, dim: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mix = crate::linalg::random_rotation(dim, seed + 1);
        let mut out = Vec::with_capacity(n * dim);
        for _ in 0..n {
            let z: Vec<f32> = (0..dim)
                .map(|j| {
                    let s: f32 = StandardNormal.sample(&mut rng);
                    s * (4.0 / (1.0 + j as f32))
                })
                .collect();
            out.extend(mix.apply(&z));
        }
        out
    }

    #[test]
    fn zero_rounds_equals_plain_pq() {
        let data = anisotropic(500, 8, 1);
        let opq = OpqModel::train(&data, 8, 2, 16, 0, 25, 3).unwrap();
        let pq = ProductQuantizer::train(&data, 8, 2, 16, 25, 3).unwrap();
        assert_eq!(opq.rotation(), &Matrix::identity(8));
        assert_eq!(opq.pq(), &pq);
    }

    #[test]
    fn rotation_stays_orthonormal_every_round() {
        let data = anisotropic(500, 8, 2);
        for rounds in 1..=4 {
            let opq = OpqModel::train(&data, 8, 2, 16, rounds, 25, 3).unwrap();
            assert!(opq.rotation().orthonormality_error() < 1e-4);
        }
    }

    #[test]
    fn opq_is_no_worse_than_pq_on_training_set() {
        let data = anisotropic(1000, 16, 4);
        let pq = ProductQuantizer::train(&data, 16, 4, 16, 25, 5).unwrap();
        let opq = OpqModel::train(&data, 16, 4, 16, 10, 25, 5).unwrap();
        assert!(opq.mse(&data) <= pq.mse(&data) + 1e-6, "{} vs {}", opq.mse(&data), pq.mse(&data));
    }

    #[test]
    fn decode_inverts_rotation() {
        let data = anisotropic(400, 8, 6);
        let opq = OpqModel::train(&data, 8, 8, 256.min(400), 3, 10, 0).unwrap();
        // with 8 one-dimensional sub-quantizers of 256 entries error is tiny
        assert!(opq.mse(&data) < 1e-2);
    }
}
