use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::{Error, Result};

/// Principal component projection. `basis` rows are the components, sorted
/// by decreasing eigenvalue of the (population) covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    mean: Vec<f32>,
    basis: Matrix,
    eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn train(data: &[f32], dim: usize, d_out: usize) -> Result<Self> {
        if d_out == 0 || d_out > dim {
            return Err(Error::InvalidConfig(format!(
                "PCA output dimension {d_out} must lie in 1..={dim}"
            )));
        }
        let n = data.len() / dim;
        if n < dim {
            return Err(Error::InsufficientTrainingPoints { needed: dim, got: n });
        }
        let mut mean = vec![0f64; dim];
        for x in data.chunks_exact(dim) {
            for (m, &v) in mean.iter_mut().zip(x) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let mut cov = DMatrix::<f64>::zeros(dim, dim);
        let mut centered = vec![0f64; dim];
        for x in data.chunks_exact(dim) {
            for ((c, &v), m) in centered.iter_mut().zip(x).zip(&mean) {
                *c = v as f64 - m;
            }
            for r in 0..dim {
                let cr = centered[r];
                for c in r..dim {
                    cov[(r, c)] += cr * centered[c];
                }
            }
        }
        for r in 0..dim {
            for c in r..dim {
                let v = cov[(r, c)] / n as f64;
                cov[(r, c)] = v;
                cov[(c, r)] = v;
            }
        }

        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut basis = Vec::with_capacity(d_out * dim);
        let mut eigenvalues = Vec::with_capacity(d_out);
        for &k in order.iter().take(d_out) {
            let col = eig.eigenvectors.column(k);
            // deterministic sign: largest-magnitude entry positive
            let pivot = (0..dim)
                .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a)))
                .unwrap();
            let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
            basis.extend(col.iter().map(|v| (v * sign) as f32));
            eigenvalues.push(eig.eigenvalues[k].max(0.0));
        }
        Ok(Self {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            basis: Matrix::from_row_major(d_out, dim, basis),
            eigenvalues,
        })
    }

    pub fn dim_in(&self) -> usize {
        self.basis.cols()
    }

    pub fn dim_out(&self) -> usize {
        self.basis.rows()
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `basisᵀ-projection of (x − mean)`, written into `out`.
    pub fn apply_into(&self, x: &[f32], out: &mut [f32]) {
        let centered: Vec<f32> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        self.basis.apply_into(&centered, out);
    }

    pub fn apply(&self, x: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; self.dim_out()];
        self.apply_into(x, &mut out);
        out
    }

    /// Back-projection `mean + basis·code`.
    pub fn reconstruct(&self, code: &[f32]) -> Vec<f32> {
        let mut out = self.basis.apply_transpose(code);
        out.iter_mut().zip(&self.mean).for_each(|(o, m)| *o += m);
        out
    }
}
