//! Small dense-matrix helper used for rotations and projection bases.
//!
//! Decompositions are delegated to `nalgebra` in f64; the stored matrices are
//! f32 row-major so applying them to vectors stays cheap and allocation free.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(m[(r, c)] as f32);
            }
        }
        Self { rows, cols, data }
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| self.get(r, c) as f64)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out = self · x`
    pub fn apply_into(&self, x: &[f32], out: &mut [f32]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = crate::distance::dot(self.row(r), x);
        }
    }

    pub fn apply(&self, x: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; self.rows];
        self.apply_into(x, &mut out);
        out
    }

    /// `out = selfᵀ · x`
    pub fn apply_transpose_into(&self, x: &[f32], out: &mut [f32]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (r, &xr) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += a * xr;
            }
        }
    }

    pub fn apply_transpose(&self, x: &[f32]) -> Vec<f32> {
        let mut out = vec![0.0; self.cols];
        self.apply_transpose_into(x, &mut out);
        out
    }

    /// Applies the matrix to every row of a row-major batch.
    pub fn apply_rows(&self, data: &[f32]) -> Vec<f32> {
        let n = data.len() / self.cols;
        let mut out = vec![0.0; n * self.rows];
        for (x, o) in data.chunks_exact(self.cols).zip(out.chunks_exact_mut(self.rows)) {
            self.apply_into(x, o);
        }
        out
    }

    /// max |A·Aᵀ − I| over all entries (rows orthonormality).
    pub fn orthonormality_error(&self) -> f64 {
        let a = self.to_nalgebra();
        let g = &a * a.transpose();
        let mut worst = 0.0f64;
        for r in 0..g.nrows() {
            for c in 0..g.ncols() {
                let target = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((g[(r, c)] - target).abs());
            }
        }
        worst
    }

    pub fn determinant(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        self.to_nalgebra().determinant()
    }
}

/// Uniformly random orthonormal `dim × dim` matrix.
///
/// QR of a seeded standard-normal matrix with the sign of each column fixed
/// by the sign of the corresponding diagonal entry of R.
pub fn random_rotation(dim: usize, seed: u64) -> Matrix {
    assert!(dim >= 1, "rotation dimension must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..dim {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    Matrix::from_nalgebra(&q)
}
