//! Product quantization: independent k-means codebooks per sub-space, one
//! byte per sub-quantizer.

use serde::{Deserialize, Serialize};

use super::derive_seed;
use super::kmeans::{kmeans_refine, kmeans_train, nearest_centroid};
use crate::distance::l2_sq;
use crate::{Error, Result};

pub const MAX_PQ_ENTRIES: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductQuantizer {
    dim: usize,
    m: usize,
    ksub: usize,
    /// `m × ksub × dsub`, sub-quantizer major.
    codebooks: Vec<f32>,
}

impl ProductQuantizer {
    pub fn train(data: &[f32], dim: usize, m: usize, ksub: usize, iters: usize, seed: u64) -> Result<Self> {
        check_shape(dim, m, ksub)?;
        let n = data.len() / dim;
        if n < ksub {
            return Err(Error::InsufficientTrainingPoints { needed: ksub, got: n });
        }
        let dsub = dim / m;
        let mut codebooks = Vec::with_capacity(m * ksub * dsub);
        for sub in 0..m {
            let slice = subspace_rows(data, dim, sub, dsub);
            let model = kmeans_train(&slice, dsub, ksub, iters, derive_seed(seed, sub as u64))?;
            codebooks.extend_from_slice(model.centroids());
        }
        Ok(Self {
            dim,
            m,
            ksub,
            codebooks,
        })
    }

    /// Continues Lloyd iterations on `data` from the current codebooks.
    pub fn refine(&mut self, data: &[f32], iters: usize) -> Result<()> {
        let dsub = self.dsub();
        for sub in 0..self.m {
            let slice = subspace_rows(data, self.dim, sub, dsub);
            let model = kmeans_refine(&slice, dsub, self.sub_codebook(sub).to_vec(), iters)?;
            let start = sub * self.ksub * dsub;
            self.codebooks[start..start + self.ksub * dsub].copy_from_slice(model.centroids());
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn ksub(&self) -> usize {
        self.ksub
    }

    pub fn dsub(&self) -> usize {
        self.dim / self.m
    }

    pub fn code_size(&self) -> usize {
        self.m
    }

    pub fn sub_codebook(&self, sub: usize) -> &[f32] {
        let len = self.ksub * self.dsub();
        &self.codebooks[sub * len..(sub + 1) * len]
    }

    pub fn entry(&self, sub: usize, j: usize) -> &[f32] {
        let dsub = self.dsub();
        &self.sub_codebook(sub)[j * dsub..(j + 1) * dsub]
    }

    pub fn encode_into(&self, x: &[f32], code: &mut [u8]) {
        let dsub = self.dsub();
        for (sub, c) in code.iter_mut().enumerate().take(self.m) {
            let (j, _) = nearest_centroid(&x[sub * dsub..(sub + 1) * dsub], self.sub_codebook(sub), dsub);
            *c = j as u8;
        }
    }

    pub fn encode(&self, x: &[f32]) -> Vec<u8> {
        let mut code = vec![0u8; self.m];
        self.encode_into(x, &mut code);
        code
    }

    pub fn decode_into(&self, code: &[u8], out: &mut [f32]) {
        let dsub = self.dsub();
        for (sub, &c) in code.iter().enumerate().take(self.m) {
            out[sub * dsub..(sub + 1) * dsub].copy_from_slice(self.entry(sub, c as usize));
        }
    }

    pub fn decode(&self, code: &[u8]) -> Vec<f32> {
        let mut out = vec![0.0; self.dim];
        self.decode_into(code, &mut out);
        out
    }

    /// `table[sub * ksub + j] = ‖q_sub − codebook[sub][j]‖²`
    pub fn compute_lut_into(&self, q: &[f32], table: &mut [f32]) {
        let dsub = self.dsub();
        for sub in 0..self.m {
            let qs = &q[sub * dsub..(sub + 1) * dsub];
            for j in 0..self.ksub {
                table[sub * self.ksub + j] = l2_sq(qs, self.entry(sub, j));
            }
        }
    }

    pub fn compute_lut(&self, q: &[f32]) -> Vec<f32> {
        let mut t = vec![0.0; self.m * self.ksub];
        self.compute_lut_into(q, &mut t);
        t
    }

    /// Asymmetric distance: sum of one table entry per sub-quantizer.
    #[inline]
    pub fn adc(&self, table: &[f32], code: &[u8]) -> f32 {
        let mut acc = 0.0f32;
        for (row, &c) in table.chunks_exact(self.ksub).zip(code) {
            acc += row[c as usize];
        }
        acc
    }

    /// Mean squared reconstruction error over the rows of `data`.
    pub fn mse(&self, data: &[f32]) -> f64 {
        let n = data.len() / self.dim;
        let mut buf = vec![0.0; self.dim];
        let mut total = 0.0f64;
        for x in data.chunks_exact(self.dim) {
            self.decode_into(&self.encode(x), &mut buf);
            total += l2_sq(x, &buf) as f64;
        }
        total / n.max(1) as f64
    }
}

fn check_shape(dim: usize, m: usize, ksub: usize) -> Result<()> {
    if ksub == 0 || ksub > MAX_PQ_ENTRIES {
        return Err(Error::InvalidConfig(format!(
            "PQ needs 1..={MAX_PQ_ENTRIES} entries per sub-quantizer, got {ksub}"
        )));
    }
    if m == 0 || dim % m != 0 {
        return Err(Error::InvalidConfig(format!(
            "dimension {dim} is not divisible by {m} sub-quantizers"
        )));
    }
    Ok(())
}

fn subspace_rows(data: &[f32], dim: usize, sub: usize, dsub: usize) -> Vec<f32> {
    data.chunks_exact(dim)
        .flat_map(|x| x[sub * dsub..(sub + 1) * dsub].iter().copied())
        .collect()
}
