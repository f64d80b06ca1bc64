//! Vector codecs used for posting payloads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{dot, l2_sq};
use crate::quantizers::{OpqModel, PcaModel, ProductQuantizer, DEFAULT_OPQ_ITERS};
use crate::Result;

fn default_opq_iters() -> usize {
    DEFAULT_OPQ_ITERS
}

/// Which codec to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CodecSpec {
    #[default]
    Raw,
    Pca {
        d_out: usize,
    },
    Pq {
        m: usize,
        ksub: usize,
    },
    Opq {
        m: usize,
        ksub: usize,
        #[serde(default = "default_opq_iters")]
        outer_iters: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Codec {
    Raw { dim: usize },
    Pca(PcaModel),
    Pq(ProductQuantizer),
    Opq(OpqModel),
}

/// Borrowed posting payload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CodeRef<'a> {
    Float(&'a [f32]),
    Bytes(&'a [u8]),
}

/// Flat storage for fixed-width codes.
#[derive(Debug, Clone, PartialEq)]
pub enum CodeBuf {
    Float { width: usize, data: Vec<f32> },
    Bytes { width: usize, data: Vec<u8> },
}

impl CodeBuf {
    pub fn width(&self) -> usize {
        match self {
            CodeBuf::Float { width, .. } | CodeBuf::Bytes { width, .. } => *width,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            CodeBuf::Float { width, data } => data.len() / width,
            CodeBuf::Bytes { width, data } => data.len() / width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Size of one code on disk.
    pub fn code_bytes(&self) -> usize {
        match self {
            CodeBuf::Float { width, .. } => width * 4,
            CodeBuf::Bytes { width, .. } => *width,
        }
    }

    #[inline]
    pub fn get(&self, i: usize) -> CodeRef<'_> {
        match self {
            CodeBuf::Float { width, data } => CodeRef::Float(&data[i * width..(i + 1) * width]),
            CodeBuf::Bytes { width, data } => CodeRef::Bytes(&data[i * width..(i + 1) * width]),
        }
    }

    pub(crate) fn push(&mut self, code: CodeRef<'_>) {
        match (self, code) {
            (CodeBuf::Float { data, .. }, CodeRef::Float(c)) => data.extend_from_slice(c),
            (CodeBuf::Bytes { data, .. }, CodeRef::Bytes(c)) => data.extend_from_slice(c),
            _ => panic!("code kind does not match buffer"),
        }
    }

    pub(crate) fn set(&mut self, i: usize, code: CodeRef<'_>) {
        match (self, code) {
            (CodeBuf::Float { width, data }, CodeRef::Float(c)) => {
                data[i * *width..(i + 1) * *width].copy_from_slice(c)
            }
            (CodeBuf::Bytes { width, data }, CodeRef::Bytes(c)) => {
                data[i * *width..(i + 1) * *width].copy_from_slice(c)
            }
            _ => panic!("code kind does not match buffer"),
        }
    }

    pub(crate) fn swap_remove(&mut self, i: usize) {
        fn inner<T: Copy>(data: &mut Vec<T>, width: usize, i: usize) {
            let last = data.len() / width - 1;
            if i != last {
                data.copy_within(last * width..(last + 1) * width, i * width);
            }
            data.truncate(last * width);
        }
        match self {
            CodeBuf::Float { width, data } => inner(data, *width, i),
            CodeBuf::Bytes { width, data } => inner(data, *width, i),
        }
    }

    pub(crate) fn clear(&mut self) {
        match self {
            CodeBuf::Float { data, .. } => data.clear(),
            CodeBuf::Bytes { data, .. } => data.clear(),
        }
    }

    pub(crate) fn write_code(&self, i: usize, out: &mut Vec<u8>) {
        match self.get(i) {
            CodeRef::Float(c) => c.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            CodeRef::Bytes(c) => out.extend_from_slice(c),
        }
    }

    pub(crate) fn push_le_bytes(&mut self, bytes: &[u8]) {
        match self {
            CodeBuf::Float { data, .. } => data.extend(
                bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            ),
            CodeBuf::Bytes { data, .. } => data.extend_from_slice(bytes),
        }
    }
}

/// Query-side state for one (cell, version): either the transformed query
/// for float codes, or an ADC table for byte codes.
#[derive(Debug, Clone)]
pub(crate) enum Prepared {
    Float { t: Vec<f32>, bias: f32 },
    Table { table: Vec<f32>, ksub: usize },
}

impl Prepared {
    #[inline]
    pub(crate) fn distance(&self, code: CodeRef<'_>) -> f32 {
        match (self, code) {
            (Prepared::Float { t, bias }, CodeRef::Float(c)) => l2_sq(t, c) + bias,
            (Prepared::Table { table, ksub }, CodeRef::Bytes(c)) => adc(table, *ksub, c),
            _ => unreachable!("prepared query does not match code kind"),
        }
    }
}

#[inline]
pub(crate) fn adc(table: &[f32], ksub: usize, code: &[u8]) -> f32 {
    let mut acc = 0.0f32;
    for (row, &c) in table.chunks_exact(ksub).zip(code) {
        acc += row[c as usize];
    }
    acc
}

impl Codec {
    pub fn train(spec: &CodecSpec, data: &[f32], dim: usize, kmeans_iters: usize, seed: u64) -> Result<Self> {
        Ok(match *spec {
            CodecSpec::Raw => Codec::Raw { dim },
            CodecSpec::Pca { d_out } => Codec::Pca(PcaModel::train(data, dim, d_out)?),
            CodecSpec::Pq { m, ksub } => Codec::Pq(ProductQuantizer::train(data, dim, m, ksub, kmeans_iters, seed)?),
            CodecSpec::Opq { m, ksub, outer_iters } => {
                Codec::Opq(OpqModel::train(data, dim, m, ksub, outer_iters, kmeans_iters, seed)?)
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Codec::Raw { .. } => "raw",
            Codec::Pca(_) => "pca",
            Codec::Pq(_) => "pq",
            Codec::Opq(_) => "opq",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Codec::Raw { dim } => *dim,
            Codec::Pca(p) => p.dim_in(),
            Codec::Pq(p) => p.dim(),
            Codec::Opq(o) => o.dim(),
        }
    }

    pub fn empty_buf(&self) -> CodeBuf {
        match self {
            Codec::Raw { dim } => CodeBuf::Float {
                width: *dim,
                data: Vec::new(),
            },
            Codec::Pca(p) => CodeBuf::Float {
                width: p.dim_out(),
                data: Vec::new(),
            },
            Codec::Pq(p) => CodeBuf::Bytes {
                width: p.code_size(),
                data: Vec::new(),
            },
            Codec::Opq(o) => CodeBuf::Bytes {
                width: o.pq().code_size(),
                data: Vec::new(),
            },
        }
    }

    pub fn uses_tables(&self) -> bool {
        matches!(self, Codec::Pq(_) | Codec::Opq(_))
    }

    pub fn encode(&self, x: &[f32]) -> CodeBuf {
        let mut buf = self.empty_buf();
        self.encode_append(x, &mut buf);
        buf
    }

    fn encode_append(&self, x: &[f32], buf: &mut CodeBuf) {
        match (self, buf) {
            (Codec::Raw { .. }, CodeBuf::Float { data, .. }) => data.extend_from_slice(x),
            (Codec::Pca(p), CodeBuf::Float { data, .. }) => data.extend(p.apply(x)),
            (Codec::Pq(p), CodeBuf::Bytes { data, .. }) => data.extend(p.encode(x)),
            (Codec::Opq(o), CodeBuf::Bytes { data, .. }) => data.extend(o.encode(x)),
            _ => unreachable!("codec does not match buffer"),
        }
    }

    /// Encodes the rows of `data`, each after subtracting its row of
    /// `offsets` when given.
    pub(crate) fn encode_rows(&self, data: &[f32], offsets: Option<&[f32]>) -> CodeBuf {
        let dim = self.dim();
        let n = data.len() / dim;
        let parts: Vec<CodeBuf> = (0..n)
            .into_par_iter()
            .with_min_len(512)
            .fold(
                || self.empty_buf(),
                |mut buf, i| {
                    let x = &data[i * dim..(i + 1) * dim];
                    match offsets {
                        Some(o) => {
                            let r: Vec<f32> = x.iter().zip(&o[i * dim..(i + 1) * dim]).map(|(a, c)| a - c).collect();
                            self.encode_append(&r, &mut buf)
                        }
                        None => self.encode_append(x, &mut buf),
                    }
                    buf
                },
            )
            .collect();
        let mut out = self.empty_buf();
        for part in &parts {
            for i in 0..part.len() {
                out.push(part.get(i));
            }
        }
        out
    }

    /// Back to input space (without any residual centroid).
    pub fn decode(&self, code: CodeRef<'_>) -> Vec<f32> {
        match (self, code) {
            (Codec::Raw { .. }, CodeRef::Float(c)) => c.to_vec(),
            (Codec::Pca(p), CodeRef::Float(c)) => p.reconstruct(c),
            (Codec::Pq(p), CodeRef::Bytes(c)) => p.decode(c),
            (Codec::Opq(o), CodeRef::Bytes(c)) => o.decode(c),
            _ => unreachable!("codec does not match code kind"),
        }
    }

    /// `t` is the query relative to the centroid the codes were encoded
    /// against. Float distances equal the squared distance to the
    /// reconstruction; for PCA that adds the energy of `t − mean` lying
    /// outside the retained components.
    pub(crate) fn prepare(&self, t: &[f32]) -> Prepared {
        match self {
            Codec::Raw { .. } => Prepared::Float {
                t: t.to_vec(),
                bias: 0.0,
            },
            Codec::Pca(p) => {
                let u: Vec<f32> = t.iter().zip(p.mean()).map(|(a, m)| a - m).collect();
                let mut proj = vec![0.0; p.dim_out()];
                p.basis().apply_into(&u, &mut proj);
                let bias = (dot(&u, &u) - dot(&proj, &proj)).max(0.0);
                Prepared::Float { t: proj, bias }
            }
            Codec::Pq(p) => Prepared::Table {
                table: p.compute_lut(t),
                ksub: p.ksub(),
            },
            Codec::Opq(o) => Prepared::Table {
                table: o.pq().compute_lut(&o.rotate(t)),
                ksub: o.pq().ksub(),
            },
        }
    }
}
