use serde::{Deserialize, Serialize};

use super::dataset::{Payload, TimestampedDataset};
use crate::linalg::Matrix;
use crate::{Error, Result};

pub use crate::linalg::random_rotation;

/// Global uniform 8-bit quantizer: `v ≈ offset + scale * code`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarQuantizer {
    pub scale: f32,
    pub offset: f32,
}

impl ScalarQuantizer {
    /// Fits the quantizer to the range of `values`. A constant input gets the
    /// sentinel `scale = 1` so that every value encodes to 0.
    pub fn fit(values: &[f32]) -> Self {
        let (lo, hi) = values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if values.is_empty() {
            return Self { scale: 1.0, offset: 0.0 };
        }
        let range = hi - lo;
        if range > 0.0 {
            Self {
                scale: range / 255.0,
                offset: lo,
            }
        } else {
            Self { scale: 1.0, offset: lo }
        }
    }

    #[inline]
    pub fn quantize(&self, v: f32) -> u8 {
        ((v - self.offset) / self.scale).round().clamp(0.0, 255.0) as u8
    }

    #[inline]
    pub fn dequantize(&self, code: u8) -> f32 {
        self.offset + self.scale * code as f32
    }
}

/// Quantizes every entry of a full-precision dataset to one byte.
pub fn scalar_quantize_8bit(ds: &TimestampedDataset) -> Result<(TimestampedDataset, ScalarQuantizer)> {
    let values = ds
        .f32_vectors()
        .ok_or_else(|| Error::InvalidDataset("dataset is already quantized".into()))?;
    let sq = ScalarQuantizer::fit(values);
    let codes = values.iter().map(|&v| sq.quantize(v)).collect();
    let out = TimestampedDataset::with_payload(
        ds.dim(),
        Payload::U8 {
            codes,
            scale: sq.scale,
            offset: sq.offset,
        },
        ds.timestamps().to_vec(),
        ds.ids().to_vec(),
    )?;
    Ok((out, sq))
}

/// Applies `rotation` to every vector (dequantizing first if needed).
pub fn rotate_dataset(ds: &TimestampedDataset, rotation: &Matrix) -> Result<TimestampedDataset> {
    if rotation.cols() != ds.dim() || rotation.rows() != ds.dim() {
        return Err(Error::DimensionMismatch {
            expected: ds.dim(),
            got: rotation.cols(),
        });
    }
    let rotated = rotation.apply_rows(&ds.to_f32());
    TimestampedDataset::new(ds.dim(), rotated, ds.timestamps().to_vec(), ds.ids().to_vec())
}
