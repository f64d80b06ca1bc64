use std::borrow::Cow;
use std::collections::{HashMap, HashSet};
use std::ops::Range;

use crate::{Error, Result};

/// Vector payload: full-precision rows, or 8-bit codes with one global
/// dequantization pair.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U8 { codes: Vec<u8>, scale: f32, offset: f32 },
}

/// A time-ordered collection of vectors with unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestampedDataset {
    dim: usize,
    ids: Vec<u64>,
    timestamps: Vec<i64>,
    payload: Payload,
}

impl TimestampedDataset {
    pub fn new(dim: usize, vectors: Vec<f32>, timestamps: Vec<i64>, ids: Vec<u64>) -> Result<Self> {
        Self::with_payload(dim, Payload::F32(vectors), timestamps, ids)
    }

    pub fn with_payload(
        dim: usize,
        payload: Payload,
        timestamps: Vec<i64>,
        ids: Vec<u64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDataset("dimension must be positive".into()));
        }
        let n = ids.len();
        if timestamps.len() != n {
            return Err(Error::InvalidDataset(format!(
                "{} timestamps for {} ids",
                timestamps.len(),
                n
            )));
        }
        let payload_len = match &payload {
            Payload::F32(v) => v.len(),
            Payload::U8 { codes, .. } => codes.len(),
        };
        if payload_len != n * dim {
            return Err(Error::InvalidDataset(format!(
                "payload has {payload_len} entries, expected {n}x{dim}"
            )));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::InvalidDataset(format!(
                "timestamps decrease at row {}",
                i + 1
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        let dups: Vec<u64> = ids.iter().copied().filter(|id| !seen.insert(*id)).collect();
        if !dups.is_empty() {
            return Err(Error::InvalidDataset(format!("duplicate ids {dups:?}")));
        }
        Ok(Self {
            dim,
            ids,
            timestamps,
            payload,
        })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            timestamps: Vec::new(),
            payload: Payload::F32(Vec::new()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self.payload, Payload::U8 { .. })
    }

    /// Full-precision rows, if the payload is not quantized.
    pub fn f32_vectors(&self) -> Option<&[f32]> {
        match &self.payload {
            Payload::F32(v) => Some(v),
            Payload::U8 { .. } => None,
        }
    }

    /// Row `i`, dequantized if needed.
    pub fn vector(&self, i: usize) -> Cow<'_, [f32]> {
        let d = self.dim;
        match &self.payload {
            Payload::F32(v) => Cow::Borrowed(&v[i * d..(i + 1) * d]),
            Payload::U8 {
                codes,
                scale,
                offset,
            } => Cow::Owned(
                codes[i * d..(i + 1) * d]
                    .iter()
                    .map(|&c| offset + scale * c as f32)
                    .collect(),
            ),
        }
    }

    /// All rows as f32 (borrowed when the payload already is f32).
    pub fn to_f32(&self) -> Cow<'_, [f32]> {
        match &self.payload {
            Payload::F32(v) => Cow::Borrowed(v),
            Payload::U8 {
                codes,
                scale,
                offset,
            } => Cow::Owned(codes.iter().map(|&c| offset + scale * c as f32).collect()),
        }
    }

    /// Copy of a contiguous row range (keeps the payload kind).
    pub fn slice_rows(&self, rows: Range<usize>) -> Self {
        let d = self.dim;
        let payload = match &self.payload {
            Payload::F32(v) => Payload::F32(v[rows.start * d..rows.end * d].to_vec()),
            Payload::U8 {
                codes,
                scale,
                offset,
            } => Payload::U8 {
                codes: codes[rows.start * d..rows.end * d].to_vec(),
                scale: *scale,
                offset: *offset,
            },
        };
        Self {
            dim: d,
            ids: self.ids[rows.clone()].to_vec(),
            timestamps: self.timestamps[rows].to_vec(),
            payload,
        }
    }

    /// Copy of arbitrary rows, as f32. Rows must be given in non-decreasing
    /// timestamp order for the result to be valid.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut vectors = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            vectors.extend_from_slice(&self.vector(r));
        }
        Self::new(
            self.dim,
            vectors,
            rows.iter().map(|&r| self.timestamps[r]).collect(),
            rows.iter().map(|&r| self.ids[r]).collect(),
        )
    }

    /// Rows whose timestamp lies in `[start, end)`.
    pub fn rows_in(&self, start: i64, end: i64) -> Range<usize> {
        let lo = self.timestamps.partition_point(|&t| t < start);
        let hi = self.timestamps.partition_point(|&t| t < end).max(lo);
        lo..hi
    }

    /// Builds an id-addressable view for use as an external vector store.
    pub fn lookup(&self) -> IdLookup<'_> {
        IdLookup::new(self)
    }
}

/// External store of original vectors addressed by id.
pub trait VectorStore: Sync {
    fn dim(&self) -> usize;
    fn vector(&self, id: u64) -> Option<Cow<'_, [f32]>>;
}

/// [`VectorStore`] over a dataset.
pub struct IdLookup<'a> {
    dataset: &'a TimestampedDataset,
    rows: RowMap,
}

enum RowMap {
    // ids[i] == first + i for every row
    Contiguous { first: u64 },
    Hashed(HashMap<u64, usize>),
}

impl<'a> IdLookup<'a> {
    fn new(dataset: &'a TimestampedDataset) -> Self {
        let ids = dataset.ids();
        let contiguous = ids
            .first()
            .map(|&first| ids.iter().enumerate().all(|(i, &id)| id == first + i as u64));
        let rows = match contiguous {
            Some(true) => RowMap::Contiguous { first: ids[0] },
            Some(false) => RowMap::Hashed(ids.iter().enumerate().map(|(i, &id)| (id, i)).collect()),
            None => RowMap::Hashed(HashMap::new()),
        };
        Self { dataset, rows }
    }

    pub fn row_of(&self, id: u64) -> Option<usize> {
        match &self.rows {
            RowMap::Contiguous { first } => {
                let off = id.checked_sub(*first)? as usize;
                (off < self.dataset.len()).then_some(off)
            }
            RowMap::Hashed(map) => map.get(&id).copied(),
        }
    }
}

impl VectorStore for IdLookup<'_> {
    fn dim(&self) -> usize {
        self.dataset.dim()
    }

    fn vector(&self, id: u64) -> Option<Cow<'_, [f32]>> {
        self.row_of(id).map(|r| self.dataset.vector(r))
    }
}

/// In-memory store, mostly for tests and small tools.
#[derive(Debug, Clone, Default)]
pub struct MapStore {
    dim: usize,
    vectors: HashMap<u64, Vec<f32>>,
}

impl MapStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn insert(&mut self, id: u64, v: Vec<f32>) {
        assert_eq!(v.len(), self.dim);
        self.vectors.insert(id, v);
    }
}

impl VectorStore for MapStore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn vector(&self, id: u64) -> Option<Cow<'_, [f32]>> {
        self.vectors.get(&id).map(|v| Cow::Borrowed(v.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unsorted_and_duplicate_rows() {
        let err = TimestampedDataset::new(1, vec![0.0, 1.0], vec![5, 4], vec![0, 1]);
        assert!(err.is_err());
        let err = TimestampedDataset::new(1, vec![0.0, 1.0], vec![4, 5], vec![7, 7]);
        assert!(err.is_err());
        let err = TimestampedDataset::new(2, vec![0.0, 1.0], vec![4, 5], vec![0, 1]);
        assert!(err.is_err());
    }

    #[test]
    fn lookup_handles_contiguous_and_sparse_ids() {
        let ds = TimestampedDataset::new(1, vec![1.0, 2.0, 3.0], vec![0, 0, 1], vec![10, 11, 12])
            .unwrap();
        let lk = ds.lookup();
        assert_eq!(lk.vector(11).unwrap().as_ref(), &[2.0]);
        assert!(lk.vector(9).is_none());
        assert!(lk.vector(13).is_none());

        let ds = TimestampedDataset::new(1, vec![1.0, 2.0], vec![0, 0], vec![5, 3]).unwrap();
        let lk = ds.lookup();
        assert_eq!(lk.vector(3).unwrap().as_ref(), &[2.0]);
    }

    #[test]
    fn rows_in_is_half_open() {
        let ds = TimestampedDataset::new(1, vec![0.0; 5], vec![0, 10, 10, 20, 30], (0..5).collect())
            .unwrap();
        assert_eq!(ds.rows_in(10, 30), 1..4);
        assert_eq!(ds.rows_in(31, 40), 5..5);
        assert_eq!(ds.rows_in(-5, 0), 0..0);
    }
}
