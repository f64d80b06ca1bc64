//! Versioned IVF index.
//!
//! Every cell keeps a short history of its centroid. A posting records the
//! version it was encoded against, so residual codes stay decodable after
//! the centroid moves.

mod codec;
mod list;
mod search;
mod snapshot;

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use codec::{Codec, CodeBuf, CodeRef, CodecSpec};
pub use list::{InvertedList, Posting};
pub use search::{SearchBudget, SearchOutcome};
pub use snapshot::SNAPSHOT_MAGIC;

use crate::quantizers::{derive_seed, CoarseQuantizer, CoarseSpec, DEFAULT_KMEANS_ITERS};
use crate::{Error, Result};

pub const DEFAULT_MAX_VERSIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    #[default]
    Direct,
    Residual,
}

fn default_max_versions() -> usize {
    DEFAULT_MAX_VERSIONS
}

fn default_kmeans_iters() -> usize {
    DEFAULT_KMEANS_ITERS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexConfig {
    pub coarse: CoarseSpec,
    #[serde(default)]
    pub codec: CodecSpec,
    #[serde(default)]
    pub encoding: Encoding,
    #[serde(default = "default_max_versions")]
    pub max_versions: usize,
    #[serde(default = "default_kmeans_iters")]
    pub kmeans_iters: usize,
    /// Keep a reservoir of up to this many original vectors per cell.
    #[serde(default)]
    pub retain_per_cell: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl IndexConfig {
    pub fn new(coarse: CoarseSpec) -> Self {
        Self {
            coarse,
            codec: CodecSpec::Raw,
            encoding: Encoding::Direct,
            max_versions: DEFAULT_MAX_VERSIONS,
            kmeans_iters: DEFAULT_KMEANS_ITERS,
            retain_per_cell: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_versions == 0 {
            return Err(Error::InvalidConfig("max_versions must be at least 1".into()));
        }
        if self.coarse.n_cells() == 0 {
            return Err(Error::InvalidConfig("coarse quantizer needs at least one cell".into()));
        }
        if self.encoding == Encoding::Residual && matches!(self.coarse, CoarseSpec::Imi { .. }) {
            return Err(Error::ResidualUnsupported("IMI"));
        }
        if self.retain_per_cell == Some(0) {
            return Err(Error::InvalidConfig("retain_per_cell must be at least 1".into()));
        }
        Ok(())
    }
}

/// Uniform sample of the original vectors that landed in one cell.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Reservoir {
    seen: u64,
    ids: Vec<u64>,
    vectors: Vec<f32>,
}

impl Reservoir {
    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn offer(&mut self, id: u64, x: &[f32], cap: usize, rng: &mut ChaCha8Rng) {
        self.seen += 1;
        let dim = x.len();
        if self.ids.len() < cap {
            self.ids.push(id);
            self.vectors.extend_from_slice(x);
        } else {
            let j = rng.random_range(0..self.seen) as usize;
            if j < cap {
                self.ids[j] = id;
                self.vectors[j * dim..(j + 1) * dim].copy_from_slice(x);
            }
        }
    }

    fn forget(&mut self, id: u64, dim: usize) {
        if let Some(i) = self.ids.iter().position(|&x| x == id) {
            let last = self.ids.len() - 1;
            self.ids.swap_remove(i);
            if i != last {
                self.vectors.copy_within(last * dim..(last + 1) * dim, i * dim);
            }
            self.vectors.truncate(last * dim);
        }
    }

    fn clear(&mut self) {
        *self = Self::default();
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    config: IndexConfig,
    coarse: CoarseQuantizer,
    codec: Codec,
    lists: Vec<InvertedList>,
    directory: HashMap<u64, (u32, u32)>,
    retained: Option<Vec<Reservoir>>,
    /// Counts mutations; feeds the seeds of randomized maintenance.
    epoch: u64,
}

impl IvfIndex {
    /// Trains the coarse quantizer and the codec on `train` (row-major,
    /// `dim` columns). The codec sees residuals under residual encoding.
    pub fn build(train: &[f32], dim: usize, config: IndexConfig) -> Result<Self> {
        config.validate()?;
        if dim == 0 || train.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: train.len(),
            });
        }
        let coarse = CoarseQuantizer::train(&config.coarse, train, dim, config.kmeans_iters, derive_seed(config.seed, 1))?;
        let codec_input = match config.encoding {
            Encoding::Direct => std::borrow::Cow::Borrowed(train),
            Encoding::Residual => {
                let cells = coarse.assign_batch(train);
                let mut res = train.to_vec();
                for (r, &c) in res.chunks_exact_mut(dim).zip(&cells) {
                    let cent = coarse.centroid(c as usize);
                    r.iter_mut().zip(&cent).for_each(|(a, b)| *a -= b);
                }
                std::borrow::Cow::Owned(res)
            }
        };
        let codec = Codec::train(&config.codec, &codec_input, dim, config.kmeans_iters, derive_seed(config.seed, 2))?;
        Ok(Self::from_parts(config, coarse, codec))
    }

    /// Assembles an empty index around already trained models.
    pub fn from_parts(config: IndexConfig, coarse: CoarseQuantizer, codec: Codec) -> Self {
        let lists = (0..coarse.n_cells())
            .map(|c| InvertedList::new(coarse.centroid(c), codec.empty_buf()))
            .collect();
        let retained = config
            .retain_per_cell
            .map(|_| vec![Reservoir::default(); coarse.n_cells()]);
        Self {
            config,
            coarse,
            codec,
            lists,
            directory: HashMap::new(),
            retained,
            epoch: 0,
        }
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.coarse.dim()
    }

    pub fn coarse(&self) -> &CoarseQuantizer {
        &self.coarse
    }

    pub fn codec(&self) -> &Codec {
        &self.codec
    }

    pub fn encoding(&self) -> Encoding {
        self.config.encoding
    }

    pub fn n_lists(&self) -> usize {
        self.lists.len()
    }

    pub fn list(&self, cell: usize) -> &InvertedList {
        &self.lists[cell]
    }

    pub fn lists(&self) -> &[InvertedList] {
        &self.lists
    }

    pub fn list_sizes(&self) -> Vec<usize> {
        self.lists.iter().map(InvertedList::len).collect()
    }

    pub fn len(&self) -> usize {
        self.directory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directory.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.directory.contains_key(&id)
    }

    /// `(cell, offset)` of a live id.
    pub fn location(&self, id: u64) -> Option<(usize, usize)> {
        self.directory.get(&id).map(|&(c, o)| (c as usize, o as usize))
    }

    /// Live ids in ascending order.
    pub fn live_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.directory.keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    pub fn retained(&self, cell: usize) -> Option<&Reservoir> {
        self.retained.as_ref().map(|r| &r[cell])
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Inserts a batch. Rejected as a whole if any id is already present
    /// or repeated within the batch.
    pub fn add(&mut self, ids: &[u64], vectors: &[f32]) -> Result<usize> {
        let dim = self.dim();
        if vectors.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                got: vectors.len(),
            });
        }
        let mut seen = HashSet::with_capacity(ids.len());
        let mut offenders: Vec<u64> = ids
            .iter()
            .filter(|&&id| self.directory.contains_key(&id) || !seen.insert(id))
            .copied()
            .collect();
        if !offenders.is_empty() {
            offenders.sort_unstable();
            offenders.dedup();
            return Err(Error::DuplicateIds(offenders));
        }
        if ids.is_empty() {
            return Ok(0);
        }
        let cells = self.coarse.assign_batch(vectors);
        let codes = self.encode_for_cells(vectors, &cells);
        self.epoch += 1;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, self.epoch << 8 | 3));
        for (i, (&id, &cell)) in ids.iter().zip(&cells).enumerate() {
            let cell = cell as usize;
            self.insert_posting(cell, id, codes.get(i));
            if let (Some(res), Some(cap)) = (self.retained.as_mut(), self.config.retain_per_cell) {
                res[cell].offer(id, &vectors[i * dim..(i + 1) * dim], cap, &mut rng);
            }
        }
        Ok(ids.len())
    }

    fn encode_for_cells(&self, vectors: &[f32], cells: &[u32]) -> CodeBuf {
        match self.config.encoding {
            Encoding::Direct => self.codec.encode_rows(vectors, None),
            Encoding::Residual => {
                let offsets: Vec<f32> = cells
                    .iter()
                    .flat_map(|&c| self.lists[c as usize].current_centroid().iter().copied())
                    .collect();
                self.codec.encode_rows(vectors, Some(&offsets))
            }
        }
    }

    fn insert_posting(&mut self, cell: usize, id: u64, code: CodeRef<'_>) {
        let list = &mut self.lists[cell];
        let v = list.current_version();
        list.push(id, v, code);
        self.directory.insert(id, (cell as u32, (list.len() - 1) as u32));
    }

    /// Deletes the given ids; unknown ids are skipped.
    pub fn remove(&mut self, ids: &[u64]) -> usize {
        let dim = self.dim();
        let mut removed = 0;
        let mut touched = HashSet::new();
        for &id in ids {
            let Some((cell, off)) = self.directory.remove(&id) else {
                continue;
            };
            let list = &mut self.lists[cell as usize];
            if let Some(moved) = list.swap_remove(off as usize) {
                self.directory.insert(moved, (cell, off));
            }
            if let Some(res) = self.retained.as_mut() {
                res[cell as usize].forget(id, dim);
            }
            touched.insert(cell as usize);
            removed += 1;
        }
        for cell in touched {
            self.lists[cell].gc_prefix();
        }
        if removed > 0 {
            self.epoch += 1;
        }
        removed
    }

    /// Decoded vector of a live id.
    pub fn reconstruct(&self, id: u64) -> Result<Vec<f32>> {
        let (cell, off) = self.location(id).ok_or(Error::UnknownId(id))?;
        Ok(self.reconstruct_at(cell, off))
    }

    pub(crate) fn reconstruct_at(&self, cell: usize, off: usize) -> Vec<f32> {
        let list = &self.lists[cell];
        let mut x = self.codec.decode(list.codes.get(off));
        if self.config.encoding == Encoding::Residual {
            let c = list.centroid(list.versions[off]).expect("posting version is live");
            x.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        }
        x
    }

    /// Checks directory/list agreement and version bookkeeping.
    pub fn audit(&self) -> std::result::Result<(), String> {
        let total: usize = self.lists.iter().map(InvertedList::len).sum();
        if total != self.directory.len() {
            return Err(format!("lists hold {total} postings, directory {}", self.directory.len()));
        }
        if self.lists.len() != self.coarse.n_cells() {
            return Err("list count differs from coarse cell count".into());
        }
        for (cell, list) in self.lists.iter().enumerate() {
            if list.history.is_empty() || list.history.len() > self.config.max_versions.max(1) {
                return Err(format!("cell {cell}: history length {}", list.history.len()));
            }
            if list.version_counts.len() != list.history.len() {
                return Err(format!("cell {cell}: version count table out of sync"));
            }
            let mut counts = vec![0usize; list.history.len()];
            for (off, (&id, &v)) in list.ids.iter().zip(&list.versions).enumerate() {
                if self.directory.get(&id) != Some(&(cell as u32, off as u32)) {
                    return Err(format!("cell {cell}: id {id} at {off} not in directory"));
                }
                match v.checked_sub(list.base_version).map(usize::from) {
                    Some(i) if i < counts.len() => counts[i] += 1,
                    _ => return Err(format!("cell {cell}: id {id} has dead version {v}")),
                }
            }
            if counts != list.version_counts {
                return Err(format!("cell {cell}: version counts {:?} vs {counts:?}", list.version_counts));
            }
            if list.history.len() > 1 && counts[0] == 0 {
                return Err(format!("cell {cell}: unreferenced oldest version kept"));
            }
            if list.codes.len() != list.ids.len() {
                return Err(format!("cell {cell}: code count mismatch"));
            }
        }
        Ok(())
    }

    // ---- maintenance hooks used by the update strategies ----

    pub(crate) fn bump_epoch(&mut self) -> u64 {
        self.epoch += 1;
        self.epoch
    }

    /// Moves a flat centroid, recording the new value as a fresh version.
    /// Returns the number of postings re-encoded to respect `max_versions`.
    pub(crate) fn push_centroid_version(&mut self, cell: usize, centroid: Vec<f32>) -> Result<usize> {
        self.coarse.set_centroid(cell, &centroid)?;
        self.lists[cell].push_version(centroid);
        let mut reencoded = 0;
        while self.lists[cell].history.len() > self.config.max_versions {
            reencoded += self.retire_oldest(cell);
        }
        Ok(reencoded)
    }

    fn retire_oldest(&mut self, cell: usize) -> usize {
        let residual = self.config.encoding == Encoding::Residual;
        let list = &self.lists[cell];
        let oldest = list.base_version;
        let mut fresh = Vec::new();
        if residual {
            let newest = list.current_centroid();
            for off in (0..list.len()).filter(|&o| list.versions[o] == oldest) {
                let x = self.reconstruct_at(cell, off);
                let r: Vec<f32> = x.iter().zip(newest).map(|(a, b)| a - b).collect();
                fresh.push((off, self.codec.encode(&r)));
            }
        }
        let list = &mut self.lists[cell];
        list.retire_oldest();
        for (off, code) in &fresh {
            list.codes.set(*off, code.get(0));
        }
        fresh.len()
    }

    /// Empties `cells`, gives them the rows of `centroids` as version-0
    /// centroids and re-inserts `members` among them only.
    pub(crate) fn replace_cells(
        &mut self,
        cells: &[usize],
        centroids: &[f32],
        ids: &[u64],
        vectors: &[f32],
    ) -> Result<usize> {
        let dim = self.dim();
        for (j, &cell) in cells.iter().enumerate() {
            let c = centroids[j * dim..(j + 1) * dim].to_vec();
            self.coarse.set_centroid(cell, &c)?;
            for id in &self.lists[cell].ids {
                self.directory.remove(id);
            }
            self.lists[cell].reset(c);
            if let Some(res) = self.retained.as_mut() {
                res[cell].clear();
            }
        }
        let local = crate::quantizers::assign(vectors, dim, centroids)?;
        let targets: Vec<u32> = local.iter().map(|&l| cells[l as usize] as u32).collect();
        let codes = self.encode_for_cells(vectors, &targets);
        let epoch = self.bump_epoch();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, epoch << 8 | 3));
        for (i, (&id, &cell)) in ids.iter().zip(&targets).enumerate() {
            self.insert_posting(cell as usize, id, codes.get(i));
            if let (Some(res), Some(cap)) = (self.retained.as_mut(), self.config.retain_per_cell) {
                res[cell as usize].offer(id, &vectors[i * dim..(i + 1) * dim], cap, &mut rng);
            }
        }
        Ok(ids.len())
    }

    /// Swaps in new models and drops all postings.
    pub(crate) fn reset_models(&mut self, coarse: CoarseQuantizer, codec: Option<Codec>) {
        let codec = codec.unwrap_or_else(|| self.codec.clone());
        let epoch = self.epoch;
        *self = Self::from_parts(self.config.clone(), coarse, codec);
        self.epoch = epoch + 1;
    }
}
