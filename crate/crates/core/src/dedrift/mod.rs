//! Index maintenance under content drift.
//!
//! - `None` leaves the index alone.
//! - `Full` retrains the coarse quantizer on a sample of live vectors and
//!   re-adds everything.
//! - `Split` re-clusters the `k` largest cells together with enough of the
//!   smallest cells to keep the cell count constant.
//! - `Lazy` moves every centroid to the mean of its members without
//!   reassigning anything.
//! - `Hybrid` runs Lazy, then Split.

use std::borrow::Cow;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::index::{Codec, Encoding, IvfIndex};
use crate::quantizers::{assign, derive_seed, kmeans_train, CoarseQuantizer};
use crate::vecstore::VectorStore;
use crate::{Error, Result};

pub const DEFAULT_PER_CELL_CAP: usize = 32;
pub const DEFAULT_FULL_SAMPLE: usize = 65_536;

fn default_cap() -> usize {
    DEFAULT_PER_CELL_CAP
}

fn default_iters() -> usize {
    1
}

fn default_full_sample() -> usize {
    DEFAULT_FULL_SAMPLE
}

/// Where update strategies read vector values from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VectorSource {
    /// The uncompressed vectors, from an external store.
    #[default]
    Original,
    /// Decoded postings.
    Reconstructed,
    /// The per-cell samples the index retained at insertion time.
    TrainSubsample {
        #[serde(default = "default_cap")]
        per_cell_cap: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum UpdateStrategy {
    #[default]
    None,
    Full {
        #[serde(default = "default_full_sample")]
        train_sample_size: usize,
        #[serde(default)]
        retrain_codec: bool,
    },
    Split {
        #[serde(default)]
        k: Option<usize>,
        #[serde(default)]
        source: VectorSource,
    },
    Lazy {
        #[serde(default = "default_iters")]
        iters: usize,
        #[serde(default)]
        source: VectorSource,
    },
    Hybrid {
        #[serde(default)]
        k: Option<usize>,
        #[serde(default = "default_iters")]
        iters: usize,
        #[serde(default)]
        source: VectorSource,
    },
}

impl UpdateStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            UpdateStrategy::None => "none",
            UpdateStrategy::Full { .. } => "full",
            UpdateStrategy::Split { .. } => "split",
            UpdateStrategy::Lazy { .. } => "lazy",
            UpdateStrategy::Hybrid { .. } => "hybrid",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        let check_source = |s: &VectorSource| match s {
            VectorSource::TrainSubsample { per_cell_cap: 0 } => bad("per_cell_cap must be at least 1"),
            _ => Ok(()),
        };
        match self {
            UpdateStrategy::None => Ok(()),
            UpdateStrategy::Full { train_sample_size, .. } => {
                if *train_sample_size == 0 {
                    bad("train_sample_size must be at least 1")
                } else {
                    Ok(())
                }
            }
            UpdateStrategy::Split { k, source } => {
                if *k == Some(0) {
                    return bad("split k must be at least 1");
                }
                check_source(source)
            }
            UpdateStrategy::Lazy { iters, source } => {
                if *iters == 0 {
                    return bad("lazy iters must be at least 1");
                }
                check_source(source)
            }
            UpdateStrategy::Hybrid { k, iters, source } => {
                if *k == Some(0) || *iters == 0 {
                    return bad("hybrid k and iters must be at least 1");
                }
                check_source(source)
            }
        }
    }
}

/// Split size used when none is configured: 8 up to 4096 cells, 64 above.
pub fn default_split_k(n_cells: usize) -> usize {
    if n_cells <= 4096 {
        8
    } else {
        64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateReport {
    pub wall_time_s: f64,
    pub cells_retrained: usize,
    pub vectors_reassigned: usize,
    pub vectors_reencoded: usize,
}

impl UpdateReport {
    fn merged(self, other: UpdateReport) -> UpdateReport {
        UpdateReport {
            wall_time_s: self.wall_time_s + other.wall_time_s,
            cells_retrained: self.cells_retrained + other.cells_retrained,
            vectors_reassigned: self.vectors_reassigned + other.vectors_reassigned,
            vectors_reencoded: self.vectors_reencoded + other.vectors_reencoded,
        }
    }
}

/// Runs `strategy`; `store` supplies original vectors by id.
pub fn apply(index: &mut IvfIndex, strategy: &UpdateStrategy, store: Option<&dyn VectorStore>) -> Result<UpdateReport> {
    strategy.validate()?;
    let k_default = default_split_k(index.n_lists());
    match *strategy {
        UpdateStrategy::None => Ok(update_none(index)),
        UpdateStrategy::Full {
            train_sample_size,
            retrain_codec,
        } => {
            let store = store.ok_or_else(|| Error::SourceUnavailable("full rebuild needs the original vectors".into()))?;
            update_full(index, store, train_sample_size, retrain_codec)
        }
        UpdateStrategy::Split { k, source } => dedrift_split(index, k.unwrap_or(k_default), source, store),
        UpdateStrategy::Lazy { iters, source } => dedrift_lazy(index, iters, source, store),
        UpdateStrategy::Hybrid { k, iters, source } => dedrift_hybrid(index, k.unwrap_or(k_default), iters, source, store),
    }
}

pub fn update_none(_index: &IvfIndex) -> UpdateReport {
    let start = Instant::now();
    UpdateReport {
        wall_time_s: start.elapsed().as_secs_f64(),
        ..Default::default()
    }
}

fn fetch<'a>(store: &'a dyn VectorStore, id: u64) -> Result<Cow<'a, [f32]>> {
    store
        .vector(id)
        .ok_or_else(|| Error::SourceUnavailable(format!("id {id} missing from the vector store")))
}

fn check_store_dim(index: &IvfIndex, store: &dyn VectorStore) -> Result<()> {
    if store.dim() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            got: store.dim(),
        });
    }
    Ok(())
}

/// Retrains the coarse quantizer (and optionally the codec) on a uniform
/// sample of the live vectors, then re-adds every vector.
pub fn update_full(
    index: &mut IvfIndex,
    store: &dyn VectorStore,
    train_sample_size: usize,
    retrain_codec: bool,
) -> Result<UpdateReport> {
    let start = Instant::now();
    check_store_dim(index, store)?;
    let dim = index.dim();
    let ids = index.live_ids();
    let mut vectors = Vec::with_capacity(ids.len() * dim);
    for &id in &ids {
        vectors.extend_from_slice(&fetch(store, id)?);
    }
    let seed = derive_seed(index.config().seed, index.epoch() << 8 | 5);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_sample = train_sample_size.min(ids.len());
    let mut rows = sample(&mut rng, ids.len(), n_sample).into_vec();
    rows.sort_unstable();
    let train: Vec<f32> = rows
        .iter()
        .flat_map(|&r| vectors[r * dim..(r + 1) * dim].iter().copied())
        .collect();
    let cfg = index.config().clone();
    let coarse = CoarseQuantizer::train(&cfg.coarse, &train, dim, cfg.kmeans_iters, derive_seed(seed, 1))?;
    let codec = if retrain_codec {
        let input = match cfg.encoding {
            Encoding::Direct => train,
            Encoding::Residual => {
                let cells = coarse.assign_batch(&train);
                let mut res = train;
                for (r, &c) in res.chunks_exact_mut(dim).zip(&cells) {
                    let cent = coarse.centroid(c as usize);
                    r.iter_mut().zip(&cent).for_each(|(a, b)| *a -= b);
                }
                res
            }
        };
        Some(Codec::train(&cfg.codec, &input, dim, cfg.kmeans_iters, derive_seed(seed, 2))?)
    } else {
        None
    };
    let n_cells = coarse.n_cells();
    index.reset_models(coarse, codec);
    index.add(&ids, &vectors)?;
    Ok(UpdateReport {
        wall_time_s: start.elapsed().as_secs_f64(),
        cells_retrained: n_cells,
        vectors_reassigned: ids.len(),
        vectors_reencoded: ids.len(),
    })
}

fn require_flat(index: &IvfIndex, what: &str) -> Result<()> {
    match index.coarse() {
        CoarseQuantizer::Flat(_) => Ok(()),
        other => Err(Error::InvalidConfig(format!(
            "{what} needs a flat coarse quantizer, index uses {}",
            other.variant_name()
        ))),
    }
}

/// Member vectors of one cell according to `source`.
fn cell_vectors(
    index: &IvfIndex,
    cell: usize,
    source: VectorSource,
    store: Option<&dyn VectorStore>,
) -> Result<Vec<f32>> {
    let list = index.list(cell);
    let dim = index.dim();
    let mut out = Vec::with_capacity(list.len() * dim);
    match source {
        VectorSource::Original => {
            let store = store.ok_or_else(|| Error::SourceUnavailable("no original vector store given".into()))?;
            for &id in list.ids() {
                out.extend_from_slice(&fetch(store, id)?);
            }
        }
        VectorSource::Reconstructed => {
            for off in 0..list.len() {
                out.extend(index.reconstruct_at(cell, off));
            }
        }
        VectorSource::TrainSubsample { per_cell_cap } => {
            let res = index.retained(cell).ok_or_else(|| {
                Error::SourceUnavailable("index keeps no per-cell samples (set retain_per_cell)".into())
            })?;
            let n = res.len().min(per_cell_cap);
            out.extend_from_slice(&res.vectors()[..n * dim]);
        }
    }
    Ok(out)
}

fn mean_of(rows: &[f32], dim: usize) -> Option<Vec<f32>> {
    let n = rows.len() / dim;
    if n == 0 {
        return None;
    }
    let mut acc = vec![0f64; dim];
    for x in rows.chunks_exact(dim) {
        acc.iter_mut().zip(x).for_each(|(a, &v)| *a += v as f64);
    }
    Some(acc.into_iter().map(|a| (a / n as f64) as f32).collect())
}

/// Moves every non-empty cell's centroid to the mean of its members'
/// source vectors. Postings never change cell. With `iters > 1` the extra
/// rounds are warm-started Lloyd steps over the pooled source vectors: they
/// are reassigned to the moved centroids and the means recomputed, while
/// the postings still stay where they are. Either every centroid moves or,
/// on error, none does.
pub fn dedrift_lazy(
    index: &mut IvfIndex,
    iters: usize,
    source: VectorSource,
    store: Option<&dyn VectorStore>,
) -> Result<UpdateReport> {
    let start = Instant::now();
    require_flat(index, "lazy update")?;
    if iters == 0 {
        return Err(Error::InvalidConfig("lazy iters must be at least 1".into()));
    }
    if let (VectorSource::Original, Some(s)) = (source, store) {
        check_store_dim(index, s)?;
    }
    let dim = index.dim();
    let k = index.n_lists();
    let per_cell: Vec<Vec<f32>> = (0..k)
        .into_par_iter()
        .map(|cell| {
            if index.list(cell).is_empty() {
                Ok(Vec::new())
            } else {
                cell_vectors(index, cell, source, store)
            }
        })
        .collect::<Result<_>>()?;

    let mut centroids: Vec<f32> = (0..k).flat_map(|c| index.list(c).current_centroid().to_vec()).collect();
    let mut moved = vec![false; k];
    for (cell, rows) in per_cell.iter().enumerate() {
        if let Some(m) = mean_of(rows, dim) {
            centroids[cell * dim..(cell + 1) * dim].copy_from_slice(&m);
            moved[cell] = true;
        }
    }
    if iters > 1 {
        let pooled: Vec<f32> = per_cell.concat();
        for _ in 1..iters {
            let labels = assign(&pooled, dim, &centroids)?;
            let mut sums = vec![0f64; k * dim];
            let mut counts = vec![0usize; k];
            for (x, &l) in pooled.chunks_exact(dim).zip(&labels) {
                let l = l as usize;
                counts[l] += 1;
                sums[l * dim..(l + 1) * dim].iter_mut().zip(x).for_each(|(s, &v)| *s += v as f64);
            }
            for c in 0..k {
                if counts[c] > 0 && moved[c] {
                    for j in 0..dim {
                        centroids[c * dim + j] = (sums[c * dim + j] / counts[c] as f64) as f32;
                    }
                }
            }
        }
    }

    let mut report = UpdateReport::default();
    for cell in (0..k).filter(|&c| moved[c]) {
        report.vectors_reencoded += index.push_centroid_version(cell, centroids[cell * dim..(cell + 1) * dim].to_vec())?;
        report.cells_retrained += 1;
    }
    index.bump_epoch();
    report.wall_time_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Which cells a split touches and how many centroids it trains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    /// The `k` largest cells, largest first.
    pub largest: Vec<usize>,
    /// The donor cells, smallest first.
    pub smallest: Vec<usize>,
    pub median: usize,
    pub k2: usize,
}

impl SplitPlan {
    pub fn cells(&self) -> Vec<usize> {
        self.largest.iter().chain(&self.smallest).copied().collect()
    }
}

/// `μ` is the lower median of all list sizes and `k₂ = ⌈|B₁|/μ⌉`, kept
/// within `[k, K]`. Ties in size go to the lower cell id.
pub fn plan_split(sizes: &[usize], k: usize) -> Result<SplitPlan> {
    let n_cells = sizes.len();
    if k == 0 || k >= n_cells {
        return Err(Error::InvalidConfig(format!("split k={k} must lie in 1..{n_cells}")));
    }
    let mut sorted = sizes.to_vec();
    sorted.sort_unstable();
    let median = sorted[(n_cells - 1) / 2].max(1);

    let mut by_size: Vec<usize> = (0..n_cells).collect();
    by_size.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let largest: Vec<usize> = by_size[..k].to_vec();
    let b1: usize = largest.iter().map(|&c| sizes[c]).sum();
    let k2 = b1.div_ceil(median).clamp(k, n_cells);

    let mut rest: Vec<usize> = by_size[k..].to_vec();
    rest.sort_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(a.cmp(&b)));
    let smallest = rest[..k2 - k].to_vec();
    Ok(SplitPlan {
        largest,
        smallest,
        median,
        k2,
    })
}

/// Re-clusters the `k` largest cells together with `k₂ − k` of the smallest
/// ones; members are reassigned among the `k₂` new centroids only.
pub fn dedrift_split(
    index: &mut IvfIndex,
    k: usize,
    source: VectorSource,
    store: Option<&dyn VectorStore>,
) -> Result<UpdateReport> {
    let start = Instant::now();
    require_flat(index, "split")?;
    if let VectorSource::TrainSubsample { .. } = source {
        return Err(Error::SourceUnavailable(
            "split needs every member vector; retained samples are not enough".into(),
        ));
    }
    if let (VectorSource::Original, Some(s)) = (source, store) {
        check_store_dim(index, s)?;
    }
    let plan = checked_split_plan(index, k)?;
    let cells = plan.cells();
    let dim = index.dim();
    let mut ids = Vec::new();
    let mut vectors = Vec::new();
    for &cell in &cells {
        ids.extend_from_slice(index.list(cell).ids());
        vectors.extend(cell_vectors(index, cell, source, store)?);
    }
    let seed = derive_seed(index.config().seed, index.epoch() << 8 | 7);
    let model = kmeans_train(&vectors, dim, plan.k2, index.config().kmeans_iters, seed)?;
    let moved = index.replace_cells(&cells, model.centroids(), &ids, &vectors)?;
    Ok(UpdateReport {
        wall_time_s: start.elapsed().as_secs_f64(),
        cells_retrained: plan.k2,
        vectors_reassigned: moved,
        vectors_reencoded: moved,
    })
}

fn checked_split_plan(index: &IvfIndex, k: usize) -> Result<SplitPlan> {
    let sizes = index.list_sizes();
    let plan = plan_split(&sizes, k)?;
    let members: usize = plan.cells().iter().map(|&c| sizes[c]).sum();
    if members < plan.k2 {
        return Err(Error::InsufficientSplitVectors {
            vectors: members,
            cells: plan.k2,
        });
    }
    Ok(plan)
}

pub fn dedrift_hybrid(
    index: &mut IvfIndex,
    k: usize,
    iters: usize,
    source: VectorSource,
    store: Option<&dyn VectorStore>,
) -> Result<UpdateReport> {
    // lazy never moves postings, so the split can be vetted before anything changes
    require_flat(index, "hybrid")?;
    checked_split_plan(index, k)?;
    if let Some(s) = store {
        check_store_dim(index, s)?;
    }
    let lazy = dedrift_lazy(index, iters, source, store)?;
    let split_source = match source {
        // the retained samples only serve the centroid update
        VectorSource::TrainSubsample { .. } => VectorSource::Original,
        s => s,
    };
    let split = dedrift_split(index, k, split_source, store)?;
    Ok(lazy.merged(split))
}
