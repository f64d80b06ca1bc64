//! Sliding-window streaming benchmark.
//!
//! The index starts on the first `m` months. Each step removes the oldest
//! month, inserts the next one, optionally runs an update strategy, and then
//! evaluates queries drawn from the month after the window against exact
//! ground truth on the live contents.

mod report;

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::ops::Range;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{
    read_rows, report_emit, summarize, summarize_rows, summary_from_csv, to_rows, CsvRow, EmittedFiles, MaxGap, RunSummary,
    Summary, CSV_HEADER,
};

use crate::dedrift::{apply, UpdateReport, UpdateStrategy};
use crate::driftlab::{brute_force_knn, recall_at_k};
use crate::index::{IndexConfig, IvfIndex, SearchBudget};
use crate::quantizers::derive_seed;
use crate::vecstore::{
    generate_drift_stream, inject_constant_burst, period_partition, read_tds, DriftStreamConfig, Granularity,
    TimestampedDataset,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Retrain from scratch on the current window at every step.
    InDomain,
    /// Train once on the first window, then maintain with the strategy.
    #[default]
    OutOfDomain,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::InDomain => "in_domain",
            TrainMode::OutOfDomain => "out_of_domain",
        }
    }
}

/// A DCS budget: absolute, or a fraction of the live postings at each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Budget {
    Dcs(usize),
    Fraction { fraction: f64 },
}

impl Budget {
    pub fn resolve(self, n_live: usize) -> usize {
        match self {
            Budget::Dcs(d) => d,
            Budget::Fraction { fraction } => (fraction * n_live as f64).ceil() as usize,
        }
    }
}

/// Overwrite a share of one month with a constant vector before the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurstConfig {
    /// Month offset from the first month of the dataset.
    pub month: usize,
    pub fraction: f64,
    /// Value of every coordinate of the injected vector.
    pub value: f32,
    #[serde(default)]
    pub seed: u64,
}

fn default_update_every() -> usize {
    1
}
fn default_k() -> usize {
    10
}
fn default_n_queries() -> usize {
    10_000
}
fn default_train_sample() -> usize {
    65_536
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    /// A `.tds` file; exclusive with `synthetic`.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<DriftStreamConfig>,
    #[serde(default)]
    pub burst: Option<BurstConfig>,
    #[serde(default)]
    pub train_mode: TrainMode,
    /// Window length `m` in months.
    pub window: usize,
    #[serde(default = "default_update_every")]
    pub update_every: usize,
    /// Defaults to every step the data allows.
    #[serde(default)]
    pub n_steps: Option<usize>,
    #[serde(default)]
    pub strategy: UpdateStrategy,
    pub budgets: Vec<Budget>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_n_queries")]
    pub n_queries: usize,
    /// Points sampled from the window to train the initial index.
    #[serde(default = "default_train_sample")]
    pub train_sample_size: usize,
    pub index: IndexConfig,
    #[serde(default)]
    pub seed: u64,
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_some() == self.synthetic.is_some() {
            return Err(Error::InvalidConfig("exactly one of dataset and synthetic must be given".into()));
        }
        self.validate_protocol()
    }

    /// Everything except the data source.
    fn validate_protocol(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if self.window == 0 {
            return bad("window must be at least 1 month");
        }
        if self.update_every == 0 {
            return bad("update_every must be at least 1");
        }
        if self.k == 0 || self.n_queries == 0 || self.train_sample_size == 0 {
            return bad("k, n_queries and train_sample_size must be positive");
        }
        if self.budgets.is_empty() {
            return bad("budgets must not be empty");
        }
        let ascending = match self.budgets.as_slice() {
            [Budget::Dcs(_), ..] => self.budgets.windows(2).all(|w| matches!(w, [Budget::Dcs(a), Budget::Dcs(b)] if a < b)),
            _ => self.budgets.windows(2).all(
                |w| matches!(w, [Budget::Fraction { fraction: a }, Budget::Fraction { fraction: b }] if a < b),
            ) && self.budgets.iter().all(|b| matches!(b, Budget::Fraction { fraction } if *fraction > 0.0)),
        };
        if !ascending {
            return bad("budgets must be strictly ascending and all of one kind");
        }
        if let Some(b) = &self.burst {
            if !(0.0..=1.0).contains(&b.fraction) {
                return bad("burst fraction must lie in [0, 1]");
            }
        }
        self.index.validate()?;
        if self.train_mode == TrainMode::OutOfDomain {
            self.strategy.validate()?;
        }
        Ok(())
    }

    /// Loads or generates the dataset, with the burst applied.
    pub fn load_dataset(&self) -> Result<TimestampedDataset> {
        self.validate()?;
        let ds = match (&self.dataset, &self.synthetic) {
            (Some(path), _) => read_tds(path)?,
            (_, Some(cfg)) => generate_drift_stream(cfg)?,
            _ => unreachable!("validated"),
        };
        match &self.burst {
            None => Ok(ds),
            Some(b) => {
                let first = period_partition(&ds, Granularity::Month)
                    .first()
                    .map(|(p, _)| *p)
                    .ok_or_else(|| Error::InvalidDataset("empty dataset".into()))?;
                inject_constant_burst(&ds, first + b.month as i64, b.fraction, &vec![b.value; ds.dim()], b.seed)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetResult {
    pub dcs: usize,
    pub recall: f64,
    pub search_time_s: f64,
    /// `n_queries · min(dcs, live postings)`.
    pub dcs_expected: u64,
    pub dcs_actual: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    /// First and last month of the window, as `a-b`.
    pub window: String,
    pub query_month: i64,
    pub n_live: usize,
    pub n_queries: usize,
    /// Present on steps where the index was updated or rebuilt.
    pub update: Option<UpdateReport>,
    pub gt_time_s: f64,
    pub budgets: Vec<BudgetResult>,
    pub list_min: usize,
    pub list_median: usize,
    pub list_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    /// Strategy name, or `in_domain`.
    pub label: String,
    pub train_mode: TrainMode,
    pub update_every: usize,
    pub k: usize,
    pub steps: Vec<StepReport>,
}

impl StreamReport {
    /// Mean recall over steps, per budget position.
    pub fn mean_recall(&self) -> Vec<f64> {
        let nb = self.steps.first().map_or(0, |s| s.budgets.len());
        (0..nb)
            .map(|b| self.steps.iter().map(|s| s.budgets[b].recall).sum::<f64>() / self.steps.len() as f64)
            .collect()
    }

    /// Mean wall time over the steps that ran an update.
    pub fn mean_update_time(&self) -> f64 {
        let times: Vec<f64> = self.steps.iter().filter_map(|s| s.update.map(|u| u.wall_time_s)).collect();
        if times.is_empty() {
            0.0
        } else {
            times.iter().sum::<f64>() / times.len() as f64
        }
    }
}

/// Exact top-k id lists keyed by step, live id set and query set. Runs
/// sharing a dataset and seed reuse each other's ground truth.
#[derive(Debug, Default)]
pub struct GroundTruthCache {
    entries: HashMap<(usize, u64, u64), Arc<Vec<Vec<u64>>>>,
    hits: usize,
}

impl GroundTruthCache {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn hits(&self) -> usize {
        self.hits
    }

    fn get_or_compute(
        &mut self,
        key: (usize, u64, u64),
        compute: impl FnOnce() -> Result<Vec<Vec<u64>>>,
    ) -> Result<Arc<Vec<Vec<u64>>>> {
        if let Some(gt) = self.entries.get(&key) {
            self.hits += 1;
            return Ok(gt.clone());
        }
        let gt = Arc::new(compute()?);
        self.entries.insert(key, gt.clone());
        Ok(gt)
    }
}

fn hash_ids(ids: &[u64]) -> u64 {
    let mut h = DefaultHasher::new();
    ids.hash(&mut h);
    h.finish()
}

/// Row ranges of consecutive months; months without data get empty ranges.
fn month_rows(ds: &TimestampedDataset) -> Result<(i64, Vec<Range<usize>>)> {
    let parts = period_partition(ds, Granularity::Month);
    let Some(&(first, _)) = parts.first() else {
        return Err(Error::InvalidDataset("empty dataset".into()));
    };
    if parts.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::InvalidDataset("rows are not sorted by timestamp".into()));
    }
    let last = parts.last().unwrap().0;
    let mut months = Vec::with_capacity((last - first + 1) as usize);
    let mut it = parts.into_iter().peekable();
    for p in first..=last {
        match it.peek() {
            Some((q, _)) if *q == p => months.push(it.next().unwrap().1),
            _ => {
                let at = months.last().map_or(0, |r: &Range<usize>| r.end);
                months.push(at..at);
            }
        }
    }
    Ok((first, months))
}

/// Up to `n` rows of `rows`, seeded, in row order.
fn sample_range(rows: Range<usize>, n: usize, seed: u64) -> Vec<usize> {
    let len = rows.len();
    if n >= len {
        return rows.collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, len, n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|p| rows.start + p).collect()
}

fn gather(data: &[f32], dim: usize, rows: &[usize]) -> Vec<f32> {
    rows.iter().flat_map(|&r| data[r * dim..(r + 1) * dim].iter().copied()).collect()
}

struct Stream<'a> {
    ds: &'a TimestampedDataset,
    data: &'a [f32],
    first_month: i64,
    months: Vec<Range<usize>>,
    n_steps: usize,
}

impl<'a> Stream<'a> {
    fn new(ds: &'a TimestampedDataset, data: &'a [f32], config: &ProtocolConfig) -> Result<Self> {
        let (first_month, months) = month_rows(ds)?;
        let m = config.window;
        if months.len() < m + 2 {
            return Err(Error::InvalidDataset(format!(
                "dataset spans {} months, the protocol needs at least {}",
                months.len(),
                m + 2
            )));
        }
        let available = months.len() - m - 1;
        let n_steps = config.n_steps.unwrap_or(available);
        if n_steps == 0 || n_steps > available {
            return Err(Error::InvalidConfig(format!(
                "n_steps must lie in 1..={available} for this dataset"
            )));
        }
        Ok(Self {
            ds,
            data,
            first_month,
            months,
            n_steps,
        })
    }

    fn window(&self, j: usize, m: usize) -> Range<usize> {
        self.months[j].start..self.months[j + m - 1].end
    }

    fn rows(&self, rows: Range<usize>) -> (&'a [u64], &'a [f32]) {
        let dim = self.ds.dim();
        (&self.ds.ids()[rows.clone()], &self.data[rows.start * dim..rows.end * dim])
    }

    fn build(&self, rows: Range<usize>, config: &ProtocolConfig, seed: u64) -> Result<IvfIndex> {
        let dim = self.ds.dim();
        let train = gather(self.data, dim, &sample_range(rows.clone(), config.train_sample_size, seed));
        let mut index = IvfIndex::build(&train, dim, config.index.clone())?;
        let (ids, vecs) = self.rows(rows);
        index.add(ids, vecs)?;
        Ok(index)
    }
}

/// Loads the configured dataset and runs the configured strategy.
pub fn run_stream(config: &ProtocolConfig) -> Result<StreamReport> {
    let ds = config.load_dataset()?;
    run_stream_on(&ds, config, &mut GroundTruthCache::default())
}

/// Runs each strategy in turn on the same dataset, queries and ground truth.
pub fn run_streams(config: &ProtocolConfig, strategies: &[UpdateStrategy]) -> Result<Vec<StreamReport>> {
    let ds = config.load_dataset()?;
    let mut cache = GroundTruthCache::default();
    strategies
        .iter()
        .map(|s| {
            let cfg = ProtocolConfig {
                strategy: *s,
                ..config.clone()
            };
            run_stream_on(&ds, &cfg, &mut cache)
        })
        .collect()
}

/// Runs the protocol on an in-memory dataset. The `dataset`, `synthetic`
/// and `burst` fields of `config` are not consulted.
pub fn run_stream_on(ds: &TimestampedDataset, config: &ProtocolConfig, cache: &mut GroundTruthCache) -> Result<StreamReport> {
    config.validate_protocol()?;
    let data = ds.to_f32();
    let stream = Stream::new(ds, &data, config)?;
    let m = config.window;
    let dim = ds.dim();
    let lookup = ds.lookup();

    let mut index = stream.build(stream.window(0, m), config, derive_seed(config.seed, 0))?;
    let mut steps = Vec::with_capacity(stream.n_steps);

    for j in 1..=stream.n_steps {
        let update = match config.train_mode {
            TrainMode::OutOfDomain => {
                let (old, _) = stream.rows(stream.months[j - 1].clone());
                index.remove(old);
                let (ids, vecs) = stream.rows(stream.months[j + m - 1].clone());
                index.add(ids, vecs)?;
                if j % config.update_every == 0 {
                    Some(apply(&mut index, &config.strategy, Some(&lookup))?)
                } else {
                    None
                }
            }
            TrainMode::InDomain => {
                let start = Instant::now();
                let window = stream.window(j, m);
                index = stream.build(window.clone(), config, derive_seed(config.seed, (j as u64) << 8))?;
                Some(UpdateReport {
                    wall_time_s: start.elapsed().as_secs_f64(),
                    cells_retrained: index.n_lists(),
                    vectors_reassigned: window.len(),
                    vectors_reencoded: window.len(),
                })
            }
        };

        let window = stream.window(j, m);
        let (live_ids, live_vecs) = stream.rows(window);
        let mut sorted_live = live_ids.to_vec();
        sorted_live.sort_unstable();
        if sorted_live != index.live_ids() {
            return Err(Error::InvalidDataset(format!(
                "step {j}: index contents differ from the window (duplicate ids in the dataset?)"
            )));
        }

        let q_rows = sample_range(stream.months[j + m].clone(), config.n_queries, derive_seed(config.seed, (j as u64) << 8 | 1));
        if q_rows.is_empty() {
            return Err(Error::InvalidDataset(format!("step {j}: query month has no data")));
        }
        let q_ids: Vec<u64> = q_rows.iter().map(|&r| ds.ids()[r]).collect();
        if let Some(id) = q_ids.iter().find(|&&id| index.contains(id)) {
            return Err(Error::InvalidDataset(format!("step {j}: query id {id} is also indexed")));
        }
        let queries = gather(&data, dim, &q_rows);

        let gt_start = Instant::now();
        let key = (j, hash_ids(&sorted_live), hash_ids(&q_ids));
        let gt = cache.get_or_compute(key, || {
            let knn = brute_force_knn(&queries, live_vecs, live_ids, dim, config.k)?;
            Ok(knn.into_iter().map(|r| r.into_iter().map(|n| n.id).collect()).collect())
        })?;
        let gt_time_s = gt_start.elapsed().as_secs_f64();

        let n_live = index.len();
        let mut budgets = Vec::with_capacity(config.budgets.len());
        for b in &config.budgets {
            let dcs = b.resolve(n_live);
            let start = Instant::now();
            let outcomes = queries
                .par_chunks(dim)
                .map(|q| index.search_with_stats(q, SearchBudget::new(dcs, config.k)))
                .collect::<Result<Vec<_>>>()?;
            let search_time_s = start.elapsed().as_secs_f64();
            let found: Vec<Vec<u64>> = outcomes.iter().map(|o| o.neighbors.iter().map(|n| n.id).collect()).collect();
            budgets.push(BudgetResult {
                dcs,
                recall: recall_at_k(&found, &gt, config.k),
                search_time_s,
                dcs_expected: (q_rows.len() * dcs.min(n_live)) as u64,
                dcs_actual: outcomes.iter().map(|o| o.distance_computations as u64).sum(),
            });
        }

        let mut sizes = index.list_sizes();
        sizes.sort_unstable();
        let first = stream.first_month + j as i64;
        steps.push(StepReport {
            step: j,
            window: format!("{}-{}", first, first + m as i64 - 1),
            query_month: first + m as i64,
            n_live,
            n_queries: q_rows.len(),
            update,
            gt_time_s,
            budgets,
            list_min: sizes[0],
            list_median: sizes[(sizes.len() - 1) / 2],
            list_max: *sizes.last().unwrap(),
        });
        log::info!(
            "{} step {j}/{}: recall {:?}",
            label(config),
            stream.n_steps,
            steps.last().unwrap().budgets.iter().map(|b| b.recall).collect::<Vec<_>>()
        );
    }

    Ok(StreamReport {
        label: label(config).to_string(),
        train_mode: config.train_mode,
        update_every: config.update_every,
        k: config.k,
        steps,
    })
}

fn label(config: &ProtocolConfig) -> &'static str {
    match config.train_mode {
        TrainMode::InDomain => TrainMode::InDomain.name(),
        TrainMode::OutOfDomain => config.strategy.name(),
    }
}

#[cfg(test)]
mod tests;
