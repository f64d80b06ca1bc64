//! Seeded synthetic streams with controllable content drift.
//!
//! Each month draws `points_per_month` vectors from an equal-weight mixture of
//! the currently live Gaussian clusters. A cluster's mean follows a linear
//! trend plus a sinusoidal seasonal offset; clusters are born and die at the
//! configured monthly rates.

use std::f32::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::TimestampedDataset;
use super::window::MONTH_SECONDS;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftStreamConfig {
    pub n_clusters: usize,
    pub dim: usize,
    pub points_per_month: usize,
    pub n_months: usize,
    /// Per-month displacement of each cluster mean (L2 units).
    pub trend_magnitude: f32,
    pub seasonal_magnitude: f32,
    pub seasonal_period_months: usize,
    pub cluster_birth_rate: f64,
    pub cluster_death_rate: f64,
    pub noise_sigma: f32,
    /// Standard deviation of the initial cluster means around the origin.
    #[serde(default = "default_center_spread")]
    pub center_spread: f32,
    pub seed: u64,
}

fn default_center_spread() -> f32 {
    1.0
}

impl Default for DriftStreamConfig {
    fn default() -> Self {
        Self {
            n_clusters: 64,
            dim: 32,
            points_per_month: 10_000,
            n_months: 12,
            trend_magnitude: 0.0,
            seasonal_magnitude: 0.0,
            seasonal_period_months: 12,
            cluster_birth_rate: 0.0,
            cluster_death_rate: 0.0,
            noise_sigma: 1.0,
            center_spread: 1.0,
            seed: 0,
        }
    }
}

impl DriftStreamConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.n_clusters == 0 || self.dim == 0 || self.n_months == 0 {
            return bad("n_clusters, dim and n_months must be positive");
        }
        if self.seasonal_period_months == 0 {
            return bad("seasonal_period_months must be positive");
        }
        for p in [self.cluster_birth_rate, self.cluster_death_rate] {
            if !(0.0..=1.0).contains(&p) {
                return bad("birth and death rates must lie in [0, 1]");
            }
        }
        for m in [
            self.trend_magnitude,
            self.seasonal_magnitude,
            self.noise_sigma,
            self.center_spread,
        ] {
            if !(m >= 0.0 && m.is_finite()) {
                return bad("magnitudes must be finite and non-negative");
            }
        }
        Ok(())
    }
}

struct Cluster {
    anchor: Vec<f32>,
    trend: Vec<f32>,
    seasonal_dir: Vec<f32>,
    phase: f32,
    born: usize,
}

impl Cluster {
    fn spawn(cfg: &DriftStreamConfig, born: usize, rng: &mut ChaCha8Rng) -> Self {
        let anchor = (0..cfg.dim)
            .map(|_| cfg.center_spread * { let s: f32 = StandardNormal.sample(rng); s })
            .collect();
        let trend = unit_vector(cfg.dim, rng)
            .into_iter()
            .map(|v| v * cfg.trend_magnitude)
            .collect();
        let seasonal_dir = unit_vector(cfg.dim, rng);
        let phase = rng.random_range(0.0..2.0 * PI);
        Self {
            anchor,
            trend,
            seasonal_dir,
            phase,
            born,
        }
    }

    fn mean_at(&self, month: usize, cfg: &DriftStreamConfig) -> Vec<f32> {
        let age = (month - self.born) as f32;
        let season = cfg.seasonal_magnitude
            * (2.0 * PI * month as f32 / cfg.seasonal_period_months as f32 + self.phase).sin();
        self.anchor
            .iter()
            .zip(&self.trend)
            .zip(&self.seasonal_dir)
            .map(|((a, t), u)| a + age * t + season * u)
            .collect()
    }
}

fn unit_vector(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Generates a drifting stream; bit-reproducible for a fixed config.
///
/// Month `t` covers `[t * MONTH_SECONDS, (t + 1) * MONTH_SECONDS)`; ids are
/// the global row numbers.
pub fn generate_drift_stream(cfg: &DriftStreamConfig) -> Result<TimestampedDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dim;
    let total = cfg.points_per_month * cfg.n_months;
    let mut vectors = Vec::with_capacity(total * d);
    let mut timestamps = Vec::with_capacity(total);

    let mut live: Vec<Cluster> = (0..cfg.n_clusters).map(|_| Cluster::spawn(cfg, 0, &mut rng)).collect();
    let mut month_buf = vec![0.0f32; cfg.points_per_month * d];
    let mut order: Vec<usize> = (0..cfg.points_per_month).collect();

    for month in 0..cfg.n_months {
        if month > 0 {
            live.retain(|_| rng.random::<f64>() >= cfg.cluster_death_rate);
            for _ in 0..cfg.n_clusters {
                if rng.random::<f64>() < cfg.cluster_birth_rate {
                    live.push(Cluster::spawn(cfg, month, &mut rng));
                }
            }
            if live.is_empty() {
                live.push(Cluster::spawn(cfg, month, &mut rng));
            }
        }
        let means: Vec<Vec<f32>> = live.iter().map(|c| c.mean_at(month, cfg)).collect();
        for row in month_buf.chunks_exact_mut(d) {
            let mean = &means[rng.random_range(0..means.len())];
            for (x, m) in row.iter_mut().zip(mean) {
                let z: f32 = StandardNormal.sample(&mut rng);
                *x = m + cfg.noise_sigma * z;
            }
        }
        order.shuffle(&mut rng);
        for &src in &order {
            vectors.extend_from_slice(&month_buf[src * d..(src + 1) * d]);
        }
        let base = month as i64 * MONTH_SECONDS;
        let ppm = cfg.points_per_month as i64;
        timestamps.extend((0..ppm).map(|i| base + i * MONTH_SECONDS / ppm));
    }

    TimestampedDataset::new(d, vectors, timestamps, (0..total as u64).collect())
}

/// Overwrites a random `fraction` of the rows of `month` with copies of
/// `value` (ids and timestamps are kept). Models placeholder-content bursts.
pub fn inject_constant_burst(
    ds: &TimestampedDataset,
    month: i64,
    fraction: f64,
    value: &[f32],
    seed: u64,
) -> Result<TimestampedDataset> {
    if value.len() != ds.dim() {
        return Err(Error::DimensionMismatch {
            expected: ds.dim(),
            got: value.len(),
        });
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig("burst fraction must lie in [0, 1]".into()));
    }
    let rows = ds.rows_in(month * MONTH_SECONDS, (month + 1) * MONTH_SECONDS);
    let mut candidates: Vec<usize> = rows.collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    let n_burst = (candidates.len() as f64 * fraction).round() as usize;

    let d = ds.dim();
    let mut vectors = ds.to_f32().into_owned();
    for &r in &candidates[..n_burst] {
        vectors[r * d..(r + 1) * d].copy_from_slice(value);
    }
    TimestampedDataset::new(d, vectors, ds.timestamps().to_vec(), ds.ids().to_vec())
}
