//! IVF-family approximate nearest neighbor search with drift-adaptive
//! index maintenance.
//!
//! The crate is organised bottom-up:
//!
//! - [`vecstore`]: timestamped vector datasets, the `.tds` file format,
//!   preprocessing (random rotation, 8-bit scalar quantization), time
//!   windows and a synthetic drifting-stream generator.
//! - [`quantizers`]: k-means, product quantization, OPQ, PCA and the
//!   coarse quantizers (flat, inverted multi-index, residual).
//! - [`index`]: the inverted-file index with versioned centroid history,
//!   budgeted search and snapshots.
//! - [`dedrift`]: index update strategies (none, full rebuild, split, lazy,
//!   hybrid).
//! - [`driftlab`]: exact k-NN, recall and drift diagnostics.
//! - [`bench`]: the sliding-window streaming protocol and its reports.

pub mod bench;
pub mod dedrift;
pub mod distance;
pub mod driftlab;
mod error;
pub mod index;
pub mod linalg;
pub mod quantizers;
pub mod vecstore;

pub use error::{Error, Result};
