//! Timestamped vector storage, persistence, preprocessing, time windows and
//! synthetic drift streams.

mod dataset;
mod preprocess;
mod synth;
mod tds;
mod window;

pub use dataset::{IdLookup, MapStore, Payload, TimestampedDataset, VectorStore};
pub use preprocess::{random_rotation, rotate_dataset, scalar_quantize_8bit, ScalarQuantizer};
pub use synth::{generate_drift_stream, inject_constant_burst, DriftStreamConfig};
pub use tds::{read_tds, write_tds, TDS_MAGIC};
pub use window::{
    period_partition, slice_window, Granularity, MonthRange, WindowSpec, DAY_SECONDS,
    MONTH_SECONDS, WEEK_SECONDS,
};
