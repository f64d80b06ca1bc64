//! Trainable quantizers: k-means, product quantization, OPQ, PCA and the
//! coarse quantizers used to partition an IVF index.

mod coarse;
mod kmeans;
mod opq;
mod pca;
mod pq;

pub use coarse::{CellRanking, CoarseQuantizer, CoarseSpec};
pub use kmeans::{
    assign, assign_with_distances, kmeans_refine, kmeans_train, nearest_centroid, KMeansModel,
    DEFAULT_KMEANS_ITERS, KMEANS_TOLERANCE,
};
pub use opq::{OpqModel, DEFAULT_OPQ_ITERS};
pub use pca::PcaModel;
pub use pq::{ProductQuantizer, MAX_PQ_ENTRIES};

/// Mixes a base seed with a stream index (splitmix64 finalizer).
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
