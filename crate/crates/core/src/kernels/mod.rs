//! Numerical primitives shared by the fidelity, privacy and utility suites.

pub mod acf;
pub mod distance;
pub mod kl;
pub mod ks;
pub mod mmd;
pub mod pca;
pub mod peaks;
pub mod stats;

pub use acf::{acf, acf_rows, autocorrelation_at, AcfMatrix, DEFAULT_MAX_LAG};
pub use distance::{nearest_neighbor_distances, nearest_neighbors, squared_euclidean, NearestNeighbors};
pub use kl::{kl_divergence, DEFAULT_SMOOTHING};
pub use ks::{ks_one_tailed, KsResult};
pub use mmd::{mmd2_unbiased, Bandwidth, MmdResult};
pub use pca::{pca_project, write_coordinates, Pca, PcaProjection};
pub use peaks::top_n_peaks;
pub use stats::{linear_quantile, per_slot_statistics, SlotStatistics};
