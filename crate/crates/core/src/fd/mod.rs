//! Frechet distance between Gaussian fits of two feature populations.
//!
//! Features come from the classifier's pooled penultimate layer; each
//! population is summarised by its mean and unbiased covariance and the two
//! Gaussians are compared with
//! `|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)`.

mod dump;
mod frechet;
mod sqrtm;
mod stats;

pub use dump::{read_feature_matrix, write_feature_csv, write_feature_dump, FEATURE_DUMP_MAGIC};
pub use frechet::{frechet_distance, frechet_distance_with_jitter, FdRecord, FrechetDistance, JITTER};
pub use sqrtm::{sqrtm_spd, EIGEN_FLOOR, SYMMETRY_TOL};
pub use stats::{fit_feature_stats, FeatureAccumulator, FeatureStats};
