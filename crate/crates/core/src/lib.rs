//! Cloud and shadow removal for multispectral satellite patches.
//!
//! The crate bundles patch ingestion, a residual multi-label land-cover
//! classifier, a Frechet-distance evaluation in classifier feature space,
//! the latent-variable cycle-consistent translation model, a synthetic
//! two-domain data generator for desk-scale experiments, and the
//! experiment harness behind the `cloudgan` command line tool.

pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod error;
pub mod fd;
pub mod gan;
pub mod harness;
pub mod nn;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
