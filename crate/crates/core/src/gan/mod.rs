//! Latent-variable cycle-consistent translation between the cloudy (X)
//! and clear (Y) domains: the eight networks, losses, the training step,
//! per-epoch FD validation and cycle grids.

mod config;
mod grid;
mod losses;
mod nets;
mod train;

pub use config::GanConfig;
pub use grid::{
    export_cycle_grid, export_translated_grid, render_grid, rgb_indices, CycleSample, GRID_GAP,
};
pub use losses::{
    adversarial_losses, cycle_losses, discriminator_loss, generator_loss, AdversarialKind,
};
pub use nets::{
    ArchConfig, Generator, ImageDiscriminator, LatentDiscriminator, LatentEncoder, NetworkSet,
    NETWORK_NAMES,
};
pub use train::{
    encode_latent, load_tensor, sample_latent, train_gan, translate, validate_epoch, EpochSummary,
    LossRecord, TrainState, ValidationSet,
};
