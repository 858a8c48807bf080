//! Mask-conditional GAN family: style encoder, SPADE generator, multi-scale
//! PatchGAN discriminator, the training objectives (including the clamped
//! diversity ratio), the reproducible training loop, and dataset synthesis.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod losses;
pub mod networks;
pub mod spade;
pub mod synthesis;
pub mod train;

pub use checkpoint::{Checkpoint, TrainingState, CHECKPOINT_FORMAT};
pub use config::GanConfig;
pub use error::{GanError, Result};
pub use losses::{
    diversity_term, feature_matching, generator_objective, hinge_d, hinge_g, kld_term,
    DiversityConfig, GeneratorObjective, LossWeights,
};
pub use networks::{
    reparameterize, reparameterize_var, Discriminator, Encoder, GanNets, Generator, LatentStats,
    LatentVector,
};
pub use spade::{resize_planes_nearest, Spade, SpadeResBlock};
pub use synthesis::{
    grid_positions, stitch_tile, synthesize_dataset, synthesize_patch, synthesize_tile,
    StitchPatch, SynthesisJob,
};
pub use train::{
    init_weights, lambda_sweep, train_upstream, write_history_csv, LossRow, UpstreamConfig,
    UpstreamTrainer, HISTORY_HEADER,
};
