use thiserror::Error;

#[derive(Debug, Error)]
pub enum GanError {
    #[error("input is {found_h}x{found_w} but the network is configured for {expected}x{expected}")]
    ResolutionMismatch {
        expected: usize,
        found_h: usize,
        found_w: usize,
    },
    #[error("mask has {found} classes but the network is configured for {expected}")]
    ClassCountMismatch { expected: usize, found: usize },
    #[error("image has {found} channels but the network is configured for {expected}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("latent vectors are identical; the diversity ratio denominator is zero")]
    IdenticalLatents,
    #[error("latent length {found} does not match z_dim {expected}")]
    LatentLengthMismatch { expected: usize, found: usize },
    #[error("non-finite {component} at step {step} (batch tiles: {batch_tiles:?})")]
    NonFiniteLoss {
        step: u64,
        component: String,
        batch_tiles: Vec<String>,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Archive(#[from] satsynth_tensor::ArchiveError),
    #[error(transparent)]
    Data(#[from] satsynth_data::DataError),
    #[error("encoder mode requires a paired reference image")]
    MissingReferenceImage,
    #[error("stitch grid does not cover the tile: {0}")]
    StitchGrid(String),
}

pub type Result<T> = std::result::Result<T, GanError>;
