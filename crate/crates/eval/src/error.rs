use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("dimension mismatch: {a} vs {b}")]
    DimMismatch { a: usize, b: usize },
    #[error("matrix square root failed: residual {residual:.3e} above tolerance {tolerance:.3e}")]
    NumericalFailure { residual: f64, tolerance: f64 },
    #[error("image has {found} channels but the extractor needs {needed}")]
    ChannelMismatch { needed: usize, found: usize },
    #[error("input {h}x{w} is not divisible by 2^{depth}")]
    ResolutionIndivisible { h: usize, w: usize, depth: usize },
    #[error("tile {tile_id} is {h}x{w}, smaller than the evaluation window {window}")]
    TileSmallerThanWindow {
        tile_id: String,
        h: usize,
        w: usize,
        window: usize,
    },
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("non-finite {component} at epoch {epoch} step {step}")]
    NonFiniteLoss {
        epoch: usize,
        step: u64,
        component: String,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Archive(#[from] satsynth_tensor::ArchiveError),
    #[error(transparent)]
    Data(#[from] satsynth_data::DataError),
}

pub type Result<T> = std::result::Result<T, EvalError>;
