//! Evaluation stack: Fréchet distance over pluggable image features, plus
//! the downstream U-Net segmenter with IoU metrics.

pub mod error;
pub mod extractor;
pub mod fid;
pub mod frechet;
pub mod linalg;
pub mod metrics;
pub mod seg_train;
pub mod unet;

pub use error::{EvalError, Result};
pub use extractor::{preprocess_image, FeatureExtractor, PreprocessSpec, RandomProjectionExtractor};
pub use fid::{compute_fid, extract_manifest_features};
pub use frechet::{frechet_distance, gaussian_stats, FidReport, GaussianStats};
pub use metrics::{iou_from_cm, ConfusionMatrix, SegMetrics};
pub use seg_train::{
    evaluate, predict_window, train_downstream, write_seg_history_csv, EarlyStopper, EpochRow,
    SegCheckpoint, SegConfig, SEG_HISTORY_HEADER,
};
pub use unet::{UNet, UNetConfig};
