use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("missing file {path}")]
    MissingFile { path: PathBuf },
    #[error("tile {tile_id}: image is {image_h}x{image_w} but mask is {mask_h}x{mask_w}")]
    ShapeMismatch {
        tile_id: String,
        image_h: usize,
        image_w: usize,
        mask_h: usize,
        mask_w: usize,
    },
    #[error("tile {tile_id}: class index {class} >= num_classes {num_classes}")]
    ClassOutOfRange {
        tile_id: String,
        class: u8,
        num_classes: usize,
    },
    #[error("tile {tile_id}: {found} channels unsupported (expected 3 or 4)")]
    UnsupportedChannels { tile_id: String, found: usize },
    #[error("tile {tile_id}: {msg}")]
    Invalid { tile_id: String, msg: String },
    #[error("unsupported dtype {found:?} (expected u8, u16 or f32)")]
    BadDtype { found: String },
    #[error("patch size {size} exceeds tile dimensions {h}x{w}")]
    PatchTooLarge { size: usize, h: usize, w: usize },
    #[error("manifest {path}: line {line}: {source}")]
    ManifestParse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("manifest contains duplicate record key {key}")]
    DuplicateRecord { key: String },
    #[error("real and synthetic manifests cover different tile id sets ({detail})")]
    TileSetMismatch { detail: String },
    #[error("requested {total} tiles but only {available} tile ids are available")]
    TotalExceedsAvailable { total: usize, available: usize },
    #[error("synthetic fraction {value} outside [0, 1]")]
    BadFraction { value: f64 },
}

pub type Result<T> = std::result::Result<T, DataError>;
