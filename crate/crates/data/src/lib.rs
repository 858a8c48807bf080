//! Tile and patch dataset handling: container IO, validation, patch
//! sampling, manifests, real/synthetic mixing, and the procedural toy
//! dataset used for desk-scale runs.

pub mod error;
pub mod manifest;
pub mod patch;
pub mod tile_io;
pub mod toy;
pub mod types;

pub use error::{DataError, Result};
pub use manifest::{
    build_mix_manifest, resolve_uri, round_half_up, DatasetManifest, ManifestRecord, MixSpec,
};
pub use patch::{grid_positions, sample_patches, sample_windows, PatchPair, PatchSpec};
pub use tile_io::{load_mask, load_tile, write_tile, PixelDtype, TileMeta, TILE_FORMAT_VERSION};
pub use toy::{
    bayes_predict, make_toy_dataset, render_toy_tile, toy_channel_names, toy_class_color,
    toy_class_names, ToyDataset, ToyDatasetSpec,
};
pub use types::{argmax_planes, ClassMask, LatentMode, RasterTile, Source, Split};
