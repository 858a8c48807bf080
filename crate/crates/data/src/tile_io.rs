//! Tile container format: one directory per tile holding `image.bin`
//! (channel-major raw array, little-endian), `mask.bin` (per-pixel class
//! indices) and `meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};
use crate::types::{ClassMask, RasterTile, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelDtype {
    U8,
    U16,
    F32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TileMeta {
    pub format_version: u32,
    pub tile_id: String,
    pub dtype: PixelDtype,
    /// [channels, height, width]
    pub shape: [usize; 3],
    pub channel_names: Vec<String>,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub split: Split,
}

pub const TILE_FORMAT_VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Load and validate a tile directory; raw u8/u16 rasters are linearly mapped
/// to [-1, 1], f32 rasters are expected to already be in range.
pub fn load_tile(dir: &Path) -> Result<RasterTile> {
    let meta_path = dir.join("meta.json");
    if !meta_path.exists() {
        return Err(DataError::MissingFile { path: meta_path });
    }
    let meta_bytes = fs::read(&meta_path).map_err(io_err(&meta_path))?;
    let meta: TileMeta = serde_json::from_slice(&meta_bytes).map_err(|source| DataError::Json {
        path: meta_path.clone(),
        source,
    })?;
    let [c, h, w] = meta.shape;

    let image_path = dir.join("image.bin");
    if !image_path.exists() {
        return Err(DataError::MissingFile { path: image_path });
    }
    let raw = fs::read(&image_path).map_err(io_err(&image_path))?;
    let expected = c * h * w;
    let image: Vec<f32> = match meta.dtype {
        PixelDtype::U8 => {
            check_len(&image_path, raw.len(), expected)?;
            raw.iter().map(|&v| v as f32 / 127.5 - 1.0).collect()
        }
        PixelDtype::U16 => {
            check_len(&image_path, raw.len(), expected * 2)?;
            raw.chunks_exact(2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]) as f32 / 32767.5 - 1.0)
                .collect()
        }
        PixelDtype::F32 => {
            check_len(&image_path, raw.len(), expected * 4)?;
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect()
        }
    };

    let mask_path = dir.join("mask.bin");
    if !mask_path.exists() {
        return Err(DataError::MissingFile { path: mask_path });
    }
    let mask_raw = fs::read(&mask_path).map_err(io_err(&mask_path))?;
    check_len(&mask_path, mask_raw.len(), h * w)?;
    let mask = ClassMask::new(mask_raw, h, w, meta.num_classes).map_err(|e| match e {
        DataError::ClassOutOfRange {
            class, num_classes, ..
        } => DataError::ClassOutOfRange {
            tile_id: meta.tile_id.clone(),
            class,
            num_classes,
        },
        other => other,
    })?;

    RasterTile::new(
        meta.tile_id,
        image,
        c,
        h,
        w,
        meta.channel_names,
        meta.class_names,
        mask,
        meta.split,
    )
}

fn check_len(path: &Path, found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(DataError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("expected {expected} bytes, found {found}"),
            ),
        });
    }
    Ok(())
}

/// Write a tile directory. F32 output round-trips bit-exactly through
/// [`load_tile`]; u8/u16 quantize.
pub fn write_tile(dir: &Path, tile: &RasterTile, dtype: PixelDtype) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = TileMeta {
        format_version: TILE_FORMAT_VERSION,
        tile_id: tile.tile_id.clone(),
        dtype,
        shape: [tile.channels, tile.h, tile.w],
        channel_names: tile.channel_names.clone(),
        num_classes: tile.mask.num_classes,
        class_names: tile.class_names.clone(),
        split: tile.split,
    };
    let meta_path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&meta_path, json).map_err(io_err(&meta_path))?;

    let image_path = dir.join("image.bin");
    let bytes: Vec<u8> = match dtype {
        PixelDtype::U8 => tile
            .image
            .iter()
            .map(|&v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8)
            .collect(),
        PixelDtype::U16 => tile
            .image
            .iter()
            .flat_map(|&v| {
                let q = ((v + 1.0) * 32767.5).round().clamp(0.0, 65535.0) as u16;
                q.to_le_bytes()
            })
            .collect(),
        PixelDtype::F32 => tile.image.iter().flat_map(|v| v.to_le_bytes()).collect(),
    };
    fs::write(&image_path, bytes).map_err(io_err(&image_path))?;

    let mask_path = dir.join("mask.bin");
    fs::write(&mask_path, &tile.mask.classes).map_err(io_err(&mask_path))?;
    Ok(dir.to_path_buf())
}

/// Load only the mask side of a tile directory.
pub fn load_mask(dir: &Path) -> Result<(ClassMask, TileMeta)> {
    let meta_path = dir.join("meta.json");
    if !meta_path.exists() {
        return Err(DataError::MissingFile { path: meta_path });
    }
    let meta_bytes = fs::read(&meta_path).map_err(io_err(&meta_path))?;
    let meta: TileMeta = serde_json::from_slice(&meta_bytes).map_err(|source| DataError::Json {
        path: meta_path.clone(),
        source,
    })?;
    let [_, h, w] = meta.shape;
    let mask_path = dir.join("mask.bin");
    if !mask_path.exists() {
        return Err(DataError::MissingFile { path: mask_path });
    }
    let mask_raw = fs::read(&mask_path).map_err(io_err(&mask_path))?;
    check_len(&mask_path, mask_raw.len(), h * w)?;
    let mask = ClassMask::new(mask_raw, h, w, meta.num_classes)?;
    Ok((mask, meta))
}
