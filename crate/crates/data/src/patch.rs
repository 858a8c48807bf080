//! Random patch sampling from tiles.

use serde::{Deserialize, Serialize};

use satsynth_tensor::rng::{fnv1a, Rng};

use crate::error::{DataError, Result};
use crate::types::{ClassMask, RasterTile};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatchSpec {
    pub size: usize,
    pub per_tile_count: usize,
    pub seed: u64,
}

impl Default for PatchSpec {
    fn default() -> Self {
        PatchSpec {
            size: 256,
            per_tile_count: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PatchPair {
    pub y0: usize,
    pub x0: usize,
    /// [channels, size, size]
    pub image: Vec<f32>,
    pub mask: ClassMask,
}

/// Top-left corners of `count` windows sampled uniformly with replacement.
/// Deterministic in (seed, tile_key): the same seed always yields the same
/// coordinates for a given tile.
pub fn sample_windows(
    h: usize,
    w: usize,
    size: usize,
    count: usize,
    seed: u64,
    tile_key: &str,
) -> Result<Vec<(usize, usize)>> {
    if size > h || size > w {
        return Err(DataError::PatchTooLarge { size, h, w });
    }
    let mut rng = Rng::derive(seed, "patch-windows", fnv1a(tile_key.as_bytes()));
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let y0 = rng.below((h - size + 1) as u64) as usize;
        let x0 = rng.below((w - size + 1) as u64) as usize;
        out.push((y0, x0));
    }
    Ok(out)
}

/// Window positions along one axis covering `extent` with stride
/// `window - overlap`; the last window is aligned to the far edge when the
/// stride does not divide evenly.
pub fn grid_positions(extent: usize, window: usize, overlap: usize) -> Result<Vec<usize>> {
    if window > extent {
        return Err(DataError::PatchTooLarge {
            size: window,
            h: extent,
            w: extent,
        });
    }
    if overlap * 2 >= window {
        return Err(DataError::BadFraction {
            value: overlap as f64 / window as f64,
        });
    }
    let step = window - overlap;
    let mut positions = Vec::new();
    let mut p = 0usize;
    loop {
        positions.push(p);
        if p + window >= extent {
            break;
        }
        p = (p + step).min(extent - window);
    }
    Ok(positions)
}

/// Exactly `spec.per_tile_count` aligned (image, mask) crops from one tile.
pub fn sample_patches(tile: &RasterTile, spec: &PatchSpec) -> Result<Vec<PatchPair>> {
    let windows = sample_windows(
        tile.h,
        tile.w,
        spec.size,
        spec.per_tile_count,
        spec.seed,
        &tile.tile_id,
    )?;
    Ok(windows
        .into_iter()
        .map(|(y0, x0)| PatchPair {
            y0,
            x0,
            image: tile.crop_image(y0, x0, spec.size),
            mask: tile.mask.crop(y0, x0, spec.size),
        })
        .collect())
}
