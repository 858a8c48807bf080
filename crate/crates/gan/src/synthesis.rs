//! Turning a trained checkpoint plus land-cover masks into synthetic tiles:
//! per-patch generation in encoder or prior mode, N-fold over-sampling per
//! mask, and grid stitching for tiles larger than the generator resolution.

use std::path::Path;

use serde::{Deserialize, Serialize};

use satsynth_data::{
    load_mask, write_tile, ClassMask, DataError, DatasetManifest, LatentMode, ManifestRecord,
    PixelDtype, RasterTile, Source,
};
use satsynth_tensor::rng::splitmix64;
use satsynth_tensor::{ParamStore, Rng, Tensor};

use crate::checkpoint::Checkpoint;
use crate::error::{GanError, Result};
use crate::networks::{reparameterize, GanNets, LatentVector};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisJob {
    pub mode: LatentMode,
    /// Synthetic tiles per source mask (>= 1); over-sampling produces the
    /// 200% / 300% datasets.
    pub copies: usize,
    pub seed: u64,
    /// Stitch overlap in pixels; 0 reproduces plain block concatenation.
    pub overlap: usize,
}

/// One generated window placed on the stitch grid.
#[derive(Debug, Clone)]
pub struct StitchPatch {
    pub y0: usize,
    pub x0: usize,
    /// [channels, window, window]
    pub data: Tensor,
}

/// Window positions along one axis: stride `window - overlap`, with the last
/// window aligned to the far edge when the stride does not divide evenly.
pub fn grid_positions(tile: usize, window: usize, overlap: usize) -> Result<Vec<usize>> {
    satsynth_data::grid_positions(tile, window, overlap).map_err(|_| {
        GanError::StitchGrid(format!(
            "window {window} with overlap {overlap} cannot grid an extent of {tile}"
        ))
    })
}

/// Per-axis ownership spans for overlap-free stitching: each pixel belongs
/// to exactly one window, so stitching a partition of a tile is bit-exact.
fn ownership_spans(positions: &[usize], window: usize) -> Vec<(usize, usize)> {
    let mut spans = Vec::with_capacity(positions.len());
    let mut covered = 0usize;
    for &p in positions {
        let start = covered.max(p);
        let end = p + window;
        spans.push((start, end));
        covered = end;
    }
    spans
}

/// Tent weight along one axis for cross-fade stitching.
fn axis_weight(i: usize, window: usize, overlap: usize, first: bool, last: bool) -> f32 {
    let mut w = 1.0f32;
    if !first && i < overlap {
        w = w.min((i + 1) as f32 / (overlap + 1) as f32);
    }
    if !last && i >= window - overlap {
        w = w.min((window - i) as f32 / (overlap + 1) as f32);
    }
    w
}

/// Assemble a full tile raster from grid patches.
///
/// overlap == 0: exact block concatenation (edge-aligned remainder windows
/// are cropped to the still-uncovered region). overlap > 0: linear
/// cross-fade; the per-pixel blend weights are normalized so they sum to 1.
pub fn stitch_tile(
    patches: &[StitchPatch],
    channels: usize,
    tile_h: usize,
    tile_w: usize,
    overlap: usize,
) -> Result<Vec<f32>> {
    if patches.is_empty() {
        return Err(GanError::StitchGrid("no patches".into()));
    }
    let window = patches[0].data.shape[2];
    for p in patches {
        if p.data.shape != vec![channels, window, window] {
            return Err(GanError::StitchGrid(format!(
                "patch at ({}, {}) has shape {:?}, expected [{channels}, {window}, {window}]",
                p.y0, p.x0, p.data.shape
            )));
        }
        if p.y0 + window > tile_h || p.x0 + window > tile_w {
            return Err(GanError::StitchGrid(format!(
                "patch at ({}, {}) exceeds tile {tile_h}x{tile_w}",
                p.y0, p.x0
            )));
        }
    }
    let rows = grid_positions(tile_h, window, overlap)?;
    let cols = grid_positions(tile_w, window, overlap)?;
    if patches.len() != rows.len() * cols.len() {
        return Err(GanError::StitchGrid(format!(
            "{} patches do not fill a {}x{} grid",
            patches.len(),
            rows.len(),
            cols.len()
        )));
    }
    let row_spans = ownership_spans(&rows, window);
    let col_spans = ownership_spans(&cols, window);

    let mut acc = vec![0.0f64; channels * tile_h * tile_w];
    let mut weight = vec![0.0f64; tile_h * tile_w];
    for p in patches {
        let ri = rows
            .iter()
            .position(|&r| r == p.y0)
            .ok_or_else(|| GanError::StitchGrid(format!("patch row {} off-grid", p.y0)))?;
        let ci = cols
            .iter()
            .position(|&c| c == p.x0)
            .ok_or_else(|| GanError::StitchGrid(format!("patch col {} off-grid", p.x0)))?;
        for y in 0..window {
            let ty = p.y0 + y;
            let wy = if overlap == 0 {
                let (s, e) = row_spans[ri];
                if ty >= s && ty < e {
                    1.0
                } else {
                    0.0
                }
            } else {
                axis_weight(y, window, overlap, ri == 0, ri == rows.len() - 1)
            };
            if wy == 0.0 {
                continue;
            }
            for x in 0..window {
                let tx = p.x0 + x;
                let wx = if overlap == 0 {
                    let (s, e) = col_spans[ci];
                    if tx >= s && tx < e {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    axis_weight(x, window, overlap, ci == 0, ci == cols.len() - 1)
                };
                let w = (wy * wx) as f64;
                if w == 0.0 {
                    continue;
                }
                weight[ty * tile_w + tx] += w;
                for c in 0..channels {
                    acc[c * tile_h * tile_w + ty * tile_w + tx] +=
                        w * p.data.data[(c * window + y) * window + x] as f64;
                }
            }
        }
    }
    if let Some(i) = weight.iter().position(|&w| w <= 0.0) {
        return Err(GanError::StitchGrid(format!(
            "pixel ({}, {}) not covered by any patch",
            i / tile_w,
            i % tile_w
        )));
    }
    let mut out = vec![0.0f32; channels * tile_h * tile_w];
    for c in 0..channels {
        for i in 0..tile_h * tile_w {
            out[c * tile_h * tile_w + i] = (acc[c * tile_h * tile_w + i] / weight[i]) as f32;
        }
    }
    Ok(out)
}

/// Generate one patch. Prior mode draws z from the provided stream; encoder
/// mode reparameterizes the encoder posterior of the reference image with
/// noise from the same stream.
pub fn synthesize_patch(
    nets: &GanNets,
    store: &mut ParamStore,
    mask_patch: &ClassMask,
    mode: LatentMode,
    rng: &mut Rng,
    ref_image: Option<&[f32]>,
) -> Result<Tensor> {
    let z_dim = nets.config.z_dim;
    let mut noise = vec![0.0f32; z_dim];
    rng.fill_normal(&mut noise);
    let z = match mode {
        LatentMode::Prior => LatentVector::new(noise)?,
        LatentMode::Encoder => {
            let image = ref_image.ok_or(GanError::MissingReferenceImage)?;
            let stats = nets.encode(store, image, mask_patch.h, mask_patch.w)?;
            reparameterize(&stats, &noise)?
        }
    };
    nets.generate(store, mask_patch, &z)
}

/// Generate a full tile by gridding the mask at the generator resolution,
/// drawing one z per window from the record stream (grid order), and
/// stitching.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_tile(
    nets: &GanNets,
    store: &mut ParamStore,
    mask: &ClassMask,
    mode: LatentMode,
    record_rng: &mut Rng,
    ref_tile: Option<&RasterTile>,
    overlap: usize,
) -> Result<Vec<f32>> {
    let res = nets.config.resolution();
    let rows = grid_positions(mask.h, res, overlap)?;
    let cols = grid_positions(mask.w, res, overlap)?;
    let mut patches = Vec::with_capacity(rows.len() * cols.len());
    for &y0 in &rows {
        for &x0 in &cols {
            let mask_patch = mask.crop(y0, x0, res);
            let ref_patch = match (mode, ref_tile) {
                (LatentMode::Encoder, Some(tile)) => {
                    let mut crop = tile.crop_image(y0, x0, res);
                    // Encoder expects the generator channel count; extra
                    // source channels (e.g. NIR for an RGB model) are dropped.
                    crop.truncate(nets.config.out_channels * res * res);
                    Some(crop)
                }
                (LatentMode::Encoder, None) => return Err(GanError::MissingReferenceImage),
                _ => None,
            };
            let data = synthesize_patch(
                nets,
                store,
                &mask_patch,
                mode,
                record_rng,
                ref_patch.as_deref(),
            )?;
            patches.push(StitchPatch { y0, x0, data });
        }
    }
    stitch_tile(&patches, nets.config.out_channels, mask.h, mask.w, overlap)
}

fn default_channel_names(out_channels: usize) -> Vec<String> {
    ["R", "G", "B", "NIR"][..out_channels]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

#[derive(Debug, Serialize)]
struct Provenance<'a> {
    format_version: u32,
    checkpoint_hash: &'a str,
    generator_lambda: Option<f64>,
    latent_mode: LatentMode,
    seed: u64,
    copy: usize,
}

/// Generate `copies` synthetic tiles for every mask in the manifest, write
/// them in the tile container format (masks shared with the source, not
/// duplicated), and return + persist the synthetic manifest.
pub fn synthesize_dataset(
    ckpt: &Checkpoint,
    masks: &DatasetManifest,
    job: &SynthesisJob,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if job.copies == 0 {
        return Err(GanError::InvalidConfig("copies must be >= 1".into()));
    }
    let (nets, mut store) = ckpt.restore_nets()?;
    let lambda = ckpt.training_state.as_ref().map(|t| t.lambda);
    let hash = ckpt.weights_hash();
    std::fs::create_dir_all(out_dir).map_err(|source| DataError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;

    let mut manifest = DatasetManifest::new(masks.split);
    for (ri, record) in masks.records.iter().enumerate() {
        let (mask, meta) = load_mask(Path::new(&record.mask_uri))?;
        if mask.num_classes != nets.config.num_classes {
            return Err(GanError::ClassCountMismatch {
                expected: nets.config.num_classes,
                found: mask.num_classes,
            });
        }
        let ref_tile = match job.mode {
            LatentMode::Encoder => Some(record.load()?),
            LatentMode::Prior => None,
        };
        for copy in 0..job.copies {
            let record_index = (ri * job.copies + copy) as u64;
            // splitmix64 is a bijection, so these seeds are unique per record.
            let record_seed = splitmix64(job.seed ^ (record_index + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut rng = Rng::derive(job.seed, "synth-z", record_index);
            let raster = synthesize_tile(
                &nets,
                &mut store,
                &mask,
                job.mode,
                &mut rng,
                ref_tile.as_ref(),
                job.overlap,
            )?;
            let tile = RasterTile::new(
                record.tile_id.clone(),
                raster,
                nets.config.out_channels,
                mask.h,
                mask.w,
                default_channel_names(nets.config.out_channels),
                meta.class_names.clone(),
                mask.clone(),
                masks.split,
            )?;
            let dir = out_dir.join(format!("{}__{}_c{copy:02}", record.tile_id, job.mode));
            write_tile(&dir, &tile, PixelDtype::F32)?;
            let provenance = Provenance {
                format_version: 1,
                checkpoint_hash: &hash,
                generator_lambda: lambda,
                latent_mode: job.mode,
                seed: record_seed,
                copy,
            };
            let prov_path = dir.join("provenance.json");
            std::fs::write(
                &prov_path,
                serde_json::to_string_pretty(&provenance).expect("provenance serializes"),
            )
            .map_err(|source| DataError::Io {
                path: prov_path,
                source,
            })?;
            manifest.records.push(ManifestRecord {
                tile_id: record.tile_id.clone(),
                image_uri: dir.display().to_string(),
                mask_uri: record.mask_uri.clone(),
                source: Source::Synthetic,
                generator_lambda: lambda,
                latent_mode: Some(job.mode),
                seed: Some(record_seed),
            });
        }
    }
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_positions_cover_exactly() {
        assert_eq!(grid_positions(1024, 256, 0).unwrap(), vec![0, 256, 512, 768]);
        assert_eq!(grid_positions(64, 64, 0).unwrap(), vec![0]);
        // Remainder tile: final window aligned to the far edge.
        assert_eq!(grid_positions(1000, 256, 0).unwrap(), vec![0, 256, 512, 744]);
    }

    #[test]
    fn oversized_window_rejected() {
        assert!(grid_positions(100, 128, 0).is_err());
    }

    #[test]
    fn stitching_a_partition_reproduces_the_tile_bitwise() {
        let (c, h, w, r) = (3usize, 96usize, 64usize, 32usize);
        let mut rng = Rng::derive(3, "stitch", 0);
        let tile: Vec<f32> = (0..c * h * w).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let mut patches = Vec::new();
        for y0 in (0..h).step_by(r) {
            for x0 in (0..w).step_by(r) {
                let mut data = Vec::with_capacity(c * r * r);
                for ci in 0..c {
                    for y in y0..y0 + r {
                        data.extend_from_slice(&tile[ci * h * w + y * w + x0..ci * h * w + y * w + x0 + r]);
                    }
                }
                patches.push(StitchPatch {
                    y0,
                    x0,
                    data: Tensor::from_vec(&[c, r, r], data),
                });
            }
        }
        let out = stitch_tile(&patches, c, h, w, 0).unwrap();
        assert!(out.iter().zip(&tile).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn overlap_blend_weights_sum_to_one() {
        // Constant-valued patches: after cross-fade, every pixel must still
        // equal that constant iff the normalized weights sum to one.
        let (c, h, w, r, ov) = (1usize, 96usize, 96usize, 64usize, 16usize);
        let rows = grid_positions(h, r, ov).unwrap();
        let cols = grid_positions(w, r, ov).unwrap();
        let mut patches = Vec::new();
        for &y0 in &rows {
            for &x0 in &cols {
                patches.push(StitchPatch {
                    y0,
                    x0,
                    data: Tensor::full(&[c, r, r], 0.625),
                });
            }
        }
        let out = stitch_tile(&patches, c, h, w, ov).unwrap();
        for &v in &out {
            assert!((v - 0.625).abs() < 1e-6, "blend broke partition of unity: {v}");
        }
    }

    #[test]
    fn remainder_tile_output_has_exact_size() {
        let (c, h, w, r) = (1usize, 150usize, 90usize, 64usize);
        let rows = grid_positions(h, r, 0).unwrap();
        let cols = grid_positions(w, r, 0).unwrap();
        let mut patches = Vec::new();
        for &y0 in &rows {
            for &x0 in &cols {
                patches.push(StitchPatch {
                    y0,
                    x0,
                    data: Tensor::full(&[c, r, r], 0.5),
                });
            }
        }
        let out = stitch_tile(&patches, c, h, w, 0).unwrap();
        assert_eq!(out.len(), c * h * w);
        assert!(out.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn stitched_values_stay_in_range() {
        let (c, h, w, r, ov) = (2usize, 96usize, 96usize, 64usize, 8usize);
        let rows = grid_positions(h, r, ov).unwrap();
        let cols = grid_positions(w, r, ov).unwrap();
        let mut rng = Rng::derive(9, "stitch-range", 0);
        let mut patches = Vec::new();
        for &y0 in &rows {
            for &x0 in &cols {
                let data: Vec<f32> = (0..c * r * r).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
                patches.push(StitchPatch {
                    y0,
                    x0,
                    data: Tensor::from_vec(&[c, r, r], data),
                });
            }
        }
        let out = stitch_tile(&patches, c, h, w, ov).unwrap();
        assert!(out.iter().all(|v| v.abs() <= 1.0));
    }
}
