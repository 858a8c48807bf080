//! End-to-end distribution-distance pipeline: manifests in, report out.

use rayon::prelude::*;

use satsynth_data::{sample_windows, DatasetManifest, LatentMode, PatchSpec};

use crate::error::{EvalError, Result};
use crate::extractor::FeatureExtractor;
use crate::frechet::{frechet_distance, gaussian_stats, FidReport};

/// Extract features over every sampled patch of every tile in the manifest.
/// Parallel over patches; output order is manifest order then window order,
/// independent of thread count.
pub fn extract_manifest_features(
    manifest: &DatasetManifest,
    extractor: &dyn FeatureExtractor,
    patch: &PatchSpec,
) -> Result<Vec<Vec<f64>>> {
    if manifest.is_empty() {
        return Err(EvalError::EmptyManifest);
    }
    let mut features = Vec::new();
    for record in &manifest.records {
        let tile = record.load()?;
        let windows = sample_windows(
            tile.h,
            tile.w,
            patch.size,
            patch.per_tile_count,
            patch.seed,
            &tile.tile_id,
        )?;
        let tile_feats: Vec<Result<Vec<f64>>> = windows
            .par_iter()
            .map(|&(y0, x0)| {
                let crop = tile.crop_image(y0, x0, patch.size);
                extractor.extract(&crop, tile.channels, patch.size, patch.size)
            })
            .collect();
        for f in tile_feats {
            features.push(f?);
        }
    }
    Ok(features)
}

/// Fréchet distance between feature distributions of two manifests.
pub fn compute_fid(
    real: &DatasetManifest,
    synth: &DatasetManifest,
    extractor: &dyn FeatureExtractor,
    mode: LatentMode,
    patch: &PatchSpec,
    checkpoint_hash: Option<String>,
) -> Result<FidReport> {
    let real_features = extract_manifest_features(real, extractor, patch)?;
    let synth_features = extract_manifest_features(synth, extractor, patch)?;
    let stats_real = gaussian_stats(&real_features)?;
    let stats_synth = gaussian_stats(&synth_features)?;
    let value = frechet_distance(&stats_real, &stats_synth)?;
    Ok(FidReport {
        value,
        mode,
        extractor: extractor.name(),
        n_real: real_features.len(),
        n_synth: synth_features.len(),
        checkpoint_hash,
    })
}
