//! Dataset manifests: the declarative unit every trainer and evaluator
//! consumes. Serialized as JSON-lines, one record per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use satsynth_tensor::Rng;

use crate::error::{DataError, Result};
use crate::tile_io::load_tile;
use crate::types::{LatentMode, RasterTile, Source, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub tile_id: String,
    pub image_uri: String,
    pub mask_uri: String,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent_mode: Option<LatentMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ManifestRecord {
    /// Load the full tile this record points at: image from `image_uri`,
    /// mask substituted from `mask_uri` when the two differ (synthetic tiles
    /// share the real mask files rather than duplicating them).
    pub fn load(&self) -> Result<RasterTile> {
        let mut tile = load_tile(Path::new(&self.image_uri))?;
        if self.mask_uri != self.image_uri {
            let (mask, _) = crate::tile_io::load_mask(Path::new(&self.mask_uri))?;
            if mask.h != tile.h || mask.w != tile.w {
                return Err(DataError::ShapeMismatch {
                    tile_id: self.tile_id.clone(),
                    image_h: tile.h,
                    image_w: tile.w,
                    mask_h: mask.h,
                    mask_w: mask.w,
                });
            }
            tile.mask = mask;
        }
        Ok(tile)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub split: Split,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn new(split: Split) -> Self {
        DatasetManifest {
            split,
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Write as JSON-lines. Relative URIs are kept as-is; `load` resolves
    /// them against the manifest's directory.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| DataError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        let mut out = Vec::new();
        for record in &self.records {
            serde_json::to_writer(&mut out, record).expect("record serializes");
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        f.write_all(&out).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Parse a JSON-lines manifest; relative URIs are made absolute against
    /// the manifest's parent directory.
    pub fn load(path: &Path, split: Split) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut record: ManifestRecord =
                serde_json::from_str(line).map_err(|source| DataError::ManifestParse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    source,
                })?;
            record.image_uri = resolve_uri(base, &record.image_uri);
            record.mask_uri = resolve_uri(base, &record.mask_uri);
            records.push(record);
        }
        Ok(DatasetManifest { split, records })
    }

    /// Check the manifest invariants: unique (tile_id, source, seed) keys and
    /// every referenced URI loading as its declared type.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for record in &self.records {
            let key = format!(
                "{}|{:?}|{:?}",
                record.tile_id, record.source, record.seed
            );
            if !seen.insert(key.clone()) {
                return Err(DataError::DuplicateRecord { key });
            }
        }
        for record in &self.records {
            record.load()?;
        }
        Ok(())
    }

    pub fn tile_ids(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.tile_id.clone()).collect()
    }
}

pub fn resolve_uri(base: &Path, uri: &str) -> String {
    let p = Path::new(uri);
    if p.is_absolute() {
        uri.to_string()
    } else {
        base.join(p).display().to_string()
    }
}

/// Mixing recipe: fraction `p` of the output drawn from the synthetic side.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MixSpec {
    pub synthetic_fraction: f64,
    pub total_tiles: usize,
    pub seed: u64,
}

/// round-half-up, the documented tie-break for fractional synthetic counts.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Compose a training manifest with `round(p * total)` synthetic tiles and
/// the remaining tiles real. Each tile id appears exactly once; the side it
/// comes from is decided by a seeded shuffle of the sorted id set.
pub fn build_mix_manifest(
    real: &DatasetManifest,
    synthetic: &DatasetManifest,
    mix: &MixSpec,
) -> Result<DatasetManifest> {
    if !(0.0..=1.0).contains(&mix.synthetic_fraction) {
        return Err(DataError::BadFraction {
            value: mix.synthetic_fraction,
        });
    }
    let real_ids = real.tile_ids();
    let synth_ids = synthetic.tile_ids();
    if real_ids != synth_ids {
        let only_real: Vec<_> = real_ids.difference(&synth_ids).take(3).cloned().collect();
        let only_synth: Vec<_> = synth_ids.difference(&real_ids).take(3).cloned().collect();
        return Err(DataError::TileSetMismatch {
            detail: format!("only real: {only_real:?}, only synthetic: {only_synth:?}"),
        });
    }
    if mix.total_tiles > real_ids.len() {
        return Err(DataError::TotalExceedsAvailable {
            total: mix.total_tiles,
            available: real_ids.len(),
        });
    }

    // First record per tile id on each side.
    let first_by_id = |m: &DatasetManifest| -> BTreeMap<String, ManifestRecord> {
        let mut map = BTreeMap::new();
        for r in &m.records {
            map.entry(r.tile_id.clone()).or_insert_with(|| r.clone());
        }
        map
    };
    let real_by_id = first_by_id(real);
    let synth_by_id = first_by_id(synthetic);

    let mut ids: Vec<String> = real_ids.into_iter().collect();
    let mut rng = Rng::derive(mix.seed, "mix", 0);
    rng.shuffle(&mut ids);
    ids.truncate(mix.total_tiles);

    let n_synth = round_half_up(mix.synthetic_fraction * mix.total_tiles as f64);
    let mut records = Vec::with_capacity(mix.total_tiles);
    for (i, id) in ids.iter().enumerate() {
        let side = if i < n_synth { &synth_by_id } else { &real_by_id };
        records.push(side[id].clone());
    }
    Ok(DatasetManifest {
        split: real.split,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_manifest(split: Split, source: Source, n: usize) -> DatasetManifest {
        let records = (0..n)
            .map(|i| ManifestRecord {
                tile_id: format!("tile_{i:03}"),
                image_uri: format!("/data/{source:?}/tile_{i:03}"),
                mask_uri: format!("/data/real/tile_{i:03}"),
                source,
                generator_lambda: (source == Source::Synthetic).then_some(6.0),
                latent_mode: (source == Source::Synthetic).then_some(LatentMode::Prior),
                seed: Some(i as u64),
            })
            .collect();
        DatasetManifest { split, records }
    }

    #[test]
    fn half_mix_of_100_gives_50_50_disjoint() {
        let real = fake_manifest(Split::Train, Source::Real, 100);
        let synth = fake_manifest(Split::Train, Source::Synthetic, 100);
        let mixed = build_mix_manifest(
            &real,
            &synth,
            &MixSpec {
                synthetic_fraction: 0.5,
                total_tiles: 100,
                seed: 42,
            },
        )
        .unwrap();
        assert_eq!(mixed.len(), 100);
        let n_synth = mixed
            .records
            .iter()
            .filter(|r| r.source == Source::Synthetic)
            .count();
        assert_eq!(n_synth, 50);
        assert_eq!(mixed.tile_ids().len(), 100, "tile ids must be unique");
    }

    #[test]
    fn p_zero_is_pure_real_and_p_one_pure_synthetic() {
        let real = fake_manifest(Split::Train, Source::Real, 20);
        let synth = fake_manifest(Split::Train, Source::Synthetic, 20);
        for (p, want) in [(0.0, Source::Real), (1.0, Source::Synthetic)] {
            let mixed = build_mix_manifest(
                &real,
                &synth,
                &MixSpec {
                    synthetic_fraction: p,
                    total_tiles: 20,
                    seed: 1,
                },
            )
            .unwrap();
            assert!(mixed.records.iter().all(|r| r.source == want), "p={p}");
        }
    }

    #[test]
    fn mismatched_tile_sets_are_rejected() {
        let real = fake_manifest(Split::Train, Source::Real, 10);
        let synth = fake_manifest(Split::Train, Source::Synthetic, 9);
        assert!(matches!(
            build_mix_manifest(
                &real,
                &synth,
                &MixSpec {
                    synthetic_fraction: 0.5,
                    total_tiles: 9,
                    seed: 0,
                }
            ),
            Err(DataError::TileSetMismatch { .. })
        ));
    }

    #[test]
    fn total_beyond_available_is_rejected() {
        let real = fake_manifest(Split::Train, Source::Real, 5);
        let synth = fake_manifest(Split::Train, Source::Synthetic, 5);
        assert!(matches!(
            build_mix_manifest(
                &real,
                &synth,
                &MixSpec {
                    synthetic_fraction: 0.5,
                    total_tiles: 6,
                    seed: 0,
                }
            ),
            Err(DataError::TotalExceedsAvailable { .. })
        ));
    }

    #[test]
    fn selection_is_deterministic_in_seed() {
        let real = fake_manifest(Split::Train, Source::Real, 30);
        let synth = fake_manifest(Split::Train, Source::Synthetic, 30);
        let mix = MixSpec {
            synthetic_fraction: 0.3,
            total_tiles: 25,
            seed: 77,
        };
        let a = build_mix_manifest(&real, &synth, &mix).unwrap();
        let b = build_mix_manifest(&real, &synth, &mix).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn round_half_up_ties() {
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(2.4999), 2);
        assert_eq!(round_half_up(0.0), 0);
    }
}
