//! Procedural toy dataset: a desk-scale stand-in for real aerial tiles.
//!
//! Masks are Voronoi partitions over seeded sites; each class renders as a
//! well-separated base color plus per-region jitter and pixel noise. The
//! class-to-color rule is invertible, so a nearest-color classifier gives a
//! near-perfect reference segmentation against which learned models can be
//! judged.

use std::path::Path;

use serde::{Deserialize, Serialize};

use satsynth_tensor::Rng;

use crate::error::Result;
use crate::manifest::{DatasetManifest, ManifestRecord};
use crate::tile_io::{write_tile, PixelDtype};
use crate::types::{ClassMask, RasterTile, Source, Split};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyDatasetSpec {
    pub train_tiles: usize,
    pub val_tiles: usize,
    pub test_tiles: usize,
    pub tile_size: usize,
    pub num_classes: usize,
    pub channels: usize,
    pub seed: u64,
    /// Std-dev of per-pixel Gaussian noise on top of the class color.
    pub noise_sigma: f32,
    /// Per-region color jitter amplitude.
    pub jitter: f32,
    /// Voronoi sites per tile; drives region granularity.
    pub sites: usize,
}

impl Default for ToyDatasetSpec {
    fn default() -> Self {
        ToyDatasetSpec {
            train_tiles: 8,
            val_tiles: 2,
            test_tiles: 4,
            tile_size: 64,
            num_classes: 4,
            channels: 3,
            seed: 0,
            noise_sigma: 0.08,
            jitter: 0.04,
            sites: 10,
        }
    }
}

/// Base color of a class, chosen so every pair is far apart relative to the
/// noise level. Supports up to 6 classes and 4 channels.
pub fn toy_class_color(class: usize, channels: usize) -> Vec<f32> {
    const TABLE: [[f32; 4]; 6] = [
        [-0.75, -0.55, 0.70, -0.80], // water: blue, dark in NIR
        [-0.45, 0.60, -0.55, 0.75],  // tree canopy: green, bright in NIR
        [0.55, 0.65, -0.35, 0.45],   // low vegetation
        [0.70, -0.50, -0.60, -0.30], // barren
        [-0.15, -0.10, -0.05, -0.55],// impervious (other)
        [0.65, 0.60, 0.70, -0.10],   // impervious (road)
    ];
    assert!(class < TABLE.len(), "toy palette has at most 6 classes");
    TABLE[class][..channels].to_vec()
}

pub fn toy_class_names(num_classes: usize) -> Vec<String> {
    const NAMES: [&str; 6] = [
        "water",
        "tree_canopy",
        "low_vegetation",
        "barren",
        "impervious_other",
        "impervious_road",
    ];
    NAMES[..num_classes].iter().map(|s| s.to_string()).collect()
}

pub fn toy_channel_names(channels: usize) -> Vec<String> {
    const NAMES: [&str; 4] = ["R", "G", "B", "NIR"];
    NAMES[..channels].iter().map(|s| s.to_string()).collect()
}

/// Render one toy tile deterministically from (spec.seed, split, index).
pub fn render_toy_tile(spec: &ToyDatasetSpec, split: Split, index: usize) -> RasterTile {
    let s = spec.tile_size;
    let stream = match split {
        Split::Train => "toy-train",
        Split::Val => "toy-val",
        Split::Test => "toy-test",
    };
    let mut rng = Rng::derive(spec.seed, stream, index as u64);

    // Voronoi sites; the first num_classes sites take distinct classes so
    // every class is present in every tile.
    let n_sites = spec.sites.max(spec.num_classes);
    let mut sites = Vec::with_capacity(n_sites);
    for i in 0..n_sites {
        let y = rng.below(s as u64) as f64;
        let x = rng.below(s as u64) as f64;
        let class = if i < spec.num_classes {
            i
        } else {
            rng.below(spec.num_classes as u64) as usize
        };
        sites.push((y, x, class));
    }

    let mut classes = vec![0u8; s * s];
    let mut site_of = vec![0usize; s * s];
    for y in 0..s {
        for x in 0..s {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (i, &(sy, sx, _)) in sites.iter().enumerate() {
                let d = (sy - y as f64).powi(2) + (sx - x as f64).powi(2);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            classes[y * s + x] = sites[best].2 as u8;
            site_of[y * s + x] = best;
        }
    }

    // Per-site color jitter, then per-pixel noise.
    let jitters: Vec<Vec<f32>> = (0..n_sites)
        .map(|_| {
            (0..spec.channels)
                .map(|_| rng.uniform_in(-spec.jitter, spec.jitter))
                .collect()
        })
        .collect();
    let mut image = vec![0.0f32; spec.channels * s * s];
    for y in 0..s {
        for x in 0..s {
            let idx = y * s + x;
            let base = toy_class_color(classes[idx] as usize, spec.channels);
            let jitter = &jitters[site_of[idx]];
            for c in 0..spec.channels {
                let v = base[c] + jitter[c] + spec.noise_sigma * rng.normal();
                image[c * s * s + idx] = v.clamp(-1.0, 1.0);
            }
        }
    }

    let mask = ClassMask::new(classes, s, s, spec.num_classes).expect("toy mask valid");
    RasterTile::new(
        format!("toy_{split}_{index:03}"),
        image,
        spec.channels,
        s,
        s,
        toy_channel_names(spec.channels),
        toy_class_names(spec.num_classes),
        mask,
        split,
    )
    .expect("toy tile valid")
}

pub struct ToyDataset {
    pub train: DatasetManifest,
    pub val: DatasetManifest,
    pub test: DatasetManifest,
}

/// Write the full toy dataset under `out_dir` (tiles/ plus manifests/) and
/// return the three split manifests.
pub fn make_toy_dataset(spec: &ToyDatasetSpec, out_dir: &Path) -> Result<ToyDataset> {
    let tiles_dir = out_dir.join("tiles");
    let manifest_dir = out_dir.join("manifests");
    let mut manifests = Vec::new();
    for (split, count) in [
        (Split::Train, spec.train_tiles),
        (Split::Val, spec.val_tiles),
        (Split::Test, spec.test_tiles),
    ] {
        let mut manifest = DatasetManifest::new(split);
        for i in 0..count {
            let tile = render_toy_tile(spec, split, i);
            let dir = tiles_dir.join(&tile.tile_id);
            write_tile(&dir, &tile, PixelDtype::F32)?;
            let uri = dir.display().to_string();
            manifest.records.push(ManifestRecord {
                tile_id: tile.tile_id.clone(),
                image_uri: uri.clone(),
                mask_uri: uri,
                source: Source::Real,
                generator_lambda: None,
                latent_mode: None,
                seed: None,
            });
        }
        manifest.save(&manifest_dir.join(format!("{split}.jsonl")))?;
        manifests.push(manifest);
    }
    let mut it = manifests.into_iter();
    Ok(ToyDataset {
        train: it.next().unwrap(),
        val: it.next().unwrap(),
        test: it.next().unwrap(),
    })
}

/// Nearest-base-color classifier: the inverse of the rendering rule. Serves
/// as the reference segmenter for toy imagery.
pub fn bayes_predict(image: &[f32], channels: usize, h: usize, w: usize, num_classes: usize) -> ClassMask {
    let plane = h * w;
    assert_eq!(image.len(), channels * plane);
    let colors: Vec<Vec<f32>> = (0..num_classes)
        .map(|c| toy_class_color(c, channels))
        .collect();
    let mut classes = vec![0u8; plane];
    for i in 0..plane {
        let mut best = 0usize;
        let mut best_d = f32::INFINITY;
        for (c, color) in colors.iter().enumerate() {
            let mut d = 0.0f32;
            for (ch, &base) in color.iter().enumerate() {
                let diff = image[ch * plane + i] - base;
                d += diff * diff;
            }
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        classes[i] = best as u8;
    }
    ClassMask {
        classes,
        h,
        w,
        num_classes,
    }
}
