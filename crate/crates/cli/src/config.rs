//! Harness configuration: a single TOML document mirroring the pipeline's
//! config types field-for-field. `--scale` picks a complete default profile
//! (desk or full); a `--config` file overrides any subset of keys on top.

use std::path::Path;

use serde::{Deserialize, Serialize};

use satsynth_data::{PatchSpec, ToyDatasetSpec};
use satsynth_eval::{SegConfig, UNetConfig};
use satsynth_gan::{DiversityConfig, GanConfig, LossWeights, SynthesisJob, UpstreamConfig};
use satsynth_tensor::rng::{fnv1a, splitmix64};

use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Small toy-data configuration that runs on a laptop CPU.
    Desk,
    /// Full-resolution configuration for real 6000x4000 tile datasets.
    Full,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpstreamSection {
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub clamp: f32,
    pub patch_size: usize,
    pub patches_per_tile: usize,
    pub max_steps: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisSection {
    pub mode: satsynth_data::LatentMode,
    pub copies: usize,
    pub overlap: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidSection {
    pub feature_dim: usize,
    pub resize: usize,
    pub extractor_seed: u64,
    pub patch_size: usize,
    pub patches_per_tile: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DownstreamSection {
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub base_width: usize,
    pub depth: usize,
    pub in_channels: usize,
    pub patch_size: usize,
    pub patches_per_tile: usize,
    pub eval_window: usize,
    pub eval_stride: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSection {
    pub lambdas: Vec<f64>,
    pub p_grid: Vec<f64>,
    pub substitution_copies: Vec<usize>,
    /// Diversity weight of the upstream model backing the substitution and
    /// mixing experiments.
    pub synthesis_lambda: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub seed: u64,
    pub scale: Scale,
    pub toy: ToyDatasetSpec,
    pub gan: GanConfig,
    pub loss_weights: LossWeights,
    pub upstream: UpstreamSection,
    pub synthesis: SynthesisSection,
    pub fid: FidSection,
    pub downstream: DownstreamSection,
    pub experiment: ExperimentSection,
}

impl HarnessConfig {
    pub fn profile(scale: Scale) -> Self {
        match scale {
            Scale::Desk => HarnessConfig {
                seed: 0,
                scale,
                toy: ToyDatasetSpec {
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
                },
                gan: GanConfig::desk(4, 3),
                loss_weights: LossWeights::default(),
                upstream: UpstreamSection {
                    lr: 2e-4,
                    adam_beta1: 0.0,
                    adam_beta2: 0.9,
                    batch_size: 10,
                    epochs: 4,
                    lambda: 0.0,
                    clamp: 10.0,
                    patch_size: 64,
                    patches_per_tile: 32,
                    max_steps: None,
                },
                synthesis: SynthesisSection {
                    mode: satsynth_data::LatentMode::Prior,
                    copies: 1,
                    overlap: 0,
                },
                fid: FidSection {
                    feature_dim: 48,
                    resize: 32,
                    extractor_seed: 7,
                    patch_size: 64,
                    patches_per_tile: 16,
                },
                downstream: DownstreamSection {
                    lr: 1e-4,
                    adam_beta1: 0.0,
                    adam_beta2: 0.9,
                    batch_size: 10,
                    early_stop_patience: 10,
                    max_epochs: 20,
                    base_width: 16,
                    depth: 4,
                    in_channels: 3,
                    patch_size: 64,
                    patches_per_tile: 32,
                    eval_window: 64,
                    eval_stride: 64,
                },
                experiment: ExperimentSection {
                    lambdas: vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0],
                    p_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
                    substitution_copies: vec![1, 2, 3],
                    synthesis_lambda: 4.0,
                },
            },
            Scale::Full => HarnessConfig {
                seed: 0,
                scale,
                toy: ToyDatasetSpec::default(),
                gan: GanConfig::default(),
                loss_weights: LossWeights::default(),
                upstream: UpstreamSection {
                    lr: 2e-4,
                    adam_beta1: 0.0,
                    adam_beta2: 0.9,
                    batch_size: 10,
                    epochs: 4,
                    lambda: 0.0,
                    clamp: 10.0,
                    patch_size: 256,
                    patches_per_tile: 200,
                    max_steps: None,
                },
                synthesis: SynthesisSection {
                    mode: satsynth_data::LatentMode::Prior,
                    copies: 1,
                    overlap: 0,
                },
                fid: FidSection {
                    feature_dim: 2048,
                    resize: 299,
                    extractor_seed: 7,
                    patch_size: 256,
                    patches_per_tile: 200,
                },
                downstream: DownstreamSection {
                    lr: 1e-4,
                    adam_beta1: 0.0,
                    adam_beta2: 0.9,
                    batch_size: 10,
                    early_stop_patience: 10,
                    max_epochs: 100,
                    base_width: 64,
                    depth: 4,
                    in_channels: 3,
                    patch_size: 256,
                    patches_per_tile: 200,
                    eval_window: 256,
                    eval_stride: 256,
                },
                experiment: ExperimentSection {
                    lambdas: vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0],
                    p_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
                    substitution_copies: vec![1, 2, 3],
                    synthesis_lambda: 6.0,
                },
            },
        }
    }

    /// Profile defaults overlaid with a partial TOML document.
    pub fn load(scale: Scale, config_path: Option<&Path>) -> Result<Self, HarnessError> {
        let base = Self::profile(scale);
        let Some(path) = config_path else {
            return Ok(base);
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        let overlay: toml::Value = toml::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut merged = toml::Value::try_from(&base)
            .map_err(|e| HarnessError::Config(format!("profile serialization: {e}")))?;
        merge_toml(&mut merged, overlay);
        merged
            .try_into()
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    /// FNV-1a over the canonical TOML serialization; embedded in reports so
    /// outputs are traceable to the exact configuration.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a(text.as_bytes()))
    }

    /// Stream seed derivation: every pipeline stage draws from the root seed
    /// through a labelled mix, so one seed pins the whole experiment.
    pub fn derive_seed(&self, label: &str) -> u64 {
        splitmix64(self.seed ^ fnv1a(label.as_bytes()))
    }

    pub fn upstream_config(&self, lambda: f64) -> UpstreamConfig {
        UpstreamConfig {
            gan: self.gan.clone(),
            lr: self.upstream.lr,
            adam_beta1: self.upstream.adam_beta1,
            adam_beta2: self.upstream.adam_beta2,
            batch_size: self.upstream.batch_size,
            epochs: self.upstream.epochs,
            diversity: DiversityConfig {
                weight: lambda,
                clamp: self.upstream.clamp,
            },
            weights: self.loss_weights,
            patch: PatchSpec {
                size: self.upstream.patch_size,
                per_tile_count: self.upstream.patches_per_tile,
                seed: self.derive_seed("upstream-patches"),
            },
            seed: self.derive_seed("upstream"),
            max_steps: self.upstream.max_steps,
        }
    }

    pub fn seg_config(&self) -> SegConfig {
        SegConfig {
            unet: UNetConfig {
                in_channels: self.downstream.in_channels,
                num_classes: self.gan.num_classes,
                base_width: self.downstream.base_width,
                depth: self.downstream.depth,
            },
            lr: self.downstream.lr,
            adam_beta1: self.downstream.adam_beta1,
            adam_beta2: self.downstream.adam_beta2,
            batch_size: self.downstream.batch_size,
            early_stop_patience: self.downstream.early_stop_patience,
            max_epochs: self.downstream.max_epochs,
            patch: PatchSpec {
                size: self.downstream.patch_size,
                per_tile_count: self.downstream.patches_per_tile,
                seed: self.derive_seed("downstream-patches"),
            },
            seed: self.derive_seed("downstream"),
            eval_window: self.downstream.eval_window,
            eval_stride: self.downstream.eval_stride,
        }
    }

    pub fn synthesis_job(&self, label: &str) -> SynthesisJob {
        SynthesisJob {
            mode: self.synthesis.mode,
            copies: self.synthesis.copies,
            seed: self.derive_seed(label),
            overlap: self.synthesis.overlap,
        }
    }

    pub fn fid_patch(&self) -> PatchSpec {
        PatchSpec {
            size: self.fid.patch_size,
            per_tile_count: self.fid.patches_per_tile,
            seed: self.derive_seed("fid-patches"),
        }
    }

    pub fn toy_spec(&self) -> ToyDatasetSpec {
        let mut spec = self.toy.clone();
        spec.seed = self.derive_seed("toy");
        spec
    }
}

/// Recursive table merge: overlay values win, tables merge key-by-key.
fn merge_toml(base: &mut toml::Value, overlay: toml::Value) {
    match (base, overlay) {
        (toml::Value::Table(base_map), toml::Value::Table(overlay_map)) => {
            for (k, v) in overlay_map {
                match base_map.get_mut(&k) {
                    Some(slot) => merge_toml(slot, v),
                    None => {
                        base_map.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
