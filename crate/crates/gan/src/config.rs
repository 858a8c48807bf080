//! Network family configuration.

use serde::{Deserialize, Serialize};

use crate::error::{GanError, Result};

/// Hyperparameters of the encoder / generator / discriminator family.
///
/// The generator grows a 4x4 seed through `num_spade_blocks` blocks with a
/// 2x nearest upsample before every block after the first, so the output
/// resolution is `4 * 2^(num_spade_blocks - 1)`. Full-scale defaults follow
/// the reference architecture; desk-scale runs shrink `base_width` and the
/// block count through configuration, not code changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub z_dim: usize,
    /// Generator channel multiplier (64 full scale, 16 desk scale).
    pub base_width: usize,
    pub num_spade_blocks: usize,
    pub out_channels: usize,
    pub num_classes: usize,
    /// Hidden width of the mask-embedding convolution inside each SPADE layer.
    pub spade_hidden: usize,
    pub disc_scales: usize,
    pub disc_layers: usize,
    /// Discriminator channel multiplier.
    pub disc_width: usize,
    pub spectral_norm: bool,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            z_dim: 256,
            base_width: 64,
            num_spade_blocks: 7,
            out_channels: 3,
            num_classes: 6,
            spade_hidden: 128,
            disc_scales: 2,
            disc_layers: 4,
            disc_width: 64,
            spectral_norm: true,
        }
    }
}

impl GanConfig {
    /// Desk-scale profile: 64x64 patches, widths divided by four.
    pub fn desk(num_classes: usize, out_channels: usize) -> Self {
        GanConfig {
            z_dim: 64,
            base_width: 16,
            num_spade_blocks: 5,
            out_channels,
            num_classes,
            spade_hidden: 32,
            disc_scales: 2,
            disc_layers: 4,
            disc_width: 16,
            spectral_norm: true,
        }
    }

    pub fn resolution(&self) -> usize {
        4 << (self.num_spade_blocks - 1)
    }

    /// Generator channel schedule, length `num_spade_blocks + 1`: block i maps
    /// channels[i] -> channels[i+1], starting from a 16x multiplier capped
    /// seed and decaying to `base_width`.
    pub fn generator_channels(&self) -> Vec<usize> {
        let n = self.num_spade_blocks;
        let mut ch: Vec<usize> = (0..n)
            .map(|i| self.base_width * 16.min(1usize << (n - 1 - i)))
            .collect();
        ch.push(self.base_width);
        ch
    }

    /// Encoder downsample widths, from the image to the 4x4 head.
    pub fn encoder_channels(&self) -> Vec<usize> {
        let downs = self.num_spade_blocks - 1;
        (0..downs)
            .map(|i| self.base_width * 8.min(1usize << i))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_spade_blocks < 2 {
            return Err(GanError::InvalidConfig(
                "num_spade_blocks must be at least 2".into(),
            ));
        }
        if self.out_channels != 3 && self.out_channels != 4 {
            return Err(GanError::InvalidConfig(format!(
                "out_channels must be 3 or 4, got {}",
                self.out_channels
            )));
        }
        if self.num_classes == 0 || self.num_classes > 255 {
            return Err(GanError::InvalidConfig(format!(
                "num_classes {} out of range",
                self.num_classes
            )));
        }
        if self.z_dim == 0 || self.base_width == 0 || self.disc_width == 0 {
            return Err(GanError::InvalidConfig("zero-sized width".into()));
        }
        if self.disc_scales == 0 || self.disc_layers == 0 {
            return Err(GanError::InvalidConfig("discriminator needs scales and layers".into()));
        }
        // Every discriminator scale must keep at least one logit pixel.
        let min_input = self.resolution() >> (self.disc_scales - 1);
        if min_input >> self.disc_layers == 0 {
            return Err(GanError::InvalidConfig(format!(
                "resolution {} too small for {} scales x {} stride-2 layers",
                self.resolution(),
                self.disc_scales,
                self.disc_layers
            )));
        }
        Ok(())
    }

    /// Assert that a training patch size matches the generator resolution.
    pub fn check_resolution(&self, h: usize, w: usize) -> Result<()> {
        let r = self.resolution();
        if h != r || w != r {
            return Err(GanError::ResolutionMismatch {
                expected: r,
                found_h: h,
                found_w: w,
            });
        }
        Ok(())
    }
}
