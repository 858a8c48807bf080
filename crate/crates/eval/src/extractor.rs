//! Pluggable image feature extraction for distribution distances.
//!
//! The production configuration plugs a pretrained classification network's
//! pooled features in behind [`FeatureExtractor`]; tests and desk-scale runs
//! use [`RandomProjectionExtractor`], which is deterministic and needs no
//! external weights, so the whole distance pipeline stays hermetic.

use satsynth_tensor::Rng;

use crate::error::{EvalError, Result};

#[derive(Debug, Clone, Copy)]
pub struct PreprocessSpec {
    /// Target square side after bilinear resize.
    pub resize: usize,
    /// Channels consumed by the extractor; extra input channels (e.g. NIR)
    /// are dropped, keeping the leading ones.
    pub channels: usize,
}

pub trait FeatureExtractor: Sync {
    fn name(&self) -> String;
    fn dim(&self) -> usize;
    fn preprocess_spec(&self) -> PreprocessSpec;
    /// Pure function image -> feature vector of length `dim()`.
    fn extract(&self, image: &[f32], channels: usize, h: usize, w: usize) -> Result<Vec<f64>>;
}

/// Select the leading channels and bilinearly resize to the spec target.
pub fn preprocess_image(
    image: &[f32],
    channels: usize,
    h: usize,
    w: usize,
    spec: &PreprocessSpec,
) -> Result<Vec<f32>> {
    if channels < spec.channels {
        return Err(EvalError::ChannelMismatch {
            needed: spec.channels,
            found: channels,
        });
    }
    assert_eq!(image.len(), channels * h * w);
    let t = spec.resize;
    let mut out = vec![0.0f32; spec.channels * t * t];
    let sy = h as f64 / t as f64;
    let sx = w as f64 / t as f64;
    for c in 0..spec.channels {
        let src = &image[c * h * w..(c + 1) * h * w];
        let dst = &mut out[c * t * t..(c + 1) * t * t];
        for y in 0..t {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let wy = (fy - y0 as f64) as f32;
            for x in 0..t {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let wx = (fx - x0 as f64) as f32;
                let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
                let bottom = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
                dst[y * t + x] = top * (1.0 - wy) + bottom * wy;
            }
        }
    }
    Ok(out)
}

/// Seeded Gaussian random projection of the preprocessed image. Linear, so
/// distribution distances over its features behave predictably, and fully
/// determined by (seed, dim, resize).
pub struct RandomProjectionExtractor {
    seed: u64,
    dim: usize,
    spec: PreprocessSpec,
    /// [dim, channels * resize^2], N(0, 1/sqrt(in)).
    projection: Vec<f32>,
}

impl RandomProjectionExtractor {
    pub fn new(seed: u64, dim: usize, resize: usize) -> Self {
        let spec = PreprocessSpec {
            resize,
            channels: 3,
        };
        let in_dim = spec.channels * resize * resize;
        let scale = 1.0 / (in_dim as f64).sqrt() as f32;
        let mut rng = Rng::derive(seed, "random-projection", 0);
        let projection: Vec<f32> = (0..dim * in_dim).map(|_| rng.normal() * scale).collect();
        RandomProjectionExtractor {
            seed,
            dim,
            spec,
            projection,
        }
    }
}

impl FeatureExtractor for RandomProjectionExtractor {
    fn name(&self) -> String {
        format!("randproj-d{}-r{}-s{}", self.dim, self.spec.resize, self.seed)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn preprocess_spec(&self) -> PreprocessSpec {
        self.spec
    }

    fn extract(&self, image: &[f32], channels: usize, h: usize, w: usize) -> Result<Vec<f64>> {
        let x = preprocess_image(image, channels, h, w, &self.spec)?;
        let in_dim = x.len();
        let mut out = vec![0.0f64; self.dim];
        for (d, o) in out.iter_mut().enumerate() {
            let row = &self.projection[d * in_dim..(d + 1) * in_dim];
            *o = row
                .iter()
                .zip(&x)
                .map(|(p, v)| *p as f64 * *v as f64)
                .sum();
        }
        Ok(out)
    }
}
