//! Core dataset value types.

use serde::{Deserialize, Serialize};

use satsynth_tensor::Tensor;

use crate::error::{DataError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentMode {
    Encoder,
    Prior,
}

impl std::fmt::Display for LatentMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LatentMode::Encoder => write!(f, "encoder"),
            LatentMode::Prior => write!(f, "prior"),
        }
    }
}

/// Per-pixel class indices, row-major H x W.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMask {
    pub classes: Vec<u8>,
    pub h: usize,
    pub w: usize,
    pub num_classes: usize,
}

impl ClassMask {
    pub fn new(classes: Vec<u8>, h: usize, w: usize, num_classes: usize) -> Result<Self> {
        assert_eq!(classes.len(), h * w, "mask buffer does not match {h}x{w}");
        if let Some(&bad) = classes.iter().find(|&&c| (c as usize) >= num_classes) {
            return Err(DataError::ClassOutOfRange {
                tile_id: String::new(),
                class: bad,
                num_classes,
            });
        }
        Ok(ClassMask {
            classes,
            h,
            w,
            num_classes,
        })
    }

    pub fn class_at(&self, y: usize, x: usize) -> u8 {
        self.classes[y * self.w + x]
    }

    /// One-hot planes [num_classes, h, w]: plane c is 1 exactly where the
    /// mask equals c.
    pub fn one_hot(&self) -> Tensor {
        let plane = self.h * self.w;
        let mut data = vec![0.0f32; self.num_classes * plane];
        for (i, &c) in self.classes.iter().enumerate() {
            data[c as usize * plane + i] = 1.0;
        }
        Tensor::from_vec(&[self.num_classes, self.h, self.w], data)
    }

    pub fn crop(&self, y0: usize, x0: usize, size: usize) -> ClassMask {
        assert!(y0 + size <= self.h && x0 + size <= self.w, "mask crop out of bounds");
        let mut out = Vec::with_capacity(size * size);
        for y in y0..y0 + size {
            out.extend_from_slice(&self.classes[y * self.w + x0..y * self.w + x0 + size]);
        }
        ClassMask {
            classes: out,
            h: size,
            w: size,
            num_classes: self.num_classes,
        }
    }
}

/// Argmax over one-hot planes back to a class mask; inverse of
/// [`ClassMask::one_hot`].
pub fn argmax_planes(planes: &Tensor) -> ClassMask {
    assert_eq!(planes.shape.len(), 3, "expected [classes, h, w]");
    let (c, h, w) = (planes.shape[0], planes.shape[1], planes.shape[2]);
    let plane = h * w;
    let mut classes = vec![0u8; plane];
    for i in 0..plane {
        let mut best = 0usize;
        let mut best_v = planes.data[i];
        for ci in 1..c {
            let v = planes.data[ci * plane + i];
            if v > best_v {
                best_v = v;
                best = ci;
            }
        }
        classes[i] = best as u8;
    }
    ClassMask {
        classes,
        h,
        w,
        num_classes: c,
    }
}

/// A full scene: channel-major image raster in [-1, 1] plus aligned mask.
#[derive(Debug, Clone)]
pub struct RasterTile {
    pub tile_id: String,
    /// Channel-major C x H x W.
    pub image: Vec<f32>,
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub channel_names: Vec<String>,
    pub class_names: Vec<String>,
    pub mask: ClassMask,
    pub split: Split,
}

impl RasterTile {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        tile_id: String,
        image: Vec<f32>,
        channels: usize,
        h: usize,
        w: usize,
        channel_names: Vec<String>,
        class_names: Vec<String>,
        mask: ClassMask,
        split: Split,
    ) -> Result<Self> {
        if channels != 3 && channels != 4 {
            return Err(DataError::UnsupportedChannels {
                tile_id,
                found: channels,
            });
        }
        if channel_names.len() != channels {
            return Err(DataError::Invalid {
                tile_id,
                msg: format!(
                    "{} channel names for {} channels",
                    channel_names.len(),
                    channels
                ),
            });
        }
        if mask.h != h || mask.w != w {
            return Err(DataError::ShapeMismatch {
                tile_id,
                image_h: h,
                image_w: w,
                mask_h: mask.h,
                mask_w: mask.w,
            });
        }
        if image.len() != channels * h * w {
            return Err(DataError::Invalid {
                tile_id,
                msg: format!(
                    "image buffer has {} values, expected {}",
                    image.len(),
                    channels * h * w
                ),
            });
        }
        if let Some(v) = image.iter().find(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(DataError::Invalid {
                tile_id,
                msg: format!("image value {v} outside [-1, 1]"),
            });
        }
        Ok(RasterTile {
            tile_id,
            image,
            channels,
            h,
            w,
            channel_names,
            class_names,
            mask,
            split,
        })
    }

    /// Image crop as a [c, size, size] buffer.
    pub fn crop_image(&self, y0: usize, x0: usize, size: usize) -> Vec<f32> {
        assert!(y0 + size <= self.h && x0 + size <= self.w, "image crop out of bounds");
        let mut out = Vec::with_capacity(self.channels * size * size);
        for c in 0..self.channels {
            let base = c * self.h * self.w;
            for y in y0..y0 + size {
                let row = base + y * self.w + x0;
                out.extend_from_slice(&self.image[row..row + size]);
            }
        }
        out
    }
}
