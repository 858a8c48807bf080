//! Plain U-Net for per-pixel classification: double-conv encoder levels with
//! 2x max-pooling, a bottleneck, and nearest-upsample decoder levels with
//! skip concatenation.

use serde::{Deserialize, Serialize};

use satsynth_tensor::{Conv2d, Graph, ParamStore, VarId};

use crate::error::{EvalError, Result};

const NORM_EPS: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub base_width: usize,
    pub depth: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            in_channels: 4,
            num_classes: 6,
            base_width: 64,
            depth: 4,
        }
    }
}

#[derive(Debug, Clone)]
struct DoubleConv {
    c1: Conv2d,
    c2: Conv2d,
}

impl DoubleConv {
    fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, seed: u64) -> Self {
        DoubleConv {
            c1: Conv2d::new(store, &format!("{name}.c1"), cin, cout, 3, 1, 1, true, false, seed),
            c2: Conv2d::new(store, &format!("{name}.c2"), cout, cout, 3, 1, 1, true, false, seed),
        }
    }

    fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: VarId) -> VarId {
        let x = self.c1.forward(g, store, x, false);
        let x = g.instance_norm(x, NORM_EPS);
        let x = g.relu(x);
        let x = self.c2.forward(g, store, x, false);
        let x = g.instance_norm(x, NORM_EPS);
        g.relu(x)
    }
}

#[derive(Debug, Clone)]
pub struct UNet {
    pub config: UNetConfig,
    enc: Vec<DoubleConv>,
    bottleneck: DoubleConv,
    up_reduce: Vec<Conv2d>,
    dec: Vec<DoubleConv>,
    head: Conv2d,
}

impl UNet {
    pub fn build(cfg: &UNetConfig, store: &mut ParamStore, seed: u64) -> Result<Self> {
        if cfg.depth == 0 || cfg.base_width == 0 || cfg.num_classes == 0 {
            return Err(EvalError::InvalidConfig("zero-sized U-Net".into()));
        }
        let widths: Vec<usize> = (0..=cfg.depth).map(|i| cfg.base_width << i).collect();
        let mut enc = Vec::new();
        let mut cin = cfg.in_channels;
        for (i, &w) in widths[..cfg.depth].iter().enumerate() {
            enc.push(DoubleConv::new(store, &format!("unet.enc{i}"), cin, w, seed));
            cin = w;
        }
        let bottleneck = DoubleConv::new(
            store,
            "unet.bottleneck",
            widths[cfg.depth - 1],
            widths[cfg.depth],
            seed,
        );
        let mut up_reduce = Vec::new();
        let mut dec = Vec::new();
        for i in (0..cfg.depth).rev() {
            let above = widths[i + 1];
            let skip = widths[i];
            up_reduce.push(Conv2d::new(
                store,
                &format!("unet.up{i}"),
                above,
                skip,
                3,
                1,
                1,
                true,
                false,
                seed,
            ));
            dec.push(DoubleConv::new(
                store,
                &format!("unet.dec{i}"),
                skip * 2,
                skip,
                seed,
            ));
        }
        let head = Conv2d::new(
            store,
            "unet.head",
            widths[0],
            cfg.num_classes,
            1,
            1,
            0,
            true,
            false,
            seed,
        );
        Ok(UNet {
            config: cfg.clone(),
            enc,
            bottleneck,
            up_reduce,
            dec,
            head,
        })
    }

    /// Per-pixel class logits [b, num_classes, h, w]; h and w must be
    /// divisible by 2^depth.
    pub fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: VarId) -> Result<VarId> {
        let (_, c, h, w) = g.data(x).dims4();
        if c != self.config.in_channels {
            return Err(EvalError::ChannelMismatch {
                needed: self.config.in_channels,
                found: c,
            });
        }
        let divisor = 1usize << self.config.depth;
        if h % divisor != 0 || w % divisor != 0 {
            return Err(EvalError::ResolutionIndivisible {
                h,
                w,
                depth: self.config.depth,
            });
        }
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut cur = x;
        for enc in &self.enc {
            cur = enc.forward(g, store, cur);
            skips.push(cur);
            cur = g.max_pool_2x(cur);
        }
        cur = self.bottleneck.forward(g, store, cur);
        for (i, (reduce, dec)) in self.up_reduce.iter().zip(&self.dec).enumerate() {
            let skip = skips[self.config.depth - 1 - i];
            cur = g.upsample_nearest_2x(cur);
            cur = reduce.forward(g, store, cur, false);
            cur = g.concat_channels(cur, skip);
            cur = dec.forward(g, store, cur);
        }
        Ok(self.head.forward(g, store, cur, false))
    }
}
