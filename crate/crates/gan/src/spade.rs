//! Spatially-adaptive denormalization: scale and shift fields computed from
//! the class-mask planes modulate parameter-free normalized features.

use satsynth_tensor::{Conv2d, Graph, ParamStore, Tensor, VarId};

pub const NORM_EPS: f32 = 1e-5;

/// Nearest-neighbor resize of [b, c, h, w] planes to a target resolution.
/// Used to inject the one-hot mask at every feature scale; nearest keeps the
/// class boundaries hard.
pub fn resize_planes_nearest(planes: &Tensor, th: usize, tw: usize) -> Tensor {
    let (b, c, h, w) = planes.dims4();
    if h == th && w == tw {
        return planes.clone();
    }
    let mut out = vec![0.0f32; b * c * th * tw];
    for bc in 0..b * c {
        let src = &planes.data[bc * h * w..(bc + 1) * h * w];
        let dst = &mut out[bc * th * tw..(bc + 1) * th * tw];
        for y in 0..th {
            let sy = y * h / th;
            for x in 0..tw {
                let sx = x * w / tw;
                dst[y * tw + x] = src[sy * w + sx];
            }
        }
    }
    Tensor::from_vec(&[b, c, th, tw], out)
}

/// One SPADE layer: gamma and beta are 3x3 convolutions of a shared mask
/// embedding, applied as `normalized * (1 + gamma) + beta`.
#[derive(Debug, Clone)]
pub struct Spade {
    pub shared: Conv2d,
    pub gamma: Conv2d,
    pub beta: Conv2d,
}

impl Spade {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        num_classes: usize,
        hidden: usize,
        feature_channels: usize,
        init_seed: u64,
    ) -> Self {
        let shared = Conv2d::new(
            store,
            &format!("{name}.shared"),
            num_classes,
            hidden,
            3,
            1,
            1,
            true,
            false,
            init_seed,
        );
        let gamma = Conv2d::new(
            store,
            &format!("{name}.gamma"),
            hidden,
            feature_channels,
            3,
            1,
            1,
            true,
            false,
            init_seed,
        );
        let beta = Conv2d::new(
            store,
            &format!("{name}.beta"),
            hidden,
            feature_channels,
            3,
            1,
            1,
            true,
            false,
            init_seed,
        );
        Spade {
            shared,
            gamma,
            beta,
        }
    }

    /// `mask_planes` must already be resized to the feature resolution.
    pub fn modulate(
        &self,
        g: &mut Graph,
        store: &mut ParamStore,
        features: VarId,
        mask_planes: VarId,
    ) -> VarId {
        let (_, _, fh, fw) = g.data(features).dims4();
        let (_, _, mh, mw) = g.data(mask_planes).dims4();
        assert_eq!(
            (fh, fw),
            (mh, mw),
            "mask planes {mh}x{mw} do not match feature resolution {fh}x{fw}"
        );
        let normalized = g.instance_norm(features, NORM_EPS);
        let hidden = self.shared.forward(g, store, mask_planes, false);
        let hidden = g.relu(hidden);
        let gamma = self.gamma.forward(g, store, hidden, false);
        let beta = self.beta.forward(g, store, hidden, false);
        // normalized * (1 + gamma) + beta
        let scaled = g.mul(normalized, gamma);
        let with_scale = g.add(normalized, scaled);
        g.add(with_scale, beta)
    }
}

/// SPADE ResNet block: two modulated 3x3 convolutions plus a (possibly
/// learned) skip connection, all conditioned on the mask planes.
#[derive(Debug, Clone)]
pub struct SpadeResBlock {
    pub spade0: Spade,
    pub conv0: Conv2d,
    pub spade1: Spade,
    pub conv1: Conv2d,
    pub skip: Option<(Spade, Conv2d)>,
}

impl SpadeResBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        num_classes: usize,
        hidden: usize,
        init_seed: u64,
    ) -> Self {
        let mid = in_ch.min(out_ch);
        let spade0 = Spade::new(store, &format!("{name}.spade0"), num_classes, hidden, in_ch, init_seed);
        let conv0 = Conv2d::new(
            store,
            &format!("{name}.conv0"),
            in_ch,
            mid,
            3,
            1,
            1,
            true,
            false,
            init_seed,
        );
        let spade1 = Spade::new(store, &format!("{name}.spade1"), num_classes, hidden, mid, init_seed);
        let conv1 = Conv2d::new(
            store,
            &format!("{name}.conv1"),
            mid,
            out_ch,
            3,
            1,
            1,
            true,
            false,
            init_seed,
        );
        let skip = (in_ch != out_ch).then(|| {
            let spade_s = Spade::new(
                store,
                &format!("{name}.spade_s"),
                num_classes,
                hidden,
                in_ch,
                init_seed,
            );
            let conv_s = Conv2d::new(
                store,
                &format!("{name}.conv_s"),
                in_ch,
                out_ch,
                1,
                1,
                0,
                false,
                false,
                init_seed,
            );
            (spade_s, conv_s)
        });
        SpadeResBlock {
            spade0,
            conv0,
            spade1,
            conv1,
            skip,
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &mut ParamStore,
        x: VarId,
        mask_planes: VarId,
    ) -> VarId {
        let shortcut = match &self.skip {
            Some((spade_s, conv_s)) => {
                let s = spade_s.modulate(g, store, x, mask_planes);
                conv_s.forward(g, store, s, false)
            }
            None => x,
        };
        let dx = self.spade0.modulate(g, store, x, mask_planes);
        let dx = g.leaky_relu(dx, 0.2);
        let dx = self.conv0.forward(g, store, dx, false);
        let dx = self.spade1.modulate(g, store, dx, mask_planes);
        let dx = g.leaky_relu(dx, 0.2);
        let dx = self.conv1.forward(g, store, dx, false);
        g.add(shortcut, dx)
    }
}
