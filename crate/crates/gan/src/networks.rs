//! The upstream network family: style encoder, SPADE generator, and
//! multi-scale PatchGAN discriminator.

use satsynth_data::ClassMask;
use satsynth_tensor::{Conv2d, Graph, Linear, ParamId, ParamStore, Tensor, VarId};

use crate::config::GanConfig;
use crate::error::{GanError, Result};
use crate::spade::{resize_planes_nearest, SpadeResBlock, NORM_EPS};

/// Mean and log-variance of the encoder's latent posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStats {
    pub mu: Vec<f32>,
    pub logvar: Vec<f32>,
}

/// Generator input noise.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVector(pub Vec<f32>);

impl LatentVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GanError::InvalidConfig("latent vector has non-finite entries".into()));
        }
        Ok(LatentVector(values))
    }
}

/// z = mu + exp(logvar / 2) * noise.
pub fn reparameterize(stats: &LatentStats, noise: &[f32]) -> Result<LatentVector> {
    if noise.len() != stats.mu.len() || stats.logvar.len() != stats.mu.len() {
        return Err(GanError::LatentLengthMismatch {
            expected: stats.mu.len(),
            found: noise.len(),
        });
    }
    let values = stats
        .mu
        .iter()
        .zip(&stats.logvar)
        .zip(noise)
        .map(|((&m, &lv), &n)| m + (lv * 0.5).exp() * n)
        .collect();
    LatentVector::new(values)
}

/// Graph-side reparameterization for training.
pub fn reparameterize_var(g: &mut Graph, mu: VarId, logvar: VarId, noise: VarId) -> VarId {
    let half = g.mul_scalar(logvar, 0.5);
    let sigma = g.exp(half);
    let scaled = g.mul(sigma, noise);
    g.add(mu, scaled)
}

/// Convolutional encoder to (mu, logvar); stride-2 stack down to a 4x4 head
/// followed by two linear projections.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub convs: Vec<Conv2d>,
    pub fc_mu: Linear,
    pub fc_logvar: Linear,
    head_dim: usize,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, cfg: &GanConfig, init_seed: u64) -> Self {
        let widths = cfg.encoder_channels();
        let mut convs = Vec::new();
        let mut in_ch = cfg.out_channels;
        for (i, &w) in widths.iter().enumerate() {
            convs.push(Conv2d::new(
                store,
                &format!("enc.conv{i}"),
                in_ch,
                w,
                3,
                2,
                1,
                true,
                false,
                init_seed,
            ));
            in_ch = w;
        }
        let head_dim = in_ch * 16;
        let fc_mu = Linear::new(store, "enc.fc_mu", head_dim, cfg.z_dim, init_seed);
        let fc_logvar = Linear::new(store, "enc.fc_logvar", head_dim, cfg.z_dim, init_seed);
        Encoder {
            convs,
            fc_mu,
            fc_logvar,
            head_dim,
        }
    }

    /// `images`: [b, out_channels, res, res] -> (mu, logvar) each [b, z_dim].
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &mut ParamStore,
        images: VarId,
    ) -> (VarId, VarId) {
        let (b, _, _, _) = g.data(images).dims4();
        let mut x = images;
        for conv in &self.convs {
            x = conv.forward(g, store, x, false);
            x = g.instance_norm(x, NORM_EPS);
            x = g.leaky_relu(x, 0.2);
        }
        let flat = g.reshape(x, &[b, self.head_dim]);
        let mu = self.fc_mu.forward(g, store, flat);
        let logvar = self.fc_logvar.forward(g, store, flat);
        (mu, logvar)
    }
}

/// SPADE generator: linear seed from z, a chain of mask-conditioned ResNet
/// blocks with 2x upsampling, and a tanh head.
#[derive(Debug, Clone)]
pub struct Generator {
    pub fc: Linear,
    pub blocks: Vec<SpadeResBlock>,
    pub head: Conv2d,
    seed_channels: usize,
}

impl Generator {
    pub fn new(store: &mut ParamStore, cfg: &GanConfig, init_seed: u64) -> Self {
        let ch = cfg.generator_channels();
        let fc = Linear::new(store, "gen.fc", cfg.z_dim, ch[0] * 16, init_seed);
        let blocks = (0..cfg.num_spade_blocks)
            .map(|i| {
                SpadeResBlock::new(
                    store,
                    &format!("gen.block{i}"),
                    ch[i],
                    ch[i + 1],
                    cfg.num_classes,
                    cfg.spade_hidden,
                    init_seed,
                )
            })
            .collect();
        let head = Conv2d::new(
            store,
            "gen.head",
            ch[cfg.num_spade_blocks],
            cfg.out_channels,
            3,
            1,
            1,
            true,
            false,
            init_seed,
        );
        Generator {
            fc,
            blocks,
            head,
            seed_channels: ch[0],
        }
    }

    /// Block resolutions from the 4x4 seed up to the output.
    pub fn block_resolutions(num_blocks: usize) -> Vec<usize> {
        (0..num_blocks).map(|i| 4 << i).collect()
    }

    /// `mask_pyramid[i]`: one-hot planes resized to block i's resolution,
    /// shape [b, num_classes, 4 * 2^i, 4 * 2^i]. `z`: [b, z_dim].
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &mut ParamStore,
        mask_pyramid: &[VarId],
        z: VarId,
    ) -> VarId {
        assert_eq!(mask_pyramid.len(), self.blocks.len(), "mask pyramid depth");
        let (b, _) = g.data(z).dims2();
        let seed = self.fc.forward(g, store, z);
        let mut x = g.reshape(seed, &[b, self.seed_channels, 4, 4]);
        for (i, block) in self.blocks.iter().enumerate() {
            if i > 0 {
                x = g.upsample_nearest_2x(x);
            }
            x = block.forward(g, store, x, mask_pyramid[i]);
        }
        let x = g.leaky_relu(x, 0.2);
        let x = self.head.forward(g, store, x, false);
        g.tanh(x)
    }
}

/// Output of one discriminator scale.
pub struct DiscScaleOut {
    /// Intermediate activations, one per configured layer; used for feature
    /// matching.
    pub features: Vec<VarId>,
    pub logits: VarId,
}

/// Multi-scale conditional PatchGAN. Scale s judges the input downsampled by
/// 2^s; each scale owns `disc_layers` stride-2 convolutions so its logit map
/// is input / 2^disc_layers on a side.
#[derive(Debug, Clone)]
pub struct Discriminator {
    scales: Vec<PatchDisc>,
}

#[derive(Debug, Clone)]
struct PatchDisc {
    convs: Vec<Conv2d>,
    logit: Conv2d,
}

impl Discriminator {
    pub fn new(store: &mut ParamStore, cfg: &GanConfig, init_seed: u64) -> Self {
        let in_ch = cfg.out_channels + cfg.num_classes;
        let scales = (0..cfg.disc_scales)
            .map(|s| {
                let mut convs = Vec::new();
                let mut cin = in_ch;
                for l in 0..cfg.disc_layers {
                    let cout = cfg.disc_width * 8.min(1usize << l);
                    convs.push(Conv2d::new(
                        store,
                        &format!("disc.s{s}.conv{l}"),
                        cin,
                        cout,
                        4,
                        2,
                        1,
                        true,
                        cfg.spectral_norm,
                        init_seed,
                    ));
                    cin = cout;
                }
                let logit = Conv2d::new(
                    store,
                    &format!("disc.s{s}.logit"),
                    cin,
                    1,
                    3,
                    1,
                    1,
                    true,
                    cfg.spectral_norm,
                    init_seed,
                );
                PatchDisc { convs, logit }
            })
            .collect();
        Discriminator { scales }
    }

    /// `image`: [b, c, res, res]; `mask_planes`: [b, num_classes, res, res]
    /// (conditional input, concatenated on the channel axis). `train` drives
    /// the spectral-norm power iteration.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &mut ParamStore,
        image: VarId,
        mask_planes: VarId,
        train: bool,
    ) -> Vec<DiscScaleOut> {
        let mut input = g.concat_channels(image, mask_planes);
        let mut out = Vec::with_capacity(self.scales.len());
        for (s, scale) in self.scales.iter().enumerate() {
            if s > 0 {
                input = g.avg_pool_2x(input);
            }
            let mut x = input;
            let mut features = Vec::with_capacity(scale.convs.len());
            for (l, conv) in scale.convs.iter().enumerate() {
                x = conv.forward(g, store, x, train);
                if l > 0 {
                    x = g.instance_norm(x, NORM_EPS);
                }
                x = g.leaky_relu(x, 0.2);
                features.push(x);
            }
            let logits = scale.logit.forward(g, store, x, train);
            out.push(DiscScaleOut { features, logits });
        }
        out
    }
}

/// The whole family plus the parameter-id bookkeeping needed to split
/// optimizers between (encoder, generator) and discriminator.
pub struct GanNets {
    pub config: GanConfig,
    pub encoder: Encoder,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub gen_params: Vec<ParamId>,
    pub disc_params: Vec<ParamId>,
}

impl GanNets {
    /// Build all three networks into `store` with Xavier-uniform weights and
    /// zero biases, deterministically from `init_seed`.
    pub fn build(cfg: &GanConfig, store: &mut ParamStore, init_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let encoder = Encoder::new(store, cfg, init_seed);
        let generator = Generator::new(store, cfg, init_seed);
        let disc_start = store.len();
        let discriminator = Discriminator::new(store, cfg, init_seed);
        let gen_params: Vec<ParamId> = store
            .iter()
            .take(disc_start)
            .filter(|(_, e)| e.trainable)
            .map(|(id, _)| id)
            .collect();
        let disc_params: Vec<ParamId> = store
            .iter()
            .skip(disc_start)
            .filter(|(_, e)| e.trainable)
            .map(|(id, _)| id)
            .collect();
        Ok(GanNets {
            config: cfg.clone(),
            encoder,
            generator,
            discriminator,
            gen_params,
            disc_params,
        })
    }

    /// One-hot planes of a batch of masks: [b, num_classes, h, w].
    pub fn batch_planes(&self, masks: &[&ClassMask]) -> Result<Tensor> {
        let (h, w) = (masks[0].h, masks[0].w);
        let k = self.config.num_classes;
        let mut data = Vec::with_capacity(masks.len() * k * h * w);
        for m in masks {
            if m.num_classes != k {
                return Err(GanError::ClassCountMismatch {
                    expected: k,
                    found: m.num_classes,
                });
            }
            if m.h != h || m.w != w {
                return Err(GanError::ResolutionMismatch {
                    expected: h,
                    found_h: m.h,
                    found_w: m.w,
                });
            }
            data.extend_from_slice(&m.one_hot().data);
        }
        Ok(Tensor::from_vec(&[masks.len(), k, h, w], data))
    }

    /// Mask pyramid for the generator: the full-resolution planes resized to
    /// every block resolution.
    pub fn mask_pyramid(&self, planes: &Tensor) -> Vec<Tensor> {
        Generator::block_resolutions(self.config.num_spade_blocks)
            .into_iter()
            .map(|r| resize_planes_nearest(planes, r, r))
            .collect()
    }

    /// Inference-mode encode of a single image [c, res, res].
    pub fn encode(&self, store: &mut ParamStore, image: &[f32], h: usize, w: usize) -> Result<LatentStats> {
        self.config.check_resolution(h, w)?;
        let c = self.config.out_channels;
        if image.len() != c * h * w {
            return Err(GanError::ChannelMismatch {
                expected: c,
                found: image.len() / (h * w),
            });
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(&[1, c, h, w], image.to_vec()));
        let (mu, logvar) = self.encoder.forward(&mut g, store, x);
        Ok(LatentStats {
            mu: g.data(mu).data.clone(),
            logvar: g.data(logvar).data.clone(),
        })
    }

    /// Inference-mode generation for a single mask; deterministic in
    /// (weights, mask, z).
    pub fn generate(&self, store: &mut ParamStore, mask: &ClassMask, z: &LatentVector) -> Result<Tensor> {
        self.config.check_resolution(mask.h, mask.w)?;
        if mask.num_classes != self.config.num_classes {
            return Err(GanError::ClassCountMismatch {
                expected: self.config.num_classes,
                found: mask.num_classes,
            });
        }
        if z.0.len() != self.config.z_dim {
            return Err(GanError::LatentLengthMismatch {
                expected: self.config.z_dim,
                found: z.0.len(),
            });
        }
        let planes = self.batch_planes(&[mask])?;
        let pyramid = self.mask_pyramid(&planes);
        let mut g = Graph::new();
        let pyramid_vars: Vec<VarId> = pyramid.into_iter().map(|t| g.constant(t)).collect();
        let zv = g.constant(Tensor::from_vec(&[1, self.config.z_dim], z.0.clone()));
        let out = self.generator.forward(&mut g, store, &pyramid_vars, zv);
        let t = g.data(out);
        let r = self.config.resolution();
        Ok(Tensor::from_vec(
            &[self.config.out_channels, r, r],
            t.data.clone(),
        ))
    }

    /// Inference-mode discriminator pass returning per-scale logit maps and
    /// feature values.
    pub fn discriminate(
        &self,
        store: &mut ParamStore,
        image: &Tensor,
        planes: &Tensor,
    ) -> Vec<(Vec<Tensor>, Tensor)> {
        let mut g = Graph::new();
        let img = g.constant(image.clone());
        let pl = g.constant(planes.clone());
        let outs = self.discriminator.forward(&mut g, store, img, pl, false);
        outs.into_iter()
            .map(|o| {
                (
                    o.features.iter().map(|&f| g.data(f).clone()).collect(),
                    g.data(o.logits).clone(),
                )
            })
            .collect()
    }
}
