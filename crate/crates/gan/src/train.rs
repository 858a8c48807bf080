//! Upstream training loop: alternating discriminator / generator steps over
//! patch batches, reproducible bit-for-loss from a single root seed.
//!
//! Reproducibility contract: batch composition is a pure function of
//! (manifest order, seed, epoch), per-step noise comes from streams derived
//! as (seed, label, step), and checkpoints carry optimizer moments plus the
//! step counter, so pausing and resuming replays the exact trajectory.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use satsynth_data::{sample_windows, DatasetManifest, PatchSpec, RasterTile};
use satsynth_tensor::rng::{fnv1a, splitmix64};
use satsynth_tensor::{Adam, AdamConfig, Graph, ParamStore, Rng, Tensor, VarId};

use crate::checkpoint::{Checkpoint, TrainingState};
use crate::config::GanConfig;
use crate::error::{GanError, Result};
use crate::losses::{
    diversity_term, feature_matching, generator_objective, hinge_d, hinge_g, kld_term,
    DiversityConfig, LossWeights,
};
use crate::networks::GanNets;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpstreamConfig {
    pub gan: GanConfig,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub diversity: DiversityConfig,
    pub weights: LossWeights,
    pub patch: PatchSpec,
    pub seed: u64,
    /// Optional hard cap on total steps (testing / small budgets).
    pub max_steps: Option<u64>,
}

impl Default for UpstreamConfig {
    fn default() -> Self {
        UpstreamConfig {
            gan: GanConfig::default(),
            lr: 2e-4,
            adam_beta1: 0.0,
            adam_beta2: 0.9,
            batch_size: 10,
            epochs: 4,
            diversity: DiversityConfig::default(),
            weights: LossWeights::default(),
            patch: PatchSpec::default(),
            seed: 0,
            max_steps: None,
        }
    }
}

/// One telemetry row per optimization step.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub epoch: usize,
    pub d_loss: f64,
    pub g_gan: f64,
    pub g_fm: f64,
    pub g_kld: f64,
    pub g_div: f64,
    pub total: f64,
}

pub const HISTORY_HEADER: &str = "step,epoch,d_loss,g_gan,g_fm,g_kld,g_div,total";

pub fn write_history_csv(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step, r.epoch, r.d_loss, r.g_gan, r.g_fm, r.g_kld, r.g_div, r.total
        ));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| GanError::Checkpoint(e.to_string()))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| GanError::Checkpoint(e.to_string()))?;
    f.write_all(out.as_bytes())
        .map_err(|e| GanError::Checkpoint(e.to_string()))
}

/// Re-draw every trainable weight Xavier-uniform (biases zero) from per-name
/// streams; equivalent to building the networks fresh with `seed`.
pub fn init_weights(store: &mut ParamStore, seed: u64) {
    for id in 0..store.len() {
        let id = satsynth_tensor::ParamId(id);
        let name = store.name(id).to_string();
        let entry = store.get(id).clone();
        if name.ends_with(".w") {
            let (fan_in, fan_out) = satsynth_tensor::init::conv_fans(&entry.shape);
            let mut rng = Rng::derive(seed, name.trim_end_matches(".w"), 0);
            *store.get_mut(id) =
                satsynth_tensor::xavier_uniform(&entry.shape, fan_in, fan_out, &mut rng);
        } else if name.ends_with(".b") {
            store.get_mut(id).data.fill(0.0);
        }
    }
}

pub struct UpstreamTrainer {
    pub cfg: UpstreamConfig,
    pub store: ParamStore,
    pub nets: GanNets,
    adam_g: Adam,
    adam_d: Adam,
    step: u64,
    tiles: Vec<RasterTile>,
    history: Vec<LossRow>,
    cached_epoch: Option<usize>,
    schedule: Vec<(usize, usize, usize)>,
}

impl UpstreamTrainer {
    pub fn new(cfg: UpstreamConfig, manifest: &DatasetManifest) -> Result<Self> {
        let mut store = ParamStore::new();
        let nets = GanNets::build(&cfg.gan, &mut store, cfg.seed)?;
        Self::with_parts(cfg, manifest, store, nets, None)
    }

    pub fn from_checkpoint(
        cfg: UpstreamConfig,
        manifest: &DatasetManifest,
        ckpt: &Checkpoint,
    ) -> Result<Self> {
        if ckpt.config != cfg.gan {
            return Err(GanError::Checkpoint(
                "checkpoint network config differs from trainer config".into(),
            ));
        }
        let state = ckpt
            .training_state
            .clone()
            .ok_or_else(|| GanError::Checkpoint("checkpoint has no training state".into()))?;
        if state.root_seed != cfg.seed || state.lambda != cfg.diversity.weight {
            return Err(GanError::Checkpoint(format!(
                "checkpoint was trained with seed {} / lambda {}, trainer configured for {} / {}",
                state.root_seed, state.lambda, cfg.seed, cfg.diversity.weight
            )));
        }
        let (nets, store) = ckpt.restore_nets()?;
        Self::with_parts(cfg, manifest, store, nets, Some((ckpt, state)))
    }

    fn with_parts(
        cfg: UpstreamConfig,
        manifest: &DatasetManifest,
        store: ParamStore,
        nets: GanNets,
        resume: Option<(&Checkpoint, TrainingState)>,
    ) -> Result<Self> {
        if manifest.is_empty() {
            return Err(GanError::InvalidConfig("training manifest is empty".into()));
        }
        cfg.gan.check_resolution(cfg.patch.size, cfg.patch.size)?;
        // Canonical data order: the patch stream is a function of the record
        // set, not of the manifest's line order.
        let mut records = manifest.records.clone();
        records.sort_by(|a, b| {
            (&a.tile_id, a.source, a.seed).cmp(&(&b.tile_id, b.source, b.seed))
        });
        let mut tiles = Vec::with_capacity(records.len());
        for record in &records {
            let tile = record.load()?;
            if tile.mask.num_classes != cfg.gan.num_classes {
                return Err(GanError::ClassCountMismatch {
                    expected: cfg.gan.num_classes,
                    found: tile.mask.num_classes,
                });
            }
            if tile.channels != cfg.gan.out_channels {
                return Err(GanError::ChannelMismatch {
                    expected: cfg.gan.out_channels,
                    found: tile.channels,
                });
            }
            tiles.push(tile);
        }
        let patches_per_epoch = tiles.len() * cfg.patch.per_tile_count;
        if patches_per_epoch < cfg.batch_size {
            return Err(GanError::InvalidConfig(format!(
                "{patches_per_epoch} patches per epoch cannot fill one batch of {}",
                cfg.batch_size
            )));
        }

        let adam_cfg = AdamConfig {
            lr: cfg.lr as f32,
            beta1: cfg.adam_beta1 as f32,
            beta2: cfg.adam_beta2 as f32,
            eps: 1e-8,
        };
        let mut adam_g = Adam::new(adam_cfg.clone(), &store, nets.gen_params.clone());
        let mut adam_d = Adam::new(adam_cfg, &store, nets.disc_params.clone());
        let step = match resume {
            Some((ckpt, state)) => {
                let optim = ckpt.optimizer_map();
                adam_g
                    .restore_state(&store, "g", &optim, state.adam_g_steps)
                    .map_err(GanError::Checkpoint)?;
                adam_d
                    .restore_state(&store, "d", &optim, state.adam_d_steps)
                    .map_err(GanError::Checkpoint)?;
                state.step
            }
            None => 0,
        };
        Ok(UpstreamTrainer {
            cfg,
            store,
            nets,
            adam_g,
            adam_d,
            step,
            tiles,
            history: Vec::new(),
            cached_epoch: None,
            schedule: Vec::new(),
        })
    }

    pub fn steps_per_epoch(&self) -> u64 {
        (self.tiles.len() * self.cfg.patch.per_tile_count / self.cfg.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        let by_epochs = self.steps_per_epoch() * self.cfg.epochs as u64;
        match self.cfg.max_steps {
            Some(cap) => by_epochs.min(cap),
            None => by_epochs,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn history(&self) -> &[LossRow] {
        &self.history
    }

    /// Shuffled (tile, y0, x0) schedule for one epoch; a pure function of
    /// (tiles, seed, epoch) so any worker arrangement sees the same order.
    fn ensure_schedule(&mut self, epoch: usize) -> Result<()> {
        if self.cached_epoch == Some(epoch) {
            return Ok(());
        }
        let epoch_seed =
            splitmix64(self.cfg.seed ^ fnv1a(b"epoch-patches")).wrapping_add(splitmix64(epoch as u64));
        let mut entries = Vec::new();
        for (ti, tile) in self.tiles.iter().enumerate() {
            let windows = sample_windows(
                tile.h,
                tile.w,
                self.cfg.patch.size,
                self.cfg.patch.per_tile_count,
                epoch_seed,
                &tile.tile_id,
            )?;
            for (y0, x0) in windows {
                entries.push((ti, y0, x0));
            }
        }
        let mut rng = Rng::derive(self.cfg.seed, "batch-order", epoch as u64);
        rng.shuffle(&mut entries);
        self.schedule = entries;
        self.cached_epoch = Some(epoch);
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        while self.step < self.total_steps() {
            self.step_once()?;
        }
        Ok(())
    }

    pub fn train_steps(&mut self, n: u64) -> Result<()> {
        let target = (self.step + n).min(self.total_steps());
        while self.step < target {
            self.step_once()?;
        }
        Ok(())
    }

    fn step_once(&mut self) -> Result<()> {
        let spe = self.steps_per_epoch();
        let epoch = (self.step / spe) as usize;
        let index_in_epoch = (self.step % spe) as usize;
        self.ensure_schedule(epoch)?;

        let b = self.cfg.batch_size;
        let r = self.cfg.patch.size;
        let c = self.cfg.gan.out_channels;
        let z_dim = self.cfg.gan.z_dim;
        let entries = &self.schedule[index_in_epoch * b..(index_in_epoch + 1) * b];

        let mut image_data = Vec::with_capacity(b * c * r * r);
        let mut masks = Vec::with_capacity(b);
        let mut batch_tiles = Vec::with_capacity(b);
        for &(ti, y0, x0) in entries {
            let tile = &self.tiles[ti];
            image_data.extend(tile.crop_image(y0, x0, r));
            masks.push(tile.mask.crop(y0, x0, r));
            batch_tiles.push(tile.tile_id.clone());
        }
        let images = Tensor::from_vec(&[b, c, r, r], image_data);
        let mask_refs: Vec<&satsynth_data::ClassMask> = masks.iter().collect();
        let planes = self.nets.batch_planes(&mask_refs)?;
        let pyramid = self.nets.mask_pyramid(&planes);

        let mut z1_data = vec![0.0f32; b * z_dim];
        Rng::derive(self.cfg.seed, "z-prior", self.step).fill_normal(&mut z1_data);
        let lambda_active = self.cfg.diversity.weight > 0.0;
        let z2_data = lambda_active.then(|| {
            let mut z2 = vec![0.0f32; b * z_dim];
            Rng::derive(self.cfg.seed, "z-prior-2", self.step).fill_normal(&mut z2);
            z2
        });

        let check = |step: u64, component: &str, value: f64, tiles: &[String]| -> Result<f64> {
            if !value.is_finite() {
                return Err(GanError::NonFiniteLoss {
                    step,
                    component: component.to_string(),
                    batch_tiles: tiles.to_vec(),
                });
            }
            Ok(value)
        };

        // Generator-side graph. Generator passes draw prior-sampled latents
        // (the diversity pair must not reach the encoder through its inputs);
        // the encoder trains through its KL term on the same batch.
        let mut gg = Graph::new();
        let images_g = gg.constant(images.clone());
        let planes_g = gg.constant(planes.clone());
        let pyramid_g: Vec<VarId> = pyramid.iter().map(|t| gg.constant(t.clone())).collect();
        let (mu, logvar) = self.nets.encoder.forward(&mut gg, &mut self.store, images_g);
        let z1 = gg.constant(Tensor::from_vec(&[b, z_dim], z1_data.clone()));
        let fake = self
            .nets
            .generator
            .forward(&mut gg, &mut self.store, &pyramid_g, z1);
        let fake2 = z2_data.as_ref().map(|z2| {
            let z2_var = gg.constant(Tensor::from_vec(&[b, z_dim], z2.clone()));
            self.nets
                .generator
                .forward(&mut gg, &mut self.store, &pyramid_g, z2_var)
        });

        // Discriminator step on the detached fakes (one spectral-norm power
        // iteration per trainer step, on the real pass). Both generator
        // passes count as fakes so the diversity pair stays adversarially
        // constrained.
        let fakes_detached: Vec<Tensor> = std::iter::once(gg.data(fake).clone())
            .chain(fake2.map(|f2| gg.data(f2).clone()))
            .collect();
        let d_loss = {
            let mut dg = Graph::new();
            let real_d = dg.constant(images.clone());
            let planes_d = dg.constant(planes.clone());
            let real_out =
                self.nets
                    .discriminator
                    .forward(&mut dg, &mut self.store, real_d, planes_d, true);
            let real_logits: Vec<VarId> = real_out.iter().map(|o| o.logits).collect();
            let mut terms = Vec::new();
            for fake_values in &fakes_detached {
                let fake_d = dg.constant(fake_values.clone());
                let fake_out =
                    self.nets
                        .discriminator
                        .forward(&mut dg, &mut self.store, fake_d, planes_d, false);
                let fake_logits: Vec<VarId> = fake_out.iter().map(|o| o.logits).collect();
                terms.push(hinge_d(&mut dg, &real_logits, &fake_logits));
            }
            let loss = if terms.len() == 1 {
                terms[0]
            } else {
                let sum = dg.add(terms[0], terms[1]);
                dg.mul_scalar(sum, 0.5)
            };
            let value = check(self.step, "d_loss", dg.value(loss), &batch_tiles)?;
            let grads = dg.backward(loss, self.store.len());
            self.adam_d.step(&mut self.store, &grads);
            value
        };

        // Generator step against the just-updated discriminator. The second
        // pass also faces the discriminator so maximizing the diversity
        // ratio cannot trade away realism.
        let fake_out =
            self.nets
                .discriminator
                .forward(&mut gg, &mut self.store, fake, planes_g, false);
        let fake2_out = fake2.map(|f2| {
            self.nets
                .discriminator
                .forward(&mut gg, &mut self.store, f2, planes_g, false)
        });
        let real_feats_const: Vec<Vec<VarId>> = {
            let mut tmp = Graph::new();
            let real_t = tmp.constant(images.clone());
            let planes_t = tmp.constant(planes.clone());
            let outs =
                self.nets
                    .discriminator
                    .forward(&mut tmp, &mut self.store, real_t, planes_t, false);
            outs.iter()
                .map(|o| {
                    o.features
                        .iter()
                        .map(|&f| {
                            let t = tmp.data(f).clone();
                            gg.constant(t)
                        })
                        .collect()
                })
                .collect()
        };
        let fake_logits: Vec<VarId> = fake_out.iter().map(|o| o.logits).collect();
        let fake_feats: Vec<Vec<VarId>> = fake_out.iter().map(|o| o.features.clone()).collect();

        let gan = {
            let g1 = hinge_g(&mut gg, &fake_logits);
            match &fake2_out {
                Some(outs) => {
                    let logits2: Vec<VarId> = outs.iter().map(|o| o.logits).collect();
                    let g2 = hinge_g(&mut gg, &logits2);
                    let sum = gg.add(g1, g2);
                    gg.mul_scalar(sum, 0.5)
                }
                None => g1,
            }
        };
        let fm = feature_matching(&mut gg, &real_feats_const, &fake_feats);
        let kld = kld_term(&mut gg, mu, logvar);
        let div = match (&fake2, &z2_data) {
            (Some(f2), Some(z2)) => Some(diversity_term(
                &mut gg,
                fake,
                *f2,
                &z1_data,
                z2,
                &self.cfg.diversity,
            )?),
            _ => None,
        };
        let obj = generator_objective(
            &mut gg,
            gan,
            Some(fm),
            Some(kld),
            div,
            &self.cfg.weights,
            &self.cfg.diversity,
        );
        check(self.step, "g_gan", obj.gan, &batch_tiles)?;
        check(self.step, "g_fm", obj.feature_matching, &batch_tiles)?;
        check(self.step, "g_kld", obj.kld, &batch_tiles)?;
        check(self.step, "g_div", obj.diversity, &batch_tiles)?;
        check(self.step, "g_total", obj.total_value, &batch_tiles)?;
        let grads = gg.backward(obj.total, self.store.len());
        self.adam_g.step(&mut self.store, &grads);

        self.history.push(LossRow {
            step: self.step,
            epoch,
            d_loss,
            g_gan: obj.gan,
            g_fm: obj.feature_matching,
            g_kld: obj.kld,
            g_div: obj.diversity,
            total: obj.total_value,
        });
        self.step += 1;
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut optim = self.adam_g.state_entries(&self.store, "g");
        optim.extend(self.adam_d.state_entries(&self.store, "d"));
        Checkpoint::from_store(
            &self.cfg.gan,
            &self.store,
            optim,
            Some(TrainingState {
                step: self.step,
                lambda: self.cfg.diversity.weight,
                clamp: self.cfg.diversity.clamp,
                root_seed: self.cfg.seed,
                adam_g_steps: self.adam_g.step_count(),
                adam_d_steps: self.adam_d.step_count(),
            }),
        )
    }
}

/// Train to completion and return the final checkpoint plus loss telemetry.
pub fn train_upstream(
    cfg: UpstreamConfig,
    manifest: &DatasetManifest,
    history_csv: Option<&Path>,
) -> Result<(Checkpoint, Vec<LossRow>)> {
    let mut trainer = UpstreamTrainer::new(cfg, manifest)?;
    trainer.run()?;
    if let Some(path) = history_csv {
        write_history_csv(path, trainer.history())?;
    }
    let ckpt = trainer.checkpoint();
    let history = trainer.history().to_vec();
    Ok((ckpt, history))
}

/// One checkpoint per diversity weight; identical seeds and data across runs
/// so the weight is the only varying factor.
pub fn lambda_sweep(
    base: &UpstreamConfig,
    lambdas: &[f64],
    manifest: &DatasetManifest,
) -> Result<Vec<(f64, Checkpoint)>> {
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut cfg = base.clone();
        cfg.diversity.weight = lambda;
        let (ckpt, _) = train_upstream(cfg, manifest, None)?;
        out.push((lambda, ckpt));
    }
    Ok(out)
}
