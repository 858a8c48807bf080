//! Downstream segmentation: training with early stopping on validation
//! mIoU, and tile-wise sliding-window evaluation.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use satsynth_data::{
    grid_positions, sample_windows, DatasetManifest, PatchSpec, RasterTile,
};
use satsynth_tensor::rng::{fnv1a, splitmix64};
use satsynth_tensor::{
    read_archive, write_archive, Adam, AdamConfig, Archive, Graph, ParamStore, Rng, Tensor,
};

use crate::error::{EvalError, Result};
use crate::metrics::{iou_from_cm, ConfusionMatrix, SegMetrics};
use crate::unet::{UNet, UNetConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegConfig {
    pub unet: UNetConfig,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub patch: PatchSpec,
    pub seed: u64,
    /// Sliding-window size and stride for test evaluation.
    pub eval_window: usize,
    pub eval_stride: usize,
}

impl Default for SegConfig {
    fn default() -> Self {
        SegConfig {
            unet: UNetConfig::default(),
            lr: 1e-4,
            adam_beta1: 0.0,
            adam_beta2: 0.9,
            batch_size: 10,
            early_stop_patience: 10,
            max_epochs: 100,
            patch: PatchSpec::default(),
            seed: 0,
            eval_window: 256,
            eval_stride: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_miou: f64,
}

pub const SEG_HISTORY_HEADER: &str = "epoch,train_loss,val_miou";

pub fn write_seg_history_csv(path: &Path, rows: &[EpochRow]) -> Result<()> {
    let mut out = String::from(SEG_HISTORY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_miou));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| EvalError::Checkpoint(e.to_string()))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| EvalError::Checkpoint(e.to_string()))?;
    f.write_all(out.as_bytes())
        .map_err(|e| EvalError::Checkpoint(e.to_string()))
}

/// Early-stopping bookkeeping: stop after `patience` consecutive epochs
/// without a strict improvement, keeping the best-scoring epoch.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<f64>,
    since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: None,
            since_best: 0,
        }
    }

    /// Returns (improved, stop_now).
    pub fn observe(&mut self, score: f64) -> (bool, bool) {
        let improved = self.best.map(|b| score > b).unwrap_or(true);
        if improved {
            self.best = Some(score);
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        (improved, self.since_best >= self.patience)
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }
}

pub const SEG_CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SegHeader {
    format_version: u32,
    config: UNetConfig,
    best_val_miou: f64,
}

#[derive(Debug, Clone)]
pub struct SegCheckpoint {
    pub config: UNetConfig,
    pub weights: Vec<(String, Tensor)>,
    pub best_val_miou: f64,
}

impl SegCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = SegHeader {
            format_version: SEG_CHECKPOINT_FORMAT,
            config: self.config.clone(),
            best_val_miou: self.best_val_miou,
        };
        let archive = Archive {
            config_json: serde_json::to_string(&header)
                .map_err(|e| EvalError::Checkpoint(e.to_string()))?,
            entries: self.weights.clone(),
        };
        write_archive(path, &archive)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SegCheckpoint> {
        let archive = read_archive(path)?;
        let header: SegHeader = serde_json::from_str(&archive.config_json)
            .map_err(|e| EvalError::Checkpoint(format!("bad header: {e}")))?;
        if header.format_version != SEG_CHECKPOINT_FORMAT {
            return Err(EvalError::Checkpoint(format!(
                "format version {} unsupported",
                header.format_version
            )));
        }
        Ok(SegCheckpoint {
            config: header.config,
            weights: archive.entries,
            best_val_miou: header.best_val_miou,
        })
    }

    pub fn restore(&self) -> Result<(UNet, ParamStore)> {
        let mut store = ParamStore::new();
        let net = UNet::build(&self.config, &mut store, 0)?;
        let by_name: HashMap<&str, &Tensor> =
            self.weights.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for i in 0..store.len() {
            let id = satsynth_tensor::ParamId(i);
            let name = store.name(id).to_string();
            let t = by_name
                .get(name.as_str())
                .ok_or_else(|| EvalError::Checkpoint(format!("missing weight {name}")))?;
            *store.get_mut(id) = (*t).clone();
        }
        Ok((net, store))
    }
}

fn load_tiles(manifest: &DatasetManifest, in_channels: usize) -> Result<Vec<RasterTile>> {
    if manifest.is_empty() {
        return Err(EvalError::EmptyManifest);
    }
    // Canonical data order, so manifests that differ only in line order
    // train and evaluate identically.
    let mut records = manifest.records.clone();
    records.sort_by(|a, b| {
        (&a.tile_id, a.source, a.seed).cmp(&(&b.tile_id, b.source, b.seed))
    });
    let mut tiles = Vec::with_capacity(records.len());
    for record in &records {
        let tile = record.load()?;
        if tile.channels != in_channels {
            return Err(EvalError::ChannelMismatch {
                needed: in_channels,
                found: tile.channels,
            });
        }
        tiles.push(tile);
    }
    Ok(tiles)
}

/// Argmax over the class axis of logits [b, k, h, w], per sample.
fn logits_argmax(logits: &Tensor) -> Vec<Vec<u8>> {
    let (b, k, h, w) = logits.dims4();
    let plane = h * w;
    (0..b)
        .map(|bi| {
            let mut pred = vec![0u8; plane];
            for i in 0..plane {
                let mut best = 0usize;
                let mut best_v = logits.data[(bi * k) * plane + i];
                for c in 1..k {
                    let v = logits.data[(bi * k + c) * plane + i];
                    if v > best_v {
                        best_v = v;
                        best = c;
                    }
                }
                pred[i] = best as u8;
            }
            pred
        })
        .collect()
}

/// Static validation grid: non-overlapping windows over every val tile,
/// fixed across epochs for comparability.
fn val_windows(tiles: &[RasterTile], window: usize) -> Result<Vec<(usize, usize, usize)>> {
    let mut out = Vec::new();
    for (ti, tile) in tiles.iter().enumerate() {
        for &y0 in &grid_positions(tile.h, window, 0)? {
            for &x0 in &grid_positions(tile.w, window, 0)? {
                out.push((ti, y0, x0));
            }
        }
    }
    Ok(out)
}

fn val_miou(
    net: &UNet,
    store: &mut ParamStore,
    tiles: &[RasterTile],
    windows: &[(usize, usize, usize)],
    window: usize,
    batch: usize,
    num_classes: usize,
) -> Result<f64> {
    let c = net.config.in_channels;
    let mut cm = ConfusionMatrix::new(num_classes);
    for chunk in windows.chunks(batch) {
        let mut data = Vec::with_capacity(chunk.len() * c * window * window);
        for &(ti, y0, x0) in chunk {
            data.extend(tiles[ti].crop_image(y0, x0, window));
        }
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(&[chunk.len(), c, window, window], data));
        let logits = net.forward(&mut g, store, x)?;
        let preds = logits_argmax(g.data(logits));
        for (pred, &(ti, y0, x0)) in preds.iter().zip(chunk) {
            let gt = tiles[ti].mask.crop(y0, x0, window);
            cm.update(pred, &gt.classes);
        }
    }
    Ok(iou_from_cm(&cm).miou)
}

/// Train with per-epoch validation and early stopping; the returned
/// checkpoint holds the best-validation weights.
pub fn train_downstream(
    cfg: &SegConfig,
    train: &DatasetManifest,
    val: &DatasetManifest,
) -> Result<(SegCheckpoint, Vec<EpochRow>)> {
    let tiles = load_tiles(train, cfg.unet.in_channels)?;
    let vals = load_tiles(val, cfg.unet.in_channels)?;
    let num_classes = cfg.unet.num_classes;
    for t in tiles.iter().chain(&vals) {
        if t.mask.num_classes != num_classes {
            return Err(EvalError::InvalidConfig(format!(
                "tile {} has {} classes, model expects {num_classes}",
                t.tile_id, t.mask.num_classes
            )));
        }
    }
    let mut store = ParamStore::new();
    let net = UNet::build(&cfg.unet, &mut store, cfg.seed)?;
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr as f32,
            beta1: cfg.adam_beta1 as f32,
            beta2: cfg.adam_beta2 as f32,
            eps: 1e-8,
        },
        &store,
        store.trainable_ids(),
    );

    let patches_per_epoch = tiles.len() * cfg.patch.per_tile_count;
    if patches_per_epoch < cfg.batch_size {
        return Err(EvalError::InvalidConfig(format!(
            "{patches_per_epoch} patches per epoch cannot fill one batch of {}",
            cfg.batch_size
        )));
    }
    let steps_per_epoch = patches_per_epoch / cfg.batch_size;
    let vwindows = val_windows(&vals, cfg.patch.size)?;

    let mut history = Vec::new();
    let mut best: Option<(f64, Vec<(String, Tensor)>)> = None;
    let mut stopper = EarlyStopper::new(cfg.early_stop_patience);
    let mut global_step = 0u64;
    for epoch in 1..=cfg.max_epochs {
        // Same schedule derivation as the upstream trainer.
        let epoch_seed = splitmix64(cfg.seed ^ fnv1a(b"seg-epoch-patches"))
            .wrapping_add(splitmix64(epoch as u64));
        let mut entries = Vec::with_capacity(patches_per_epoch);
        for (ti, tile) in tiles.iter().enumerate() {
            for (y0, x0) in sample_windows(
                tile.h,
                tile.w,
                cfg.patch.size,
                cfg.patch.per_tile_count,
                epoch_seed,
                &tile.tile_id,
            )? {
                entries.push((ti, y0, x0));
            }
        }
        let mut rng = Rng::derive(cfg.seed, "seg-batch-order", epoch as u64);
        rng.shuffle(&mut entries);

        let r = cfg.patch.size;
        let c = cfg.unet.in_channels;
        let mut loss_sum = 0.0f64;
        for step in 0..steps_per_epoch {
            let chunk = &entries[step * cfg.batch_size..(step + 1) * cfg.batch_size];
            let mut data = Vec::with_capacity(chunk.len() * c * r * r);
            let mut targets = Vec::with_capacity(chunk.len() * r * r);
            for &(ti, y0, x0) in chunk {
                data.extend(tiles[ti].crop_image(y0, x0, r));
                let mask = tiles[ti].mask.crop(y0, x0, r);
                targets.extend(mask.classes.iter().map(|&v| v as u32));
            }
            let mut g = Graph::new();
            let x = g.constant(Tensor::from_vec(&[chunk.len(), c, r, r], data));
            let logits = net.forward(&mut g, &mut store, x)?;
            let loss = g.softmax_cross_entropy(logits, targets);
            let loss_v = g.value(loss);
            if !loss_v.is_finite() {
                return Err(EvalError::NonFiniteLoss {
                    epoch,
                    step: global_step,
                    component: "cross_entropy".into(),
                });
            }
            loss_sum += loss_v;
            let grads = g.backward(loss, store.len());
            adam.step(&mut store, &grads);
            global_step += 1;
        }
        let train_loss = loss_sum / steps_per_epoch as f64;
        let miou = val_miou(
            &net,
            &mut store,
            &vals,
            &vwindows,
            cfg.patch.size,
            cfg.batch_size,
            num_classes,
        )?;
        history.push(EpochRow {
            epoch,
            train_loss,
            val_miou: miou,
        });
        let (improved, stop) = stopper.observe(miou);
        if improved {
            let snapshot = store
                .iter()
                .map(|(_, e)| (e.name.clone(), e.value.clone()))
                .collect();
            best = Some((miou, snapshot));
        }
        if stop {
            break;
        }
    }
    let (best_val_miou, weights) = best.expect("at least one epoch ran");
    Ok((
        SegCheckpoint {
            config: cfg.unet.clone(),
            weights,
            best_val_miou,
        },
        history,
    ))
}

/// Sliding-window inference over all test tiles, accumulating one exact
/// integer confusion matrix. With stride < window, overlapping window logits
/// are summed before the argmax; remainder windows are always edge-aligned.
pub fn evaluate(
    ckpt: &SegCheckpoint,
    test: &DatasetManifest,
    window: usize,
    stride: usize,
) -> Result<(SegMetrics, ConfusionMatrix)> {
    if stride == 0 || stride > window {
        return Err(EvalError::InvalidConfig(format!(
            "stride {stride} must be in 1..={window}"
        )));
    }
    let (net, mut store) = ckpt.restore()?;
    let tiles = load_tiles(test, ckpt.config.in_channels)?;
    let k = ckpt.config.num_classes;
    let mut cm = ConfusionMatrix::new(k);
    for tile in &tiles {
        if tile.h < window || tile.w < window {
            return Err(EvalError::TileSmallerThanWindow {
                tile_id: tile.tile_id.clone(),
                h: tile.h,
                w: tile.w,
                window,
            });
        }
        let overlap = window - stride;
        let rows = grid_positions(tile.h, window, overlap)?;
        let cols = grid_positions(tile.w, window, overlap)?;
        let mut logit_acc = vec![0.0f32; k * tile.h * tile.w];
        for &y0 in &rows {
            for &x0 in &cols {
                let crop = tile.crop_image(y0, x0, window);
                let mut g = Graph::new();
                let x = g.constant(Tensor::from_vec(
                    &[1, ckpt.config.in_channels, window, window],
                    crop,
                ));
                let logits = net.forward(&mut g, &mut store, x)?;
                let data = &g.data(logits).data;
                for c in 0..k {
                    for y in 0..window {
                        let dst = c * tile.h * tile.w + (y0 + y) * tile.w + x0;
                        let src = (c * window + y) * window;
                        for x in 0..window {
                            logit_acc[dst + x] += data[src + x];
                        }
                    }
                }
            }
        }
        let acc = Tensor::from_vec(&[1, k, tile.h, tile.w], logit_acc);
        let pred = &logits_argmax(&acc)[0];
        cm.update(pred, &tile.mask.classes);
    }
    Ok((iou_from_cm(&cm), cm))
}

/// Single-window prediction, mainly for oracle checks in tests.
pub fn predict_window(ckpt: &SegCheckpoint, image: &[f32], h: usize, w: usize) -> Result<Vec<u8>> {
    let (net, mut store) = ckpt.restore()?;
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_vec(
        &[1, ckpt.config.in_channels, h, w],
        image.to_vec(),
    ));
    let logits = net.forward(&mut g, &mut store, x)?;
    Ok(logits_argmax(g.data(logits)).remove(0))
}
