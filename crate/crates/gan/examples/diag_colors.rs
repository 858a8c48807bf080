//! Dev probe: how fast the generator picks up per-class colors on toy data.
//!
//! Usage: diag_colors [steps] [batch] [train_tiles] [lambda]
//! Prints the mean absolute error between generated and palette colors per
//! class every 100 steps, plus loss components and tanh saturation.

use satsynth_data::{
    make_toy_dataset, toy_class_color, LatentMode, PatchSpec, ToyDatasetSpec,
};
use satsynth_gan::{
    synthesize_patch, DiversityConfig, GanConfig, LossWeights, UpstreamConfig, UpstreamTrainer,
};
use satsynth_tensor::Rng;

fn color_err(trainer: &UpstreamTrainer, toy: &satsynth_data::ToyDataset) -> Vec<f64> {
    let mut store = trainer.store.clone();
    let mut sums = vec![vec![0.0f64; 3]; 4];
    let mut counts = vec![0u64; 4];
    for (mi, record) in toy.train.records.iter().enumerate() {
        let tile = record.load().unwrap();
        let mask = tile.mask.crop(0, 0, 64);
        let mut rng = Rng::derive(777, "diag", mi as u64);
        let img = synthesize_patch(&trainer.nets, &mut store, &mask, LatentMode::Prior, &mut rng, None).unwrap();
        let plane = 64 * 64;
        for i in 0..plane {
            let c = mask.classes[i] as usize;
            counts[c] += 1;
            for ch in 0..3 {
                sums[c][ch] += img.data[ch * plane + i] as f64;
            }
        }
    }
    (0..4)
        .map(|c| {
            let palette = toy_class_color(c, 3);
            (0..3)
                .map(|ch| (sums[c][ch] / counts[c].max(1) as f64 - palette[ch] as f64).abs())
                .sum::<f64>()
                / 3.0
        })
        .collect()
}

fn main() {
    let total: u64 = std::env::args().nth(1).map(|v| v.parse().unwrap()).unwrap_or(300);
    let batch: usize = std::env::args().nth(2).map(|v| v.parse().unwrap()).unwrap_or(10);
    let tiles: usize = std::env::args().nth(3).map(|v| v.parse().unwrap()).unwrap_or(8);
    let lambda: f64 = std::env::args().nth(4).map(|v| v.parse().unwrap()).unwrap_or(4.0);
    let dir = std::env::temp_dir().join("satsynth_diag");
    let _ = std::fs::remove_dir_all(&dir);
    let spec = ToyDatasetSpec {
        train_tiles: tiles,
        val_tiles: 2,
        test_tiles: 4,
        tile_size: 64,
        num_classes: 4,
        channels: 3,
        seed: 1,
        sites: 10,
        ..ToyDatasetSpec::default()
    };
    let toy = make_toy_dataset(&spec, &dir).unwrap();
    let cfg = UpstreamConfig {
        gan: GanConfig::desk(4, 3),
        lr: 2e-4,
        adam_beta1: 0.0,
        adam_beta2: 0.9,
        batch_size: batch,
        epochs: 1000,
        diversity: DiversityConfig { weight: lambda, clamp: 10.0 },
        weights: LossWeights::default(),
        patch: PatchSpec { size: 64, per_tile_count: 32, seed: 0 },
        seed: 3,
        max_steps: Some(total),
    };
    let mut trainer = UpstreamTrainer::new(cfg, &toy.train).unwrap();
    let t0 = std::time::Instant::now();
    let mut at = 0u64;
    while at < total {
        let next = (at + 100).min(total);
        trainer.train_steps(next - at).unwrap();
        at = next;
        let errs = color_err(&trainer, &toy);
        let last = trainer.history().last().unwrap();
        let sat = {
            let mut store = trainer.store.clone();
            let tile = toy.train.records[0].load().unwrap();
            let mask = tile.mask.crop(0, 0, 64);
            let mut rng = Rng::derive(778, "sat", at);
            let img = synthesize_patch(&trainer.nets, &mut store, &mask, LatentMode::Prior, &mut rng, None).unwrap();
            img.data.iter().filter(|v| v.abs() > 0.95).count() as f64 / img.data.len() as f64
        };
        println!(
            "step {at:4}: color err {:?} | d {:.3} gan {:.3} fm {:.3} kld {:.3} div {:.3} sat {:.2} ({:.0?})",
            errs.iter().map(|e| (e * 100.0).round() / 100.0).collect::<Vec<_>>(),
            last.d_loss, last.g_gan, last.g_fm, last.g_kld, last.g_div, sat,
            t0.elapsed()
        );
    }
}
