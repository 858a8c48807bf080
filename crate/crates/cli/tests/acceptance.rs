//! Acceptance suite: one test per release criterion, each printing a
//! PASS line on success. Budgets are sized for a small multi-core CPU; all
//! randomness is pinned, so every run checks the same trajectory.
//!
//! Run with `cargo test -p satsynth-cli --test acceptance -- --nocapture`.

use std::path::PathBuf;

use satsynth_cli::config::{HarnessConfig, Scale};
use satsynth_cli::experiments::{
    ensure_dataset, run_lambda_sweep, run_mix_sweep, run_substitution, ExperimentKind,
    ExperimentPlan,
};
use satsynth_data::{
    build_mix_manifest, make_toy_dataset, sample_windows, DatasetManifest, LatentMode,
    ManifestRecord, MixSpec, PatchSpec, Source, Split, ToyDatasetSpec,
};
use satsynth_eval::{
    compute_fid, evaluate, extract_manifest_features, frechet_distance, gaussian_stats,
    iou_from_cm, train_downstream, ConfusionMatrix, RandomProjectionExtractor,
};
use satsynth_gan::{
    diversity_term, synthesize_dataset, synthesize_patch, Checkpoint, DiversityConfig, GanConfig,
    GanNets, LatentVector, LossWeights, SynthesisJob, UpstreamConfig, UpstreamTrainer,
};
use satsynth_tensor::{Graph, ParamStore, Rng, Tensor, VarId};

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("satsynth_acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn pass(n: u32, name: &str) {
    println!("ACCEPTANCE {n:02} ({name}): PASS");
}

// ---------------------------------------------------------------------------
// 1. Diversity objective: analytic value on the broadcast generator, clamp
//    behaviour, and gradient vs central finite differences on a toy
//    3-parameter generator (test points away from the clamp kink).
// ---------------------------------------------------------------------------

/// Toy generator with 3 parameters: img(z) = [t0 * z0, t1 * z1 + t2 * z0 * z1].
fn toy_gen(g: &mut Graph, theta: VarId, z: &[f32; 2]) -> VarId {
    let t0 = g.reshape(theta, &[3, 1]); // keep graph connectivity simple
    let z0 = g.constant(Tensor::from_vec(&[3, 1], vec![z[0], 0.0, 0.0]));
    let z1 = g.constant(Tensor::from_vec(&[3, 1], vec![0.0, z[1], z[0] * z[1]]));
    let a = g.mul(t0, z0);
    let b = g.mul(t0, z1);
    g.add(a, b)
}

#[test]
fn criterion_01_diversity_term_analytic_and_gradient() {
    let start = std::time::Instant::now();
    // Broadcast generator: ratio is exactly 1 under matched mean-abs norms.
    {
        let z1 = [0.4f32, -0.9, 1.3, 0.2];
        let z2 = [-0.1f32, 0.5, 0.9, -0.6];
        let broadcast = |z: &[f32]| {
            let mut data = Vec::new();
            for &v in z {
                data.extend(std::iter::repeat(v).take(25));
            }
            Tensor::from_vec(&[1, 4, 5, 5], data)
        };
        let mut g = Graph::new();
        let i1 = g.constant(broadcast(&z1));
        let i2 = g.constant(broadcast(&z2));
        let term = diversity_term(&mut g, i1, i2, &z1, &z2, &DiversityConfig::default()).unwrap();
        assert!((g.value(term) - 1.0).abs() < 1e-6);
    }
    // Clamp at tau.
    {
        let mut g = Graph::new();
        let i1 = g.constant(Tensor::full(&[1, 1, 2, 2], 5.0));
        let i2 = g.constant(Tensor::full(&[1, 1, 2, 2], 0.0));
        let cfg = DiversityConfig {
            weight: 1.0,
            clamp: 10.0,
        };
        // ratio = 5 / 0.1 = 50 -> clamped to 10.
        let term = diversity_term(&mut g, i1, i2, &[0.1, 0.1], &[0.0, 0.0], &cfg).unwrap();
        assert_eq!(g.value(term), 10.0);
    }
    // Gradient of lambda * diversity vs central finite differences, away
    // from the clamp kink (ratio < 0.9 * tau). The finite differences run
    // over an independent f64 reimplementation of the same toy generator
    // (img(z) = [t0 z0, t1 z1, t2 z0 z1]) so f32 forward rounding does not
    // pollute the difference quotient.
    let theta0 = [0.8f32, -0.6, 0.4];
    let z1 = [0.7f32, -0.3];
    let z2 = [-0.2f32, 0.9];
    let lambda = 3.0f64;
    let cfg = DiversityConfig {
        weight: lambda,
        clamp: 10.0,
    };
    let analytic = {
        let mut store = ParamStore::new();
        let pid = store.insert("theta", Tensor::from_vec(&[3], theta0.to_vec()), true);
        let mut g = Graph::new();
        let tv = g.param(&store, pid);
        let img1 = toy_gen(&mut g, tv, &z1);
        let img2 = toy_gen(&mut g, tv, &z2);
        let term = diversity_term(&mut g, img1, img2, &z1, &z2, &cfg).unwrap();
        assert!(
            g.value(term) < 0.9 * cfg.clamp as f64,
            "test point too close to the clamp"
        );
        let weighted = g.mul_scalar(term, lambda as f32);
        let grads = g.backward(weighted, store.len());
        grads
            .get(pid)
            .expect("diversity must reach the generator parameters")
            .data
            .clone()
    };
    let oracle = |theta: &[f64; 3]| -> f64 {
        let img = |z: &[f32; 2]| -> [f64; 3] {
            let (z0, z1) = (z[0] as f64, z[1] as f64);
            [theta[0] * z0, theta[1] * z1, theta[2] * z0 * z1]
        };
        let (a, b) = (img(&z1), img(&z2));
        let num = (0..3).map(|i| (a[i] - b[i]).abs()).sum::<f64>() / 3.0;
        let den = ((z1[0] as f64 - z2[0] as f64).abs() + (z1[1] as f64 - z2[1] as f64).abs()) / 2.0;
        lambda * (num / den).min(cfg.clamp as f64)
    };
    let theta064 = [theta0[0] as f64, theta0[1] as f64, theta0[2] as f64];
    let h = 1e-6f64;
    for i in 0..3 {
        let mut plus = theta064;
        plus[i] += h;
        let mut minus = theta064;
        minus[i] -= h;
        let fd = (oracle(&plus) - oracle(&minus)) / (2.0 * h);
        let a = analytic[i] as f64;
        let rel = (a - fd).abs() / fd.abs().max(1e-12);
        assert!(rel < 1e-4, "param {i}: analytic {a} vs fd {fd} (rel {rel})");
    }
    assert!(start.elapsed().as_secs() < 10, "criterion 1 must run in < 10 s");
    pass(1, "diversity objective value and gradient");
}

// ---------------------------------------------------------------------------
// 2. Fréchet distance: identity, symmetry, 1-D closed form, diagonal oracle.
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_frechet_distance_oracles() {
    let start = std::time::Instant::now();
    let mut rng = Rng::derive(1, "acc-frechet", 0);
    let sample = |rng: &mut Rng, n: usize, d: usize, scale: f64, shift: f64| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.uniform() * scale + shift).collect())
            .collect()
    };
    let a = gaussian_stats(&sample(&mut rng, 40, 5, 2.0, -1.0)).unwrap();
    let b = gaussian_stats(&sample(&mut rng, 35, 5, 1.5, 0.5)).unwrap();
    // Identity.
    assert!(frechet_distance(&a, &a).unwrap() < 1e-8);
    // Symmetry.
    let ab = frechet_distance(&a, &b).unwrap();
    let ba = frechet_distance(&b, &a).unwrap();
    assert!((ab - ba).abs() < 1e-8);
    // 1-D closed form: mu 0 vs 3, var 4 vs 1 -> 10.
    let s1 = satsynth_eval::GaussianStats {
        mu: vec![0.0],
        sigma: vec![4.0],
        n: 10,
        dim: 1,
    };
    let s2 = satsynth_eval::GaussianStats {
        mu: vec![3.0],
        sigma: vec![1.0],
        n: 10,
        dim: 1,
    };
    let d1 = frechet_distance(&s1, &s2).unwrap();
    assert!((d1 - 10.0).abs() < 1e-10, "{d1}");
    // Commuting diagonal covariances match the per-dimension scalar formula.
    let da = [0.7, 2.0, 3.5];
    let db = [1.2, 0.4, 2.5];
    let ma = [0.0, 1.0, -2.0];
    let mb = [0.5, -1.0, 0.0];
    let diag = |d: &[f64]| {
        let n = d.len();
        let mut s = vec![0.0; n * n];
        for i in 0..n {
            s[i * n + i] = d[i];
        }
        s
    };
    let sa = satsynth_eval::GaussianStats {
        mu: ma.to_vec(),
        sigma: diag(&da),
        n: 8,
        dim: 3,
    };
    let sb = satsynth_eval::GaussianStats {
        mu: mb.to_vec(),
        sigma: diag(&db),
        n: 8,
        dim: 3,
    };
    let got = frechet_distance(&sa, &sb).unwrap();
    let expected: f64 = (0..3)
        .map(|i| (ma[i] - mb[i]).powi(2) + da[i] + db[i] - 2.0 * (da[i] * db[i]).sqrt())
        .sum();
    assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    assert!(start.elapsed().as_secs() < 5, "criterion 2 must run in < 5 s");
    pass(2, "Fréchet distance closed forms");
}

// ---------------------------------------------------------------------------
// 3. Hermetic distance pipeline with the seeded random-projection extractor.
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_fid_pipeline_hermetic() {
    let dir = workdir("c3");
    let toy = make_toy_dataset(
        &ToyDatasetSpec {
            train_tiles: 3,
            val_tiles: 1,
            test_tiles: 3,
            tile_size: 32,
            num_classes: 4,
            channels: 3,
            seed: 5,
            sites: 6,
            ..ToyDatasetSpec::default()
        },
        &dir,
    )
    .unwrap();
    let extractor = RandomProjectionExtractor::new(11, 20, 16);
    let patch = PatchSpec {
        size: 16,
        per_tile_count: 15,
        seed: 2,
    };
    let self_report = compute_fid(
        &toy.test,
        &toy.test,
        &extractor,
        LatentMode::Prior,
        &patch,
        None,
    )
    .unwrap();
    assert!(self_report.value < 1e-6, "self distance {}", self_report.value);

    let cross = compute_fid(
        &toy.train,
        &toy.test,
        &extractor,
        LatentMode::Prior,
        &patch,
        None,
    )
    .unwrap();
    let fr = extract_manifest_features(&toy.train, &extractor, &patch).unwrap();
    let fs = extract_manifest_features(&toy.test, &extractor, &patch).unwrap();
    let direct =
        frechet_distance(&gaussian_stats(&fr).unwrap(), &gaussian_stats(&fs).unwrap()).unwrap();
    assert!(
        (cross.value - direct).abs() < 1e-10,
        "pipeline {} vs direct {}",
        cross.value,
        direct
    );
    pass(3, "hermetic FID pipeline");
}

// ---------------------------------------------------------------------------
// 4. IoU against set-based brute force, exactly; hand case 7/12.
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_iou_oracles() {
    let mut rng = Rng::derive(2, "acc-iou", 0);
    for _ in 0..1000 {
        let pred: Vec<u8> = (0..64).map(|_| rng.below(4) as u8).collect();
        let gt: Vec<u8> = (0..64).map(|_| rng.below(4) as u8).collect();
        let mut cm = ConfusionMatrix::new(4);
        cm.update(&pred, &gt);
        let m = iou_from_cm(&cm);
        for c in 0..4usize {
            let inter = pred
                .iter()
                .zip(&gt)
                .filter(|(&p, &g)| p as usize == c && g as usize == c)
                .count() as u64;
            let union = pred
                .iter()
                .zip(&gt)
                .filter(|(&p, &g)| p as usize == c || g as usize == c)
                .count() as u64;
            match m.iou_per_class[c] {
                Some(v) => assert_eq!(v, inter as f64 / union as f64),
                None => assert_eq!(union, 0),
            }
        }
    }
    let mut cm = ConfusionMatrix::new(2);
    cm.update(&[0, 1, 1, 1], &[0, 0, 1, 1]);
    let m = iou_from_cm(&cm);
    assert_eq!(m.iou_per_class[0], Some(0.5));
    assert_eq!(m.iou_per_class[1], Some(2.0 / 3.0));
    assert_eq!(m.miou, 7.0 / 12.0);
    pass(4, "IoU set-based brute force and hand case");
}

// ---------------------------------------------------------------------------
// 5. Reparameterization Monte Carlo: 1e5 draws within 5 standard errors.
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_reparameterization_monte_carlo() {
    let stats = satsynth_gan::LatentStats {
        mu: vec![0.3, -1.2, 2.0, 0.0],
        logvar: vec![0.0, 0.6, -0.5, 1.2],
    };
    let n = 100_000usize;
    let d = stats.mu.len();
    let mut rng = Rng::derive(3, "acc-mc", 0);
    let mut noise = vec![0.0f32; d];
    let mut sums = vec![0.0f64; d];
    let mut sumsq = vec![0.0f64; d];
    for _ in 0..n {
        rng.fill_normal(&mut noise);
        let z = satsynth_gan::reparameterize(&stats, &noise).unwrap();
        for (i, &v) in z.0.iter().enumerate() {
            sums[i] += v as f64;
            sumsq[i] += (v as f64) * (v as f64);
        }
    }
    for i in 0..d {
        let mean = sums[i] / n as f64;
        let var = sumsq[i] / n as f64 - mean * mean;
        let true_var = (stats.logvar[i] as f64).exp();
        let se_mean = true_var.sqrt() / (n as f64).sqrt();
        let se_var = true_var * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!((mean - stats.mu[i] as f64).abs() < 5.0 * se_mean, "dim {i} mean");
        assert!((var - true_var).abs() < 5.0 * se_var, "dim {i} var");
    }
    pass(5, "reparameterization Monte Carlo moments");
}

// ---------------------------------------------------------------------------
// 6. SPADE zero-modulation identity and tanh range bound, 100 random inits.
// ---------------------------------------------------------------------------

fn acceptance_gan_config() -> GanConfig {
    GanConfig {
        z_dim: 8,
        base_width: 4,
        num_spade_blocks: 3,
        out_channels: 3,
        num_classes: 3,
        spade_hidden: 8,
        disc_scales: 2,
        disc_layers: 2,
        disc_width: 4,
        spectral_norm: true,
    }
}

#[test]
fn criterion_06_spade_identity_and_range_bound() {
    let cfg = acceptance_gan_config();
    let r = cfg.resolution();
    let mut mask_rng = Rng::derive(4, "acc-mask", 0);
    for trial in 0..100u64 {
        let mut store = ParamStore::new();
        let nets = GanNets::build(&cfg, &mut store, 10_000 + trial).unwrap();
        let classes: Vec<u8> = (0..r * r)
            .map(|_| mask_rng.below(cfg.num_classes as u64) as u8)
            .collect();
        let mask = satsynth_data::ClassMask::new(classes, r, r, cfg.num_classes).unwrap();
        let mut zrng = Rng::derive(5, "acc-z", trial);
        let mut z = vec![0.0f32; cfg.z_dim];
        zrng.fill_normal(&mut z);
        let out = nets
            .generate(&mut store, &mask, &LatentVector::new(z).unwrap())
            .unwrap();
        assert!(out.max_abs() <= 1.0, "trial {trial} escaped [-1, 1]");

        // Zero-modulation identity on one SPADE layer per trial, cycling
        // through the generator blocks.
        let block = &nets.generator.blocks[(trial as usize) % nets.generator.blocks.len()];
        let spade = if trial % 2 == 0 { &block.spade0 } else { &block.spade1 };
        for conv in [&spade.gamma, &spade.beta] {
            store.get_mut(conv.w).data.fill(0.0);
            if let Some(b) = conv.b {
                store.get_mut(b).data.fill(0.0);
            }
        }
        let ch = store.get(spade.gamma.w).shape[0];
        let mut frng = Rng::derive(6, "acc-feat", trial);
        let n = ch * 36;
        let features = Tensor::from_vec(
            &[1, ch, 6, 6],
            (0..n).map(|_| frng.uniform_in(-1.0, 1.0)).collect(),
        );
        let planes = Tensor::from_vec(
            &[1, cfg.num_classes, 6, 6],
            (0..cfg.num_classes * 36)
                .map(|_| if frng.uniform() < 0.5 { 0.0 } else { 1.0 })
                .collect(),
        );
        let mut g = Graph::new();
        let f = g.constant(features.clone());
        let m = g.constant(planes);
        let out = spade.modulate(&mut g, &mut store, f, m);
        let mut g2 = Graph::new();
        let f2 = g2.constant(features);
        let norm = g2.instance_norm(f2, satsynth_gan::spade::NORM_EPS);
        assert_eq!(g.data(out).data, g2.data(norm).data, "trial {trial}");
    }
    pass(6, "SPADE zero-modulation identity and output range, 100 inits");
}

// ---------------------------------------------------------------------------
// 7. Checkpoint determinism: bitwise-equal generation after save/load, and
//    exact loss-trajectory reproduction across pause/resume.
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_checkpoint_determinism_and_exact_resume() {
    let dir = workdir("c7");
    let cfg = acceptance_gan_config();
    let r = cfg.resolution();
    let (nets, store) = {
        let mut store = ParamStore::new();
        let nets = GanNets::build(&cfg, &mut store, 77).unwrap();
        (nets, store)
    };
    let ckpt = Checkpoint::from_store(&cfg, &store, Vec::new(), None);
    let path = dir.join("gen.ckpt");
    ckpt.save(&path).unwrap();
    let (nets2, mut store2) = Checkpoint::load(&path).unwrap().restore_nets().unwrap();
    let mut store1 = store;
    for trial in 0..10u64 {
        let mut mrng = Rng::derive(8, "acc-c7-mask", trial);
        let classes: Vec<u8> = (0..r * r)
            .map(|_| mrng.below(cfg.num_classes as u64) as u8)
            .collect();
        let mask = satsynth_data::ClassMask::new(classes, r, r, cfg.num_classes).unwrap();
        let mut zrng = Rng::derive(9, "acc-c7-z", trial);
        let mut z = vec![0.0f32; cfg.z_dim];
        zrng.fill_normal(&mut z);
        let z = LatentVector::new(z).unwrap();
        let a = nets.generate(&mut store1, &mask, &z).unwrap();
        let b = nets2.generate(&mut store2, &mask, &z).unwrap();
        assert!(
            a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()),
            "trial {trial} not bitwise equal"
        );
    }

    // Pause / resume: identical loss trajectory under single-worker order.
    let toy = make_toy_dataset(
        &ToyDatasetSpec {
            train_tiles: 4,
            val_tiles: 1,
            test_tiles: 1,
            tile_size: 16,
            num_classes: 3,
            channels: 3,
            seed: 21,
            sites: 5,
            ..ToyDatasetSpec::default()
        },
        &dir.join("toy"),
    )
    .unwrap();
    let up = UpstreamConfig {
        gan: cfg,
        lr: 2e-4,
        adam_beta1: 0.0,
        adam_beta2: 0.9,
        batch_size: 4,
        epochs: 4,
        diversity: DiversityConfig {
            weight: 2.0,
            clamp: 10.0,
        },
        weights: LossWeights::default(),
        patch: PatchSpec {
            size: 16,
            per_tile_count: 8,
            seed: 0,
        },
        seed: 31,
        max_steps: Some(10),
    };
    let mut straight = UpstreamTrainer::new(up.clone(), &toy.train).unwrap();
    straight.run().unwrap();
    let mut half = UpstreamTrainer::new(up.clone(), &toy.train).unwrap();
    half.train_steps(5).unwrap();
    let mid = dir.join("mid.ckpt");
    half.checkpoint().save(&mid).unwrap();
    let mut resumed =
        UpstreamTrainer::from_checkpoint(up, &toy.train, &Checkpoint::load(&mid).unwrap()).unwrap();
    resumed.run().unwrap();
    assert_eq!(&straight.history()[5..], resumed.history());
    pass(7, "checkpoint bitwise determinism and exact resume");
}

// ---------------------------------------------------------------------------
// 8. Mix manifests: exact counts and tile-id disjointness over the p grid.
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_mix_manifest_counts() {
    let mk = |source| DatasetManifest {
        split: Split::Train,
        records: (0..100)
            .map(|i| ManifestRecord {
                tile_id: format!("tile_{i:03}"),
                image_uri: format!("/{source:?}/{i}"),
                mask_uri: format!("/real/{i}"),
                source,
                generator_lambda: None,
                latent_mode: None,
                seed: None,
            })
            .collect(),
    };
    let real = mk(Source::Real);
    let synth = mk(Source::Synthetic);
    for step in 0..=10u32 {
        let p = step as f64 / 10.0;
        let mixed = build_mix_manifest(
            &real,
            &synth,
            &MixSpec {
                synthetic_fraction: p,
                total_tiles: 100,
                seed: 9,
            },
        )
        .unwrap();
        let n_synth = mixed
            .records
            .iter()
            .filter(|r| r.source == Source::Synthetic)
            .count();
        let expected = (p * 100.0 + 0.5).floor() as usize;
        assert_eq!(n_synth, expected, "p={p}");
        assert_eq!(mixed.len() - n_synth, 100 - expected, "p={p}");
        assert_eq!(mixed.tile_ids().len(), 100, "tile ids must be disjoint at p={p}");
    }
    pass(8, "mix manifest counts over the p grid");
}

// ---------------------------------------------------------------------------
// 9. Desk-scale diversity trend: after a fixed budget, prior-mode samples
//    from the lambda=8 model are strictly more spread than lambda=0's.
// ---------------------------------------------------------------------------

fn desk_toy(dir: &PathBuf) -> satsynth_data::ToyDataset {
    make_toy_dataset(
        &ToyDatasetSpec {
            train_tiles: 8,
            val_tiles: 2,
            test_tiles: 4,
            tile_size: 64,
            num_classes: 4,
            channels: 3,
            seed: 1,
            sites: 10,
            ..ToyDatasetSpec::default()
        },
        dir,
    )
    .unwrap()
}

fn desk_upstream(lambda: f64, steps: u64) -> UpstreamConfig {
    UpstreamConfig {
        gan: GanConfig::desk(4, 3),
        lr: 2e-4,
        adam_beta1: 0.0,
        adam_beta2: 0.9,
        batch_size: 10,
        epochs: 100,
        diversity: DiversityConfig {
            weight: lambda,
            clamp: 10.0,
        },
        weights: LossWeights::default(),
        patch: PatchSpec {
            size: 64,
            per_tile_count: 32,
            seed: 0,
        },
        seed: 3,
        max_steps: Some(steps),
    }
}

fn mean_pairwise_sample_distance(
    trainer: &UpstreamTrainer,
    test: &DatasetManifest,
    samples_per_mask: usize,
) -> f64 {
    let mut store = trainer.store.clone();
    let mut total = 0.0f64;
    let mut count = 0usize;
    for (mi, record) in test.records.iter().enumerate() {
        let tile = record.load().unwrap();
        let (y0, x0) = sample_windows(tile.h, tile.w, 64, 1, 42, &tile.tile_id).unwrap()[0];
        let mask = tile.mask.crop(y0, x0, 64);
        let mut rng = Rng::derive(4242, "acc-c9-z", mi as u64);
        let samples: Vec<Tensor> = (0..samples_per_mask)
            .map(|_| {
                synthesize_patch(
                    &trainer.nets,
                    &mut store,
                    &mask,
                    LatentMode::Prior,
                    &mut rng,
                    None,
                )
                .unwrap()
            })
            .collect();
        for i in 0..samples.len() {
            for j in (i + 1)..samples.len() {
                total += samples[i].mean_abs_diff(&samples[j]);
                count += 1;
            }
        }
    }
    total / count as f64
}

#[test]
fn criterion_09_desk_scale_diversity_trend() {
    // Budget: 120 steps per model, well under the 2000-step ceiling.
    let steps = 120;
    let dir = workdir("c9");
    let toy = desk_toy(&dir);
    let mut spreads = Vec::new();
    for lambda in [0.0, 8.0] {
        let mut trainer = UpstreamTrainer::new(desk_upstream(lambda, steps), &toy.train).unwrap();
        trainer.run().unwrap();
        assert!(trainer.history().iter().all(|r| r.total.is_finite()));
        spreads.push(mean_pairwise_sample_distance(&trainer, &toy.test, 16));
    }
    println!(
        "  lambda=0 spread {:.5}, lambda=8 spread {:.5}",
        spreads[0], spreads[1]
    );
    assert!(
        spreads[1] > spreads[0],
        "diversity weight must increase sample spread: lambda8 {} vs lambda0 {}",
        spreads[1],
        spreads[0]
    );
    pass(9, "desk-scale diversity trend lambda 8 > lambda 0");
}

// ---------------------------------------------------------------------------
// 10. Desk-scale end-to-end: toy data -> upstream (lambda=4) -> synthesize
//     (prior, copies=1) -> downstream -> evaluation with mIoU >= 0.6, and the
//     toy reference rule itself scores >= 0.95.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_desk_scale_end_to_end() {
    let dir = workdir("c10");
    let toy = desk_toy(&dir);

    // The task must be solvable: the inverse color rule scores >= 0.95.
    {
        let mut cm = ConfusionMatrix::new(4);
        for record in &toy.test.records {
            let tile = record.load().unwrap();
            let pred = satsynth_data::bayes_predict(&tile.image, tile.channels, tile.h, tile.w, 4);
            cm.update(&pred.classes, &tile.mask.classes);
        }
        let bayes = iou_from_cm(&cm).miou;
        assert!(bayes >= 0.95, "reference rule mIoU {bayes}");
        println!("  reference-rule mIoU {bayes:.4}");
    }

    let (ckpt, history) =
        satsynth_gan::train_upstream(desk_upstream(4.0, 150), &toy.train, None).unwrap();
    assert!(history.iter().all(|r| {
        r.d_loss.is_finite() && r.total.is_finite() && r.g_fm.is_finite()
    }));

    let job = SynthesisJob {
        mode: LatentMode::Prior,
        copies: 1,
        seed: 51,
        overlap: 0,
    };
    let synth_train = synthesize_dataset(&ckpt, &toy.train, &job, &dir.join("synth")).unwrap();
    assert_eq!(synth_train.len(), toy.train.len());

    let seg_cfg = satsynth_eval::SegConfig {
        unet: satsynth_eval::UNetConfig {
            in_channels: 3,
            num_classes: 4,
            base_width: 16,
            depth: 4,
        },
        lr: 1e-4,
        adam_beta1: 0.0,
        adam_beta2: 0.9,
        batch_size: 10,
        early_stop_patience: 4,
        max_epochs: 12,
        patch: PatchSpec {
            size: 64,
            per_tile_count: 32,
            seed: 0,
        },
        seed: 61,
        eval_window: 64,
        eval_stride: 64,
    };
    let (seg_ckpt, seg_history) = train_downstream(&seg_cfg, &synth_train, &toy.val).unwrap();
    assert!(seg_history
        .iter()
        .all(|r| r.train_loss.is_finite() && r.val_miou.is_finite()));
    let (metrics, _) = evaluate(&seg_ckpt, &toy.test, 64, 64).unwrap();
    println!("  synthetic-trained downstream test mIoU {:.4}", metrics.miou);
    assert!(
        metrics.miou >= 0.6,
        "downstream on synthetic imagery must reach 0.6 mIoU, got {}",
        metrics.miou
    );
    pass(10, "desk-scale end-to-end pipeline");
}

// ---------------------------------------------------------------------------
// 11. Experiment determinism: rerunning any sweep with the same root seed
//     reproduces byte-identical CSVs; mix p=0 equals the substitution real
//     row.
// ---------------------------------------------------------------------------

fn micro_config(seed: u64) -> HarnessConfig {
    let mut cfg = HarnessConfig::profile(Scale::Desk);
    cfg.seed = seed;
    cfg.toy = ToyDatasetSpec {
        train_tiles: 4,
        val_tiles: 1,
        test_tiles: 2,
        tile_size: 32,
        num_classes: 3,
        channels: 3,
        seed: 0,
        sites: 6,
        ..ToyDatasetSpec::default()
    };
    cfg.gan = GanConfig {
        z_dim: 16,
        base_width: 8,
        num_spade_blocks: 4, // 32x32
        out_channels: 3,
        num_classes: 3,
        spade_hidden: 16,
        disc_scales: 2,
        disc_layers: 3,
        disc_width: 8,
        spectral_norm: true,
    };
    cfg.upstream.patch_size = 32;
    cfg.upstream.patches_per_tile = 8;
    cfg.upstream.batch_size = 4;
    cfg.upstream.max_steps = Some(6);
    cfg.downstream.patch_size = 16;
    cfg.downstream.patches_per_tile = 8;
    cfg.downstream.batch_size = 4;
    cfg.downstream.max_epochs = 2;
    cfg.downstream.early_stop_patience = 2;
    cfg.downstream.base_width = 8;
    cfg.downstream.depth = 2;
    cfg.downstream.eval_window = 32;
    cfg.downstream.eval_stride = 32;
    cfg.fid.feature_dim = 12;
    cfg.fid.resize = 16;
    cfg.fid.patch_size = 16;
    cfg.fid.patches_per_tile = 6;
    cfg.experiment.lambdas = vec![0.0, 4.0];
    cfg.experiment.p_grid = vec![0.0, 0.5, 1.0];
    cfg.experiment.substitution_copies = vec![1, 2];
    cfg.experiment.synthesis_lambda = 4.0;
    cfg
}

#[test]
fn criterion_11_experiment_determinism() {
    let root = workdir("c11");
    let config = micro_config(123);
    let data_dir = root.join("data");
    ensure_dataset(&config, &data_dir).unwrap();

    let run_all = |tag: &str| -> (String, String, String) {
        let out = root.join(tag);
        let plan = |kind, sub: &str| ExperimentPlan {
            kind,
            config: config.clone(),
            data_dir: data_dir.clone(),
            out_dir: out.join(sub),
        };
        let lambda = run_lambda_sweep(&plan(ExperimentKind::LambdaSweep, "lambda")).unwrap();
        let subst = run_substitution(&plan(ExperimentKind::Substitution, "subst")).unwrap();
        let mix = run_mix_sweep(&plan(ExperimentKind::MixSweep, "mix")).unwrap();
        (
            std::fs::read_to_string(lambda.csv_path).unwrap(),
            std::fs::read_to_string(subst.csv_path).unwrap(),
            std::fs::read_to_string(mix.csv_path).unwrap(),
        )
    };
    let (l1, s1, m1) = run_all("run1");
    let (l2, s2, m2) = run_all("run2");
    assert_eq!(l1, l2, "lambda sweep CSV must be byte-identical");
    assert_eq!(s1, s2, "substitution CSV must be byte-identical");
    assert_eq!(m1, m2, "mix sweep CSV must be byte-identical");

    // Equivalence oracle: the p=0 mix row equals the substitution table's
    // 100% real mean under identical seeds.
    let real_mean = s1
        .lines()
        .find(|l| l.starts_with("100% real"))
        .and_then(|l| l.rsplit(',').next())
        .unwrap()
        .to_string();
    let p0_miou = m1
        .lines()
        .find(|l| l.starts_with("0.00,"))
        .and_then(|l| l.rsplit(',').next())
        .unwrap()
        .to_string();
    assert_eq!(
        p0_miou, real_mean,
        "p=0 mix training must equal the 100% real substitution run"
    );

    // Over-sampling construction: the 200% manifest has exactly 2 records
    // per mask id.
    let synth_manifest = DatasetManifest::load(
        &root.join("run1/subst/synthetic_200pct/tiles/manifest.jsonl"),
        Split::Train,
    )
    .unwrap();
    assert_eq!(synth_manifest.len(), 2 * config.toy.train_tiles);
    assert_eq!(synth_manifest.tile_ids().len(), config.toy.train_tiles);

    // The sweep CSV has one row per lambda with all cells finite.
    let data_rows: Vec<&str> = l1
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("lambda"))
        .collect();
    assert_eq!(data_rows.len(), config.experiment.lambdas.len());
    for row in data_rows {
        for cell in row.split(',') {
            assert!(!cell.contains("nan") && !cell.is_empty(), "bad cell {cell}");
        }
    }
    pass(11, "experiment determinism and cross-experiment equivalence");
}
