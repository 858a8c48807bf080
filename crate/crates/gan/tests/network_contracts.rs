//! Contract tests for the network family: shape and determinism guarantees,
//! analytic forward-pass cases, Monte Carlo checks of the reparameterization,
//! the SPADE zero-modulation identity, and checkpoint round-trips.

use satsynth_data::ClassMask;
use satsynth_gan::{
    reparameterize, Checkpoint, GanConfig, GanNets, LatentStats, LatentVector,
};
use satsynth_tensor::{Graph, ParamStore, Rng, Tensor};

fn tiny_config() -> GanConfig {
    GanConfig {
        z_dim: 8,
        base_width: 4,
        num_spade_blocks: 3, // 16x16
        out_channels: 3,
        num_classes: 3,
        spade_hidden: 8,
        disc_scales: 2,
        disc_layers: 2,
        disc_width: 4,
        spectral_norm: true,
    }
}

fn build(cfg: &GanConfig, seed: u64) -> (GanNets, ParamStore) {
    let mut store = ParamStore::new();
    let nets = GanNets::build(cfg, &mut store, seed).unwrap();
    (nets, store)
}

fn random_mask(cfg: &GanConfig, seed: u64) -> ClassMask {
    let r = cfg.resolution();
    let mut rng = Rng::derive(seed, "mask", 0);
    let classes: Vec<u8> = (0..r * r)
        .map(|_| rng.below(cfg.num_classes as u64) as u8)
        .collect();
    ClassMask::new(classes, r, r, cfg.num_classes).unwrap()
}

fn random_image(cfg: &GanConfig, seed: u64) -> Vec<f32> {
    let r = cfg.resolution();
    let mut rng = Rng::derive(seed, "img", 0);
    (0..cfg.out_channels * r * r)
        .map(|_| rng.uniform_in(-1.0, 1.0))
        .collect()
}

fn random_z(cfg: &GanConfig, seed: u64) -> LatentVector {
    let mut rng = Rng::derive(seed, "z", 0);
    let mut v = vec![0.0f32; cfg.z_dim];
    rng.fill_normal(&mut v);
    LatentVector::new(v).unwrap()
}

#[test]
fn encode_shape_and_determinism() {
    let cfg = tiny_config();
    let (nets, mut store) = build(&cfg, 1);
    let img = random_image(&cfg, 2);
    let r = cfg.resolution();
    let a = nets.encode(&mut store, &img, r, r).unwrap();
    let b = nets.encode(&mut store, &img, r, r).unwrap();
    assert_eq!(a.mu.len(), cfg.z_dim);
    assert_eq!(a.logvar.len(), cfg.z_dim);
    assert_eq!(a, b, "encode must be deterministic");
}

#[test]
fn encode_rejects_wrong_resolution() {
    let cfg = tiny_config();
    let (nets, mut store) = build(&cfg, 1);
    let bad = vec![0.0f32; cfg.out_channels * 8 * 8];
    assert!(nets.encode(&mut store, &bad, 8, 8).is_err());
}

#[test]
fn encode_with_zeroed_projection_returns_bias() {
    let cfg = tiny_config();
    let (nets, mut store) = build(&cfg, 3);
    store.get_mut(nets.encoder.fc_mu.w).data.fill(0.0);
    let bias: Vec<f32> = (0..cfg.z_dim).map(|i| i as f32 * 0.25 - 1.0).collect();
    store
        .get_mut(nets.encoder.fc_mu.b)
        .data
        .copy_from_slice(&bias);
    let img = random_image(&cfg, 4);
    let r = cfg.resolution();
    let stats = nets.encode(&mut store, &img, r, r).unwrap();
    assert_eq!(stats.mu, bias, "zeroed weights must pass the bias through");
}

#[test]
fn reparameterize_zero_noise_and_unit_scale() {
    let stats = LatentStats {
        mu: vec![0.5, -1.0, 2.0],
        logvar: vec![0.0, 0.0, 0.0],
    };
    let z = reparameterize(&stats, &[0.0, 0.0, 0.0]).unwrap();
    assert_eq!(z.0, stats.mu, "zero noise must return mu");
    let z2 = reparameterize(&stats, &[1.0, -2.0, 0.5]).unwrap();
    assert_eq!(z2.0, vec![1.5, -3.0, 2.5], "logvar 0 means unit scale");
    assert!(reparameterize(&stats, &[0.0; 4]).is_err(), "length mismatch");
}

#[test]
fn reparameterize_monte_carlo_moments() {
    let stats = LatentStats {
        mu: vec![0.5, -1.0, 2.0, 0.0],
        logvar: vec![0.0, 0.4, -0.3, 1.0],
    };
    let n = 100_000usize;
    let d = stats.mu.len();
    let mut rng = Rng::derive(77, "mc", 0);
    let mut sums = vec![0.0f64; d];
    let mut sumsq = vec![0.0f64; d];
    let mut noise = vec![0.0f32; d];
    for _ in 0..n {
        rng.fill_normal(&mut noise);
        let z = reparameterize(&stats, &noise).unwrap();
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
        assert!(
            (mean - stats.mu[i] as f64).abs() < 5.0 * se_mean,
            "dim {i}: mean {mean} vs {} (5 SE = {})",
            stats.mu[i],
            5.0 * se_mean
        );
        assert!(
            (var - true_var).abs() < 5.0 * se_var,
            "dim {i}: var {var} vs {true_var} (5 SE = {})",
            5.0 * se_var
        );
    }
}

#[test]
fn generate_shape_range_and_determinism() {
    let cfg = tiny_config();
    let (nets, mut store) = build(&cfg, 5);
    let mask = random_mask(&cfg, 6);
    let z = random_z(&cfg, 7);
    let r = cfg.resolution();
    let out = nets.generate(&mut store, &mask, &z).unwrap();
    assert_eq!(out.shape, vec![cfg.out_channels, r, r]);
    assert!(out.max_abs() <= 1.0, "tanh head must bound output");
    let again = nets.generate(&mut store, &mask, &z).unwrap();
    assert_eq!(out.data, again.data, "generate must be deterministic");
}

#[test]
fn generate_four_channel_config() {
    let mut cfg = tiny_config();
    cfg.out_channels = 4;
    let (nets, mut store) = build(&cfg, 8);
    let mask = random_mask(&cfg, 9);
    let z = random_z(&cfg, 10);
    let out = nets.generate(&mut store, &mask, &z).unwrap();
    assert_eq!(out.shape[0], 4);
}

#[test]
fn generate_output_range_over_random_inits() {
    let cfg = tiny_config();
    let mask = random_mask(&cfg, 11);
    for trial in 0..20 {
        let (nets, mut store) = build(&cfg, 1000 + trial);
        let z = random_z(&cfg, 2000 + trial);
        let out = nets.generate(&mut store, &mask, &z).unwrap();
        assert!(out.max_abs() <= 1.0, "trial {trial} escaped [-1, 1]");
    }
}

#[test]
fn same_mask_different_z_yield_different_images() {
    let cfg = tiny_config();
    let (nets, mut store) = build(&cfg, 12);
    let mask = random_mask(&cfg, 13);
    let a = nets.generate(&mut store, &mask, &random_z(&cfg, 14)).unwrap();
    let b = nets.generate(&mut store, &mask, &random_z(&cfg, 15)).unwrap();
    assert!(a.mean_abs_diff(&b) > 0.0);
}

#[test]
fn generate_rejects_mismatched_classes() {
    let cfg = tiny_config();
    let (nets, mut store) = build(&cfg, 16);
    let r = cfg.resolution();
    let mask = ClassMask::new(vec![0; r * r], r, r, cfg.num_classes + 1).unwrap();
    assert!(nets.generate(&mut store, &mask, &random_z(&cfg, 17)).is_err());
}

#[test]
fn gradient_flows_from_output_back_to_z() {
    let cfg = tiny_config();
    let (nets, mut store) = build(&cfg, 18);
    let mask = random_mask(&cfg, 19);
    let planes = nets.batch_planes(&[&mask]).unwrap();
    let pyramid = nets.mask_pyramid(&planes);
    // Register z as a parameter so backward reports its gradient.
    let z = random_z(&cfg, 20);
    let z_id = store.insert(
        "test.z_probe",
        Tensor::from_vec(&[1, cfg.z_dim], z.0.clone()),
        true,
    );
    let mut g = Graph::new();
    let pyr: Vec<_> = pyramid.into_iter().map(|t| g.constant(t)).collect();
    let zv = g.param(&store, z_id);
    let out = nets.generator.forward(&mut g, &mut store, &pyr, zv);
    let a = g.abs(out);
    let l1 = g.mean_all(a);
    let grads = g.backward(l1, store.len());
    let gz = grads.get(z_id).expect("z must receive gradient");
    let norm: f64 = gz.data.iter().map(|&v| (v as f64).abs()).sum();
    assert!(norm > 0.0, "generator is disconnected from z");
}

#[test]
fn spade_zero_modulation_identity_for_every_generator_block() {
    let cfg = tiny_config();
    let (nets, mut store) = build(&cfg, 21);
    let mut rng = Rng::derive(22, "spade-blocks", 0);
    for (i, block) in nets.generator.blocks.iter().enumerate() {
        let spades = [&block.spade0, &block.spade1]
            .into_iter()
            .chain(block.skip.as_ref().map(|(s, _)| s));
        for (j, spade) in spades.enumerate() {
            for conv in [&spade.gamma, &spade.beta] {
                store.get_mut(conv.w).data.fill(0.0);
                if let Some(b) = conv.b {
                    store.get_mut(b).data.fill(0.0);
                }
            }
            let ch = store.get(spade.gamma.w).shape[0];
            let shape = [2, ch, 8, 8];
            let n: usize = shape.iter().product();
            let features =
                Tensor::from_vec(&shape, (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect());
            let planes = Tensor::from_vec(
                &[2, cfg.num_classes, 8, 8],
                (0..2 * cfg.num_classes * 64)
                    .map(|_| if rng.uniform() < 0.5 { 0.0 } else { 1.0 })
                    .collect(),
            );
            let mut g = Graph::new();
            let f = g.constant(features.clone());
            let m = g.constant(planes);
            let out = spade.modulate(&mut g, &mut store, f, m);
            let mut g2 = Graph::new();
            let f2 = g2.constant(features);
            let norm = g2.instance_norm(f2, satsynth_gan::spade::NORM_EPS);
            assert_eq!(
                g.data(out).data,
                g2.data(norm).data,
                "block {i} spade {j} zero-modulation identity"
            );
        }
    }
}

#[test]
fn discriminator_scale_count_and_shrinking_logits() {
    let cfg = tiny_config();
    let (nets, mut store) = build(&cfg, 23);
    let r = cfg.resolution();
    let mask = random_mask(&cfg, 24);
    let planes = nets.batch_planes(&[&mask]).unwrap();
    let image = Tensor::from_vec(&[1, cfg.out_channels, r, r], random_image(&cfg, 25));
    let outs = nets.discriminate(&mut store, &image, &planes);
    assert_eq!(outs.len(), cfg.disc_scales);
    let mut prev = usize::MAX;
    for (feats, logits) in &outs {
        assert_eq!(feats.len(), cfg.disc_layers);
        let size = logits.shape[2];
        assert!(size < prev, "logit maps must shrink per scale");
        prev = size;
    }
}

#[test]
fn discriminator_logit_size_matches_stride_arithmetic() {
    let cfg = tiny_config();
    let (nets, mut store) = build(&cfg, 26);
    let r = cfg.resolution();
    let mask = random_mask(&cfg, 27);
    let planes = nets.batch_planes(&[&mask]).unwrap();
    let image = Tensor::from_vec(&[1, cfg.out_channels, r, r], random_image(&cfg, 28));
    let outs = nets.discriminate(&mut store, &image, &planes);
    for (s, (_, logits)) in outs.iter().enumerate() {
        // Independent arithmetic: disc_layers stride-2 k4 p1 convolutions on
        // the 2^s-downsampled input, then a size-preserving projection.
        let mut size = r >> s;
        for _ in 0..cfg.disc_layers {
            size = (size + 2 - 4) / 2 + 1;
        }
        assert_eq!(logits.shape[2], size, "scale {s}");
        assert_eq!(logits.shape[3], size, "scale {s}");
    }
}

#[test]
fn discriminator_is_batch_independent() {
    let cfg = tiny_config();
    let (nets, mut store) = build(&cfg, 29);
    let r = cfg.resolution();
    let m1 = random_mask(&cfg, 30);
    let m2 = random_mask(&cfg, 31);
    let i1 = random_image(&cfg, 32);
    let i2 = random_image(&cfg, 33);
    let planes12 = nets.batch_planes(&[&m1, &m2]).unwrap();
    let planes21 = nets.batch_planes(&[&m2, &m1]).unwrap();
    let mut img12 = i1.clone();
    img12.extend_from_slice(&i2);
    let mut img21 = i2.clone();
    img21.extend_from_slice(&i1);
    let out12 = nets.discriminate(
        &mut store,
        &Tensor::from_vec(&[2, cfg.out_channels, r, r], img12),
        &planes12,
    );
    let out21 = nets.discriminate(
        &mut store,
        &Tensor::from_vec(&[2, cfg.out_channels, r, r], img21),
        &planes21,
    );
    for ((_, l12), (_, l21)) in out12.iter().zip(&out21) {
        let (_, _, h, w) = l12.dims4();
        let per = h * w;
        assert_eq!(l12.data[..per], l21.data[per..], "sample 0 vs swapped 1");
        assert_eq!(l12.data[per..], l21.data[..per], "sample 1 vs swapped 0");
    }
}

#[test]
fn encoder_mode_with_zero_noise_equals_generating_from_mu() {
    let cfg = tiny_config();
    let (nets, mut store) = build(&cfg, 40);
    let r = cfg.resolution();
    let image = random_image(&cfg, 41);
    let mask = random_mask(&cfg, 42);
    let stats = nets.encode(&mut store, &image, r, r).unwrap();
    let z = reparameterize(&stats, &vec![0.0; cfg.z_dim]).unwrap();
    assert_eq!(z.0, stats.mu);
    let from_mu = nets
        .generate(&mut store, &mask, &LatentVector::new(stats.mu.clone()).unwrap())
        .unwrap();
    let from_z = nets.generate(&mut store, &mask, &z).unwrap();
    assert_eq!(from_mu.data, from_z.data);
}

#[test]
fn checkpoint_round_trip_generates_bitwise_identical_rasters() {
    let cfg = tiny_config();
    let (nets, store) = build(&cfg, 34);
    let ckpt = Checkpoint::from_store(&cfg, &store, Vec::new(), None);
    let dir = std::env::temp_dir().join("satsynth_gan_tests");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("roundtrip.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let (nets2, mut store2) = loaded.restore_nets().unwrap();
    let mut store1 = store;
    for trial in 0..10 {
        let mask = random_mask(&cfg, 100 + trial);
        let z = random_z(&cfg, 200 + trial);
        let a = nets.generate(&mut store1, &mask, &z).unwrap();
        let b = nets2.generate(&mut store2, &mask, &z).unwrap();
        assert!(
            a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()),
            "trial {trial} differs after checkpoint round-trip"
        );
    }
}

#[test]
fn build_is_deterministic_in_seed() {
    let cfg = tiny_config();
    let (_, s1) = build(&cfg, 55);
    let (_, s2) = build(&cfg, 55);
    let (_, s3) = build(&cfg, 56);
    let flat = |s: &ParamStore| -> Vec<u32> {
        s.iter()
            .flat_map(|(_, e)| e.value.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
            .collect()
    };
    assert_eq!(flat(&s1), flat(&s2), "same seed must give identical weights");
    assert_ne!(flat(&s1), flat(&s3), "different seeds must differ");
}

#[test]
fn xavier_init_bias_zero_and_variance() {
    let cfg = tiny_config();
    let (_, store) = build(&cfg, 57);
    let mut checked_bias = false;
    for (_, entry) in store.iter() {
        if entry.name.ends_with(".b") {
            assert!(entry.value.data.iter().all(|&v| v == 0.0), "{}", entry.name);
            checked_bias = true;
        }
    }
    assert!(checked_bias);
    // Variance spot check on the fc weight (z_dim x 16*seed_channels).
    let id = store.lookup("gen.fc.w").unwrap();
    let t = store.get(id);
    let (fan_in, fan_out) = (t.shape[0], t.shape[1]);
    let mean: f64 = t.data.iter().map(|&x| x as f64).sum::<f64>() / t.numel() as f64;
    let var: f64 = t.data.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / t.numel() as f64;
    let expected = 2.0 / (fan_in + fan_out) as f64;
    assert!((var - expected).abs() / expected < 0.15, "var {var} vs {expected}");
}
