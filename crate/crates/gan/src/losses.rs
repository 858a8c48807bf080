//! Training objectives: hinge adversarial losses, discriminator feature
//! matching, the encoder's Gaussian KL regularizer, and the clamped
//! diversity ratio that rewards latent-sensitive generators.

use serde::{Deserialize, Serialize};

use satsynth_tensor::{Graph, VarId};

use crate::error::{GanError, Result};

/// Configuration of the diversity objective: `weight` scales the term in the
/// generator objective, `clamp` bounds the ratio for numerical stability.
/// Both norms are fixed as mean absolute differences so the ratio is
/// independent of resolution and latent dimension.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DiversityConfig {
    pub weight: f64,
    pub clamp: f32,
}

impl Default for DiversityConfig {
    fn default() -> Self {
        DiversityConfig {
            weight: 0.0,
            clamp: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    pub gan: f64,
    pub feature_matching: f64,
    pub kld: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gan: 1.0,
            feature_matching: 10.0,
            kld: 0.05,
        }
    }
}

/// min(mean|img1 - img2| / mean|z1 - z2|, clamp).
///
/// The caller multiplies by the diversity weight and subtracts the result
/// from the generator loss (it is maximized). The latent distance is treated
/// as a constant: gradients flow through the image difference only. At the
/// clamp boundary the subgradient is taken on the clamp side (zero).
pub fn diversity_term(
    g: &mut Graph,
    img1: VarId,
    img2: VarId,
    z1: &[f32],
    z2: &[f32],
    cfg: &DiversityConfig,
) -> Result<VarId> {
    if z1.len() != z2.len() {
        return Err(GanError::LatentLengthMismatch {
            expected: z1.len(),
            found: z2.len(),
        });
    }
    let denom = z1
        .iter()
        .zip(z2)
        .map(|(a, b)| (*a as f64 - *b as f64).abs())
        .sum::<f64>()
        / z1.len().max(1) as f64;
    if denom == 0.0 {
        return Err(GanError::IdenticalLatents);
    }
    let diff = g.sub(img1, img2);
    let absdiff = g.abs(diff);
    let num = g.mean_all(absdiff);
    let ratio = g.mul_scalar(num, (1.0 / denom) as f32);
    Ok(g.min_const(ratio, cfg.clamp))
}

/// KL(q(z|x) || N(0, I)) = 0.5 * sum(exp(logvar) + mu^2 - 1 - logvar),
/// summed over latent dimensions and averaged over the batch.
pub fn kld_term(g: &mut Graph, mu: VarId, logvar: VarId) -> VarId {
    let batch = g.data(mu).shape[0].max(1);
    let var = g.exp(logvar);
    let mu2 = g.mul(mu, mu);
    let sum_terms = g.add(var, mu2);
    let minus_one = g.add_scalar(sum_terms, -1.0);
    let inner = g.sub(minus_one, logvar);
    let total = g.sum_all(inner);
    g.mul_scalar(total, 0.5 / batch as f32)
}

/// Discriminator hinge loss, averaged over scales:
/// mean(relu(1 - real)) + mean(relu(1 + fake)).
pub fn hinge_d(g: &mut Graph, real_logits: &[VarId], fake_logits: &[VarId]) -> VarId {
    assert_eq!(real_logits.len(), fake_logits.len(), "scale count mismatch");
    assert!(!real_logits.is_empty(), "hinge_d needs at least one scale");
    let mut terms = Vec::with_capacity(real_logits.len());
    for (&r, &f) in real_logits.iter().zip(fake_logits) {
        let neg_r = g.mul_scalar(r, -1.0);
        let one_minus_r = g.add_scalar(neg_r, 1.0);
        let hr = g.relu(one_minus_r);
        let mr = g.mean_all(hr);
        let one_plus_f = g.add_scalar(f, 1.0);
        let hf = g.relu(one_plus_f);
        let mf = g.mean_all(hf);
        terms.push(g.add(mr, mf));
    }
    average(g, &terms)
}

/// Generator hinge loss, -mean(fake logits), averaged over scales.
pub fn hinge_g(g: &mut Graph, fake_logits: &[VarId]) -> VarId {
    assert!(!fake_logits.is_empty(), "hinge_g needs at least one scale");
    let mut terms = Vec::with_capacity(fake_logits.len());
    for &f in fake_logits {
        let m = g.mean_all(f);
        terms.push(g.mul_scalar(m, -1.0));
    }
    average(g, &terms)
}

/// Mean over scales and layers of the mean absolute feature difference.
/// Real-side features are expected to be constants (no gradient to the
/// discriminator from the generator step).
pub fn feature_matching(
    g: &mut Graph,
    real_feats: &[Vec<VarId>],
    fake_feats: &[Vec<VarId>],
) -> VarId {
    assert_eq!(real_feats.len(), fake_feats.len(), "scale count mismatch");
    let mut terms = Vec::new();
    for (rs, fs) in real_feats.iter().zip(fake_feats) {
        assert_eq!(rs.len(), fs.len(), "layer count mismatch");
        for (&r, &f) in rs.iter().zip(fs) {
            assert_eq!(g.data(r).shape, g.data(f).shape, "feature shape mismatch");
            let d = g.sub(f, r);
            let a = g.abs(d);
            terms.push(g.mean_all(a));
        }
    }
    assert!(!terms.is_empty(), "feature matching needs features");
    average(g, &terms)
}

fn average(g: &mut Graph, terms: &[VarId]) -> VarId {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = g.add(acc, t);
    }
    g.mul_scalar(acc, 1.0 / terms.len() as f32)
}

/// Weighted generator objective and its per-component breakdown. Component
/// values are reported in f64; `total` is the graph node to backpropagate.
pub struct GeneratorObjective {
    pub total: VarId,
    pub gan: f64,
    pub feature_matching: f64,
    pub kld: f64,
    pub diversity: f64,
    pub total_value: f64,
}

pub fn generator_objective(
    g: &mut Graph,
    gan: VarId,
    fm: Option<VarId>,
    kld: Option<VarId>,
    diversity: Option<VarId>,
    weights: &LossWeights,
    div_cfg: &DiversityConfig,
) -> GeneratorObjective {
    let gan_v = g.value(gan);
    let fm_v = fm.map(|v| g.value(v)).unwrap_or(0.0);
    let kld_v = kld.map(|v| g.value(v)).unwrap_or(0.0);
    let div_v = diversity.map(|v| g.value(v)).unwrap_or(0.0);

    let mut total = g.mul_scalar(gan, weights.gan as f32);
    if let Some(fm) = fm {
        let t = g.mul_scalar(fm, weights.feature_matching as f32);
        total = g.add(total, t);
    }
    if let Some(kld) = kld {
        let t = g.mul_scalar(kld, weights.kld as f32);
        total = g.add(total, t);
    }
    if let Some(div) = diversity {
        let t = g.mul_scalar(div, div_cfg.weight as f32);
        total = g.sub(total, t);
    }
    let total_value = weights.gan * gan_v
        + weights.feature_matching * fm_v
        + weights.kld * kld_v
        - div_cfg.weight * div_v;
    GeneratorObjective {
        total,
        gan: gan_v,
        feature_matching: fm_v,
        kld: kld_v,
        diversity: div_v,
        total_value,
    }
}
