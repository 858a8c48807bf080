//! Gaussian feature statistics and the Fréchet distance between them.

use serde::{Deserialize, Serialize};

use satsynth_data::LatentMode;

use crate::error::{EvalError, Result};
use crate::linalg::{matmul, reconstruct, sym_eigen, symmetrize};

/// Sample mean and unbiased covariance of a feature set.
#[derive(Debug, Clone)]
pub struct GaussianStats {
    pub mu: Vec<f64>,
    /// Row-major d x d, symmetric.
    pub sigma: Vec<f64>,
    pub n: usize,
    pub dim: usize,
}

pub fn gaussian_stats(features: &[Vec<f64>]) -> Result<GaussianStats> {
    if features.len() < 2 {
        return Err(EvalError::TooFewSamples {
            needed: 2,
            found: features.len(),
        });
    }
    let n = features.len();
    let d = features[0].len();
    for f in features {
        if f.len() != d {
            return Err(EvalError::DimMismatch { a: d, b: f.len() });
        }
    }
    let mut mu = vec![0.0f64; d];
    for f in features {
        for (m, x) in mu.iter_mut().zip(f) {
            *m += x;
        }
    }
    for m in &mut mu {
        *m /= n as f64;
    }
    let mut sigma = vec![0.0f64; d * d];
    for f in features {
        for i in 0..d {
            let di = f[i] - mu[i];
            for j in i..d {
                sigma[i * d + j] += di * (f[j] - mu[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = sigma[i * d + j] / denom;
            sigma[i * d + j] = v;
            sigma[j * d + i] = v;
        }
    }
    Ok(GaussianStats {
        mu,
        sigma,
        n,
        dim: d,
    })
}

/// Eigenvalue clamp: anything below `1e-10 * max_eigenvalue` is treated as 0.
const EIG_CLAMP_REL: f64 = 1e-10;
/// Relative Frobenius tolerance on ||S*S - M|| for the matrix square root.
const SQRT_RESIDUAL_REL: f64 = 1e-6;

fn psd_sqrt(matrix: &[f64], n: usize) -> Result<Vec<f64>> {
    let (vals, vecs) = sym_eigen(matrix, n);
    let max_eig = vals.iter().cloned().fold(0.0f64, f64::max);
    let clamp = EIG_CLAMP_REL * max_eig.max(0.0);
    let s = reconstruct(&vals, &vecs, n, |x| if x > clamp { x.sqrt() } else { 0.0 });
    // Residual check: the square of the computed root must reproduce the
    // PSD part of the input.
    let ss = matmul(&s, &s, n, n, n);
    let clamped = reconstruct(&vals, &vecs, n, |x| if x > clamp { x } else { 0.0 });
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (a, b) in ss.iter().zip(&clamped) {
        num += (a - b) * (a - b);
        den += b * b;
    }
    let residual = num.sqrt();
    let tolerance = SQRT_RESIDUAL_REL * den.sqrt().max(1e-12);
    // Negated comparison so a NaN residual (corrupt input) also fails.
    if !(residual <= tolerance) {
        return Err(EvalError::NumericalFailure {
            residual,
            tolerance,
        });
    }
    Ok(s)
}

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
///
/// The cross term is computed through the symmetrized product
/// A = S_a^{1/2}, M = A S_b A, whose eigenvalues equal those of S_a S_b;
/// negative eigenvalues below tolerance are clamped to zero and tiny
/// negative totals report as 0.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim != b.dim {
        return Err(EvalError::DimMismatch { a: a.dim, b: b.dim });
    }
    let d = a.dim;
    let mean_term: f64 = a
        .mu
        .iter()
        .zip(&b.mu)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let trace = |s: &[f64]| (0..d).map(|i| s[i * d + i]).sum::<f64>();

    let root_a = psd_sqrt(&a.sigma, d)?;
    let mut m = matmul(&matmul(&root_a, &b.sigma, d, d, d), &root_a, d, d, d);
    symmetrize(&mut m, d);
    let (vals, _) = sym_eigen(&m, d);
    let max_eig = vals.iter().cloned().fold(0.0f64, f64::max);
    let clamp = EIG_CLAMP_REL * max_eig.max(0.0);
    let tr_sqrt: f64 = vals
        .iter()
        .map(|&x| if x > clamp { x.sqrt() } else { 0.0 })
        .sum();

    let fid = mean_term + trace(&a.sigma) + trace(&b.sigma) - 2.0 * tr_sqrt;
    Ok(fid.max(0.0))
}

/// Fréchet distance with provenance, as written to report files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidReport {
    pub value: f64,
    pub mode: LatentMode,
    pub extractor: String,
    pub n_real: usize,
    pub n_synth: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_hash: Option<String>,
}
