//! Weight initialization.

use crate::rng::Rng;
use crate::tensor::Tensor;

/// Xavier-uniform draw: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn xavier_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.uniform_in(-a, a)).collect();
    Tensor::from_vec(shape, data)
}

/// Fan counts for a conv weight [out, in, kh, kw] or a linear weight [in, out].
pub fn conv_fans(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        4 => {
            let receptive = shape[2] * shape[3];
            (shape[1] * receptive, shape[0] * receptive)
        }
        2 => (shape[0], shape[1]),
        _ => panic!("no fan convention for shape {shape:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xavier_variance_matches_formula() {
        let mut rng = Rng::derive(11, "init", 0);
        let t = xavier_uniform(&[512, 512], 512, 512, &mut rng);
        let mean: f64 = t.data.iter().map(|&x| x as f64).sum::<f64>() / t.numel() as f64;
        let var: f64 = t
            .data
            .iter()
            .map(|&x| (x as f64 - mean).powi(2))
            .sum::<f64>()
            / t.numel() as f64;
        let expected = 2.0 / (512.0 + 512.0);
        assert!(
            (var - expected).abs() / expected < 0.1,
            "variance {var} vs expected {expected}"
        );
    }

    #[test]
    fn xavier_is_deterministic_per_stream() {
        let a = xavier_uniform(&[8, 8], 8, 8, &mut Rng::derive(3, "w", 0));
        let b = xavier_uniform(&[8, 8], 8, 8, &mut Rng::derive(3, "w", 0));
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn xavier_bounds_hold() {
        let mut rng = Rng::derive(4, "init", 1);
        let t = xavier_uniform(&[64, 64], 64, 64, &mut rng);
        let a = (6.0f64 / 128.0).sqrt() as f32;
        assert!(t.data.iter().all(|x| x.abs() <= a));
    }
}
