//! Layer wrappers: parameter registration plus a graph-building forward.

use crate::graph::{Graph, VarId};
use crate::init::{conv_fans, xavier_uniform};
use crate::param::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// 2-D convolution layer. Weight layout [out, in, k, k]; optional bias and
/// optional spectral normalization (power-iteration buffer lives in the store).
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
    pub sn_u: Option<ParamId>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        spectral_norm: bool,
        init_seed: u64,
    ) -> Self {
        let shape = [out_ch, in_ch, kernel, kernel];
        let (fan_in, fan_out) = conv_fans(&shape);
        let mut rng = Rng::derive(init_seed, name, 0);
        let w = store.insert(
            &format!("{name}.w"),
            xavier_uniform(&shape, fan_in, fan_out, &mut rng),
            true,
        );
        let b = bias.then(|| store.insert(&format!("{name}.b"), Tensor::zeros(&[out_ch]), true));
        let sn_u = spectral_norm.then(|| {
            let mut u = vec![0.0f32; out_ch];
            let mut urng = Rng::derive(init_seed, &format!("{name}.sn_u"), 0);
            urng.fill_normal(&mut u);
            let norm = u.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt().max(1e-12);
            for x in &mut u {
                *x = (*x as f64 / norm) as f32;
            }
            store.insert(&format!("{name}.sn_u"), Tensor::from_vec(&[out_ch], u), false)
        });
        Conv2d {
            w,
            b,
            stride,
            pad,
            sn_u,
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &mut ParamStore,
        x: VarId,
        train: bool,
    ) -> VarId {
        let w = g.param(store, self.w);
        let w = match self.sn_u {
            Some(u) => g.spectral_norm(w, store, u, train),
            None => w,
        };
        let mut y = g.conv2d(x, w, self.stride, self.pad);
        if let Some(bid) = self.b {
            let b = g.param(store, bid);
            y = g.add_chan(y, b);
        }
        y
    }
}

/// Fully connected layer; weight layout [in, out] so forward is x @ W + b.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init_seed: u64,
    ) -> Self {
        let mut rng = Rng::derive(init_seed, name, 0);
        let w = store.insert(
            &format!("{name}.w"),
            xavier_uniform(&[in_dim, out_dim], in_dim, out_dim, &mut rng),
            true,
        );
        let b = store.insert(&format!("{name}.b"), Tensor::zeros(&[out_dim]), true);
        Linear { w, b }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: VarId) -> VarId {
        let w = g.param(store, self.w);
        let y = g.matmul(x, w);
        let b = g.param(store, self.b);
        g.add_row(y, b)
    }
}
