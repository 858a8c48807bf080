//! Reverse-mode autodiff over a per-step tape.
//!
//! A [`Graph`] is built fresh for every optimization step: leaves snapshot
//! parameter values, every op computes its forward result eagerly at node
//! creation, and [`Graph::backward`] walks the tape once in reverse. All
//! kernels are written so that results are bitwise reproducible: the only
//! parallelism is over independent batch samples, and every reduction runs
//! in a fixed sequential order.

use rayon::prelude::*;

use crate::param::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

pub type VarId = usize;

/// c[m,n] += alpha * op(a)[m,k] * op(b)[k,n], row-major slices.
#[allow(clippy::too_many_arguments)]
pub fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs size");
    assert_eq!(b.len(), k * n, "gemm: rhs size");
    assert_eq!(c.len(), m * n, "gemm: out size");
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug)]
enum Op {
    Leaf {
        param: Option<ParamId>,
    },
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    AddScalar(VarId),
    MulScalar(VarId, f32),
    Exp(VarId),
    Abs(VarId),
    Relu(VarId),
    LeakyRelu(VarId, f32),
    Tanh(VarId),
    /// min(x, c); at x == c the gradient is routed to the clamp side (zero).
    MinConst(VarId, f32),
    MeanAll(VarId),
    SumAll(VarId),
    Reshape(VarId),
    Matmul(VarId, VarId),
    /// [m,n] + broadcast row [n]
    AddRow(VarId, VarId),
    /// [b,c,h,w] + broadcast channel [c]
    AddChan(VarId, VarId),
    Conv2d {
        x: VarId,
        w: VarId,
        stride: usize,
        pad: usize,
    },
    UpsampleNearest2x(VarId),
    AvgPool2x(VarId),
    MaxPool2x {
        x: VarId,
        argmax: Vec<u32>,
    },
    InstanceNorm {
        x: VarId,
        rstd: Vec<f32>,
    },
    ConcatChannels(VarId, VarId),
    SoftmaxCrossEntropy {
        logits: VarId,
        targets: Vec<u32>,
        probs: Vec<f32>,
    },
    SpectralNorm {
        w: VarId,
        u: Vec<f32>,
        v: Vec<f32>,
        sigma: f32,
    },
}

struct Node {
    data: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_leaves: Vec<(ParamId, VarId)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn data(&self, id: VarId) -> &Tensor {
        &self.nodes[id].data
    }

    pub fn value(&self, id: VarId) -> f64 {
        self.nodes[id].data.item() as f64
    }

    fn push(&mut self, data: Tensor, op: Op) -> VarId {
        self.nodes.push(Node { data, op });
        self.nodes.len() - 1
    }

    pub fn constant(&mut self, t: Tensor) -> VarId {
        self.push(t, Op::Leaf { param: None })
    }

    /// Leaf snapshotting the current value of a stored parameter. Memoized so
    /// repeated uses of one parameter share a node and their gradients sum.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> VarId {
        if let Some(&(_, var)) = self.param_leaves.iter().find(|(p, _)| *p == id) {
            return var;
        }
        let var = self.push(store.get(id).clone(), Op::Leaf { param: Some(id) });
        self.param_leaves.push((id, var));
        var
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let (ta, tb) = (&self.nodes[a].data, &self.nodes[b].data);
        assert_eq!(ta.shape, tb.shape, "add shape mismatch");
        let data: Vec<f32> = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let shape = ta.shape.clone();
        self.push(Tensor::from_vec(&shape, data), Op::Add(a, b))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        let (ta, tb) = (&self.nodes[a].data, &self.nodes[b].data);
        assert_eq!(ta.shape, tb.shape, "sub shape mismatch");
        let data: Vec<f32> = ta.data.iter().zip(&tb.data).map(|(x, y)| x - y).collect();
        let shape = ta.shape.clone();
        self.push(Tensor::from_vec(&shape, data), Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        let (ta, tb) = (&self.nodes[a].data, &self.nodes[b].data);
        assert_eq!(ta.shape, tb.shape, "mul shape mismatch");
        let data: Vec<f32> = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let shape = ta.shape.clone();
        self.push(Tensor::from_vec(&shape, data), Op::Mul(a, b))
    }

    pub fn add_scalar(&mut self, a: VarId, c: f32) -> VarId {
        let ta = &self.nodes[a].data;
        let data: Vec<f32> = ta.data.iter().map(|x| x + c).collect();
        let shape = ta.shape.clone();
        self.push(Tensor::from_vec(&shape, data), Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: VarId, c: f32) -> VarId {
        let ta = &self.nodes[a].data;
        let data: Vec<f32> = ta.data.iter().map(|x| x * c).collect();
        let shape = ta.shape.clone();
        self.push(Tensor::from_vec(&shape, data), Op::MulScalar(a, c))
    }

    pub fn exp(&mut self, a: VarId) -> VarId {
        let ta = &self.nodes[a].data;
        let data: Vec<f32> = ta.data.iter().map(|x| x.exp()).collect();
        let shape = ta.shape.clone();
        self.push(Tensor::from_vec(&shape, data), Op::Exp(a))
    }

    pub fn abs(&mut self, a: VarId) -> VarId {
        let ta = &self.nodes[a].data;
        let data: Vec<f32> = ta.data.iter().map(|x| x.abs()).collect();
        let shape = ta.shape.clone();
        self.push(Tensor::from_vec(&shape, data), Op::Abs(a))
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        let ta = &self.nodes[a].data;
        let data: Vec<f32> = ta.data.iter().map(|x| x.max(0.0)).collect();
        let shape = ta.shape.clone();
        self.push(Tensor::from_vec(&shape, data), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: VarId, slope: f32) -> VarId {
        let ta = &self.nodes[a].data;
        let data: Vec<f32> = ta
            .data
            .iter()
            .map(|&x| if x > 0.0 { x } else { slope * x })
            .collect();
        let shape = ta.shape.clone();
        self.push(Tensor::from_vec(&shape, data), Op::LeakyRelu(a, slope))
    }

    pub fn tanh(&mut self, a: VarId) -> VarId {
        let ta = &self.nodes[a].data;
        let data: Vec<f32> = ta.data.iter().map(|x| x.tanh()).collect();
        let shape = ta.shape.clone();
        self.push(Tensor::from_vec(&shape, data), Op::Tanh(a))
    }

    pub fn min_const(&mut self, a: VarId, c: f32) -> VarId {
        let ta = &self.nodes[a].data;
        let data: Vec<f32> = ta.data.iter().map(|x| x.min(c)).collect();
        let shape = ta.shape.clone();
        self.push(Tensor::from_vec(&shape, data), Op::MinConst(a, c))
    }

    // ---- reductions ----

    pub fn mean_all(&mut self, a: VarId) -> VarId {
        let ta = &self.nodes[a].data;
        assert!(ta.numel() > 0, "mean of empty tensor");
        let sum: f64 = ta.data.iter().map(|&x| x as f64).sum();
        let mean = (sum / ta.numel() as f64) as f32;
        self.push(Tensor::scalar(mean), Op::MeanAll(a))
    }

    pub fn sum_all(&mut self, a: VarId) -> VarId {
        let ta = &self.nodes[a].data;
        let sum: f64 = ta.data.iter().map(|&x| x as f64).sum();
        self.push(Tensor::scalar(sum as f32), Op::SumAll(a))
    }

    pub fn reshape(&mut self, a: VarId, shape: &[usize]) -> VarId {
        let ta = self.nodes[a].data.clone().reshaped(shape);
        self.push(ta, Op::Reshape(a))
    }

    // ---- linear algebra ----

    /// [m,k] x [k,n] -> [m,n]
    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let (m, ka) = self.nodes[a].data.dims2();
        let (kb, n) = self.nodes[b].data.dims2();
        assert_eq!(ka, kb, "matmul inner dims");
        let mut out = vec![0.0f32; m * n];
        sgemm(
            m,
            ka,
            n,
            1.0,
            &self.nodes[a].data.data,
            false,
            &self.nodes[b].data.data,
            false,
            0.0,
            &mut out,
        );
        self.push(Tensor::from_vec(&[m, n], out), Op::Matmul(a, b))
    }

    pub fn add_row(&mut self, a: VarId, bias: VarId) -> VarId {
        let (m, n) = self.nodes[a].data.dims2();
        assert_eq!(self.nodes[bias].data.shape, vec![n], "add_row bias shape");
        let mut out = self.nodes[a].data.data.clone();
        let b = &self.nodes[bias].data.data;
        for row in 0..m {
            for col in 0..n {
                out[row * n + col] += b[col];
            }
        }
        self.push(Tensor::from_vec(&[m, n], out), Op::AddRow(a, bias))
    }

    pub fn add_chan(&mut self, a: VarId, bias: VarId) -> VarId {
        let (b, c, h, w) = self.nodes[a].data.dims4();
        assert_eq!(self.nodes[bias].data.shape, vec![c], "add_chan bias shape");
        let mut out = self.nodes[a].data.data.clone();
        let bias_data = &self.nodes[bias].data.data;
        let plane = h * w;
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * plane;
                let bv = bias_data[ci];
                for p in &mut out[base..base + plane] {
                    *p += bv;
                }
            }
        }
        self.push(
            Tensor::from_vec(&[b, c, h, w], out),
            Op::AddChan(a, bias),
        )
    }

    // ---- convolution ----

    pub fn conv2d(&mut self, x: VarId, w: VarId, stride: usize, pad: usize) -> VarId {
        let (b, c, h, wd) = self.nodes[x].data.dims4();
        let wshape = &self.nodes[w].data.shape;
        assert_eq!(wshape.len(), 4, "conv weight must be [out,in,kh,kw]");
        let (oc, ic, kh, kw) = (wshape[0], wshape[1], wshape[2], wshape[3]);
        assert_eq!(ic, c, "conv2d channel mismatch: input {c}, weight {ic}");
        let oh = conv_out(h, kh, stride, pad);
        let ow = conv_out(wd, kw, stride, pad);
        assert!(oh > 0 && ow > 0, "conv output collapsed to zero");

        let xin = &self.nodes[x].data.data;
        let wmat = &self.nodes[w].data.data;
        let ckk = c * kh * kw;
        let spatial = oh * ow;
        let mut out = vec![0.0f32; b * oc * spatial];
        out.par_chunks_mut(oc * spatial)
            .enumerate()
            .for_each(|(bi, chunk)| {
                let cols = im2col(
                    &xin[bi * c * h * wd..(bi + 1) * c * h * wd],
                    c,
                    h,
                    wd,
                    kh,
                    kw,
                    stride,
                    pad,
                    oh,
                    ow,
                );
                sgemm(oc, ckk, spatial, 1.0, wmat, false, &cols, false, 0.0, chunk);
            });
        self.push(
            Tensor::from_vec(&[b, oc, oh, ow], out),
            Op::Conv2d { x, w, stride, pad },
        )
    }

    // ---- resampling ----

    pub fn upsample_nearest_2x(&mut self, a: VarId) -> VarId {
        let (b, c, h, w) = self.nodes[a].data.dims4();
        let xin = &self.nodes[a].data.data;
        let (oh, ow) = (h * 2, w * 2);
        let mut out = vec![0.0f32; b * c * oh * ow];
        for bc in 0..b * c {
            let src = &xin[bc * h * w..(bc + 1) * h * w];
            let dst = &mut out[bc * oh * ow..(bc + 1) * oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    dst[y * ow + x] = src[(y / 2) * w + (x / 2)];
                }
            }
        }
        self.push(
            Tensor::from_vec(&[b, c, oh, ow], out),
            Op::UpsampleNearest2x(a),
        )
    }

    pub fn avg_pool_2x(&mut self, a: VarId) -> VarId {
        let (b, c, h, w) = self.nodes[a].data.dims4();
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool_2x needs even dims, got {h}x{w}");
        let xin = &self.nodes[a].data.data;
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0f32; b * c * oh * ow];
        for bc in 0..b * c {
            let src = &xin[bc * h * w..(bc + 1) * h * w];
            let dst = &mut out[bc * oh * ow..(bc + 1) * oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    let i = 2 * y * w + 2 * x;
                    dst[y * ow + x] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
                }
            }
        }
        self.push(Tensor::from_vec(&[b, c, oh, ow], out), Op::AvgPool2x(a))
    }

    pub fn max_pool_2x(&mut self, a: VarId) -> VarId {
        let (b, c, h, w) = self.nodes[a].data.dims4();
        assert!(h % 2 == 0 && w % 2 == 0, "max_pool_2x needs even dims, got {h}x{w}");
        let xin = &self.nodes[a].data.data;
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0f32; b * c * oh * ow];
        let mut argmax = vec![0u32; b * c * oh * ow];
        for bc in 0..b * c {
            let src_base = bc * h * w;
            let dst_base = bc * oh * ow;
            for y in 0..oh {
                for x in 0..ow {
                    let mut best_idx = src_base + 2 * y * w + 2 * x;
                    let mut best = xin[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = src_base + (2 * y + dy) * w + 2 * x + dx;
                        if xin[idx] > best {
                            best = xin[idx];
                            best_idx = idx;
                        }
                    }
                    out[dst_base + y * ow + x] = best;
                    argmax[dst_base + y * ow + x] = best_idx as u32;
                }
            }
        }
        self.push(
            Tensor::from_vec(&[b, c, oh, ow], out),
            Op::MaxPool2x { x: a, argmax },
        )
    }

    /// Parameter-free per-channel normalization over the spatial dims.
    pub fn instance_norm(&mut self, a: VarId, eps: f32) -> VarId {
        let (b, c, h, w) = self.nodes[a].data.dims4();
        let n = h * w;
        assert!(n > 0);
        let xin = &self.nodes[a].data.data;
        let mut out = vec![0.0f32; xin.len()];
        let mut rstds = vec![0.0f32; b * c];
        for bc in 0..b * c {
            let src = &xin[bc * n..(bc + 1) * n];
            let mean = (src.iter().map(|&v| v as f64).sum::<f64>() / n as f64) as f32;
            let var = (src
                .iter()
                .map(|&v| {
                    let d = v as f64 - mean as f64;
                    d * d
                })
                .sum::<f64>()
                / n as f64) as f32;
            let rstd = 1.0 / (var + eps).sqrt();
            rstds[bc] = rstd;
            for (dst, &src_v) in out[bc * n..(bc + 1) * n].iter_mut().zip(src) {
                *dst = (src_v - mean) * rstd;
            }
        }
        self.push(
            Tensor::from_vec(&[b, c, h, w], out),
            Op::InstanceNorm { x: a, rstd: rstds },
        )
    }

    pub fn concat_channels(&mut self, a: VarId, b: VarId) -> VarId {
        let (ba, ca, ha, wa) = self.nodes[a].data.dims4();
        let (bb, cb, hb, wb) = self.nodes[b].data.dims4();
        assert_eq!((ba, ha, wa), (bb, hb, wb), "concat_channels spatial mismatch");
        let xa = &self.nodes[a].data.data;
        let xb = &self.nodes[b].data.data;
        let plane = ha * wa;
        let mut out = Vec::with_capacity(ba * (ca + cb) * plane);
        for bi in 0..ba {
            out.extend_from_slice(&xa[bi * ca * plane..(bi + 1) * ca * plane]);
            out.extend_from_slice(&xb[bi * cb * plane..(bi + 1) * cb * plane]);
        }
        self.push(
            Tensor::from_vec(&[ba, ca + cb, ha, wa], out),
            Op::ConcatChannels(a, b),
        )
    }

    /// Mean per-pixel cross-entropy of logits [b,c,h,w] against integer
    /// targets of length b*h*w.
    pub fn softmax_cross_entropy(&mut self, logits: VarId, targets: Vec<u32>) -> VarId {
        let (b, c, h, w) = self.nodes[logits].data.dims4();
        let pixels = b * h * w;
        assert_eq!(targets.len(), pixels, "target count mismatch");
        let x = &self.nodes[logits].data.data;
        let plane = h * w;
        let mut probs = vec![0.0f32; x.len()];
        let mut loss_sum = 0.0f64;
        for bi in 0..b {
            for p in 0..plane {
                let mut maxv = f32::NEG_INFINITY;
                for ci in 0..c {
                    maxv = maxv.max(x[(bi * c + ci) * plane + p]);
                }
                let mut denom = 0.0f64;
                for ci in 0..c {
                    denom += ((x[(bi * c + ci) * plane + p] - maxv) as f64).exp();
                }
                let t = targets[bi * plane + p] as usize;
                assert!(t < c, "target class {t} out of range (classes {c})");
                let logit_t = x[(bi * c + t) * plane + p];
                loss_sum += denom.ln() + maxv as f64 - logit_t as f64;
                for ci in 0..c {
                    let e = ((x[(bi * c + ci) * plane + p] - maxv) as f64).exp() / denom;
                    probs[(bi * c + ci) * plane + p] = e as f32;
                }
            }
        }
        let loss = (loss_sum / pixels as f64) as f32;
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                targets,
                probs,
            },
        )
    }

    /// Weight normalized by its largest singular value, estimated by power
    /// iteration on the [rows, numel/rows] flattening. In train mode one
    /// iteration advances the persistent `u` buffer.
    pub fn spectral_norm(
        &mut self,
        w: VarId,
        store: &mut ParamStore,
        u_buffer: ParamId,
        train: bool,
    ) -> VarId {
        let wt = &self.nodes[w].data;
        let rows = wt.shape[0];
        let cols = wt.numel() / rows;
        let wdata = wt.data.clone();
        let mut u = store.get(u_buffer).data.clone();
        assert_eq!(u.len(), rows, "spectral norm u buffer size");

        // v = normalize(W^T u)
        let mut v = vec![0.0f32; cols];
        sgemm(cols, rows, 1, 1.0, &wdata, true, &u, false, 0.0, &mut v);
        normalize(&mut v);
        if train {
            // u = normalize(W v), persisted for the next step
            let mut u_new = vec![0.0f32; rows];
            sgemm(rows, cols, 1, 1.0, &wdata, false, &v, false, 0.0, &mut u_new);
            normalize(&mut u_new);
            store.get_mut(u_buffer).data.copy_from_slice(&u_new);
            u = u_new;
        }
        // sigma = u^T W v
        let mut wv = vec![0.0f32; rows];
        sgemm(rows, cols, 1, 1.0, &wdata, false, &v, false, 0.0, &mut wv);
        let sigma: f32 = u.iter().zip(&wv).map(|(a, b)| a * b).sum::<f32>().max(1e-12);

        let shape = wt.shape.clone();
        let data: Vec<f32> = wdata.iter().map(|x| x / sigma).collect();
        self.push(
            Tensor::from_vec(&shape, data),
            Op::SpectralNorm { w, u, v, sigma },
        )
    }

    // ---- backward ----

    /// Backpropagate from a scalar loss; returns gradients for every
    /// parameter leaf reachable from it.
    pub fn backward(&self, loss: VarId, num_params: usize) -> Gradients {
        assert!(self.nodes[loss].data.is_scalar(), "backward needs a scalar loss");
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(vec![1.0]);

        let mut out = Gradients::new(num_params);
        for id in (0..self.nodes.len()).rev() {
            let Some(grad) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf { param } => {
                    if let Some(pid) = param {
                        out.accumulate(*pid, &grad, &node.data.shape);
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, &grad, self.numel(*a));
                    acc(&mut grads, *b, &grad, self.numel(*b));
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, &grad, self.numel(*a));
                    let neg: Vec<f32> = grad.iter().map(|g| -g).collect();
                    acc(&mut grads, *b, &neg, self.numel(*b));
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f32> = grad
                        .iter()
                        .zip(&self.nodes[*b].data.data)
                        .map(|(g, y)| g * y)
                        .collect();
                    let gb: Vec<f32> = grad
                        .iter()
                        .zip(&self.nodes[*a].data.data)
                        .map(|(g, x)| g * x)
                        .collect();
                    acc(&mut grads, *a, &ga, self.numel(*a));
                    acc(&mut grads, *b, &gb, self.numel(*b));
                }
                Op::AddScalar(a) => acc(&mut grads, *a, &grad, self.numel(*a)),
                Op::MulScalar(a, c) => {
                    let ga: Vec<f32> = grad.iter().map(|g| g * c).collect();
                    acc(&mut grads, *a, &ga, self.numel(*a));
                }
                Op::Exp(a) => {
                    let ga: Vec<f32> = grad
                        .iter()
                        .zip(&node.data.data)
                        .map(|(g, y)| g * y)
                        .collect();
                    acc(&mut grads, *a, &ga, self.numel(*a));
                }
                Op::Abs(a) => {
                    let ga: Vec<f32> = grad
                        .iter()
                        .zip(&self.nodes[*a].data.data)
                        .map(|(g, &x)| {
                            if x > 0.0 {
                                *g
                            } else if x < 0.0 {
                                -*g
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    acc(&mut grads, *a, &ga, self.numel(*a));
                }
                Op::Relu(a) => {
                    let ga: Vec<f32> = grad
                        .iter()
                        .zip(&self.nodes[*a].data.data)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    acc(&mut grads, *a, &ga, self.numel(*a));
                }
                Op::LeakyRelu(a, slope) => {
                    let ga: Vec<f32> = grad
                        .iter()
                        .zip(&self.nodes[*a].data.data)
                        .map(|(g, &x)| if x > 0.0 { *g } else { slope * *g })
                        .collect();
                    acc(&mut grads, *a, &ga, self.numel(*a));
                }
                Op::Tanh(a) => {
                    let ga: Vec<f32> = grad
                        .iter()
                        .zip(&node.data.data)
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    acc(&mut grads, *a, &ga, self.numel(*a));
                }
                Op::MinConst(a, c) => {
                    let ga: Vec<f32> = grad
                        .iter()
                        .zip(&self.nodes[*a].data.data)
                        .map(|(g, &x)| if x < *c { *g } else { 0.0 })
                        .collect();
                    acc(&mut grads, *a, &ga, self.numel(*a));
                }
                Op::MeanAll(a) => {
                    let n = self.numel(*a);
                    let g = grad[0] / n as f32;
                    let ga = vec![g; n];
                    acc(&mut grads, *a, &ga, n);
                }
                Op::SumAll(a) => {
                    let n = self.numel(*a);
                    let ga = vec![grad[0]; n];
                    acc(&mut grads, *a, &ga, n);
                }
                Op::Reshape(a) => acc(&mut grads, *a, &grad, self.numel(*a)),
                Op::Matmul(a, b) => {
                    let (m, k) = self.nodes[*a].data.dims2();
                    let (_, n) = self.nodes[*b].data.dims2();
                    // dA = dY B^T, dB = A^T dY
                    let mut ga = vec![0.0f32; m * k];
                    sgemm(m, n, k, 1.0, &grad, false, &self.nodes[*b].data.data, true, 0.0, &mut ga);
                    let mut gb = vec![0.0f32; k * n];
                    sgemm(k, m, n, 1.0, &self.nodes[*a].data.data, true, &grad, false, 0.0, &mut gb);
                    acc(&mut grads, *a, &ga, m * k);
                    acc(&mut grads, *b, &gb, k * n);
                }
                Op::AddRow(a, bias) => {
                    let (m, n) = self.nodes[*a].data.dims2();
                    acc(&mut grads, *a, &grad, m * n);
                    let mut gb = vec![0.0f32; n];
                    for row in 0..m {
                        for col in 0..n {
                            gb[col] += grad[row * n + col];
                        }
                    }
                    acc(&mut grads, *bias, &gb, n);
                }
                Op::AddChan(a, bias) => {
                    let (b, c, h, w) = self.nodes[*a].data.dims4();
                    acc(&mut grads, *a, &grad, b * c * h * w);
                    let plane = h * w;
                    let mut gb = vec![0.0f32; c];
                    for bi in 0..b {
                        for ci in 0..c {
                            let base = (bi * c + ci) * plane;
                            gb[ci] += grad[base..base + plane].iter().sum::<f32>();
                        }
                    }
                    acc(&mut grads, *bias, &gb, c);
                }
                Op::Conv2d { x, w, stride, pad } => {
                    let (gx, gw) = self.conv2d_backward(*x, *w, *stride, *pad, &grad, id);
                    acc(&mut grads, *x, &gx, gx.len());
                    acc(&mut grads, *w, &gw, gw.len());
                }
                Op::UpsampleNearest2x(a) => {
                    let (b, c, h, w) = self.nodes[*a].data.dims4();
                    let (oh, ow) = (h * 2, w * 2);
                    let mut ga = vec![0.0f32; b * c * h * w];
                    for bc in 0..b * c {
                        let gsrc = &grad[bc * oh * ow..(bc + 1) * oh * ow];
                        let gdst = &mut ga[bc * h * w..(bc + 1) * h * w];
                        for y in 0..oh {
                            for xcol in 0..ow {
                                gdst[(y / 2) * w + (xcol / 2)] += gsrc[y * ow + xcol];
                            }
                        }
                    }
                    acc(&mut grads, *a, &ga, ga.len());
                }
                Op::AvgPool2x(a) => {
                    let (b, c, h, w) = self.nodes[*a].data.dims4();
                    let (oh, ow) = (h / 2, w / 2);
                    let mut ga = vec![0.0f32; b * c * h * w];
                    for bc in 0..b * c {
                        let gsrc = &grad[bc * oh * ow..(bc + 1) * oh * ow];
                        let gdst = &mut ga[bc * h * w..(bc + 1) * h * w];
                        for y in 0..oh {
                            for xcol in 0..ow {
                                let g = 0.25 * gsrc[y * ow + xcol];
                                let i = 2 * y * w + 2 * xcol;
                                gdst[i] += g;
                                gdst[i + 1] += g;
                                gdst[i + w] += g;
                                gdst[i + w + 1] += g;
                            }
                        }
                    }
                    acc(&mut grads, *a, &ga, ga.len());
                }
                Op::MaxPool2x { x, argmax } => {
                    let n = self.numel(*x);
                    let mut ga = vec![0.0f32; n];
                    for (g, &idx) in grad.iter().zip(argmax) {
                        ga[idx as usize] += *g;
                    }
                    acc(&mut grads, *x, &ga, n);
                }
                Op::InstanceNorm { x, rstd } => {
                    let (b, c, h, w) = self.nodes[*x].data.dims4();
                    let n = h * w;
                    let y = &node.data.data;
                    let mut ga = vec![0.0f32; b * c * n];
                    for bc in 0..b * c {
                        let gs = &grad[bc * n..(bc + 1) * n];
                        let ys = &y[bc * n..(bc + 1) * n];
                        let gmean = gs.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
                        let gymean = gs
                            .iter()
                            .zip(ys)
                            .map(|(&g, &yv)| g as f64 * yv as f64)
                            .sum::<f64>()
                            / n as f64;
                        let r = rstd[bc] as f64;
                        for i in 0..n {
                            ga[bc * n + i] = (r
                                * (gs[i] as f64 - gmean - ys[i] as f64 * gymean))
                                as f32;
                        }
                    }
                    acc(&mut grads, *x, &ga, ga.len());
                }
                Op::ConcatChannels(a, b) => {
                    let (ba, ca, h, w) = self.nodes[*a].data.dims4();
                    let (_, cb, _, _) = self.nodes[*b].data.dims4();
                    let plane = h * w;
                    let mut ga = vec![0.0f32; ba * ca * plane];
                    let mut gb = vec![0.0f32; ba * cb * plane];
                    let stride_out = (ca + cb) * plane;
                    for bi in 0..ba {
                        ga[bi * ca * plane..(bi + 1) * ca * plane]
                            .copy_from_slice(&grad[bi * stride_out..bi * stride_out + ca * plane]);
                        gb[bi * cb * plane..(bi + 1) * cb * plane].copy_from_slice(
                            &grad[bi * stride_out + ca * plane..(bi + 1) * stride_out],
                        );
                    }
                    acc(&mut grads, *a, &ga, ga.len());
                    acc(&mut grads, *b, &gb, gb.len());
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let (b, c, h, w) = self.nodes[*logits].data.dims4();
                    let plane = h * w;
                    let pixels = b * plane;
                    let scale = grad[0] / pixels as f32;
                    let mut ga = probs.clone();
                    for bi in 0..b {
                        for p in 0..plane {
                            let t = targets[bi * plane + p] as usize;
                            ga[(bi * c + t) * plane + p] -= 1.0;
                        }
                    }
                    for g in &mut ga {
                        *g *= scale;
                    }
                    acc(&mut grads, *logits, &ga, ga.len());
                }
                Op::SpectralNorm { w, u, v, sigma } => {
                    // W_hat = W / sigma with sigma = u^T W v (u, v constant):
                    // dW = (g - <g, W_hat> u v^T) / sigma
                    let what = &node.data.data;
                    let inner: f64 = grad
                        .iter()
                        .zip(what)
                        .map(|(g, wh)| *g as f64 * *wh as f64)
                        .sum();
                    let rows = u.len();
                    let cols = v.len();
                    let mut gw = vec![0.0f32; rows * cols];
                    for r in 0..rows {
                        for cidx in 0..cols {
                            gw[r * cols + cidx] = (grad[r * cols + cidx] as f64
                                - inner * u[r] as f64 * v[cidx] as f64)
                                as f32
                                / *sigma;
                        }
                    }
                    acc(&mut grads, *w, &gw, gw.len());
                }
            }
        }
        out
    }

    fn numel(&self, id: VarId) -> usize {
        self.nodes[id].data.numel()
    }

    fn conv2d_backward(
        &self,
        x: VarId,
        w: VarId,
        stride: usize,
        pad: usize,
        grad: &[f32],
        out_id: VarId,
    ) -> (Vec<f32>, Vec<f32>) {
        let (b, c, h, wd) = self.nodes[x].data.dims4();
        let wshape = &self.nodes[w].data.shape;
        let (oc, _, kh, kw) = (wshape[0], wshape[1], wshape[2], wshape[3]);
        let (_, _, oh, ow) = self.nodes[out_id].data.dims4();
        let ckk = c * kh * kw;
        let spatial = oh * ow;
        let xin = &self.nodes[x].data.data;
        let wmat = &self.nodes[w].data.data;

        // Per-sample partials computed in parallel, reduced in index order so
        // the result does not depend on scheduling.
        let partials: Vec<(Vec<f32>, Vec<f32>)> = (0..b)
            .into_par_iter()
            .map(|bi| {
                let gout = &grad[bi * oc * spatial..(bi + 1) * oc * spatial];
                let cols = im2col(
                    &xin[bi * c * h * wd..(bi + 1) * c * h * wd],
                    c,
                    h,
                    wd,
                    kh,
                    kw,
                    stride,
                    pad,
                    oh,
                    ow,
                );
                // dW_b = gout [oc, spatial] x cols^T [spatial, ckk]
                let mut gw = vec![0.0f32; oc * ckk];
                sgemm(oc, spatial, ckk, 1.0, gout, false, &cols, true, 0.0, &mut gw);
                // dcols = W^T [ckk, oc] x gout [oc, spatial]
                let mut gcols = vec![0.0f32; ckk * spatial];
                sgemm(ckk, oc, spatial, 1.0, wmat, true, gout, false, 0.0, &mut gcols);
                let gx = col2im(&gcols, c, h, wd, kh, kw, stride, pad, oh, ow);
                (gx, gw)
            })
            .collect();

        let mut gx = vec![0.0f32; b * c * h * wd];
        let mut gw = vec![0.0f32; oc * ckk];
        for (bi, (gx_b, gw_b)) in partials.into_iter().enumerate() {
            gx[bi * c * h * wd..(bi + 1) * c * h * wd].copy_from_slice(&gx_b);
            for (dst, src) in gw.iter_mut().zip(&gw_b) {
                *dst += *src;
            }
        }
        (gx, gw)
    }
}

fn acc(grads: &mut [Option<Vec<f32>>], id: VarId, g: &[f32], numel: usize) {
    debug_assert_eq!(g.len(), numel);
    match &mut grads[id] {
        Some(existing) => {
            for (dst, src) in existing.iter_mut().zip(g) {
                *dst += *src;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn normalize(v: &mut [f32]) {
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    let scale = if norm > 1e-12 { 1.0 / norm } else { 0.0 };
    for x in v {
        *x = (*x as f64 * scale) as f32;
    }
}

pub fn conv_out(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    assert!(input + 2 * pad >= kernel, "kernel larger than padded input");
    (input + 2 * pad - kernel) / stride + 1
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f32],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<f32> {
    let mut cols = vec![0.0f32; c * kh * kw * oh * ow];
    let spatial = oh * ow;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * spatial;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = ci * h * w + iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[row + oy * ow + ox] = x[src_row + ix as usize];
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f32],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<f32> {
    let mut x = vec![0.0f32; c * h * w];
    let spatial = oh * ow;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * spatial;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = ci * h * w + iy as usize * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        x[dst_row + ix as usize] += cols[row + oy * ow + ox];
                    }
                }
            }
        }
    }
    x
}
