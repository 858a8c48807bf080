//! Adam optimizer with serializable state.

use crate::param::{Gradients, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.0,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// Adam over a fixed list of parameters. Moment buffers are keyed by position
/// in that list and serialized with checkpoints so a resumed run continues
/// the exact trajectory.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    params: Vec<ParamId>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step_count: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore, params: Vec<ParamId>) -> Self {
        let m = params.iter().map(|&p| Tensor::zeros(&store.get(p).shape)).collect();
        let v = params.iter().map(|&p| Tensor::zeros(&store.get(p).shape)).collect();
        Adam {
            config,
            params,
            m,
            v,
            step_count: 0,
        }
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step_count += 1;
        let t = self.step_count as f64;
        let b1 = self.config.beta1 as f64;
        let b2 = self.config.beta2 as f64;
        let bias1 = 1.0 - b1.powf(t);
        let bias2 = 1.0 - b2.powf(t);
        for (i, &pid) in self.params.iter().enumerate() {
            let Some(g) = grads.get(pid) else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let value = store.get_mut(pid);
            for j in 0..value.data.len() {
                let gj = g.data[j];
                m.data[j] = self.config.beta1 * m.data[j] + (1.0 - self.config.beta1) * gj;
                v.data[j] = self.config.beta2 * v.data[j] + (1.0 - self.config.beta2) * gj * gj;
                let mhat = m.data[j] as f64 / bias1;
                let vhat = v.data[j] as f64 / bias2;
                value.data[j] -=
                    (self.config.lr as f64 * mhat / (vhat.sqrt() + self.config.eps as f64)) as f32;
            }
        }
    }

    /// Moment buffers as named tensors for checkpointing; names are derived
    /// from the parameter names they track.
    pub fn state_entries(&self, store: &ParamStore, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, &pid) in self.params.iter().enumerate() {
            let pname = store.name(pid);
            out.push((format!("{prefix}.m.{pname}"), self.m[i].clone()));
            out.push((format!("{prefix}.v.{pname}"), self.v[i].clone()));
        }
        out
    }

    pub fn restore_state(
        &mut self,
        store: &ParamStore,
        prefix: &str,
        entries: &std::collections::HashMap<String, Tensor>,
        step_count: u64,
    ) -> Result<(), String> {
        for (i, &pid) in self.params.iter().enumerate() {
            let pname = store.name(pid);
            let m = entries
                .get(&format!("{prefix}.m.{pname}"))
                .ok_or_else(|| format!("missing optimizer moment {prefix}.m.{pname}"))?;
            let v = entries
                .get(&format!("{prefix}.v.{pname}"))
                .ok_or_else(|| format!("missing optimizer moment {prefix}.v.{pname}"))?;
            if m.shape != self.m[i].shape || v.shape != self.v[i].shape {
                return Err(format!("optimizer moment shape mismatch for {pname}"));
            }
            self.m[i] = m.clone();
            self.v[i] = v.clone();
        }
        self.step_count = step_count;
        Ok(())
    }
}
