//! Checkpoint container: network configuration, all named weights and
//! buffers, and (optionally) full optimizer state for exact resume.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use satsynth_tensor::rng::fnv1a;
use satsynth_tensor::{read_archive, write_archive, Archive, ParamStore, Tensor};

use crate::config::GanConfig;
use crate::error::{GanError, Result};
use crate::networks::GanNets;

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Everything beyond the weights that an exact resume needs. RNG streams are
/// derived statelessly from (root_seed, step), so no generator state is
/// stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub step: u64,
    pub lambda: f64,
    pub clamp: f32,
    pub root_seed: u64,
    pub adam_g_steps: u64,
    pub adam_d_steps: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    config: GanConfig,
    training_state: Option<TrainingState>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: GanConfig,
    /// All parameter-store entries (weights and buffers) by name.
    pub weights: Vec<(String, Tensor)>,
    /// Optimizer moments keyed by their archive names (present when
    /// `training_state` is).
    pub optimizer: Vec<(String, Tensor)>,
    pub training_state: Option<TrainingState>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            format_version: CHECKPOINT_FORMAT,
            config: self.config.clone(),
            training_state: self.training_state.clone(),
        };
        let mut entries = Vec::with_capacity(self.weights.len() + self.optimizer.len());
        for (name, t) in &self.weights {
            entries.push((format!("weights.{name}"), t.clone()));
        }
        for (name, t) in &self.optimizer {
            entries.push((format!("optim.{name}"), t.clone()));
        }
        let archive = Archive {
            config_json: serde_json::to_string(&header)
                .map_err(|e| GanError::Checkpoint(e.to_string()))?,
            entries,
        };
        write_archive(path, &archive)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let archive = read_archive(path)?;
        let header: CheckpointHeader = serde_json::from_str(&archive.config_json)
            .map_err(|e| GanError::Checkpoint(format!("bad header: {e}")))?;
        if header.format_version != CHECKPOINT_FORMAT {
            return Err(GanError::Checkpoint(format!(
                "format version {} unsupported (expected {})",
                header.format_version, CHECKPOINT_FORMAT
            )));
        }
        let mut weights = Vec::new();
        let mut optimizer = Vec::new();
        for (name, t) in archive.entries {
            if let Some(rest) = name.strip_prefix("weights.") {
                weights.push((rest.to_string(), t));
            } else if let Some(rest) = name.strip_prefix("optim.") {
                optimizer.push((rest.to_string(), t));
            } else {
                return Err(GanError::Checkpoint(format!("unknown entry {name}")));
            }
        }
        Ok(Checkpoint {
            config: header.config,
            weights,
            optimizer,
            training_state: header.training_state,
        })
    }

    /// Snapshot the current store contents (weights + buffers) by name.
    pub fn from_store(
        config: &GanConfig,
        store: &ParamStore,
        optimizer: Vec<(String, Tensor)>,
        training_state: Option<TrainingState>,
    ) -> Checkpoint {
        let weights = store
            .iter()
            .map(|(_, e)| (e.name.clone(), e.value.clone()))
            .collect();
        Checkpoint {
            config: config.clone(),
            weights,
            optimizer,
            training_state,
        }
    }

    /// Rebuild the network family and restore every named weight and buffer.
    pub fn restore_nets(&self) -> Result<(GanNets, ParamStore)> {
        let mut store = ParamStore::new();
        let nets = GanNets::build(&self.config, &mut store, 0)?;
        let by_name: HashMap<&str, &Tensor> =
            self.weights.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for id in 0..store.len() {
            let id = satsynth_tensor::ParamId(id);
            let name = store.name(id).to_string();
            let t = by_name.get(name.as_str()).ok_or_else(|| {
                GanError::Checkpoint(format!("missing weight {name} in checkpoint"))
            })?;
            if t.shape != store.get(id).shape {
                return Err(GanError::Checkpoint(format!(
                    "shape mismatch for {name}: checkpoint {:?} vs network {:?}",
                    t.shape,
                    store.get(id).shape
                )));
            }
            *store.get_mut(id) = (*t).clone();
        }
        if by_name.len() != store.len() {
            return Err(GanError::Checkpoint(format!(
                "checkpoint has {} weights, network expects {}",
                by_name.len(),
                store.len()
            )));
        }
        Ok((nets, store))
    }

    pub fn optimizer_map(&self) -> HashMap<String, Tensor> {
        self.optimizer.iter().cloned().collect()
    }

    /// FNV-1a over the weight bytes in name order; stable provenance id.
    pub fn weights_hash(&self) -> String {
        let mut bytes = Vec::new();
        for (name, t) in &self.weights {
            bytes.extend_from_slice(name.as_bytes());
            for v in &t.data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        format!("{:016x}", fnv1a(&bytes))
    }
}
