//! A network together with the settings it was trained under.

use std::path::Path;

use mvx_autograd::checkpoint::Checkpoint;
use mvx_autograd::ParamStore;
use mvx_model::{CalibNet, NetConfig};
use serde::{Deserialize, Serialize};

use crate::PipelineError;

pub const META_FORMAT: u32 = 1;

/// How the rotation estimate is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    /// Stage-1 head on the final flow of the final frame.
    Frame,
    /// Temporal module over every frame's flows.
    Temporal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub format: u32,
    /// Last completed training stage; 0 for an untrained model.
    pub stage: u8,
    pub head: Head,
    pub net: NetConfig,
    /// Per-axis deviation range the model was trained for, degrees.
    pub perturb_deg: f64,
    pub epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub meta: ModelMeta,
    pub net: CalibNet,
    pub store: ParamStore<f32>,
}

impl Model {
    /// Freshly initialized network.
    pub fn new(cfg: &NetConfig, seed: u64) -> Self {
        let (net, store) = CalibNet::build(cfg, seed);
        Self {
            meta: ModelMeta {
                format: META_FORMAT,
                stage: 0,
                head: Head::Frame,
                net: cfg.clone(),
                perturb_deg: 0.0,
                epochs: 0,
                seed,
            },
            net,
            store,
        }
    }

    pub fn iterations(&self) -> usize {
        self.meta.net.refine.iterations
    }

    pub fn frames(&self) -> usize {
        match self.meta.head {
            Head::Frame => 1,
            Head::Temporal => self.meta.net.temporal.frames,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_store(&self.store, serde_json::to_string(&self.meta).expect("meta serializes"))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, PipelineError> {
        let meta: ModelMeta = serde_json::from_str(&ckpt.meta).map_err(|e| PipelineError::Config(format!("checkpoint metadata: {e}")))?;
        if meta.format != META_FORMAT {
            return Err(PipelineError::Config(format!("checkpoint metadata format {}, expected {META_FORMAT}", meta.format)));
        }
        meta.net.validate().map_err(|e| PipelineError::Config(e.0))?;
        let (net, mut store) = CalibNet::build(&meta.net, meta.seed);
        ckpt.load_into(&mut store)?;
        Ok(Self { meta, net, store })
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
