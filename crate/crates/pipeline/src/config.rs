//! Run configuration, read from and written to TOML.

use std::path::Path;

use mvx_core::scenesim::SceneConfig;
use mvx_model::loss::LossConfig;
use mvx_model::NetConfig;
use serde::{Deserialize, Serialize};

use crate::PipelineError;

/// Optimizer schedule and data settings for one training stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: u8,
    /// Initial Adam learning rate.
    pub lr: f64,
    /// The rate is multiplied by `decay_factor` every `decay_every` epochs.
    pub decay_every: usize,
    pub decay_factor: f64,
    pub epochs: usize,
    /// Samples per optimizer step (frames in stage 1, sequences in stage 2).
    pub batch_size: usize,
    /// Per-axis half-range of the sampled deviation, degrees.
    pub perturb_deg: f64,
    /// Draw a fresh deviation per sample per epoch instead of using the
    /// one stored with the sequence.
    pub resample_perturbation: bool,
    /// Sequences are used only if every frame is closer than this, meters.
    /// `None` keeps everything.
    pub distance_threshold: Option<f64>,
    /// Stage 2: train only the temporal module for `frozen_epochs` before
    /// unfreezing everything.
    pub freeze_prefix: bool,
    pub frozen_epochs: usize,
    /// Stage 2: rate once the prefix unfreezes. The decay schedule restarts
    /// at that epoch. `None` continues the single schedule.
    #[serde(default)]
    pub joint_lr: Option<f64>,
    /// Global gradient-norm clip; 0 disables it.
    pub clip_norm: f64,
    /// Every `point_stride`-th point enters the point loss.
    pub point_stride: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn stage1() -> Self {
        Self {
            stage: 1,
            lr: 3e-5,
            decay_every: 20,
            decay_factor: 0.5,
            epochs: 70,
            batch_size: 8,
            perturb_deg: 20.0,
            resample_perturbation: true,
            distance_threshold: None,
            freeze_prefix: false,
            frozen_epochs: 0,
            joint_lr: None,
            clip_norm: 10.0,
            point_stride: 4,
            seed: 1,
        }
    }

    pub fn stage2() -> Self {
        Self {
            stage: 2,
            lr: 1e-4,
            distance_threshold: Some(50.0),
            freeze_prefix: true,
            frozen_epochs: 20,
            batch_size: 4,
            seed: 2,
            ..Self::stage1()
        }
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let (lr, epoch) = match self.joint_lr {
            Some(j) if self.freeze_prefix && epoch >= self.frozen_epochs => (j, epoch - self.frozen_epochs),
            _ => (self.lr, epoch),
        };
        let drops = if self.decay_every == 0 { 0 } else { epoch / self.decay_every };
        lr * self.decay_factor.powi(drops as i32)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.stage != 1 && self.stage != 2 {
            return bad(format!("stage must be 1 or 2, got {}", self.stage));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!("decay factor {} outside (0, 1]", self.decay_factor));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.perturb_deg >= 0.0 && self.perturb_deg < 180.0) {
            return bad(format!("perturbation range {} outside [0, 180)", self.perturb_deg));
        }
        if let Some(j) = self.joint_lr {
            if !(j.is_finite() && j > 0.0) {
                return bad(format!("joint learning rate {j} must be positive"));
            }
        }
        if let Some(d) = self.distance_threshold {
            if !(d > 0.0) {
                return bad(format!("distance threshold {d} must be positive"));
            }
        }
        if self.freeze_prefix && self.stage == 1 {
            return bad("prefix freezing applies to stage 2 only".into());
        }
        if self.frozen_epochs > self.epochs {
            return bad(format!("frozen epochs {} exceed total epochs {}", self.frozen_epochs, self.epochs));
        }
        if self.point_stride == 0 {
            return bad("point stride must be at least 1".into());
        }
        if !(self.clip_norm >= 0.0) {
            return bad("clip norm must be nonnegative".into());
        }
        Ok(())
    }
}

/// Chained inference: one network per noise range, coarse to fine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub ranges_deg: Vec<f64>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { ranges_deg: vec![20.0, 5.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub distance_thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            distance_thresholds: vec![30.0, 50.0, 80.0],
        }
    }
}

/// Dataset generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub scene: SceneConfig,
    /// Per-axis half-range of the deviation stored with each sequence.
    pub perturb_deg: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            perturb_deg: 20.0,
        }
    }
}

/// Everything a run needs, one section per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub net: NetConfig,
    pub loss: LossConfig,
    pub data: DataConfig,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub chain: ChainConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    /// Full-size network and schedule.
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            loss: LossConfig::default(),
            data: DataConfig::default(),
            stage1: TrainConfig::stage1(),
            stage2: TrainConfig::stage2(),
            chain: ChainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Compact network and shortened schedule for single-core runs.
    pub fn desk() -> Self {
        Self {
            net: NetConfig::compact(),
            stage1: TrainConfig {
                lr: 5e-4,
                decay_every: 8,
                epochs: 24,
                perturb_deg: 10.0,
                ..TrainConfig::stage1()
            },
            stage2: TrainConfig {
                lr: 1e-3,
                decay_every: 8,
                epochs: 22,
                batch_size: 2,
                frozen_epochs: 16,
                joint_lr: Some(5e-5),
                distance_threshold: None,
                perturb_deg: 10.0,
                ..TrainConfig::stage2()
            },
            data: DataConfig {
                perturb_deg: 10.0,
                ..DataConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.net.validate().map_err(|e| PipelineError::Config(e.0))?;
        self.loss.validate().map_err(|e| PipelineError::Config(e.0))?;
        self.data.scene.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.data.scene.image_width % self.net.image_width != 0
            || self.data.scene.image_height % self.net.image_height != 0
            || self.data.scene.image_width * self.net.image_height != self.data.scene.image_height * self.net.image_width
        {
            return Err(PipelineError::Config(format!(
                "camera image {}x{} does not downsample evenly to the network input {}x{}",
                self.data.scene.image_width, self.data.scene.image_height, self.net.image_width, self.net.image_height
            )));
        }
        if self.data.scene.trajectory_len < self.net.temporal.frames {
            return Err(PipelineError::Config(format!(
                "sequences have {} frames but the temporal module needs {}",
                self.data.scene.trajectory_len, self.net.temporal.frames
            )));
        }
        if self.stage1.stage != 1 || self.stage2.stage != 2 {
            return Err(PipelineError::Config("stage sections must declare stage = 1 and stage = 2".into()));
        }
        self.stage1.validate()?;
        self.stage2.validate()?;
        if self.chain.ranges_deg.is_empty() || self.chain.ranges_deg.iter().any(|r| !(*r > 0.0)) {
            return Err(PipelineError::Config("chain needs at least one positive noise range".into()));
        }
        if self.chain.ranges_deg.windows(2).any(|w| w[1] > w[0]) {
            return Err(PipelineError::Config("chain ranges must run coarse to fine".into()));
        }
        if self.eval.distance_thresholds.iter().any(|d| !(*d > 0.0)) {
            return Err(PipelineError::Config("distance thresholds must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}
