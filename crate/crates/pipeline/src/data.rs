//! Sequences held in memory with their images already at network
//! resolution, plus distance filtering and training-sample assembly.

use mvx_autograd::Tensor;
use mvx_core::geometry::{sample_rotation_perturbation_with, RigidTransform};
use mvx_core::scenesim::FrameSequence;
use mvx_model::loss::PointLossTarget;
use mvx_model::network::{prepare_depth, prepare_image, FrameInput};
use mvx_model::NetConfig;
use rand::Rng;

use crate::PipelineError;

/// True when every frame of `seq` is strictly closer than `threshold`.
pub fn within_distance(seq: &FrameSequence, threshold: f64) -> bool {
    seq.frames.iter().all(|f| f.distance < threshold)
}

/// Indices of the sequences passing an optional distance threshold.
pub fn filter_by_distance(seqs: &[FrameSequence], threshold: Option<f64>) -> Vec<usize> {
    (0..seqs.len())
        .filter(|&i| threshold.is_none_or(|d| within_distance(&seqs[i], d)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct PreparedSequence {
    pub seq: FrameSequence,
    images: Vec<Tensor<f32>>,
}

impl PreparedSequence {
    pub fn new(seq: FrameSequence, cfg: &NetConfig) -> Result<Self, PipelineError> {
        if seq.is_empty() {
            return Err(PipelineError::Data("sequence has no frames".into()));
        }
        let images = seq
            .frames
            .iter()
            .map(|f| prepare_image(&f.image, cfg.image_height, cfg.image_width))
            .collect::<Result<_, _>>()?;
        Ok(Self { seq, images })
    }

    pub fn prepare_all(seqs: Vec<FrameSequence>, cfg: &NetConfig) -> Result<Vec<Self>, PipelineError> {
        seqs.into_iter().map(|s| Self::new(s, cfg)).collect()
    }

    pub fn len(&self) -> usize {
        self.seq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seq.is_empty()
    }

    /// Network input for frame `i` with the depth map rendered through
    /// `extrinsic`.
    pub fn input(&self, i: usize, extrinsic: &RigidTransform, cfg: &NetConfig) -> FrameInput<f32> {
        FrameInput {
            image: self.images[i].clone(),
            depth: prepare_depth(&self.seq.frames[i].points, extrinsic, &self.seq.camera, cfg),
        }
    }

    /// Inputs for the first `count` frames, each rendered through
    /// `extrinsic(i)`.
    pub fn inputs(&self, count: usize, cfg: &NetConfig, extrinsic: impl Fn(usize) -> RigidTransform) -> Result<Vec<FrameInput<f32>>, PipelineError> {
        if count > self.len() {
            return Err(PipelineError::Data(format!("need {count} frames, sequence has {}", self.len())));
        }
        Ok((0..count).map(|i| self.input(i, &extrinsic(i), cfg)).collect())
    }
}

/// Network inputs and loss targets for one deviation applied to a run of
/// frames.
#[derive(Debug, Clone)]
pub struct Sample {
    pub inputs: Vec<FrameInput<f32>>,
    pub delta: RigidTransform,
    pub targets: Vec<PointLossTarget>,
}

impl Sample {
    /// Frames `frames` of `seq` seen through `delta · T_LC`.
    pub fn build(
        seq: &PreparedSequence,
        frames: std::ops::Range<usize>,
        delta: RigidTransform,
        cfg: &NetConfig,
        point_stride: usize,
    ) -> Result<Self, PipelineError> {
        if frames.end > seq.len() || frames.is_empty() {
            return Err(PipelineError::Data(format!("frame range {frames:?} invalid for {} frames", seq.len())));
        }
        let mut inputs = Vec::with_capacity(frames.len());
        let mut targets = Vec::with_capacity(frames.len());
        for i in frames {
            let f = &seq.seq.frames[i];
            let t_init = delta.compose(&f.t_lc);
            inputs.push(seq.input(i, &t_init, cfg));
            targets.push(PointLossTarget::new(&f.points, &t_init, &f.t_lc, point_stride)?);
        }
        Ok(Self { inputs, delta, targets })
    }
}

/// The stored deviation, or a fresh one when `resample` is set.
pub fn deviation(seq: &FrameSequence, resample: bool, range_deg: f64, rng: &mut impl Rng) -> RigidTransform {
    if resample {
        sample_rotation_perturbation_with(range_deg, rng)
    } else {
        seq.delta
    }
}
