//! Anything that estimates a sequence's rotation deviation.

use mvx_autograd::{Graph, ParamStore, Result as GraphResult, Var};
use mvx_core::geometry::{RigidTransform, UnitQuaternion};
use mvx_model::network::FrameInput;
use mvx_model::CalibNet;

use crate::checkpoint::{Head, Model};
use crate::data::PreparedSequence;
use crate::PipelineError;

pub trait RotationPredictor {
    /// Raw `[w, x, y, z]` estimate of the deviation `ΔT` such that
    /// `extrinsics[i] = ΔT · T_LC,i`, from depth maps rendered through
    /// `extrinsics` (one per frame of `seq`).
    fn predict(&self, seq: &PreparedSequence, extrinsics: &[RigidTransform]) -> Result<[f64; 4], PipelineError>;
}

/// Frames the network looks at: the first `temporal.frames` of the
/// sequence. The frame head uses the last of them.
pub fn window(model: &Model, seq: &PreparedSequence) -> Result<std::ops::Range<usize>, PipelineError> {
    let t = model.meta.net.temporal.frames;
    if seq.len() < t {
        return Err(PipelineError::Data(format!("sequence has {} frames, model needs {t}", seq.len())));
    }
    Ok(match model.meta.head {
        Head::Temporal => 0..t,
        Head::Frame => t - 1..t,
    })
}

/// Final rotation estimate node for `inputs` (one per window frame).
pub fn estimate(net: &CalibNet, head: Head, g: &Graph<f32>, p: &ParamStore<f32>, inputs: &[FrameInput<f32>]) -> GraphResult<Var> {
    let iters = net.cfg.refine.iterations;
    match head {
        Head::Frame => {
            let flows = net.refine_frame(g, p, &inputs[inputs.len() - 1], iters)?;
            net.stage1_head.forward(g, p, flows[iters - 1])
        }
        Head::Temporal => {
            let flows = inputs.iter().map(|x| net.refine_frame(g, p, x, iters)).collect::<GraphResult<Vec<_>>>()?;
            net.sequence_estimate(g, p, &flows)
        }
    }
}

impl RotationPredictor for Model {
    fn predict(&self, seq: &PreparedSequence, extrinsics: &[RigidTransform]) -> Result<[f64; 4], PipelineError> {
        let frames = window(self, seq)?;
        let inputs: Vec<_> = frames.map(|i| seq.input(i, &extrinsics[i], &self.meta.net)).collect();
        let g = Graph::new();
        let q = estimate(&self.net, self.meta.head, &g, &self.store, &inputs)?;
        let v = g.value(q).to_f64_vec();
        Ok([v[0], v[1], v[2], v[3]])
    }
}

/// Always predicts no deviation.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPredictor;

impl RotationPredictor for IdentityPredictor {
    fn predict(&self, _: &PreparedSequence, _: &[RigidTransform]) -> Result<[f64; 4], PipelineError> {
        Ok(UnitQuaternion::identity().to_array())
    }
}

/// Reads the true residual off the sequence's ground truth, optionally
/// returning only a fraction of its angle.
#[derive(Debug, Clone, Copy)]
pub struct OraclePredictor {
    pub fraction: f64,
}

impl OraclePredictor {
    pub fn exact() -> Self {
        Self { fraction: 1.0 }
    }
}

impl RotationPredictor for OraclePredictor {
    fn predict(&self, seq: &PreparedSequence, extrinsics: &[RigidTransform]) -> Result<[f64; 4], PipelineError> {
        let f = &seq.seq.frames[0];
        let residual = extrinsics[0].compose(&f.t_lc.inverse()).rotation;
        let (axis, angle) = residual.to_axis_angle();
        Ok(UnitQuaternion::from_axis_angle(axis, angle * self.fraction).to_array())
    }
}

/// Returns the same components for every input.
#[derive(Debug, Clone, Copy)]
pub struct FixedPredictor(pub [f64; 4]);

impl RotationPredictor for FixedPredictor {
    fn predict(&self, _: &PreparedSequence, _: &[RigidTransform]) -> Result<[f64; 4], PipelineError> {
        Ok(self.0)
    }
}
