//! Chained coarse-to-fine inference.
//!
//! Stage `k` sees depth maps rendered through the running estimate
//! `(T_0 ⋯ T_{k-1})⁻¹ · T_init` and predicts the remaining deviation `T_k`.
//! The output is `(T_0 ⋯ T_n)⁻¹ · T_init` for every frame.

use mvx_core::geometry::{RigidTransform, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::data::PreparedSequence;
use crate::predictor::RotationPredictor;
use crate::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// `T_k` predicted by each stage.
    pub corrections: Vec<UnitQuaternion>,
    /// `T_0 ⋯ T_n`, the estimated deviation.
    pub deviation: UnitQuaternion,
    /// Corrected LiDAR → camera transform per frame.
    pub extrinsics: Vec<RigidTransform>,
}

/// Runs `stages` in order starting from `t_init` (one transform per frame).
pub fn calibrate_from(seq: &PreparedSequence, t_init: &[RigidTransform], stages: &[&dyn RotationPredictor]) -> Result<Calibration, PipelineError> {
    if t_init.len() != seq.len() {
        return Err(PipelineError::Data(format!("{} initial extrinsics for {} frames", t_init.len(), seq.len())));
    }
    if stages.is_empty() {
        return Err(PipelineError::Config("calibration needs at least one stage".into()));
    }
    let mut total = UnitQuaternion::identity();
    let mut corrections = Vec::with_capacity(stages.len());
    let mut current = t_init.to_vec();
    for (stage, predictor) in stages.iter().enumerate() {
        let raw = predictor.predict(seq, &current).map_err(|e| match e {
            PipelineError::Numeric(m) | PipelineError::Chain { message: m, .. } => PipelineError::Chain { stage, message: m },
            PipelineError::Graph(g) => PipelineError::Chain { stage, message: g.to_string() },
            other => other,
        })?;
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(PipelineError::Chain {
                stage,
                message: format!("non-finite quaternion {raw:?}"),
            });
        }
        let t_k = UnitQuaternion::from_array(raw).map_err(|e| PipelineError::Chain { stage, message: e.to_string() })?;
        total = total.mul(&t_k);
        corrections.push(t_k);
        let undo = RigidTransform::from_rotation(total.inverse());
        current = t_init.iter().map(|t| undo.compose(t)).collect();
    }
    Ok(Calibration {
        corrections,
        deviation: total,
        extrinsics: current,
    })
}

/// [`calibrate_from`] with the sequence's stored `T_init`.
pub fn calibrate(seq: &PreparedSequence, stages: &[&dyn RotationPredictor]) -> Result<Calibration, PipelineError> {
    let t_init: Vec<_> = seq.seq.frames.iter().map(|f| f.t_init).collect();
    calibrate_from(seq, &t_init, stages)
}
