//! Rotation and point-cloud losses and the iteration weighting.

use mvx_autograd::{Graph, GraphError, Result, Scalar, Tensor, Var};
use mvx_core::geometry::{PointCloud, RigidTransform, UnitQuaternion};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::ConfigError;

/// Largest `|⟨a,b⟩|` at which the rotation loss still has a gradient;
/// beyond it the derivative of `acos` is cut to zero.
pub const DOT_CLAMP: f64 = 1.0 - 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_r: f64,
    /// Per meter.
    pub lambda_p: f64,
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_r: 1.0,
            lambda_p: 0.1,
            gamma: 0.8,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        if !(self.lambda_r >= 0.0 && self.lambda_p >= 0.0 && self.lambda_r + self.lambda_p > 0.0) {
            return Err(ConfigError("loss weights must be nonnegative with a positive sum".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(ConfigError(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        Ok(())
    }
}

fn quat_value<S: Scalar>(g: &Graph<S>, q: Var) -> Result<[f64; 4]> {
    let v = g.value(q);
    if v.shape() != [4] {
        return Err(GraphError::shape("quaternion", format!("expected [4], got {:?}", v.shape())));
    }
    let d = v.to_f64_vec();
    Ok([d[0], d[1], d[2], d[3]])
}

/// Reads a `[4]` node as a rotation.
pub fn quaternion_of<S: Scalar>(g: &Graph<S>, q: Var) -> Result<UnitQuaternion> {
    UnitQuaternion::from_array(quat_value(g, q)?).map_err(|e| GraphError::degenerate("quaternion", e.to_string()))
}

/// `2·acos(|⟨q_pred, q_gt⟩|)`; `q_pred` must be unit norm. The gradient
/// vanishes once `|⟨q_pred, q_gt⟩|` exceeds [`DOT_CLAMP`].
pub fn rotation_loss<S: Scalar>(g: &Graph<S>, q_pred: Var, q_gt: &UnitQuaternion) -> Result<Var> {
    let q = quat_value(g, q_pred)?;
    let gt = q_gt.to_array();
    let dot: f64 = q.iter().zip(&gt).map(|(a, b)| a * b).sum();
    let value = 2.0 * dot.abs().min(1.0).acos();
    // d/dq of 2·acos(|dot|) = -2·sign(dot)/√(1-dot²) · gt; zero once clamped.
    let coeff = if dot.abs() >= DOT_CLAMP {
        0.0
    } else {
        -2.0 * dot.signum() / (1.0 - dot * dot).sqrt()
    };
    Ok(g.custom_op(
        "rotation_loss",
        Tensor::scalar(S::lit(value)),
        &[q_pred],
        Box::new(move |args| {
            let go = args.grad.item().to_f64().unwrap_or(0.0);
            vec![Some(Tensor::from_fn(&[4], |i| S::lit(go * coeff * gt[i])))]
        }),
    ))
}

/// Precomputed terms of the point-cloud loss for one frame.
///
/// Point `i` maps to `T_LC⁻¹ · T_pred⁻¹ · T_init · P_i` with `T_pred` the
/// predicted rotation (zero translation); the loss is the mean distance
/// between `P_i` and its image.
#[derive(Debug, Clone)]
pub struct PointLossTarget {
    /// `T_init · P_i`.
    moved: Vec<Vector3<f64>>,
    points: Vec<Vector3<f64>>,
    back_rot: Matrix3<f64>,
    back_trans: Vector3<f64>,
}

impl PointLossTarget {
    /// Uses every `stride`-th point of the cloud.
    pub fn new(cloud: &PointCloud, t_init: &RigidTransform, t_lc: &RigidTransform, stride: usize) -> Result<Self> {
        if cloud.is_empty() {
            return Err(GraphError::degenerate("point_loss", "empty point cloud"));
        }
        let points: Vec<_> = cloud.points.iter().step_by(stride.max(1)).copied().collect();
        let back = t_lc.inverse();
        Ok(Self {
            moved: points.iter().map(|p| t_init.apply(p)).collect(),
            points,
            back_rot: back.rotation_matrix(),
            back_trans: back.translation,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn rotation_from(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Partial derivatives of [`rotation_from`] with respect to `w, x, y, z`.
fn rotation_partials(q: [f64; 4]) -> [Matrix3<f64>; 4] {
    let [w, x, y, z] = q.map(|v| 2.0 * v);
    [
        Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0),
        Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x),
        Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y),
        Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0),
    ]
}

/// Mean distance between each point and its image under the composed
/// transform. `q_pred` must be unit norm.
pub fn point_loss<S: Scalar>(g: &Graph<S>, q_pred: Var, target: &PointLossTarget) -> Result<Var> {
    let q = quat_value(g, q_pred)?;
    let rt = rotation_from(q).transpose();
    let n = target.len() as f64;
    let mut value = 0.0;
    // dL/d(Rᵀ), accumulated over points.
    let mut g_rt = Matrix3::zeros();
    for (b, p) in target.moved.iter().zip(&target.points) {
        let r = target.back_rot * (rt * b) + target.back_trans - p;
        let d = r.norm();
        value += d;
        if d > 0.0 {
            g_rt += target.back_rot.transpose() * (r / d) * b.transpose();
        }
    }
    value /= n;
    let g_r = g_rt.transpose() / n;
    let partials = rotation_partials(q);
    let gq: [f64; 4] = std::array::from_fn(|k| g_r.component_mul(&partials[k]).sum());
    Ok(g.custom_op(
        "point_loss",
        Tensor::scalar(S::lit(value)),
        &[q_pred],
        Box::new(move |args| {
            let go = args.grad.item().to_f64().unwrap_or(0.0);
            vec![Some(Tensor::from_fn(&[4], |i| S::lit(go * gq[i])))]
        }),
    ))
}

/// `γ^(n−i)` for iterations `i = 1..n`.
pub fn iteration_weights(n: usize, gamma: f64) -> Vec<f64> {
    (1..=n).map(|i| gamma.powi((n - i) as i32)).collect()
}

/// `Σ γ^(n−i) L_i`, the latest iteration weighted 1.
pub fn stage1_total<S: Scalar>(g: &Graph<S>, losses: &[Var], gamma: f64) -> Result<Var> {
    if losses.is_empty() {
        return Err(GraphError::shape("stage1_total", "at least one iteration loss is required"));
    }
    g.linear_combination(losses, &iteration_weights(losses.len(), gamma))
}

/// `λ_r · L_r + λ_p · L_p` for one estimate over one or more frames; the
/// point term averages the per-frame losses.
pub fn estimate_loss<S: Scalar>(
    g: &Graph<S>,
    q_pred: Var,
    q_gt: &UnitQuaternion,
    targets: &[PointLossTarget],
    cfg: &LossConfig,
) -> Result<(Var, Var, Var)> {
    let rot = rotation_loss(g, q_pred, q_gt)?;
    let pts: Vec<Var> = targets.iter().map(|t| point_loss(g, q_pred, t)).collect::<Result<_>>()?;
    let pt = if pts.is_empty() {
        g.constant(Tensor::scalar(S::zero()))
    } else {
        g.linear_combination(&pts, &vec![1.0 / pts.len() as f64; pts.len()])?
    };
    let total = g.linear_combination(&[rot, pt], &[cfg.lambda_r, cfg.lambda_p])?;
    Ok((total, rot, pt))
}
