//! Recurrent flow refinement and the per-iteration rotation head.

use mvx_autograd::{Graph, GraphError, ParamStore, Result, Scalar, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::NetConfig;
use crate::corrvol::{lookup, CorrelationPyramid};
use crate::layers::{Conv2d, Linear};

/// Hidden state and accumulated flow of one frame.
#[derive(Debug, Clone, Copy)]
pub struct RefinementState {
    /// `[C_h,h,w]`, tanh-bounded.
    pub hidden: Var,
    /// `[2,h,w]`: row and column offsets in feature-grid units.
    pub flow: Var,
    pub iteration: usize,
}

/// Plain-data copy of a [`RefinementState`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub hidden_shape: Vec<usize>,
    pub hidden: Vec<f64>,
    pub flow_shape: Vec<usize>,
    pub flow: Vec<f64>,
    pub iteration: usize,
}

impl RefinementState {
    pub fn snapshot<S: Scalar>(&self, g: &Graph<S>) -> StateSnapshot {
        StateSnapshot {
            hidden_shape: g.shape(self.hidden),
            hidden: g.value(self.hidden).to_f64_vec(),
            flow_shape: g.shape(self.flow),
            flow: g.value(self.flow).to_f64_vec(),
            iteration: self.iteration,
        }
    }

    /// Rebuilds the state as constants on `g`.
    pub fn restore<S: Scalar>(g: &Graph<S>, snap: &StateSnapshot) -> Self {
        let t = |shape: &[usize], v: &[f64]| Tensor::from_vec(shape, v.iter().map(|&x| S::lit(x)).collect());
        Self {
            hidden: g.constant(t(&snap.hidden_shape, &snap.hidden)),
            flow: g.constant(t(&snap.flow_shape, &snap.flow)),
            iteration: snap.iteration,
        }
    }
}

/// Splits the context features into the initial hidden state (tanh half)
/// and the injected context (relu half); the flow starts at zero.
pub fn init_state<S: Scalar>(g: &Graph<S>, f_context: Var, hidden_dim: usize) -> Result<(RefinementState, Var)> {
    let shape = g.shape(f_context);
    if shape.len() != 3 || shape[0] != 2 * hidden_dim {
        return Err(GraphError::shape(
            "init_state",
            format!("context {shape:?} must have {} channels", 2 * hidden_dim),
        ));
    }
    let hidden = g.tanh(g.slice(f_context, 0, 0, hidden_dim)?);
    let context = g.relu(g.slice(f_context, 0, hidden_dim, hidden_dim)?);
    let flow = g.constant(Tensor::zeros(&[2, shape[1], shape[2]]));
    Ok((
        RefinementState {
            hidden,
            flow,
            iteration: 0,
        },
        context,
    ))
}

#[derive(Debug, Clone)]
pub struct MotionEncoder {
    corr: Conv2d,
    flow1: Conv2d,
    flow2: Conv2d,
    merge: Conv2d,
}

impl MotionEncoder {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, corr_channels: usize, cfg: &NetConfig, rng: &mut impl Rng) -> Self {
        let r = &cfg.refine;
        Self {
            corr: Conv2d::new(store, &format!("{name}.corr"), corr_channels, r.corr_proj, 1, 1, rng),
            flow1: Conv2d::new(store, &format!("{name}.flow1"), 2, r.flow_enc, 3, 1, rng),
            flow2: Conv2d::new(store, &format!("{name}.flow2"), r.flow_enc, r.flow_enc, 3, 1, rng),
            merge: Conv2d::new(store, &format!("{name}.merge"), r.corr_proj + r.flow_enc, r.motion_dim - 2, 3, 1, rng),
        }
    }

    /// Encodes looked-up correlations and the current flow; the raw flow is
    /// appended as two extra channels.
    pub fn forward<S: Scalar>(&self, g: &Graph<S>, p: &ParamStore<S>, corr: Var, flow: Var) -> Result<Var> {
        let c = g.relu(self.corr.forward(g, p, corr)?);
        let f = g.relu(self.flow1.forward(g, p, flow)?);
        let f = g.relu(self.flow2.forward(g, p, f)?);
        let m = g.relu(self.merge.forward(g, p, g.concat(&[c, f], 0)?)?);
        g.concat(&[m, flow], 0)
    }
}

/// Convolutional GRU with 3×3 gates.
#[derive(Debug, Clone)]
pub struct ConvGru {
    z: Conv2d,
    r: Conv2d,
    q: Conv2d,
}

impl ConvGru {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, hidden: usize, input: usize, rng: &mut impl Rng) -> Self {
        let cin = hidden + input;
        Self {
            z: Conv2d::new(store, &format!("{name}.z"), cin, hidden, 3, 1, rng),
            r: Conv2d::new(store, &format!("{name}.r"), cin, hidden, 3, 1, rng),
            q: Conv2d::new(store, &format!("{name}.q"), cin, hidden, 3, 1, rng),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<S>, p: &ParamStore<S>, h: Var, x: Var) -> Result<Var> {
        let hx = g.concat(&[h, x], 0)?;
        let z = g.sigmoid(self.z.forward(g, p, hx)?);
        let r = g.sigmoid(self.r.forward(g, p, hx)?);
        let q = g.tanh(self.q.forward(g, p, g.concat(&[g.mul(r, h)?, x], 0)?)?);
        // (1 - z)·h + z·q
        g.add(h, g.mul(z, g.sub(q, h)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct FlowHead {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl FlowHead {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, hidden: usize, mid: usize, rng: &mut impl Rng) -> Self {
        let conv2 = Conv2d::new(store, &format!("{name}.conv2"), mid, 2, 3, 1, rng);
        conv2.scale_weight(store, 0.1);
        Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), hidden, mid, 3, 1, rng),
            conv2,
        }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<S>, p: &ParamStore<S>, h: Var) -> Result<Var> {
        let x = g.relu(self.conv1.forward(g, p, h)?);
        self.conv2.forward(g, p, x)
    }
}

/// One refinement iteration: lookup, motion encoding, GRU, flow residual.
#[derive(Debug, Clone)]
pub struct UpdateBlock {
    pub motion: MotionEncoder,
    pub gru: ConvGru,
    pub head: FlowHead,
    pub radius: usize,
}

impl UpdateBlock {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, cfg: &NetConfig, rng: &mut impl Rng) -> Self {
        let r = &cfg.refine;
        Self {
            motion: MotionEncoder::new(store, "refine.motion", cfg.corr_channels(), cfg, rng),
            gru: ConvGru::new(store, "refine.gru", r.hidden_dim, r.motion_dim + r.hidden_dim, rng),
            head: FlowHead::new(store, "refine.flow_head", r.hidden_dim, r.flow_head_hidden, rng),
            radius: r.corr_radius,
        }
    }

    /// GRU update and flow residual from already looked-up correlations.
    pub fn cell<S: Scalar>(&self, g: &Graph<S>, p: &ParamStore<S>, hidden: Var, corr: Var, flow: Var, context: Var) -> Result<(Var, Var)> {
        let motion = self.motion.forward(g, p, corr, flow)?;
        let x = g.concat(&[motion, context], 0)?;
        let hidden = self.gru.forward(g, p, hidden, x)?;
        let df = self.head.forward(g, p, hidden)?;
        Ok((hidden, df))
    }

    /// Advances the state by one iteration and returns it with the residual
    /// `df`. The flow feeding the lookup and motion encoder is detached, so
    /// gradients reach earlier iterations only through the flow sum.
    pub fn step<S: Scalar>(
        &self,
        g: &Graph<S>,
        p: &ParamStore<S>,
        state: &RefinementState,
        pyr: &CorrelationPyramid,
        context: Var,
    ) -> Result<(RefinementState, Var)> {
        let flow_in = g.detach(state.flow);
        let corr = lookup(g, pyr, flow_in, self.radius)?;
        let (hidden, df) = self.cell(g, p, state.hidden, corr, flow_in, context)?;
        let flow = g.add(state.flow, df)?;
        Ok((
            RefinementState {
                hidden,
                flow,
                iteration: state.iteration + 1,
            },
            df,
        ))
    }
}

/// FC → relu → FC → 4 → unit quaternion `(w, x, y, z)`.
///
/// The output layer starts near zero with bias `(1,0,0,0)`, so a fresh
/// head predicts the identity rotation.
#[derive(Debug, Clone)]
pub struct RotationHead {
    pub fc1: Linear,
    pub fc2: Linear,
    pub input_dim: usize,
}

impl RotationHead {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let fc1 = Linear::new(store, &format!("{name}.fc1"), input_dim, hidden, true, rng);
        let fc2 = Linear::new(store, &format!("{name}.fc2"), hidden, 4, true, rng);
        fc2.scale_weight(store, 0.01);
        store.get_mut(fc2.bias.expect("bias")).data_mut()[0] = S::one();
        Self { fc1, fc2, input_dim }
    }

    /// Any input with `input_dim` elements → `[4]` unit quaternion.
    pub fn forward<S: Scalar>(&self, g: &Graph<S>, p: &ParamStore<S>, x: Var) -> Result<Var> {
        let x = g.reshape(x, &[1, self.input_dim])?;
        let h = g.relu(self.fc1.forward(g, p, x)?);
        let q = g.reshape(self.fc2.forward(g, p, h)?, &[4])?;
        g.l2_normalize(q).map_err(|e| match e {
            GraphError::Degenerate { .. } => GraphError::degenerate("rotation_head", "head output has zero norm"),
            other => other,
        })
    }
}
