//! Finite-difference checks of every composed block on tiny shapes.
//!
//! Each case builds one block with fresh parameters, reduces its output to
//! a scalar through fixed random weights and compares reverse-mode
//! gradients against central differences of the forward pass.

use mvx_autograd::gradcheck::{check, GradCheck, GradCheckReport};
use mvx_autograd::{Graph, ParamStore, Result, Scalar, Tensor, Var};
use mvx_core::geometry::{PointCloud, RigidTransform, UnitQuaternion};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{EncoderConfig, NetConfig, RefineConfig, TemporalConfig};
use crate::corrvol::{build_pyramid, lookup, lookup_channels};
use crate::features::Encoder;
use crate::loss::{point_loss, rotation_loss, stage1_total, PointLossTarget};
use crate::refine::{FlowHead, RefinementState, RotationHead, UpdateBlock};
use crate::temporal::{MambaBlock, TemporalModule};

/// Smallest layout that exercises every code path: 16×32 input, 2×4 grid.
pub fn tiny_config() -> NetConfig {
    NetConfig {
        in_channels: 1,
        image_height: 16,
        image_width: 32,
        feature_dim: 4,
        encoder: EncoderConfig {
            channels: [3, 4, 4, 5],
            blocks_per_stage: 1,
        },
        refine: RefineConfig {
            hidden_dim: 4,
            corr_levels: 2,
            corr_radius: 1,
            corr_proj: 4,
            flow_enc: 3,
            motion_dim: 5,
            flow_head_hidden: 4,
            stage1_head_hidden: 4,
            iterations: 2,
        },
        temporal: TemporalConfig {
            frames: 2,
            patch: 2,
            d_model: 8,
            blocks: 1,
            state_dim: 3,
            expand: 2,
            dt_rank: 2,
            mlp_hidden: 8,
            head_hidden: 4,
        },
        max_range: 80.0,
    }
}

#[derive(Debug, Clone)]
pub struct BlockCheck {
    pub block: &'static str,
    pub report: GradCheckReport,
}

fn random<S: Scalar>(shape: &[usize], scale: f64, rng: &mut impl Rng) -> Tensor<S> {
    Tensor::from_fn(shape, |_| S::lit(rng.random_range(-scale..scale)))
}

/// Values with fractional part in [0.2, 0.8], away from bilinear kinks.
fn off_grid<S: Scalar>(shape: &[usize], span: f64, rng: &mut impl Rng) -> Tensor<S> {
    Tensor::from_fn(shape, |_| {
        let whole: f64 = rng.random_range(-span..span);
        S::lit(whole.floor() + rng.random_range(0.2..0.8))
    })
}

/// `Σ w ⊙ y` with weights drawn from the output shape, so every output
/// element contributes with its own coefficient.
fn project<S: Scalar>(g: &Graph<S>, y: Var) -> Result<Var> {
    let shape = g.shape(y);
    let mut rng = ChaCha8Rng::seed_from_u64(shape.iter().product::<usize>() as u64);
    let w = random(&shape, 1.0, &mut rng);
    g.weighted_sum(y, &w)
}

/// Multiplies a named parameter in place. Output layers start near zero,
/// which leaves the block's response to a perturbation below `f32`
/// rounding; the checks rescale them to order one.
fn scale_param<S: Scalar>(store: &mut ParamStore<S>, name: &str, factor: f64) {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    for v in store.get_mut(id).data_mut() {
        *v *= S::lit(factor);
    }
}

/// Sets every step-size bias so the scan discretization is far from the
/// identity and the state matrix has a measurable effect.
fn widen_steps<S: Scalar>(store: &mut ParamStore<S>) {
    let names: Vec<String> = store.entries().iter().map(|e| e.name.clone()).filter(|n| n.ends_with("dt_proj.bias")).collect();
    for name in names {
        let id = store.find(&name).expect("listed");
        for v in store.get_mut(id).data_mut() {
            *v = S::lit(0.3);
        }
    }
}

type Case<S> = (&'static str, Vec<Tensor<S>>, ParamStore<S>, Box<dyn Fn(&Graph<S>, &ParamStore<S>, &[Var]) -> Result<Var>>);

fn cases<S: Scalar>() -> Vec<Case<S>> {
    let cfg = tiny_config();
    let (h, w) = cfg.grid();
    let rc = cfg.refine.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut out: Vec<Case<S>> = Vec::new();

    {
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, "enc", 1, &cfg.encoder, 4, 4, &mut rng);
        let x = random(&[1, 16, 16], 1.0, &mut rng);
        out.push(("encoder", vec![x], store, Box::new(move |g, p, v| project(g, enc.forward(g, p, v[0])?))));
    }
    {
        let mut store = ParamStore::new();
        let block = UpdateBlock::new(&mut store, &cfg, &mut rng);
        scale_param(&mut store, "refine.flow_head.conv2.weight", 10.0);
        let c = lookup_channels(rc.corr_levels, rc.corr_radius);
        let inputs = vec![
            random(&[rc.hidden_dim, h, w], 0.8, &mut rng),
            random(&[c, h, w], 1.0, &mut rng),
            random(&[2, h, w], 1.0, &mut rng),
            random(&[rc.hidden_dim, h, w], 1.0, &mut rng),
        ];
        out.push((
            "gru_step",
            inputs,
            store,
            Box::new(move |g, p, v| {
                let (hidden, df) = block.cell(g, p, v[0], v[1], v[2], v[3])?;
                let df2 = g.sum(g.square(df));
                g.add(project(g, hidden)?, df2)
            }),
        ));
    }
    {
        let mut store = ParamStore::new();
        let head = FlowHead::new(&mut store, "flow_head", rc.hidden_dim, rc.flow_head_hidden, &mut rng);
        let x = random(&[rc.hidden_dim, h, w], 1.0, &mut rng);
        out.push(("flow_head", vec![x], store, Box::new(move |g, p, v| project(g, head.forward(g, p, v[0])?))));
    }
    {
        let mut store = ParamStore::new();
        let block = UpdateBlock::new(&mut store, &cfg, &mut rng);
        scale_param(&mut store, "refine.flow_head.conv2.weight", 10.0);
        let d = cfg.feature_dim;
        let inputs = vec![
            random(&[d, h, w], 1.0, &mut rng),
            random(&[d, h, w], 1.0, &mut rng),
            random(&[rc.hidden_dim, h, w], 0.8, &mut rng),
            off_grid(&[2, h, w], 1.0, &mut rng),
            random(&[rc.hidden_dim, h, w], 1.0, &mut rng),
        ];
        let levels = rc.corr_levels;
        out.push((
            "refine_iteration",
            inputs,
            store,
            Box::new(move |g, p, v| {
                let pyr = build_pyramid(g, v[0], v[1], levels)?;
                let state = RefinementState {
                    hidden: v[2],
                    flow: v[3],
                    iteration: 0,
                };
                // The training step detaches the flow it looks up with; here
                // the lookup stays on the tape so its flow gradient is checked.
                let corr = lookup(g, &pyr, state.flow, block.radius)?;
                let (hidden, df) = block.cell(g, p, state.hidden, corr, state.flow, v[4])?;
                let flow = g.add(state.flow, df)?;
                g.add(project(g, hidden)?, project(g, flow)?)
            }),
        ));
    }
    {
        let store = ParamStore::new();
        let inputs = vec![
            random(&[3, 4, 4], 1.0, &mut rng),
            random(&[3, 4, 4], 1.0, &mut rng),
            off_grid(&[2, 4, 4], 1.5, &mut rng),
        ];
        out.push((
            "corr_lookup",
            inputs,
            store,
            Box::new(|g, _, v| {
                let pyr = build_pyramid(g, v[0], v[1], 2)?;
                project(g, lookup(g, &pyr, v[2], 1)?)
            }),
        ));
    }
    {
        let mut store = ParamStore::new();
        let tc = TemporalConfig {
            d_model: 8,
            ..cfg.temporal.clone()
        };
        let block = MambaBlock::new(&mut store, "mamba", &tc, &mut rng);
        widen_steps(&mut store);
        let x = random(&[5, 8], 1.0, &mut rng);
        out.push(("ssm_block", vec![x], store, Box::new(move |g, p, v| project(g, block.forward(g, p, v[0])?))));
    }
    {
        let mut store = ParamStore::new();
        let module = TemporalModule::new(&mut store, &cfg, &mut rng);
        widen_steps(&mut store);
        scale_param(&mut store, "temporal.head.fc2.weight", 50.0);
        // At their 0.02 init scale the embeddings make the final LayerNorm
        // too sharply curved for a 1e-3 stencil in f32.
        for name in ["temporal.z_add", "temporal.p_s", "temporal.p_t"] {
            scale_param(&mut store, name, 25.0);
        }
        let (frames, iters) = (cfg.temporal.frames, rc.iterations);
        let inputs: Vec<Tensor<S>> = (0..frames * iters).map(|_| random(&[2, h, w], 1.0, &mut rng)).collect();
        out.push((
            "temporal_module",
            inputs,
            store,
            Box::new(move |g, p, v| {
                let flows: Vec<Vec<Var>> = v.chunks(iters).map(|c| c.to_vec()).collect();
                project(g, module.forward(g, p, &flows)?)
            }),
        ));
    }
    {
        let mut store = ParamStore::new();
        let head = RotationHead::new(&mut store, "head", 2 * h * w, rc.stage1_head_hidden, &mut rng);
        scale_param(&mut store, "head.fc2.weight", 50.0);
        let x = random(&[2, h, w], 1.0, &mut rng);
        out.push(("regression_head", vec![x], store, Box::new(move |g, p, v| project(g, head.forward(g, p, v[0])?))));
    }
    {
        let gt = UnitQuaternion::from_axis_angle(Vector3::new(0.3, -0.2, 0.9), 0.7);
        let pred = gt.mul(&UnitQuaternion::from_axis_angle(Vector3::new(1.0, 1.0, 0.0), 30f64.to_radians()));
        let x = Tensor::from_fn(&[4], |i| S::lit(pred.to_array()[i] * 1.3));
        out.push((
            "rotation_loss",
            vec![x],
            ParamStore::new(),
            Box::new(move |g, _, v| rotation_loss(g, g.l2_normalize(v[0])?, &gt)),
        ));
    }
    {
        let points: Vec<_> = (0..20)
            .map(|_| Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-3.0..3.0)))
            .collect();
        let cloud = PointCloud::new(points).expect("finite");
        let t_lc = RigidTransform::new(
            UnitQuaternion::from_axis_angle(Vector3::new(1.0, -1.0, 0.5), 1.9),
            Vector3::new(0.5, 1.5, -2.0),
        );
        let delta = RigidTransform::from_rotation(UnitQuaternion::from_axis_angle(Vector3::new(0.2, 1.0, 0.1), 0.2));
        let target = PointLossTarget::new(&cloud, &delta.compose(&t_lc), &t_lc, 1).expect("nonempty cloud");
        let q = UnitQuaternion::from_axis_angle(Vector3::new(-0.4, 0.3, 1.0), 0.1).to_array();
        let x = Tensor::from_fn(&[4], |i| S::lit(q[i]));
        out.push((
            "point_loss",
            vec![x],
            ParamStore::new(),
            Box::new(move |g, _, v| point_loss(g, g.l2_normalize(v[0])?, &target)),
        ));
    }
    {
        let xs: Vec<Tensor<S>> = (0..3).map(|_| random(&[1], 2.0, &mut rng)).collect();
        out.push((
            "iteration_sum",
            xs,
            ParamStore::new(),
            Box::new(|g, _, v| {
                let sq: Vec<Var> = v.iter().map(|&x| g.square(x)).collect();
                let flat: Vec<Var> = sq.iter().map(|&x| g.sum(x)).collect();
                stage1_total(g, &flat, 0.8)
            }),
        ));
    }
    out
}

/// Runs every block check in `S` precision.
pub fn run<S: Scalar>(opts: GradCheck) -> Result<Vec<BlockCheck>> {
    cases::<S>()
        .into_iter()
        .map(|(block, inputs, store, f)| {
            let report = check(opts, &inputs, &store, |g, p, v| f(g, p, v))?;
            Ok(BlockCheck { block, report })
        })
        .collect()
}
