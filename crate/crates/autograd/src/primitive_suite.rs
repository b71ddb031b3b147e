//! Finite-difference checks of every differentiable primitive on small
//! random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gradcheck::{check, GradCheck, GradCheckReport};
use crate::{Graph, ParamStore, Result, ScanInputs, Scalar, Tensor, Var};

pub fn random<S: Scalar>(shape: &[usize], seed: u64) -> Tensor<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| S::lit(rng.random_range(-1.0..1.0)))
}

/// Values bounded away from zero so kinks (relu, max) are not straddled.
fn away_from_zero<S: Scalar>(shape: &[usize], seed: u64) -> Tensor<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let m: f64 = rng.random_range(0.1..1.0);
        S::lit(if rng.random_bool(0.5) { m } else { -m })
    })
}

type Build<S> = fn(&Graph<S>, &[Var]) -> Result<Var>;

/// Reduces an arbitrary output to a scalar with fixed pseudo-random weights.
fn project<S: Scalar>(g: &Graph<S>, y: Var) -> Result<Var> {
    let w = random::<S>(&g.shape(y), 99);
    g.weighted_sum(y, &w)
}

fn cases<S: Scalar>() -> Vec<(&'static str, Vec<Tensor<S>>, Build<S>)> {
    let x = || random::<S>(&[3, 4, 5], 1);
    vec![
        ("add", vec![x(), random(&[3, 4, 5], 2)], |g, v| {
            let y = g.add(v[0], v[1])?;
            project(g, y)
        }),
        ("sub", vec![x(), random(&[3, 4, 5], 2)], |g, v| {
            let y = g.sub(v[0], v[1])?;
            project(g, y)
        }),
        ("mul", vec![x(), random(&[3, 4, 5], 2)], |g, v| {
            let y = g.mul(v[0], v[1])?;
            project(g, y)
        }),
        ("sigmoid", vec![x()], |g, v| {
            let y = g.sigmoid(v[0]);
            project(g, y)
        }),
        ("tanh", vec![x()], |g, v| {
            let y = g.tanh(v[0]);
            project(g, y)
        }),
        ("relu", vec![away_from_zero(&[3, 4, 5], 3)], |g, v| {
            let y = g.relu(v[0]);
            project(g, y)
        }),
        ("silu", vec![x()], |g, v| {
            let y = g.silu(v[0]);
            project(g, y)
        }),
        ("softplus", vec![x()], |g, v| {
            let y = g.softplus(v[0]);
            project(g, y)
        }),
        ("exp", vec![x()], |g, v| {
            let y = g.exp(v[0]);
            project(g, y)
        }),
        ("add_channel", vec![x(), random(&[3], 4)], |g, v| {
            let y = g.add_channel(v[0], v[1])?;
            project(g, y)
        }),
        ("add_broadcast", vec![x(), random(&[4, 5], 4)], |g, v| {
            let y = g.add_broadcast(v[0], v[1])?;
            project(g, y)
        }),
        ("conv2d_s1", vec![x(), random(&[2, 3, 3, 3], 5), random(&[2], 6)], |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
            project(g, y)
        }),
        ("conv2d_s2", vec![x(), random(&[2, 3, 3, 3], 5)], |g, v| {
            let y = g.conv2d(v[0], v[1], None, 2, 1)?;
            project(g, y)
        }),
        ("conv2d_1x1", vec![x(), random(&[4, 3, 1, 1], 7)], |g, v| {
            let y = g.conv2d(v[0], v[1], None, 1, 0)?;
            project(g, y)
        }),
        ("avg_pool2d", vec![random(&[3, 4, 6], 8)], |g, v| {
            let y = g.avg_pool2d(v[0], 2)?;
            project(g, y)
        }),
        ("max_pool2d", vec![away_from_zero(&[3, 4, 6], 9)], |g, v| {
            let y = g.max_pool2d(v[0], 2)?;
            project(g, y)
        }),
        ("matmul", vec![random(&[3, 4], 10), random(&[4, 5], 11)], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            project(g, y)
        }),
        ("linear", vec![random(&[3, 4], 10), random(&[5, 4], 11), random(&[5], 12)], |g, v| {
            let y = g.linear(v[0], v[1], Some(v[2]))?;
            project(g, y)
        }),
        ("transpose", vec![random(&[3, 4], 10)], |g, v| {
            let y = g.transpose(v[0])?;
            project(g, y)
        }),
        ("concat", vec![x(), random(&[2, 4, 5], 13)], |g, v| {
            let y = g.concat(&[v[0], v[1]], 0)?;
            project(g, y)
        }),
        ("slice", vec![x()], |g, v| {
            let y = g.slice(v[0], 1, 1, 2)?;
            project(g, y)
        }),
        ("grid_sample", vec![x(), grid_coords(7)], |g, v| {
            let y = g.grid_sample(v[0], v[1])?;
            project(g, y)
        }),
        ("resize_bilinear", vec![x()], |g, v| {
            let y = g.resize_bilinear(v[0], 8, 10)?;
            project(g, y)
        }),
        ("layer_norm", vec![random(&[3, 5], 14), random(&[5], 15), random(&[5], 16)], |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            project(g, y)
        }),
        ("l2_normalize", vec![random(&[4], 17)], |g, v| {
            let y = g.l2_normalize(v[0])?;
            project(g, y)
        }),
        ("selective_scan", scan_inputs(5, 3, 2), |g, v| {
            let y = g.selective_scan(scan_ops(g, v), false)?;
            project(g, y)
        }),
        ("selective_scan_rev", scan_inputs(5, 3, 2), |g, v| {
            let y = g.selective_scan(scan_ops(g, v), true)?;
            project(g, y)
        }),
    ]
}

/// Coordinates strictly inside a 4×5 grid and away from integer values,
/// plus two samples clamped outside.
fn grid_coords<S: Scalar>(seed: u64) -> Tensor<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Vec::new();
    for _ in 0..6 {
        let y = rng.random_range(0..3) as f64 + rng.random_range(0.2..0.8);
        let x = rng.random_range(0..4) as f64 + rng.random_range(0.2..0.8);
        v.extend([S::lit(y), S::lit(x)]);
    }
    v.extend([S::lit(-1.5), S::lit(2.3), S::lit(1.4), S::lit(6.5)]);
    Tensor::from_vec(&[8, 2], v)
}

pub fn scan_inputs<S: Scalar>(l: usize, e: usize, s: usize) -> Vec<Tensor<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut r = |shape: &[usize], lo: f64, hi: f64| Tensor::from_fn(shape, |_| S::lit(rng.random_range(lo..hi)));
    vec![
        r(&[l, e], -1.0, 1.0),
        r(&[l, e], 0.05, 0.8),
        r(&[e, s], -1.5, -0.2),
        r(&[l, s], -1.0, 1.0),
        r(&[l, s], -1.0, 1.0),
        r(&[e], -1.0, 1.0),
    ]
}

pub fn scan_ops<S: Scalar>(_g: &Graph<S>, v: &[Var]) -> ScanInputs {
    ScanInputs {
        u: v[0],
        delta: v[1],
        a: v[2],
        b: v[3],
        c: v[4],
        d: v[5],
    }
}

#[derive(Debug, Clone)]
pub struct PrimitiveCheck {
    pub op: &'static str,
    pub report: GradCheckReport,
}

/// Runs every primitive case in `S` precision.
pub fn run<S: Scalar>(opts: GradCheck) -> Result<Vec<PrimitiveCheck>> {
    let params = ParamStore::<S>::new();
    cases::<S>()
        .into_iter()
        .map(|(op, inputs, build)| {
            let report = check(opts, &inputs, &params, |g, _, v| build(g, v))?;
            Ok(PrimitiveCheck { op, report })
        })
        .collect()
}
