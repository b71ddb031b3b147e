#![allow(dead_code)]

use mvx_autograd::{Scalar, Tensor};
#[allow(unused_imports)]
pub use mvx_model::gradient_suite::tiny_config as tiny;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random<S: Scalar>(shape: &[usize], scale: f64, seed: u64) -> Tensor<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| S::lit(rng.random_range(-scale..scale)))
}

/// Values whose fractional part stays in [0.2, 0.8], away from the kinks
/// of bilinear interpolation.
pub fn off_grid<S: Scalar>(shape: &[usize], span: f64, seed: u64) -> Tensor<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| {
        let whole = rng.random_range(-span..span).floor();
        S::lit(whole + rng.random_range(0.2..0.8))
    })
}

/// Full-batch Adam on the mean rotation loss of `predict` over `targets`,
/// with the rate cut 10× for the final fifth. Returns the mean angular
/// error in degrees after training.
pub fn fit_rotations(
    store: &mut mvx_autograd::ParamStore<f32>,
    targets: &[mvx_core::geometry::UnitQuaternion],
    steps: usize,
    lr: f32,
    predict: impl Fn(&mvx_autograd::Graph<f32>, &mvx_autograd::ParamStore<f32>, usize) -> mvx_autograd::Result<mvx_autograd::Var>,
) -> f64 {
    use mvx_autograd::optim::{accumulate_grads, Adam};
    use mvx_autograd::Graph;
    use mvx_model::loss::{quaternion_of, rotation_loss};

    let mut opt = Adam::new(lr);
    for step in 0..steps {
        if step == steps * 4 / 5 {
            opt.lr = lr / 10.0;
        }
        let mut acc = Vec::new();
        for (i, q) in targets.iter().enumerate() {
            let g = Graph::new();
            let loss = rotation_loss(&g, predict(&g, store, i).unwrap(), q).unwrap();
            let grads = g.backward(g.scale(loss, 1.0 / targets.len() as f64)).unwrap();
            accumulate_grads(&mut acc, grads.param_grads(store));
        }
        opt.step(store, &acc);
    }
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let g = Graph::new();
            let pred = quaternion_of(&g, predict(&g, store, i).unwrap()).unwrap();
            mvx_core::geometry::angular_distance(&pred, q).to_degrees()
        })
        .sum();
    total / targets.len() as f64
}
