//! Parameterized building blocks. Each block registers its tensors in a
//! [`ParamStore`] at construction and keeps only the handles.

use mvx_autograd::{init, Graph, ParamId, ParamStore, Result, Scalar, Tensor, Var};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// He-initialized `k×k` convolution with "same" padding and zero bias.
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), init::kaiming(&[cout, cin, k, k], cin * k * k, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Self {
            weight,
            bias,
            stride,
            pad: k / 2,
        }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<S>, p: &ParamStore<S>, x: Var) -> Result<Var> {
        g.conv2d(x, g.param(p, self.weight), Some(g.param(p, self.bias)), self.stride, self.pad)
    }

    pub fn scale_weight<S: Scalar>(&self, store: &mut ParamStore<S>, factor: f64) {
        for v in store.get_mut(self.weight).data_mut() {
            *v *= S::lit(factor);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        din: usize,
        dout: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), init::kaiming(&[dout, din], din, rng));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[dout])));
        Self { weight, bias }
    }

    /// `x [N,in] → [N,out]`.
    pub fn forward<S: Scalar>(&self, g: &Graph<S>, p: &ParamStore<S>, x: Var) -> Result<Var> {
        g.linear(x, g.param(p, self.weight), self.bias.map(|b| g.param(p, b)))
    }

    pub fn scale_weight<S: Scalar>(&self, store: &mut ParamStore<S>, factor: f64) {
        for v in store.get_mut(self.weight).data_mut() {
            *v *= S::lit(factor);
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[dim], S::one())),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[dim])),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<S>, p: &ParamStore<S>, x: Var) -> Result<Var> {
        g.layer_norm(x, g.param(p, self.gamma), g.param(p, self.beta), Self::EPS)
    }
}
