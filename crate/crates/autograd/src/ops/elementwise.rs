use crate::error::{GraphError, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn same_shape<S: Scalar>(g: &Graph<S>, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb {
        return Err(GraphError::shape(op, format!("{sa:?} vs {sb:?}")));
    }
    Ok(sa)
}

impl<S: Scalar> Graph<S> {
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let value = self.value(a).zip_map(&self.value(b), |x, y| x + y);
        Ok(self.custom_op(
            "add",
            value,
            &[a, b],
            Box::new(|args| vec![Some(args.grad.clone()), Some(args.grad.clone())]),
        ))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "sub", a, b)?;
        let value = self.value(a).zip_map(&self.value(b), |x, y| x - y);
        Ok(self.custom_op(
            "sub",
            value,
            &[a, b],
            Box::new(|args| vec![Some(args.grad.clone()), Some(args.grad.map(|x| -x))]),
        ))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let value = self.value(a).zip_map(&self.value(b), |x, y| x * y);
        Ok(self.custom_op(
            "mul",
            value,
            &[a, b],
            Box::new(|args| {
                let ga = args.wants[0].then(|| args.grad.zip_map(args.inputs[1], |g, y| g * y));
                let gb = args.wants[1].then(|| args.grad.zip_map(args.inputs[0], |g, x| g * x));
                vec![ga, gb]
            }),
        ))
    }

    /// Sum of several same-shaped tensors.
    pub fn add_n(&self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(GraphError::shape("add_n", "no operands"));
        };
        let mut value = self.value(first).clone();
        for &x in &xs[1..] {
            same_shape(self, "add_n", first, x)?;
            value.add_assign(&self.value(x));
        }
        let n = xs.len();
        Ok(self.custom_op(
            "add_n",
            value,
            xs,
            Box::new(move |args| (0..n).map(|_| Some(args.grad.clone())).collect()),
        ))
    }

    /// `x + b` where `b`'s shape is a trailing suffix of `x`'s shape.
    pub fn add_broadcast(&self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb.len() > sx.len() || sx[sx.len() - sb.len()..] != sb[..] {
            return Err(GraphError::shape(
                "add_broadcast",
                format!("{sb:?} is not a suffix of {sx:?}"),
            ));
        }
        let inner: usize = sb.iter().product();
        let mut value = self.value(x).clone();
        {
            let bv = self.value(b);
            for chunk in value.data_mut().chunks_mut(inner.max(1)) {
                for (v, &bb) in chunk.iter_mut().zip(bv.data()) {
                    *v += bb;
                }
            }
        }
        Ok(self.custom_op(
            "add_broadcast",
            value,
            &[x, b],
            Box::new(move |args| {
                let gb = args.wants[1].then(|| {
                    let mut acc = Tensor::zeros(args.inputs[1].shape());
                    for chunk in args.grad.data().chunks(inner.max(1)) {
                        for (a, &g) in acc.data_mut().iter_mut().zip(chunk) {
                            *a += g;
                        }
                    }
                    acc
                });
                vec![Some(args.grad.clone()), gb]
            }),
        ))
    }

    /// `x[c, ..] + b[c]` for a channel-first tensor.
    pub fn add_channel(&self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(b));
        if sb.len() != 1 || sx.is_empty() || sx[0] != sb[0] {
            return Err(GraphError::shape(
                "add_channel",
                format!("bias {sb:?} for input {sx:?}"),
            ));
        }
        let plane = sx[1..].iter().product::<usize>();
        let mut value = self.value(x).clone();
        {
            let bv = self.value(b);
            for (chunk, &bb) in value.data_mut().chunks_mut(plane.max(1)).zip(bv.data()) {
                chunk.iter_mut().for_each(|v| *v += bb);
            }
        }
        Ok(self.custom_op(
            "add_channel",
            value,
            &[x, b],
            Box::new(move |args| {
                let gb = args.wants[1].then(|| {
                    let sums = args
                        .grad
                        .data()
                        .chunks(plane.max(1))
                        .map(|c| c.iter().copied().sum())
                        .collect();
                    Tensor::from_vec(args.inputs[1].shape(), sums)
                });
                vec![Some(args.grad.clone()), gb]
            }),
        ))
    }

    pub fn scale(&self, x: Var, c: f64) -> Var {
        let c = S::lit(c);
        let value = self.value(x).map(|v| v * c);
        self.custom_op(
            "scale",
            value,
            &[x],
            Box::new(move |args| vec![Some(args.grad.map(|g| g * c))]),
        )
    }

    pub fn add_scalar(&self, x: Var, c: f64) -> Var {
        let c = S::lit(c);
        let value = self.value(x).map(|v| v + c);
        self.custom_op(
            "add_scalar",
            value,
            &[x],
            Box::new(|args| vec![Some(args.grad.clone())]),
        )
    }

    pub fn neg(&self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    /// Elementwise op whose derivative is a function of input and output.
    fn unary(
        &self,
        op: &'static str,
        x: Var,
        f: impl Fn(S) -> S,
        df: impl Fn(S, S) -> S + 'static,
    ) -> Var {
        let value = self.value(x).map(f);
        self.custom_op(
            op,
            value,
            &[x],
            Box::new(move |args| {
                let xs = args.inputs[0].data();
                let ys = args.output.data();
                let data = args
                    .grad
                    .data()
                    .iter()
                    .zip(xs.iter().zip(ys))
                    .map(|(&g, (&x, &y))| g * df(x, y))
                    .collect();
                vec![Some(Tensor::from_vec(args.grad.shape(), data))]
            }),
        )
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary("sigmoid", x, sigmoid, |_, y| y * (S::one() - y))
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary("tanh", x, |v| v.tanh(), |_, y| S::one() - y * y)
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(
            "relu",
            x,
            |v| if v < S::zero() { S::zero() } else { v },
            |x, _| if x > S::zero() { S::one() } else { S::zero() },
        )
    }

    /// `x * sigmoid(x)`.
    pub fn silu(&self, x: Var) -> Var {
        self.unary(
            "silu",
            x,
            |v| v * sigmoid(v),
            |x, _| {
                let s = sigmoid(x);
                s * (S::one() + x * (S::one() - s))
            },
        )
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&self, x: Var) -> Var {
        self.unary("softplus", x, softplus, |x, _| sigmoid(x))
    }

    pub fn exp(&self, x: Var) -> Var {
        self.unary("exp", x, |v| v.exp(), |_, y| y)
    }

    pub fn square(&self, x: Var) -> Var {
        self.unary("square", x, |v| v * v, |x, _| S::lit(2.0) * x)
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.custom_op(
            "sum",
            value,
            &[x],
            Box::new(|args| {
                let g = args.grad.item();
                vec![Some(Tensor::full(args.inputs[0].shape(), g))]
            }),
        )
    }

    pub fn mean(&self, x: Var) -> Var {
        let n = self.value(x).numel().max(1);
        let s = self.sum(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// `sum(x ⊙ w)` for a constant weight tensor; used to reduce block
    /// outputs to a scalar in gradient checks.
    pub fn weighted_sum(&self, x: Var, w: &Tensor<S>) -> Result<Var> {
        let wv = self.constant(w.clone());
        let p = self.mul(x, wv)?;
        Ok(self.sum(p))
    }

    /// `Σ c_k x_k` over one-element tensors.
    pub fn linear_combination(&self, xs: &[Var], coeffs: &[f64]) -> Result<Var> {
        if xs.len() != coeffs.len() || xs.is_empty() {
            return Err(GraphError::shape(
                "linear_combination",
                format!("{} operands, {} coefficients", xs.len(), coeffs.len()),
            ));
        }
        let mut total = S::zero();
        for (&x, &c) in xs.iter().zip(coeffs) {
            let v = self.value(x);
            if v.numel() != 1 {
                return Err(GraphError::shape(
                    "linear_combination",
                    format!("operand of shape {:?} is not a scalar", v.shape()),
                ));
            }
            total += v.item() * S::lit(c);
        }
        let cs: Vec<S> = coeffs.iter().map(|&c| S::lit(c)).collect();
        Ok(self.custom_op(
            "linear_combination",
            Tensor::scalar(total),
            xs,
            Box::new(move |args| {
                let g = args.grad.item();
                args.inputs
                    .iter()
                    .zip(&cs)
                    .map(|(x, &c)| Some(Tensor::full(x.shape(), g * c)))
                    .collect()
            }),
        ))
    }

    /// `x / ‖x‖₂` over all elements. Fails on a zero vector.
    pub fn l2_normalize(&self, x: Var) -> Result<Var> {
        let norm = {
            let v = self.value(x);
            v.data().iter().map(|&a| a * a).sum::<S>().sqrt()
        };
        if !(norm > S::zero()) {
            return Err(GraphError::degenerate("l2_normalize", "zero-norm input"));
        }
        let value = self.value(x).map(|a| a / norm);
        Ok(self.custom_op(
            "l2_normalize",
            value,
            &[x],
            Box::new(move |args| {
                // d(x/|x|) = (g - y (y·g)) / |x|
                let y = args.output;
                let dot: S = y.data().iter().zip(args.grad.data()).map(|(&a, &b)| a * b).sum();
                vec![Some(args.grad.zip_map(y, |g, yy| (g - yy * dot) / norm))]
            }),
        ))
    }
}

pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

pub(crate) fn softplus<S: Scalar>(x: S) -> S {
    if x > S::lit(20.0) {
        x
    } else if x < S::lit(-20.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}
