use crate::error::{GraphError, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<S: Scalar> Graph<S> {
    /// Normalizes each row of `x [N,D]` to zero mean and unit variance,
    /// then applies `gamma [D]` and `beta [D]`.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x);
        if sx.len() != 2 || self.shape(gamma) != [sx[1]] || self.shape(beta) != [sx[1]] {
            return Err(GraphError::shape(
                "layer_norm",
                format!("input {sx:?}, gamma {:?}, beta {:?}", self.shape(gamma), self.shape(beta)),
            ));
        }
        let d = sx[1];
        let eps = S::lit(eps);
        let stats = move |row: &[S]| {
            let n = S::lit(d as f64);
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            (mean, S::one() / (var + eps).sqrt())
        };
        let out = {
            let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
            let mut data = Vec::with_capacity(xv.numel());
            for row in xv.data().chunks(d) {
                let (mean, rstd) = stats(row);
                for ((&v, &gm), &bt) in row.iter().zip(gv.data()).zip(bv.data()) {
                    data.push((v - mean) * rstd * gm + bt);
                }
            }
            Tensor::from_vec(&sx, data)
        };
        Ok(self.custom_op(
            "layer_norm",
            out,
            &[x, gamma, beta],
            Box::new(move |args| {
                let (xv, gm) = (args.inputs[0], args.inputs[1].data());
                let mut gx = Tensor::zeros(xv.shape());
                let mut gg = Tensor::zeros(&[d]);
                let mut gb = Tensor::zeros(&[d]);
                let n = S::lit(d as f64);
                for (r, (row, grow)) in xv.data().chunks(d).zip(args.grad.data().chunks(d)).enumerate() {
                    let (mean, rstd) = stats(row);
                    let mut sum_g = S::zero();
                    let mut sum_gx = S::zero();
                    for j in 0..d {
                        let xhat = (row[j] - mean) * rstd;
                        let gxh = grow[j] * gm[j];
                        sum_g += gxh;
                        sum_gx += gxh * xhat;
                        gg.data_mut()[j] += grow[j] * xhat;
                        gb.data_mut()[j] += grow[j];
                    }
                    let out = &mut gx.data_mut()[r * d..(r + 1) * d];
                    for j in 0..d {
                        let xhat = (row[j] - mean) * rstd;
                        let gxh = grow[j] * gm[j];
                        out[j] = rstd * (gxh - sum_g / n - xhat * sum_gx / n);
                    }
                }
                vec![Some(gx), Some(gg), Some(gb)]
            }),
        ))
    }
}
