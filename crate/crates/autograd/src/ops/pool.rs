use crate::error::{GraphError, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn pool_dims<S: Scalar>(g: &Graph<S>, op: &'static str, x: Var, k: usize) -> Result<(usize, usize, usize)> {
    let s = g.shape(x);
    if s.len() != 3 {
        return Err(GraphError::shape(op, format!("expects [C,H,W], got {s:?}")));
    }
    if k == 0 || s[1] % k != 0 || s[2] % k != 0 {
        return Err(GraphError::shape(op, format!("window {k} does not tile {s:?}")));
    }
    Ok((s[0], s[1], s[2]))
}

impl<S: Scalar> Graph<S> {
    /// Non-overlapping `k×k` mean over the last two axes.
    pub fn avg_pool2d(&self, x: Var, k: usize) -> Result<Var> {
        let (c, h, w) = pool_dims(self, "avg_pool2d", x, k)?;
        let (oh, ow) = (h / k, w / k);
        let norm = S::one() / S::lit((k * k) as f64);
        let mut out = Tensor::zeros(&[c, oh, ow]);
        {
            let xv = self.value(x);
            let src = xv.data();
            let dst = out.data_mut();
            for ch in 0..c {
                for y in 0..h {
                    let row = &src[(ch * h + y) * w..(ch * h + y + 1) * w];
                    let orow = &mut dst[(ch * oh + y / k) * ow..(ch * oh + y / k + 1) * ow];
                    for (xx, &v) in row.iter().enumerate() {
                        orow[xx / k] += v;
                    }
                }
            }
            dst.iter_mut().for_each(|v| *v *= norm);
        }
        Ok(self.custom_op(
            "avg_pool2d",
            out,
            &[x],
            Box::new(move |args| {
                let g = args.grad.data();
                let gx = Tensor::from_fn(&[c, h, w], |i| {
                    let (ch, rem) = (i / (h * w), i % (h * w));
                    let (y, xx) = (rem / w, rem % w);
                    g[(ch * oh + y / k) * ow + xx / k] * norm
                });
                vec![Some(gx)]
            }),
        ))
    }

    /// Non-overlapping `k×k` max over the last two axes; ties go to the
    /// first element in row-major order.
    pub fn max_pool2d(&self, x: Var, k: usize) -> Result<Var> {
        let (c, h, w) = pool_dims(self, "max_pool2d", x, k)?;
        let (oh, ow) = (h / k, w / k);
        let mut out = Tensor::zeros(&[c, oh, ow]);
        let mut arg = vec![0usize; c * oh * ow];
        {
            let xv = self.value(x);
            let src = xv.data();
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = S::neg_infinity();
                        let mut best_i = 0;
                        for dy in 0..k {
                            for dx in 0..k {
                                let i = (ch * h + oy * k + dy) * w + ox * k + dx;
                                if src[i] > best {
                                    best = src[i];
                                    best_i = i;
                                }
                            }
                        }
                        let o = (ch * oh + oy) * ow + ox;
                        out.data_mut()[o] = best;
                        arg[o] = best_i;
                    }
                }
            }
        }
        Ok(self.custom_op(
            "max_pool2d",
            out,
            &[x],
            Box::new(move |args| {
                let mut gx = Tensor::zeros(&[c, h, w]);
                for (&i, &g) in arg.iter().zip(args.grad.data()) {
                    gx.data_mut()[i] += g;
                }
                vec![Some(gx)]
            }),
        ))
    }
}
