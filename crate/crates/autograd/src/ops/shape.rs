use crate::error::{GraphError, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<S: Scalar> Graph<S> {
    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let old = self.shape(x);
        if old.iter().product::<usize>() != shape.iter().product::<usize>() {
            return Err(GraphError::shape("reshape", format!("{old:?} -> {shape:?}")));
        }
        let value = self.value(x).clone().reshaped(shape);
        Ok(self.custom_op(
            "reshape",
            value,
            &[x],
            Box::new(move |args| vec![Some(args.grad.clone().reshaped(&old))]),
        ))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(GraphError::shape("concat", "no operands"));
        };
        let base = self.shape(first);
        if axis >= base.len() {
            return Err(GraphError::shape("concat", format!("axis {axis} for {base:?}")));
        }
        let mut extents = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(GraphError::shape("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            extents.push(s[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = extents.iter().sum();
        let mut shape = base.clone();
        shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&x, &e) in xs.iter().zip(&extents) {
                let v = self.value(x);
                data.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        Ok(self.custom_op(
            "concat",
            Tensor::from_vec(&shape, data),
            xs,
            Box::new(move |args| {
                let g = args.grad.data();
                let mut out: Vec<Vec<S>> = extents
                    .iter()
                    .map(|&e| Vec::with_capacity(outer * e * inner))
                    .collect();
                for o in 0..outer {
                    let mut off = o * total * inner;
                    for (buf, &e) in out.iter_mut().zip(&extents) {
                        buf.extend_from_slice(&g[off..off + e * inner]);
                        off += e * inner;
                    }
                }
                out.into_iter()
                    .zip(&args.inputs)
                    .zip(&args.wants)
                    .map(|((d, x), &w)| w.then(|| Tensor::from_vec(x.shape(), d)))
                    .collect()
            }),
        ))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if axis >= s.len() || start + len > s[axis] {
            return Err(GraphError::shape(
                "slice",
                format!("[{start}, {}) on axis {axis} of {s:?}", start + len),
            ));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let full = s[axis];
        let mut shape = s.clone();
        shape[axis] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        {
            let v = self.value(x);
            for o in 0..outer {
                let base = (o * full + start) * inner;
                data.extend_from_slice(&v.data()[base..base + len * inner]);
            }
        }
        Ok(self.custom_op(
            "slice",
            Tensor::from_vec(&shape, data),
            &[x],
            Box::new(move |args| {
                let mut gx = Tensor::zeros(args.inputs[0].shape());
                let g = args.grad.data();
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    gx.data_mut()[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Reverses the order of rows of a 2-D tensor.
    pub fn flip_rows(&self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(GraphError::shape("flip_rows", format!("expects 2-D, got {s:?}")));
        }
        let cols = s[1];
        let flip = move |t: &Tensor<S>| {
            let data = t.data().chunks(cols.max(1)).rev().flatten().copied().collect();
            Tensor::from_vec(t.shape(), data)
        };
        let value = flip(&self.value(x));
        Ok(self.custom_op(
            "flip_rows",
            value,
            &[x],
            Box::new(move |args| vec![Some(flip(args.grad))]),
        ))
    }
}
