use crate::error::{GraphError, Result};
use crate::graph::{Graph, Var};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

impl<S: Scalar> Graph<S> {
    /// `[m,k] × [k,n] → [m,n]`.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(GraphError::shape("matmul", format!("{sa:?} × {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = Tensor::zeros(&[m, n]);
        gemm(
            false,
            false,
            m,
            k,
            n,
            self.value(a).data(),
            self.value(b).data(),
            out.data_mut(),
            false,
        );
        Ok(self.custom_op(
            "matmul",
            out,
            &[a, b],
            Box::new(move |args| {
                let g = args.grad.data();
                let ga = args.wants[0].then(|| {
                    let mut t = Tensor::zeros(&[m, k]);
                    gemm(false, true, m, n, k, g, args.inputs[1].data(), t.data_mut(), false);
                    t
                });
                let gb = args.wants[1].then(|| {
                    let mut t = Tensor::zeros(&[k, n]);
                    gemm(true, false, k, m, n, args.inputs[0].data(), g, t.data_mut(), false);
                    t
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Fully connected layer: `x [n, in] · wᵀ + b` with `w [out, in]`.
    pub fn linear(&self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(GraphError::shape("linear", format!("input {sx:?}, weight {sw:?}")));
        }
        let (n, fin, fout) = (sx[0], sx[1], sw[0]);
        if let Some(b) = b {
            let sb = self.shape(b);
            if sb != [fout] {
                return Err(GraphError::shape("linear", format!("bias {sb:?} for {fout} outputs")));
            }
        }
        let mut out = Tensor::zeros(&[n, fout]);
        gemm(
            false,
            true,
            n,
            fin,
            fout,
            self.value(x).data(),
            self.value(w).data(),
            out.data_mut(),
            false,
        );
        if let Some(b) = b {
            let bv = self.value(b);
            for row in out.data_mut().chunks_mut(fout) {
                for (o, &bb) in row.iter_mut().zip(bv.data()) {
                    *o += bb;
                }
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.custom_op(
            "linear",
            out,
            &inputs,
            Box::new(move |args| {
                let g = args.grad.data();
                let gx = args.wants[0].then(|| {
                    let mut t = Tensor::zeros(&[n, fin]);
                    gemm(false, false, n, fout, fin, g, args.inputs[1].data(), t.data_mut(), false);
                    t
                });
                let gw = args.wants[1].then(|| {
                    let mut t = Tensor::zeros(&[fout, fin]);
                    gemm(true, false, fout, n, fin, g, args.inputs[0].data(), t.data_mut(), false);
                    t
                });
                let mut grads = vec![gx, gw];
                if args.inputs.len() == 3 {
                    grads.push(args.wants[2].then(|| {
                        let mut t = Tensor::zeros(&[fout]);
                        for row in g.chunks(fout) {
                            for (a, &v) in t.data_mut().iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                        t
                    }));
                }
                grads
            }),
        ))
    }

    pub fn transpose(&self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(GraphError::shape("transpose", format!("expects 2-D, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let value = transpose_2d(&self.value(x), r, c);
        Ok(self.custom_op(
            "transpose",
            value,
            &[x],
            Box::new(move |args| vec![Some(transpose_2d(args.grad, c, r))]),
        ))
    }
}

fn transpose_2d<S: Scalar>(t: &Tensor<S>, rows: usize, cols: usize) -> Tensor<S> {
    let src = t.data();
    let mut out = vec![S::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = src[i * cols + j];
        }
    }
    Tensor::from_vec(&[cols, rows], out)
}
