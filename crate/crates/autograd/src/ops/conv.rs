use crate::error::{GraphError, Result};
use crate::graph::{Graph, Var};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col<S: Scalar>(x: &[S], g: &ConvGeom) -> Vec<S> {
    let p = g.cols();
    let mut cols = vec![S::zero(); g.rows() * p];
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * g.ow + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<S: Scalar>(cols: &[S], g: &ConvGeom) -> Vec<S> {
    let p = g.cols();
    let mut x = vec![S::zero(); g.c * g.h * g.w];
    for c in 0..g.c {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

impl<S: Scalar> Graph<S> {
    /// 2-D cross-correlation of `x [C,H,W]` with `w [O,C,kh,kw]`, zero
    /// padding `pad` on every side, optional bias `[O]`.
    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 4 || sx[0] != sw[1] {
            return Err(GraphError::shape("conv2d", format!("input {sx:?}, weight {sw:?}")));
        }
        if stride == 0 {
            return Err(GraphError::shape("conv2d", "stride must be positive"));
        }
        let (c, h, wd) = (sx[0], sx[1], sx[2]);
        let (o, kh, kw) = (sw[0], sw[2], sw[3]);
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(GraphError::shape(
                "conv2d",
                format!("kernel {kh}x{kw} larger than padded input {sx:?}"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [o] {
                return Err(GraphError::shape("conv2d", format!("bias {:?} for {o} outputs", self.shape(b))));
            }
        }
        let geom = ConvGeom {
            c,
            h,
            w: wd,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (wd + 2 * pad - kw) / stride + 1,
        };
        let (rows, p) = (geom.rows(), geom.cols());
        let mut out = Tensor::zeros(&[o, geom.oh, geom.ow]);
        {
            let xv = self.value(x);
            let owned;
            let cols: &[S] = if geom.is_pointwise() {
                xv.data()
            } else {
                owned = im2col(xv.data(), &geom);
                &owned
            };
            gemm(false, false, o, rows, p, self.value(w).data(), cols, out.data_mut(), false);
        }
        if let Some(b) = b {
            let bv = self.value(b);
            for (plane, &bb) in out.data_mut().chunks_mut(p).zip(bv.data()) {
                plane.iter_mut().for_each(|v| *v += bb);
            }
        }
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.custom_op(
            "conv2d",
            out,
            &inputs,
            Box::new(move |args| {
                let g = args.grad.data();
                let gx = args.wants[0].then(|| {
                    let mut gcols = vec![S::zero(); rows * p];
                    gemm(true, false, rows, o, p, args.inputs[1].data(), g, &mut gcols, false);
                    let data = if geom.is_pointwise() { gcols } else { col2im(&gcols, &geom) };
                    Tensor::from_vec(args.inputs[0].shape(), data)
                });
                let gw = args.wants[1].then(|| {
                    let owned;
                    let cols: &[S] = if geom.is_pointwise() {
                        args.inputs[0].data()
                    } else {
                        owned = im2col(args.inputs[0].data(), &geom);
                        &owned
                    };
                    let mut t = Tensor::zeros(args.inputs[1].shape());
                    gemm(false, true, o, p, rows, g, cols, t.data_mut(), false);
                    t
                });
                let mut grads = vec![gx, gw];
                if args.inputs.len() == 3 {
                    grads.push(args.wants[2].then(|| {
                        Tensor::from_vec(&[o], g.chunks(p).map(|c| c.iter().copied().sum()).collect())
                    }));
                }
                grads
            }),
        ))
    }
}
