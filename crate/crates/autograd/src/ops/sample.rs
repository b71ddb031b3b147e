use crate::error::{GraphError, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Corner indices and weights of one bilinear sample on an `h×w` grid.
///
/// Coordinates outside `[0, h-1] × [0, w-1]` are clamped to the border; a
/// clamped axis has zero derivative with respect to its coordinate.
#[derive(Debug, Clone, Copy)]
pub struct BilinearTap<S> {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
    pub wy: S,
    pub wx: S,
    pub inside_y: bool,
    pub inside_x: bool,
}

impl<S: Scalar> BilinearTap<S> {
    pub fn new(y: S, x: S, h: usize, w: usize) -> Self {
        let (ymax, xmax) = (S::lit((h - 1) as f64), S::lit((w - 1) as f64));
        let inside_y = y >= S::zero() && y <= ymax;
        let inside_x = x >= S::zero() && x <= xmax;
        let yc = y.max(S::zero()).min(ymax);
        let xc = x.max(S::zero()).min(xmax);
        let y0 = yc.floor().to_usize().unwrap_or(0).min(h - 1);
        let x0 = xc.floor().to_usize().unwrap_or(0).min(w - 1);
        Self {
            y0,
            y1: (y0 + 1).min(h - 1),
            x0,
            x1: (x0 + 1).min(w - 1),
            wy: yc - S::lit(y0 as f64),
            wx: xc - S::lit(x0 as f64),
            inside_y,
            inside_x,
        }
    }

    /// Interpolated value from a row-major `h×w` plane with row stride `w`.
    pub fn sample(&self, plane: &[S], w: usize) -> S {
        let (v00, v01, v10, v11) = self.corners(plane, w);
        let one = S::one();
        (one - self.wy) * ((one - self.wx) * v00 + self.wx * v01)
            + self.wy * ((one - self.wx) * v10 + self.wx * v11)
    }

    fn corners(&self, plane: &[S], w: usize) -> (S, S, S, S) {
        (
            plane[self.y0 * w + self.x0],
            plane[self.y0 * w + self.x1],
            plane[self.y1 * w + self.x0],
            plane[self.y1 * w + self.x1],
        )
    }

    /// Adds `g` times the interpolation weights into a gradient plane.
    pub fn scatter(&self, grad_plane: &mut [S], w: usize, g: S) {
        let one = S::one();
        grad_plane[self.y0 * w + self.x0] += g * (one - self.wy) * (one - self.wx);
        grad_plane[self.y0 * w + self.x1] += g * (one - self.wy) * self.wx;
        grad_plane[self.y1 * w + self.x0] += g * self.wy * (one - self.wx);
        grad_plane[self.y1 * w + self.x1] += g * self.wy * self.wx;
    }

    /// Derivatives of the sampled value with respect to (y, x).
    pub fn coord_grad(&self, plane: &[S], w: usize) -> (S, S) {
        let (v00, v01, v10, v11) = self.corners(plane, w);
        let one = S::one();
        let dy = if self.inside_y {
            (one - self.wx) * (v10 - v00) + self.wx * (v11 - v01)
        } else {
            S::zero()
        };
        let dx = if self.inside_x {
            (one - self.wy) * (v01 - v00) + self.wy * (v11 - v10)
        } else {
            S::zero()
        };
        (dy, dx)
    }
}

impl<S: Scalar> Graph<S> {
    /// Samples `x [C,H,W]` at `coords [P,2]` given as (row, column) in
    /// pixel units, returning `[C,P]`.
    pub fn grid_sample(&self, x: Var, coords: Var) -> Result<Var> {
        let (sx, sc) = (self.shape(x), self.shape(coords));
        if sx.len() != 3 || sc.len() != 2 || sc[1] != 2 || sx[1] == 0 || sx[2] == 0 {
            return Err(GraphError::shape("grid_sample", format!("input {sx:?}, coords {sc:?}")));
        }
        let (c, h, w, p) = (sx[0], sx[1], sx[2], sc[0]);
        let taps: Vec<BilinearTap<S>> = self
            .value(coords)
            .data()
            .chunks(2)
            .map(|yx| BilinearTap::new(yx[0], yx[1], h, w))
            .collect();
        let mut out = Tensor::zeros(&[c, p]);
        {
            let xv = self.value(x);
            for ch in 0..c {
                let plane = &xv.data()[ch * h * w..(ch + 1) * h * w];
                for (o, tap) in out.data_mut()[ch * p..(ch + 1) * p].iter_mut().zip(&taps) {
                    *o = tap.sample(plane, w);
                }
            }
        }
        Ok(self.custom_op(
            "grid_sample",
            out,
            &[x, coords],
            Box::new(move |args| {
                let g = args.grad.data();
                let src = args.inputs[0].data();
                let gx = args.wants[0].then(|| {
                    let mut t = Tensor::zeros(&[c, h, w]);
                    for ch in 0..c {
                        let plane = &mut t.data_mut()[ch * h * w..(ch + 1) * h * w];
                        for (tap, &gv) in taps.iter().zip(&g[ch * p..(ch + 1) * p]) {
                            tap.scatter(plane, w, gv);
                        }
                    }
                    t
                });
                let gc = args.wants[1].then(|| {
                    let mut t = Tensor::zeros(&[p, 2]);
                    for ch in 0..c {
                        let plane = &src[ch * h * w..(ch + 1) * h * w];
                        for (i, tap) in taps.iter().enumerate() {
                            let (dy, dx) = tap.coord_grad(plane, w);
                            let gv = g[ch * p + i];
                            t.data_mut()[2 * i] += gv * dy;
                            t.data_mut()[2 * i + 1] += gv * dx;
                        }
                    }
                    t
                });
                vec![gx, gc]
            }),
        ))
    }

    /// Bilinear resize of `x [C,H,W]` to `[C,oh,ow]` with half-pixel centers.
    pub fn resize_bilinear(&self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 3 || oh == 0 || ow == 0 {
            return Err(GraphError::shape("resize_bilinear", format!("{s:?} -> {oh}x{ow}")));
        }
        let (h, w) = (s[1], s[2]);
        let (sy, sx) = (h as f64 / oh as f64, w as f64 / ow as f64);
        let mut coords = Vec::with_capacity(oh * ow * 2);
        for oy in 0..oh {
            for ox in 0..ow {
                coords.push(S::lit(((oy as f64 + 0.5) * sy - 0.5).max(0.0)));
                coords.push(S::lit(((ox as f64 + 0.5) * sx - 0.5).max(0.0)));
            }
        }
        let cv = self.constant(Tensor::from_vec(&[oh * ow, 2], coords));
        let sampled = self.grid_sample(x, cv)?;
        self.reshape(sampled, &[s[0], oh, ow])
    }
}
