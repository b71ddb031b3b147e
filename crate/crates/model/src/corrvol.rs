//! All-pairs correlation pyramid and windowed lookup.

use mvx_autograd::{BilinearTap, Graph, GraphError, Result, Scalar, Tensor, Var};

/// Level `k` holds a `[h·w, h/2ᵏ, w/2ᵏ]` tensor: one pooled correlation
/// plane per source pixel of the image feature map.
#[derive(Debug, Clone)]
pub struct CorrelationPyramid {
    pub levels: Vec<Var>,
    pub h: usize,
    pub w: usize,
}

pub fn lookup_channels(levels: usize, radius: usize) -> usize {
    levels * (2 * radius + 1) * (2 * radius + 1)
}

/// Number of stored entries for an `h×w` grid with `levels` levels.
pub fn pyramid_entries(h: usize, w: usize, levels: usize) -> usize {
    (0..levels).map(|k| h * w * (h >> k) * (w >> k)).sum()
}

impl CorrelationPyramid {
    pub fn entries<S: Scalar>(&self, g: &Graph<S>) -> usize {
        self.levels.iter().map(|&v| g.value(v).numel()).sum()
    }
}

/// Inner products of every `f1` column with every `f_depth` column, scaled
/// by `1/√D`, followed by `levels - 1` successive 2×2 average poolings over
/// the target axes.
pub fn build_pyramid<S: Scalar>(g: &Graph<S>, f1: Var, f_depth: Var, levels: usize) -> Result<CorrelationPyramid> {
    let (s1, s2) = (g.shape(f1), g.shape(f_depth));
    if s1.len() != 3 || s1 != s2 {
        return Err(GraphError::shape("build_pyramid", format!("feature maps {s1:?} and {s2:?} must match")));
    }
    let (d, h, w) = (s1[0], s1[1], s1[2]);
    let div = 1usize << levels.saturating_sub(1);
    if levels == 0 || h % div != 0 || w % div != 0 {
        return Err(GraphError::shape(
            "build_pyramid",
            format!("{h}x{w} grid is not divisible by {div} for {levels} levels"),
        ));
    }
    let a = g.transpose(g.reshape(f1, &[d, h * w])?)?;
    let b = g.reshape(f_depth, &[d, h * w])?;
    let corr = g.scale(g.matmul(a, b)?, 1.0 / (d as f64).sqrt());
    let mut level = g.reshape(corr, &[h * w, h, w])?;
    let mut out = vec![level];
    for _ in 1..levels {
        level = g.avg_pool2d(level, 2)?;
        out.push(level);
    }
    Ok(CorrelationPyramid { levels: out, h, w })
}

/// Samples a `(2r+1)²` window around `(i,j) + flow[:,i,j]` at every level.
///
/// `flow` is `[2,h,w]` with channel 0 the row offset and channel 1 the
/// column offset, in level-0 grid units; level `k` uses the center scaled
/// by `2⁻ᵏ`. Output channels run level-major, then window row, then window
/// column. Samples off the grid clamp to the border.
pub fn lookup<S: Scalar>(g: &Graph<S>, pyr: &CorrelationPyramid, flow: Var, radius: usize) -> Result<Var> {
    let (h, w) = (pyr.h, pyr.w);
    if g.shape(flow) != [2, h, w] {
        return Err(GraphError::shape("corr_lookup", format!("flow {:?} for a {h}x{w} grid", g.shape(flow))));
    }
    if radius == 0 {
        return Err(GraphError::shape("corr_lookup", "radius must be at least 1"));
    }
    let n_levels = pyr.levels.len();
    let side = 2 * radius + 1;
    let win = side * side;
    let hw = h * w;
    let dims: Vec<(usize, usize)> = (0..n_levels).map(|k| (h >> k, w >> k)).collect();
    let r = radius as isize;

    // Every tap of every output channel, computed once from the flow and
    // reused by the backward pass.
    let taps: Vec<BilinearTap<S>> = {
        let fv = g.value(flow);
        let f = fv.data();
        let mut taps = Vec::with_capacity(n_levels * win * hw);
        for (k, &(hk, wk)) in dims.iter().enumerate() {
            let inv = S::lit(1.0 / (1u64 << k) as f64);
            for dy in -r..=r {
                for dx in -r..=r {
                    for i in 0..h {
                        for j in 0..w {
                            let p = i * w + j;
                            let cy = (S::lit(i as f64) + f[p]) * inv + S::lit(dy as f64);
                            let cx = (S::lit(j as f64) + f[hw + p]) * inv + S::lit(dx as f64);
                            taps.push(BilinearTap::new(cy, cx, hk, wk));
                        }
                    }
                }
            }
        }
        taps
    };

    let mut out = vec![S::zero(); n_levels * win * hw];
    for (k, &(hk, wk)) in dims.iter().enumerate() {
        let vol = g.value(pyr.levels[k]);
        let plane = hk * wk;
        for c in 0..win {
            let base = (k * win + c) * hw;
            for p in 0..hw {
                out[base + p] = taps[base + p].sample(&vol.data()[p * plane..(p + 1) * plane], wk);
            }
        }
    }

    let mut inputs = pyr.levels.clone();
    inputs.push(flow);
    Ok(g.custom_op(
        "corr_lookup",
        Tensor::from_vec(&[n_levels * win, h, w], out),
        &inputs,
        Box::new(move |args| {
            let gout = args.grad.data();
            let want_flow = args.wants[n_levels];
            let mut gflow = vec![S::zero(); 2 * hw];
            let mut grads: Vec<Option<Tensor<S>>> = Vec::with_capacity(n_levels + 1);
            for (k, &(hk, wk)) in dims.iter().enumerate() {
                let vol = args.inputs[k].data();
                let plane = hk * wk;
                let inv = S::lit(1.0 / (1u64 << k) as f64);
                let mut gvol = args.wants[k].then(|| vec![S::zero(); hw * plane]);
                for c in 0..win {
                    let base = (k * win + c) * hw;
                    for p in 0..hw {
                        let go = gout[base + p];
                        if go == S::zero() {
                            continue;
                        }
                        let tap = &taps[base + p];
                        if let Some(gv) = gvol.as_mut() {
                            tap.scatter(&mut gv[p * plane..(p + 1) * plane], wk, go);
                        }
                        if want_flow {
                            let (dy, dx) = tap.coord_grad(&vol[p * plane..(p + 1) * plane], wk);
                            gflow[p] += go * dy * inv;
                            gflow[hw + p] += go * dx * inv;
                        }
                    }
                }
                grads.push(gvol.map(|v| Tensor::from_vec(&[hw, hk, wk], v)));
            }
            grads.push(want_flow.then(|| Tensor::from_vec(&[2, h, w], gflow)));
            grads
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_give_sqrt_d() {
        let g = Graph::<f64>::new();
        let f = g.constant(Tensor::full(&[64, 4, 4], 1.0));
        let pyr = build_pyramid(&g, f, f, 3).unwrap();
        assert!(g.value(pyr.levels[0]).data().iter().all(|&v| (v - 8.0).abs() < 1e-12));
        assert_eq!(pyr.entries(&g), pyramid_entries(4, 4, 3));
    }

    #[test]
    fn zero_flow_reads_own_neighbourhood() {
        let g = Graph::<f64>::new();
        let (h, w) = (4, 4);
        let f1 = g.constant(Tensor::from_fn(&[3, h, w], |i| (i as f64 * 0.37).sin()));
        let f2 = g.constant(Tensor::from_fn(&[3, h, w], |i| (i as f64 * 0.11).cos()));
        let pyr = build_pyramid(&g, f1, f2, 1).unwrap();
        let out = lookup(&g, &pyr, g.constant(Tensor::zeros(&[2, h, w])), 1).unwrap();
        let (vol, out) = (g.value(pyr.levels[0]).clone(), g.value(out).clone());
        let (i, j) = (1, 2);
        for (c, (dy, dx)) in (-1..=1).flat_map(|dy| (-1..=1).map(move |dx| (dy, dx))).enumerate() {
            let (ti, tj) = ((i as isize + dy) as usize, (j as isize + dx) as usize);
            let want = vol.data()[(i * w + j) * h * w + ti * w + tj];
            assert_eq!(out.data()[c * h * w + i * w + j], want);
        }
    }

    #[test]
    fn rejects_indivisible_grid() {
        let g = Graph::<f32>::new();
        let f = g.constant(Tensor::zeros(&[4, 6, 6]));
        assert!(build_pyramid(&g, f, f, 3).is_err());
    }
}
