//! Central finite-difference oracle for reverse-mode gradients.
//!
//! The oracle only ever evaluates the forward pass, so it stays independent
//! of every backward closure it checks.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst per-tensor relative error.
    pub max_rel_error: f64,
    /// Name of the tensor holding the worst error.
    pub worst: String,
    pub coords_checked: usize,
    /// Coordinates whose forward and backward differences disagreed enough
    /// to suggest a kink inside the stencil.
    pub kinks: usize,
    pub per_tensor: Vec<(String, f64)>,
}

/// Options for [`check`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub eps: f64,
    /// Upper bound on coordinates probed per tensor; larger tensors are
    /// sampled with a fixed stride.
    pub max_coords: usize,
    /// Forward and backward differences disagreeing by more than this
    /// fraction of the tensor's gradient scale mark a kink inside the
    /// stencil (a relu or pooling switch). `None` always uses the central
    /// difference.
    pub kink_threshold: Option<f64>,
}

impl GradCheck {
    pub fn f32_default() -> Self {
        Self {
            eps: 1e-3,
            max_coords: 64,
            kink_threshold: Some(0.02),
        }
    }

    pub fn f64_default() -> Self {
        Self {
            eps: 1e-6,
            max_coords: 64,
            kink_threshold: Some(0.02),
        }
    }
}

const RESOLUTION_ULPS: f64 = 4.0;

fn probe_coords(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let stride = n as f64 / max as f64;
    (0..max).map(|k| ((k as f64 + 0.5) * stride) as usize).collect()
}

/// Compares analytic gradients of the scalar built by `f` against central
/// differences, with respect to every input and every trainable parameter.
///
/// Relative error of a tensor is `max|analytic - numeric|`, less the
/// oracle's resolution (4 ulps of the output divided by the step), divided
/// by the larger of its own gradient magnitude and 1e-3 of the largest
/// gradient magnitude seen across all tensors.
///
/// A coordinate whose forward and backward differences disagree sharply is
/// treated as possibly straddling a nondifferentiable point; it is compared
/// against whichever of the central and one-sided differences is closest,
/// since the analytic gradient there is the derivative of the smooth piece
/// containing the base point.
pub fn check<S, F>(
    opts: GradCheck,
    inputs: &[Tensor<S>],
    params: &ParamStore<S>,
    f: F,
) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&Graph<S>, &ParamStore<S>, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor<S>], params: &ParamStore<S>| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&g, params, &vars)?;
        let v = g.value(out).item();
        Ok(v.to_f64().unwrap_or(f64::NAN))
    };

    let g = Graph::new();
    let leaves: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&g, params, &leaves)?;
    let grads = g.backward(out)?;

    let mut analytic: Vec<(String, Vec<f64>, Vec<usize>)> = Vec::new();
    for (i, (t, v)) in inputs.iter().zip(&leaves).enumerate() {
        let full = grads.wrt(*v).map(|g| g.to_f64_vec()).unwrap_or_else(|| vec![0.0; t.numel()]);
        let coords = probe_coords(t.numel(), opts.max_coords);
        analytic.push((format!("input{i}"), coords.iter().map(|&c| full[c]).collect(), coords));
    }
    let trainable: Vec<_> = params.ids().filter(|&id| params.entry(id).trainable).collect();
    for &id in &trainable {
        let n = params.get(id).numel();
        let full = grads.param(id).map(|g| g.to_f64_vec()).unwrap_or_else(|| vec![0.0; n]);
        let coords = probe_coords(n, opts.max_coords);
        analytic.push((params.entry(id).name.clone(), coords.iter().map(|&c| full[c]).collect(), coords));
    }

    let eps = S::lit(opts.eps);
    let base = eval(inputs, params)?;
    // (central, forward, backward) per probed coordinate.
    let mut numeric: Vec<Vec<(f64, f64, f64)>> = Vec::with_capacity(analytic.len());
    for (k, (_, _, coords)) in analytic.iter().enumerate() {
        let mut col = Vec::with_capacity(coords.len());
        for &c in coords {
            let (plus, minus) = if k < inputs.len() {
                let mut ip = inputs.to_vec();
                ip[k].data_mut()[c] += eps;
                let fp = eval(&ip, params)?;
                ip[k].data_mut()[c] -= eps + eps;
                (fp, eval(&ip, params)?)
            } else {
                let id = trainable[k - inputs.len()];
                let mut pp = params.clone();
                pp.get_mut(id).data_mut()[c] += eps;
                let fp = eval(inputs, &pp)?;
                pp.get_mut(id).data_mut()[c] -= eps + eps;
                (fp, eval(inputs, &pp)?)
            };
            let h = eps.to_f64().unwrap_or(opts.eps);
            col.push(((plus - minus) / (2.0 * h), (plus - base) / h, (base - minus) / h));
        }
        numeric.push(col);
    }

    let global = analytic
        .iter()
        .zip(&numeric)
        .flat_map(|((_, a, _), n)| a.iter().copied().chain(n.iter().map(|c| c.0)))
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (global * 1e-3).max(1e-12);
    // Smallest difference quotient the oracle can resolve: a few ulps of the
    // output (rounding accumulated over the forward pass) over the step.
    let ulp = S::epsilon().to_f64().unwrap_or(0.0) * base.abs().max(1.0);
    let resolution = RESOLUTION_ULPS * ulp / opts.eps;
    let mut per_tensor = Vec::new();
    let mut coords_checked = 0;
    let mut kinks = 0;
    for ((name, a, _), n) in analytic.iter().zip(&numeric) {
        coords_checked += a.len();
        let scale = a
            .iter()
            .copied()
            .chain(n.iter().map(|c| c.0))
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(floor);
        let mut err = 0.0f64;
        for (&x, &(central, fwd, bwd)) in a.iter().zip(n) {
            let e = match opts.kink_threshold {
                Some(t) if (fwd - bwd).abs() > t * scale => {
                    kinks += 1;
                    (x - central).abs().min((x - fwd).abs()).min((x - bwd).abs())
                }
                _ => (x - central).abs(),
            };
            err = err.max((e - resolution).max(0.0));
        }
        per_tensor.push((name.clone(), err / scale));
    }
    let (worst, max_rel_error) = per_tensor
        .iter()
        .cloned()
        .fold((String::new(), 0.0), |acc, (n, e)| if e > acc.1 || e.is_nan() { (n, e) } else { acc });
    Ok(GradCheckReport {
        max_rel_error,
        worst,
        coords_checked,
        kinks,
        per_tensor,
    })
}
