//! Selective state-space scan with input-dependent discretization.
//!
//! For each channel `e` and state `s`, with zero-order hold:
//!
//! ```text
//! h_t[e,s] = exp(Δ_t[e]·A[e,s]) · h_{t-1}[e,s] + Δ_t[e]·B_t[s]·u_t[e]
//! y_t[e]   = Σ_s C_t[s]·h_t[e,s] + D[e]·u_t[e]
//! ```
//!
//! The state starts at zero. `reverse` runs the same recurrence from the
//! last position to the first.

use crate::error::{GraphError, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Operands of [`Graph::selective_scan`].
#[derive(Debug, Clone, Copy)]
pub struct ScanInputs {
    /// `[L,E]` input sequence.
    pub u: Var,
    /// `[L,E]` positive step sizes.
    pub delta: Var,
    /// `[E,S]` diagonal state matrix (negative for a stable scan).
    pub a: Var,
    /// `[L,S]` input projection per position.
    pub b: Var,
    /// `[L,S]` output projection per position.
    pub c: Var,
    /// `[E]` skip weights.
    pub d: Var,
}

struct Dims {
    l: usize,
    e: usize,
    s: usize,
}

fn order(l: usize, reverse: bool) -> Vec<usize> {
    if reverse {
        (0..l).rev().collect()
    } else {
        (0..l).collect()
    }
}

/// Runs the recurrence, returning outputs `[L,E]` and the state after each
/// processed step (`[L,E,S]`, indexed by step, not position).
fn scan_forward<S: Scalar>(
    dims: &Dims,
    vals: [&[S]; 6],
    reverse: bool,
) -> (Vec<S>, Vec<S>) {
    let Dims { l, e, s } = *dims;
    let [u, delta, a, b, c, d] = vals;
    let mut y = vec![S::zero(); l * e];
    let mut hist = vec![S::zero(); l * e * s];
    let mut h = vec![S::zero(); e * s];
    for (k, t) in order(l, reverse).into_iter().enumerate() {
        let (bt, ct) = (&b[t * s..(t + 1) * s], &c[t * s..(t + 1) * s]);
        for ch in 0..e {
            let dt = delta[t * e + ch];
            let ut = u[t * e + ch];
            let hrow = &mut h[ch * s..(ch + 1) * s];
            let arow = &a[ch * s..(ch + 1) * s];
            let mut acc = d[ch] * ut;
            for j in 0..s {
                hrow[j] = (dt * arow[j]).exp() * hrow[j] + dt * bt[j] * ut;
                acc += ct[j] * hrow[j];
            }
            y[t * e + ch] = acc;
        }
        hist[k * e * s..(k + 1) * e * s].copy_from_slice(&h);
    }
    (y, hist)
}

impl<S: Scalar> Graph<S> {
    pub fn selective_scan(&self, ops: ScanInputs, reverse: bool) -> Result<Var> {
        let su = self.shape(ops.u);
        if su.len() != 2 {
            return Err(GraphError::shape("selective_scan", format!("u {su:?} must be [L,E]")));
        }
        let (l, e) = (su[0], su[1]);
        let sa = self.shape(ops.a);
        if sa.len() != 2 || sa[0] != e {
            return Err(GraphError::shape("selective_scan", format!("A {sa:?} for E={e}")));
        }
        let s = sa[1];
        let checks = [
            ("delta", self.shape(ops.delta), vec![l, e]),
            ("B", self.shape(ops.b), vec![l, s]),
            ("C", self.shape(ops.c), vec![l, s]),
            ("D", self.shape(ops.d), vec![e]),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(GraphError::shape(
                    "selective_scan",
                    format!("{name} has shape {got:?}, expected {want:?}"),
                ));
            }
        }
        let dims = Dims { l, e, s };
        let inputs = [ops.u, ops.delta, ops.a, ops.b, ops.c, ops.d];
        let (y, hist) = {
            let vals: Vec<_> = inputs.iter().map(|&v| self.value(v)).collect();
            let slices = [
                vals[0].data(),
                vals[1].data(),
                vals[2].data(),
                vals[3].data(),
                vals[4].data(),
                vals[5].data(),
            ];
            scan_forward(&dims, slices, reverse)
        };
        Ok(self.custom_op(
            "selective_scan",
            Tensor::from_vec(&[l, e], y),
            &inputs,
            Box::new(move |args| {
                let [u, delta, a, b, c, d] = [0, 1, 2, 3, 4, 5].map(|i| args.inputs[i].data());
                let gy = args.grad.data();
                let mut gu = vec![S::zero(); l * e];
                let mut gdelta = vec![S::zero(); l * e];
                let mut ga = vec![S::zero(); e * s];
                let mut gb = vec![S::zero(); l * s];
                let mut gc = vec![S::zero(); l * s];
                let mut gd = vec![S::zero(); e];
                // a_{k+1} * dL/dh_{k+1}, carried backwards through the steps.
                let mut carry = vec![S::zero(); e * s];
                let steps = order(l, reverse);
                let zero_state = vec![S::zero(); e * s];
                for k in (0..l).rev() {
                    let t = steps[k];
                    let h_now = &hist[k * e * s..(k + 1) * e * s];
                    let h_prev = if k == 0 { &zero_state[..] } else { &hist[(k - 1) * e * s..k * e * s] };
                    let (bt, ct) = (&b[t * s..(t + 1) * s], &c[t * s..(t + 1) * s]);
                    for ch in 0..e {
                        let g_out = gy[t * e + ch];
                        let dt = delta[t * e + ch];
                        let ut = u[t * e + ch];
                        gd[ch] += g_out * ut;
                        let mut g_u = g_out * d[ch];
                        let mut g_dt = S::zero();
                        for j in 0..s {
                            let idx = ch * s + j;
                            gc[t * s + j] += g_out * h_now[idx];
                            let gh = g_out * ct[j] + carry[idx];
                            let decay = (dt * a[idx]).exp();
                            let g_decay = gh * h_prev[idx];
                            g_dt += g_decay * decay * a[idx] + gh * bt[j] * ut;
                            ga[idx] += g_decay * decay * dt;
                            gb[t * s + j] += gh * dt * ut;
                            g_u += gh * dt * bt[j];
                            carry[idx] = decay * gh;
                        }
                        gu[t * e + ch] = g_u;
                        gdelta[t * e + ch] = g_dt;
                    }
                }
                vec![
                    Some(Tensor::from_vec(&[l, e], gu)),
                    Some(Tensor::from_vec(&[l, e], gdelta)),
                    Some(Tensor::from_vec(&[e, s], ga)),
                    Some(Tensor::from_vec(&[l, s], gb)),
                    Some(Tensor::from_vec(&[l, s], gc)),
                    Some(Tensor::from_vec(&[e], gd)),
                ]
            }),
        ))
    }
}
