//! Aggregation of per-frame flow sequences with bidirectional selective
//! state-space blocks.

use mvx_autograd::{init, Graph, GraphError, ParamId, ParamStore, Result, ScanInputs, Scalar, Tensor, Var};
use rand::Rng;

use crate::config::{NetConfig, TemporalConfig};
use crate::layers::{Conv2d, LayerNorm, Linear};
use crate::refine::RotationHead;

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// LayerNorm → bidirectional selective scan with SiLU gate → residual,
/// then LayerNorm → gated MLP → residual. Both scan directions share
/// their parameters and their outputs are summed.
#[derive(Debug, Clone)]
pub struct MambaBlock {
    norm1: LayerNorm,
    in_proj: Linear,
    x_proj: Linear,
    dt_proj: Linear,
    a_log: ParamId,
    d: ParamId,
    out_proj: Linear,
    norm2: LayerNorm,
    mlp_gate: Linear,
    mlp_up: Linear,
    mlp_down: Linear,
    inner: usize,
    state: usize,
    dt_rank: usize,
}

impl MambaBlock {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, cfg: &TemporalConfig, rng: &mut impl Rng) -> Self {
        let (dm, e, s, rank) = (cfg.d_model, cfg.d_model * cfg.expand, cfg.state_dim, cfg.dt_rank);
        let dt_proj = Linear::new(store, &format!("{name}.dt_proj"), rank, e, true, rng);
        *store.get_mut(dt_proj.weight) = init::uniform(&[e, rank], -1.0 / (rank as f64).sqrt(), 1.0 / (rank as f64).sqrt(), rng);
        let (lo, hi) = (1e-3f64.ln(), 1e-1f64.ln());
        *store.get_mut(dt_proj.bias.expect("bias")) =
            Tensor::from_fn(&[e], |_| S::lit(inverse_softplus(rng.random_range(lo..hi).exp())));
        let a_log = store.add(
            format!("{name}.a_log"),
            Tensor::from_fn(&[e, s], |i| S::lit(((i % s) as f64 + 1.0).ln())),
        );
        let out_proj = Linear::new(store, &format!("{name}.out_proj"), e, dm, false, rng);
        out_proj.scale_weight(store, 0.5);
        let mlp_down = Linear::new(store, &format!("{name}.mlp_down"), cfg.mlp_hidden, dm, false, rng);
        mlp_down.scale_weight(store, 0.5);
        Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dm),
            in_proj: Linear::new(store, &format!("{name}.in_proj"), dm, 2 * e, false, rng),
            x_proj: Linear::new(store, &format!("{name}.x_proj"), e, rank + 2 * s, false, rng),
            dt_proj,
            a_log,
            d: store.add(format!("{name}.d"), Tensor::full(&[e], S::one())),
            out_proj,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dm),
            mlp_gate: Linear::new(store, &format!("{name}.mlp_gate"), dm, cfg.mlp_hidden, false, rng),
            mlp_up: Linear::new(store, &format!("{name}.mlp_up"), dm, cfg.mlp_hidden, false, rng),
            mlp_down,
            inner: e,
            state: s,
            dt_rank: rank,
        }
    }

    /// Scan inputs for a normalized sequence `[L,D]`, plus the gate branch.
    pub fn scan_inputs<S: Scalar>(&self, g: &Graph<S>, p: &ParamStore<S>, x: Var) -> Result<(ScanInputs, Var)> {
        let (e, s, rank) = (self.inner, self.state, self.dt_rank);
        let xz = self.in_proj.forward(g, p, x)?;
        let u = g.silu(g.slice(xz, 1, 0, e)?);
        let z = g.slice(xz, 1, e, e)?;
        let proj = self.x_proj.forward(g, p, u)?;
        let dt_low = g.slice(proj, 1, 0, rank)?;
        let b = g.slice(proj, 1, rank, s)?;
        let c = g.slice(proj, 1, rank + s, s)?;
        let delta = g.softplus(self.dt_proj.forward(g, p, dt_low)?);
        let a = g.neg(g.exp(g.param(p, self.a_log)));
        let scan = ScanInputs {
            u,
            delta,
            a,
            b,
            c,
            d: g.param(p, self.d),
        };
        Ok((scan, z))
    }

    /// Sum of the forward and backward scans before gating.
    pub fn bidirectional_scan<S: Scalar>(&self, g: &Graph<S>, p: &ParamStore<S>, normed: Var) -> Result<(Var, Var)> {
        let (scan, z) = self.scan_inputs(g, p, normed)?;
        let y = g.add(g.selective_scan(scan, false)?, g.selective_scan(scan, true)?)?;
        Ok((y, z))
    }

    pub fn forward<S: Scalar>(&self, g: &Graph<S>, p: &ParamStore<S>, x: Var) -> Result<Var> {
        let (y, z) = self.bidirectional_scan(g, p, self.norm1.forward(g, p, x)?)?;
        let gated = g.mul(y, g.silu(z))?;
        let x = g.add(x, self.out_proj.forward(g, p, gated)?)?;
        let h = self.norm2.forward(g, p, x)?;
        let m = g.mul(g.silu(self.mlp_gate.forward(g, p, h)?), self.mlp_up.forward(g, p, h)?)?;
        g.add(x, self.mlp_down.forward(g, p, m)?)
    }
}

/// Patch embedding, positional embeddings, summary token, block stack and
/// the final rotation head.
#[derive(Debug, Clone)]
pub struct TemporalModule {
    pub patch_embed: Conv2d,
    pub p_s: ParamId,
    pub p_t: ParamId,
    pub z_add: ParamId,
    pub blocks: Vec<MambaBlock>,
    pub norm: LayerNorm,
    pub head: RotationHead,
    frames: usize,
    patches: usize,
    d_model: usize,
    grid: (usize, usize),
    iterations: usize,
    patch: usize,
}

impl TemporalModule {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, cfg: &NetConfig, rng: &mut impl Rng) -> Self {
        let t = &cfg.temporal;
        let n = cfg.patches_per_frame(cfg.refine.iterations);
        let mut patch_embed = Conv2d::new(store, "temporal.patch_embed", 2, t.d_model, t.patch, t.patch, rng);
        patch_embed.pad = 0;
        Self {
            patch_embed,
            p_s: store.add("temporal.p_s", init::normal(&[n, t.d_model], 0.02, rng)),
            p_t: store.add("temporal.p_t", init::normal(&[t.frames, t.d_model], 0.02, rng)),
            z_add: store.add("temporal.z_add", init::normal(&[1, t.d_model], 0.02, rng)),
            blocks: (0..t.blocks)
                .map(|b| MambaBlock::new(store, &format!("temporal.block{b}"), t, rng))
                .collect(),
            norm: LayerNorm::new(store, "temporal.norm", t.d_model),
            head: RotationHead::new(store, "temporal.head", t.d_model, t.head_hidden, rng),
            frames: t.frames,
            patches: n,
            d_model: t.d_model,
            grid: cfg.grid(),
            iterations: cfg.refine.iterations,
            patch: t.patch,
        }
    }

    pub fn token_count(&self) -> usize {
        1 + self.frames * self.patches
    }

    /// `flows[t][k]` is iteration `k` of frame `t`, each `[2,h,w]`.
    /// Returns `[1 + T·N, D_m]` with the summary token first, frames in
    /// order and patches row-major within each frame.
    pub fn assemble_tokens<S: Scalar>(&self, g: &Graph<S>, p: &ParamStore<S>, flows: &[Vec<Var>]) -> Result<Var> {
        if flows.len() != self.frames {
            return Err(GraphError::shape(
                "assemble_tokens",
                format!("{} frames given, module built for {}", flows.len(), self.frames),
            ));
        }
        let (h, w) = self.grid;
        if h % self.patch != 0 || (w * self.iterations) % self.patch != 0 {
            return Err(GraphError::shape(
                "assemble_tokens",
                format!("{h}x{} flow map does not tile into {}-pixel patches", w * self.iterations, self.patch),
            ));
        }
        let mut per_frame = Vec::with_capacity(self.frames);
        for (t, frame) in flows.iter().enumerate() {
            if frame.len() != self.iterations {
                return Err(GraphError::shape(
                    "assemble_tokens",
                    format!("frame {t} has {} flow maps, expected {}", frame.len(), self.iterations),
                ));
            }
            for &f in frame {
                if g.shape(f) != [2, h, w] {
                    return Err(GraphError::shape("assemble_tokens", format!("flow {:?} for a {h}x{w} grid", g.shape(f))));
                }
            }
            let map = g.concat(frame, 2)?;
            let emb = self.patch_embed.forward(g, p, map)?;
            let n = h / self.patch * (w * self.iterations / self.patch);
            let emb = g.transpose(g.reshape(emb, &[self.d_model, n])?)?;
            let p_t = g.reshape(g.slice(g.param(p, self.p_t), 0, t, 1)?, &[self.d_model])?;
            let pos = g.add_broadcast(g.param(p, self.p_s), p_t)?;
            per_frame.push(g.add(emb, pos)?);
        }
        let mut all = vec![g.param(p, self.z_add)];
        all.extend(per_frame);
        let tokens = g.concat(&all, 0)?;
        debug_assert_eq!(g.shape(tokens), [self.token_count(), self.d_model]);
        Ok(tokens)
    }

    /// Summary token after the block stack, `[1,D_m]`.
    pub fn summarize<S: Scalar>(&self, g: &Graph<S>, p: &ParamStore<S>, tokens: Var) -> Result<Var> {
        let mut x = tokens;
        for b in &self.blocks {
            x = b.forward(g, p, x)?;
        }
        self.norm.forward(g, p, g.slice(x, 0, 0, 1)?)
    }

    /// Predicted deviation rotation for one sequence.
    pub fn forward<S: Scalar>(&self, g: &Graph<S>, p: &ParamStore<S>, flows: &[Vec<Var>]) -> Result<Var> {
        let tokens = self.assemble_tokens(g, p, flows)?;
        let z = self.summarize(g, p, tokens)?;
        self.head.forward(g, p, z)
    }
}
