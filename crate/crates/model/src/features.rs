//! Multi-scale residual encoders for the image, context and depth branches.

use mvx_autograd::{Graph, GraphError, ParamStore, Result, Scalar, Var};
use rand::Rng;

use crate::config::{EncoderConfig, NetConfig};
use crate::layers::Conv2d;

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    skip: Option<Conv2d>,
}

impl ResBlock {
    fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, cin: usize, cout: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let conv1 = Conv2d::new(store, &format!("{name}.conv1"), cin, cout, 3, stride, rng);
        let conv2 = Conv2d::new(store, &format!("{name}.conv2"), cout, cout, 3, 1, rng);
        // Keep the residual branch small at init; there is no normalization.
        conv2.scale_weight(store, 0.5);
        let skip = (stride != 1 || cin != cout).then(|| Conv2d::new(store, &format!("{name}.skip"), cin, cout, 1, stride, rng));
        Self { conv1, conv2, skip }
    }

    fn forward<S: Scalar>(&self, g: &Graph<S>, p: &ParamStore<S>, x: Var) -> Result<Var> {
        let y = g.relu(self.conv1.forward(g, p, x)?);
        let y = self.conv2.forward(g, p, y)?;
        let skip = match &self.skip {
            Some(s) => s.forward(g, p, x)?,
            None => x,
        };
        Ok(g.relu(g.add(y, skip)?))
    }
}

/// Stem at 1/2, residual stages at 1/4, 1/8 and 1/16, top-down fusion of
/// the 1/16 map into the 1/8 map, then a 1×1 projection.
#[derive(Debug, Clone)]
pub struct Encoder {
    stem: Conv2d,
    stages: Vec<Vec<ResBlock>>,
    lateral: Conv2d,
    top: Conv2d,
    out: Conv2d,
    pub out_channels: usize,
}

impl Encoder {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        in_channels: usize,
        cfg: &EncoderConfig,
        fuse_dim: usize,
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let c = cfg.channels;
        let stem = Conv2d::new(store, &format!("{name}.stem"), in_channels, c[0], 3, 2, rng);
        let mut stages = Vec::new();
        for s in 1..4 {
            let blocks = (0..cfg.blocks_per_stage.max(1))
                .map(|b| {
                    let (cin, stride) = if b == 0 { (c[s - 1], 2) } else { (c[s], 1) };
                    ResBlock::new(store, &format!("{name}.stage{s}.block{b}"), cin, c[s], stride, rng)
                })
                .collect();
            stages.push(blocks);
        }
        Self {
            stem,
            stages,
            lateral: Conv2d::new(store, &format!("{name}.lateral"), c[2], fuse_dim, 1, 1, rng),
            top: Conv2d::new(store, &format!("{name}.top"), c[3], fuse_dim, 1, 1, rng),
            out: Conv2d::new(store, &format!("{name}.out"), fuse_dim, out_channels, 1, 1, rng),
            out_channels,
        }
    }

    /// `x [C,H,W]` with H, W divisible by 16 → `[out, H/8, W/8]`.
    pub fn forward<S: Scalar>(&self, g: &Graph<S>, p: &ParamStore<S>, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 3 || shape[1] % 16 != 0 || shape[2] % 16 != 0 || shape[1] == 0 || shape[2] == 0 {
            return Err(GraphError::shape(
                "encoder",
                format!("input {shape:?} must be [C,H,W] with H and W divisible by 16"),
            ));
        }
        let mut x = g.relu(self.stem.forward(g, p, x)?);
        let mut eighth = None;
        for (s, blocks) in self.stages.iter().enumerate() {
            for b in blocks {
                x = b.forward(g, p, x)?;
            }
            if s == 1 {
                eighth = Some(x);
            }
        }
        let eighth = eighth.expect("three stages");
        let (h, w) = (shape[1] / 8, shape[2] / 8);
        let top = g.resize_bilinear(self.top.forward(g, p, x)?, h, w)?;
        let fused = g.add(self.lateral.forward(g, p, eighth)?, top)?;
        self.out.forward(g, p, g.relu(fused))
    }
}

/// Output of the three branches for one frame.
#[derive(Debug, Clone, Copy)]
pub struct FeatureMaps {
    /// Image features `[D,h,w]`.
    pub f1: Var,
    /// Context features `[2·C_h,h,w]`, split by the refinement stage.
    pub f_context: Var,
    /// Depth-map features `[D,h,w]`.
    pub f_depth: Var,
}

#[derive(Debug, Clone)]
pub struct FeatureEncoders {
    pub image: Encoder,
    pub context: Encoder,
    pub depth: Encoder,
}

impl FeatureEncoders {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, cfg: &NetConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.feature_dim;
        Self {
            image: Encoder::new(store, "image_enc", cfg.in_channels, &cfg.encoder, d, d, rng),
            context: Encoder::new(store, "context_enc", cfg.in_channels, &cfg.encoder, d, 2 * cfg.refine.hidden_dim, rng),
            depth: Encoder::new(store, "depth_enc", 1, &cfg.encoder, d, d, rng),
        }
    }

    /// Image branch: `(f1, f_context)`.
    pub fn encode_image<S: Scalar>(&self, g: &Graph<S>, p: &ParamStore<S>, img: Var) -> Result<(Var, Var)> {
        Ok((self.image.forward(g, p, img)?, self.context.forward(g, p, img)?))
    }

    pub fn encode_depth<S: Scalar>(&self, g: &Graph<S>, p: &ParamStore<S>, depth: Var) -> Result<Var> {
        if g.shape(depth).first() != Some(&1) {
            return Err(GraphError::shape("encode_depth", format!("depth map {:?} must have one channel", g.shape(depth))));
        }
        self.depth.forward(g, p, depth)
    }

    pub fn encode<S: Scalar>(&self, g: &Graph<S>, p: &ParamStore<S>, img: Var, depth: Var) -> Result<FeatureMaps> {
        let (f1, f_context) = self.encode_image(g, p, img)?;
        Ok(FeatureMaps {
            f1,
            f_context,
            f_depth: self.encode_depth(g, p, depth)?,
        })
    }
}
