//! Full calibration network and conversion of frames into network inputs.

use mvx_autograd::{Graph, ParamStore, Result, Scalar, Tensor, Var};
use mvx_core::geometry::{render_depth_map, CameraModel, PointCloud, RigidTransform};
use mvx_core::scenesim::GrayImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::NetConfig;
use crate::corrvol::build_pyramid;
use crate::features::FeatureEncoders;
use crate::refine::{init_state, RotationHead, UpdateBlock};
use crate::temporal::TemporalModule;

/// Parameter-name prefix of the temporal aggregation module.
pub const TEMPORAL_PREFIX: &str = "temporal.";

pub fn is_temporal_param(name: &str) -> bool {
    name.starts_with(TEMPORAL_PREFIX)
}

#[derive(Debug, Error, PartialEq)]
#[error("input mismatch: {0}")]
pub struct InputError(pub String);

/// One frame as seen by the network.
#[derive(Debug, Clone)]
pub struct FrameInput<S> {
    /// `[C,H,W]`, values in `[-1, 1]`.
    pub image: Tensor<S>,
    /// `[1,H,W]` normalized sparse depth, 0 where no point landed.
    pub depth: Tensor<S>,
}

impl FrameInput<f32> {
    pub fn cast<T: Scalar>(&self) -> FrameInput<T> {
        FrameInput {
            image: self.image.cast(),
            depth: self.depth.cast(),
        }
    }
}

/// Box-filters `img` down to `height × width` (an integer factor) and maps
/// intensities to `[-1, 1]`.
pub fn prepare_image(img: &GrayImage, height: usize, width: usize) -> std::result::Result<Tensor<f32>, InputError> {
    if img.height % height != 0 || img.width % width != 0 || img.height / height != img.width / width {
        return Err(InputError(format!(
            "image {}x{} is not an integer multiple of {height}x{width}",
            img.height, img.width
        )));
    }
    let f = img.height / height;
    let norm = 1.0 / (255.0 * (f * f) as f32);
    let mut out = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let mut acc = 0u32;
            for dy in 0..f {
                for dx in 0..f {
                    acc += img.get(r * f + dy, c * f + dx) as u32;
                }
            }
            out.push(acc as f32 * norm * 2.0 - 1.0);
        }
    }
    Ok(Tensor::from_vec(&[1, height, width], out))
}

/// Depth map of `cloud` seen through `extrinsic` at the network resolution.
pub fn prepare_depth(cloud: &PointCloud, extrinsic: &RigidTransform, camera: &CameraModel, cfg: &NetConfig) -> Tensor<f32> {
    let cam = camera.scaled(cfg.image_width, cfg.image_height);
    let map = render_depth_map(cloud, extrinsic, &cam, cfg.max_range);
    Tensor::from_vec(&[1, cfg.image_height, cfg.image_width], map.data)
}

pub fn prepare_frame(
    image: &GrayImage,
    cloud: &PointCloud,
    extrinsic: &RigidTransform,
    camera: &CameraModel,
    cfg: &NetConfig,
) -> std::result::Result<FrameInput<f32>, InputError> {
    Ok(FrameInput {
        image: prepare_image(image, cfg.image_height, cfg.image_width)?,
        depth: prepare_depth(cloud, extrinsic, camera, cfg),
    })
}

#[derive(Debug, Clone)]
pub struct CalibNet {
    pub cfg: NetConfig,
    pub encoders: FeatureEncoders,
    pub update: UpdateBlock,
    pub stage1_head: RotationHead,
    pub temporal: TemporalModule,
}

impl CalibNet {
    /// Registers every parameter in `store`, initialized from `seed`.
    pub fn new<S: Scalar>(cfg: &NetConfig, store: &mut ParamStore<S>, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = cfg.grid();
        Self {
            cfg: cfg.clone(),
            encoders: FeatureEncoders::new(store, cfg, &mut rng),
            update: UpdateBlock::new(store, cfg, &mut rng),
            stage1_head: RotationHead::new(store, "stage1_head", 2 * h * w, cfg.refine.stage1_head_hidden, &mut rng),
            temporal: TemporalModule::new(store, cfg, &mut rng),
        }
    }

    pub fn build(cfg: &NetConfig, seed: u64) -> (Self, ParamStore<f32>) {
        let mut store = ParamStore::new();
        let net = Self::new(cfg, &mut store, seed);
        (net, store)
    }

    /// Runs `iters` refinement steps and returns the flow after each.
    pub fn refine_frame<S: Scalar>(&self, g: &Graph<S>, p: &ParamStore<S>, input: &FrameInput<S>, iters: usize) -> Result<Vec<Var>> {
        let img = g.constant(input.image.clone());
        let depth = g.constant(input.depth.clone());
        let fm = self.encoders.encode(g, p, img, depth)?;
        let pyr = build_pyramid(g, fm.f1, fm.f_depth, self.cfg.refine.corr_levels)?;
        let (mut state, context) = init_state(g, fm.f_context, self.cfg.refine.hidden_dim)?;
        let mut flows = Vec::with_capacity(iters);
        for _ in 0..iters {
            state = self.update.step(g, p, &state, &pyr, context)?.0;
            flows.push(state.flow);
        }
        Ok(flows)
    }

    /// One stage-1 rotation estimate per flow.
    pub fn stage1_estimates<S: Scalar>(&self, g: &Graph<S>, p: &ParamStore<S>, flows: &[Var]) -> Result<Vec<Var>> {
        flows.iter().map(|&f| self.stage1_head.forward(g, p, f)).collect()
    }

    /// Sequence-level estimate from every frame's flows.
    pub fn sequence_estimate<S: Scalar>(&self, g: &Graph<S>, p: &ParamStore<S>, flows: &[Vec<Var>]) -> Result<Var> {
        self.temporal.forward(g, p, flows)
    }
}
