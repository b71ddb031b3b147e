use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("invalid network config: {0}")]
pub struct ConfigError(pub String);

/// Residual encoder layout. `channels` are the widths at 1/2 (stem),
/// 1/4, 1/8 and 1/16 resolution; the 1/16 map is fused back into the
/// 1/8 map before the output projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub channels: [usize; 4],
    pub blocks_per_stage: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            channels: [32, 48, 64, 96],
            blocks_per_stage: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// GRU hidden channels.
    pub hidden_dim: usize,
    pub corr_levels: usize,
    pub corr_radius: usize,
    /// Width of the 1×1 projection of looked-up correlations.
    pub corr_proj: usize,
    pub flow_enc: usize,
    /// Motion features handed to the GRU, including the two raw flow channels.
    pub motion_dim: usize,
    pub flow_head_hidden: usize,
    pub stage1_head_hidden: usize,
    pub iterations: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 96,
            corr_levels: 4,
            corr_radius: 4,
            corr_proj: 96,
            flow_enc: 32,
            motion_dim: 80,
            flow_head_hidden: 128,
            stage1_head_hidden: 128,
            iterations: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemporalConfig {
    pub frames: usize,
    pub patch: usize,
    pub d_model: usize,
    pub blocks: usize,
    pub state_dim: usize,
    /// Inner SSM width as a multiple of `d_model`.
    pub expand: usize,
    pub dt_rank: usize,
    pub mlp_hidden: usize,
    pub head_hidden: usize,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            frames: 4,
            patch: 8,
            d_model: 128,
            blocks: 2,
            state_dim: 16,
            expand: 2,
            dt_rank: 8,
            mlp_hidden: 256,
            head_hidden: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    pub in_channels: usize,
    pub image_height: usize,
    pub image_width: usize,
    /// Feature width D shared by the image and depth branches.
    pub feature_dim: usize,
    pub encoder: EncoderConfig,
    pub refine: RefineConfig,
    pub temporal: TemporalConfig,
    /// Depth normalization range, meters.
    pub max_range: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            image_height: 128,
            image_width: 256,
            feature_dim: 64,
            encoder: EncoderConfig::default(),
            refine: RefineConfig::default(),
            temporal: TemporalConfig::default(),
            max_range: mvx_core::geometry::DEFAULT_MAX_RANGE,
        }
    }
}

impl NetConfig {
    /// Reduced widths and resolution sized for single-core training runs.
    pub fn compact() -> Self {
        Self {
            in_channels: 1,
            image_height: 64,
            image_width: 128,
            feature_dim: 32,
            encoder: EncoderConfig {
                channels: [16, 24, 32, 48],
                blocks_per_stage: 1,
            },
            refine: RefineConfig {
                hidden_dim: 32,
                corr_levels: 3,
                corr_radius: 3,
                corr_proj: 48,
                flow_enc: 16,
                motion_dim: 32,
                flow_head_hidden: 64,
                stage1_head_hidden: 64,
                iterations: 10,
            },
            temporal: TemporalConfig {
                frames: 4,
                patch: 8,
                d_model: 64,
                blocks: 2,
                state_dim: 16,
                expand: 2,
                dt_rank: 4,
                mlp_hidden: 128,
                head_hidden: 64,
            },
            max_range: mvx_core::geometry::DEFAULT_MAX_RANGE,
        }
    }

    /// Feature grid `(h, w)` at 1/8 of the input.
    pub fn grid(&self) -> (usize, usize) {
        (self.image_height / 8, self.image_width / 8)
    }

    pub fn corr_channels(&self) -> usize {
        crate::corrvol::lookup_channels(self.refine.corr_levels, self.refine.corr_radius)
    }

    /// Patches per frame map for a given iteration count.
    pub fn patches_per_frame(&self, iterations: usize) -> usize {
        let (h, w) = self.grid();
        let p = self.temporal.patch;
        (h / p) * (w * iterations / p)
    }

    pub fn token_count(&self) -> usize {
        1 + self.temporal.frames * self.patches_per_frame(self.refine.iterations)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError(m));
        if self.in_channels == 0 || self.feature_dim == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.image_height % 16 != 0 || self.image_width % 16 != 0 || self.image_height == 0 || self.image_width == 0 {
            return bad(format!(
                "input {}x{} must be a positive multiple of 16 (the encoder reaches 1/16)",
                self.image_height, self.image_width
            ));
        }
        if self.encoder.channels.contains(&0) {
            return bad("encoder widths must be positive".into());
        }
        let r = &self.refine;
        if r.corr_levels == 0 || r.corr_radius == 0 || r.iterations == 0 {
            return bad("correlation levels, radius and iterations must be at least 1".into());
        }
        let (h, w) = self.grid();
        let div = 1 << (r.corr_levels - 1);
        if h % div != 0 || w % div != 0 {
            return bad(format!("feature grid {h}x{w} is not divisible by {div} for {} levels", r.corr_levels));
        }
        if r.motion_dim <= 2 || r.hidden_dim == 0 {
            return bad("motion features must leave room for the raw flow channels".into());
        }
        let t = &self.temporal;
        if t.frames == 0 || t.patch == 0 || t.d_model == 0 || t.state_dim == 0 || t.expand == 0 || t.dt_rank == 0 {
            return bad("temporal sizes must be positive".into());
        }
        if h % t.patch != 0 || (w * r.iterations) % t.patch != 0 {
            return bad(format!(
                "flow map {h}x{} does not tile into {}x{} patches",
                w * r.iterations,
                t.patch,
                t.patch
            ));
        }
        if !(self.max_range > 0.0) {
            return bad("max range must be positive".into());
        }
        Ok(())
    }
}
