//! Rotational LiDAR–camera calibration network.
//!
//! A frame passes through three convolutional encoders (image features,
//! image context, projected depth), an all-pairs correlation pyramid and a
//! recurrent update that refines a dense correspondence field. Per-frame
//! flow sequences are then aggregated over time by bidirectional
//! selective state-space blocks that regress one rotation per sequence.

pub mod config;
pub mod corrvol;
pub mod features;
pub mod gradient_suite;
pub mod layers;
pub mod loss;
pub mod network;
pub mod refine;
pub mod temporal;

pub use config::{ConfigError, NetConfig};
pub use network::{CalibNet, FrameInput};
