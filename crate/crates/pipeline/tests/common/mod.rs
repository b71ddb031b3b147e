#![allow(dead_code)]

use mvx_core::geometry::{RigidTransform, UnitQuaternion};
use mvx_core::scenesim::{generate_sequence, FrameSequence};
use mvx_pipeline::data::PreparedSequence;
use mvx_pipeline::PipelineConfig;

pub fn sequences(cfg: &PipelineConfig, seed: u64, count: usize, perturb_deg: f64) -> Vec<FrameSequence> {
    (0..count)
        .map(|i| generate_sequence(&cfg.data.scene, perturb_deg, seed, i as u64).unwrap())
        .collect()
}

pub fn prepared(cfg: &PipelineConfig, seed: u64, count: usize, perturb_deg: f64) -> Vec<PreparedSequence> {
    PreparedSequence::prepare_all(sequences(cfg, seed, count, perturb_deg), &cfg.net).unwrap()
}

/// Max of rotation angle (radians) and translation distance between two
/// transforms.
pub fn transform_gap(a: &RigidTransform, b: &RigidTransform) -> f64 {
    let rot = mvx_core::geometry::angular_distance(&a.rotation, &b.rotation);
    rot.max((a.translation - b.translation).norm())
}

pub fn quat_gap_deg(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    mvx_core::geometry::angular_distance(a, b).to_degrees()
}
