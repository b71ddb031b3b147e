//! Point clouds drawn over camera images, colored by depth.

use mvx_core::geometry::{project_points, CameraModel, PointCloud, Projection, RigidTransform};
use mvx_core::scenesim::GrayImage;

/// RGB raster, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Overlay {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
    /// Every drawn point, in drawing order.
    pub points: Vec<Projection>,
}

/// Saturated hue ramp from red (near) through green to blue (far). Never
/// gray, so drawn points stay distinguishable from the image.
pub fn depth_color(depth: f64, max_range: f64) -> [u8; 3] {
    let t = (depth / max_range).clamp(0.0, 1.0);
    let ramp = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    if t < 0.5 {
        let s = t * 2.0;
        [ramp(1.0 - s), ramp(s), 0]
    } else {
        let s = (t - 0.5) * 2.0;
        [0, ramp(1.0 - s), ramp(s)]
    }
}

/// Draws `cloud` seen through `extrinsic` over `image`, one pixel per
/// point, far points first so near ones stay on top.
pub fn render(image: &GrayImage, cloud: &PointCloud, extrinsic: &RigidTransform, cam: &CameraModel, max_range: f64) -> Overlay {
    let mut rgb: Vec<u8> = image.data.iter().flat_map(|&v| [v, v, v]).collect();
    let mut points = project_points(cloud, extrinsic, cam);
    points.sort_by(|a, b| b.depth.total_cmp(&a.depth));
    for p in &points {
        let (col, row) = (p.u.round() as usize, p.v.round() as usize);
        if col >= image.width || row >= image.height {
            continue;
        }
        let k = 3 * (row * image.width + col);
        rgb[k..k + 3].copy_from_slice(&depth_color(p.depth, max_range));
    }
    Overlay {
        width: image.width,
        height: image.height,
        rgb,
        points,
    }
}
