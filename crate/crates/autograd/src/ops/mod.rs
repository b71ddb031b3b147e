mod conv;
mod elementwise;
mod linalg;
mod norm;
mod pool;
mod sample;
mod scan;
mod shape;

pub use sample::BilinearTap;
pub use scan::ScanInputs;
