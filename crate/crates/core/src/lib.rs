pub mod dataset;
pub mod geometry;
pub mod scenesim;
