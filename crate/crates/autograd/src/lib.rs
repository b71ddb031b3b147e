//! Reverse-mode differentiation over small dense tensors.
//!
//! The substrate is deliberately narrow: it provides the primitives the
//! calibration network is assembled from, each with a hand-written
//! backward rule, plus an optimizer and a checkpoint container.

pub mod checkpoint;
mod error;
pub mod gradcheck;
mod graph;
pub mod ops;
pub mod optim;
mod params;
pub mod primitive_suite;
mod scalar;
mod tensor;

pub use error::{GraphError, Result};
pub use graph::{BackwardArgs, BackwardFn, Gradients, Graph, Var};
pub use ops::{BilinearTap, ScanInputs};
pub use params::{init, ParamEntry, ParamId, ParamStore};
pub use scalar::{gemm, Scalar};
pub use tensor::Tensor;

/// Differentiable primitives the substrate guarantees, by operation name.
pub fn primitive_set() -> &'static [&'static str] {
    &[
        "conv2d",
        "avg_pool2d",
        "max_pool2d",
        "matmul",
        "linear",
        "add",
        "sub",
        "mul",
        "add_broadcast",
        "add_channel",
        "sigmoid",
        "tanh",
        "relu",
        "silu",
        "softplus",
        "exp",
        "concat",
        "slice",
        "reshape",
        "transpose",
        "grid_sample",
        "resize_bilinear",
        "layer_norm",
        "l2_normalize",
        "selective_scan",
    ]
}
